"""Nominal moment capacity and 3-point-bending design load for prismatic RC sections.

Equivalent rectangular (Whitney) stress block, nominal capacity (strength
reduction factor 1). This module works in physical units: meters, newtons,
pascals. Section files use the cm / MPa convention and are converted on load.
"""

from __future__ import annotations

from dataclasses import dataclass

try:
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib


class SectionError(ValueError):
    pass


@dataclass(frozen=True)
class SectionSpec:
    """Prismatic rectangular section, SI units (m, Pa)."""

    width: float  # b
    effective_depth: float  # d, compression face to steel centroid
    steel_area: float  # A_s
    steel_yield: float  # f_y
    concrete_strength: float  # f'_c
    span: float  # L, 3-point bending

    def __post_init__(self):
        for name in ("width", "effective_depth", "steel_yield", "concrete_strength", "span"):
            if getattr(self, name) <= 0:
                raise SectionError(f"{name} must be > 0")
        if self.steel_area < 0:
            raise SectionError("steel_area must be >= 0")
        if self.steel_area * self.steel_yield >= 0.85 * self.concrete_strength * self.width * self.effective_depth:
            raise SectionError("section is over-reinforced (A_s f_y >= 0.85 f'_c b d)")


def stress_block_depth(sec: SectionSpec) -> float:
    """Depth a of the equivalent rectangular compression block."""
    return sec.steel_area * sec.steel_yield / (0.85 * sec.concrete_strength * sec.width)


def nominal_moment(sec: SectionSpec) -> float:
    """M_n = A_s f_y (d - a/2) in N*m; zero steel gives zero capacity."""
    if sec.steel_area == 0.0:
        return 0.0
    a = stress_block_depth(sec)
    if a >= sec.effective_depth:
        raise SectionError(f"stress block depth {a:g} m reaches the effective depth {sec.effective_depth:g} m")
    return sec.steel_area * sec.steel_yield * (sec.effective_depth - 0.5 * a)


def three_point_design_load(sec: SectionSpec) -> float:
    """Midspan point load that exhausts the nominal moment: P = 4 M_n / L (N)."""
    return 4.0 * nominal_moment(sec) / sec.span


_FIELDS = {
    "width_cm": ("width", 1e-2),
    "effective_depth_cm": ("effective_depth", 1e-2),
    "steel_area_cm2": ("steel_area", 1e-4),
    "steel_yield_mpa": ("steel_yield", 1e6),
    "concrete_strength_mpa": ("concrete_strength", 1e6),
    "span_cm": ("span", 1e-2),
}


def load_section(text: str) -> SectionSpec:
    """Parse a [section] table in cm / MPa units into an SI SectionSpec."""
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise SectionError(f"parse failure: {exc}") from exc
    table = doc.get("section")
    if table is None:
        raise SectionError("section: missing [section] table")
    kwargs = {}
    for key, (attr, factor) in _FIELDS.items():
        if key not in table:
            raise SectionError(f"section.{key}: required field missing")
        kwargs[attr] = float(table[key]) * factor
    unknown = set(table) - set(_FIELDS)
    if unknown:
        raise SectionError(f"section.{sorted(unknown)[0]}: unknown field")
    return SectionSpec(**kwargs)


def capacity_report(sec: SectionSpec) -> str:
    """Human-readable capacity summary with units."""
    mn = nominal_moment(sec)
    p = three_point_design_load(sec)
    a = stress_block_depth(sec) if sec.steel_area else 0.0
    return (
        f"stress block depth a = {a * 1e3:.2f} mm\n"
        f"nominal moment M_n = {mn / 1e3:.3f} kN*m\n"
        f"design load P = 4 M_n / L = {p / 1e3:.2f} kN\n"
    )
