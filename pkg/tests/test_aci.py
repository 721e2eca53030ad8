import pytest
from hypothesis import given, strategies as st

from rctopo import aci


def section(width=0.076, depth=0.127, steel=130e-6, fy=372.3e6, fc=57.2e6, span=1.219):
    return aci.SectionSpec(width=width, effective_depth=depth, steel_area=steel,
                           steel_yield=fy, concrete_strength=fc, span=span)


class TestNominalMoment:
    def test_zero_steel_zero_capacity(self):
        assert aci.nominal_moment(section(steel=0.0)) == 0.0

    def test_stress_block_depth_hand_value(self):
        # A_s f_y / (0.85 f'c b) with the measured strengths: about 13.1 mm
        a = aci.stress_block_depth(section())
        assert a == pytest.approx(0.0131, abs=1e-4)

    def test_wider_section_shallower_block_higher_capacity(self):
        narrow = section()
        wide = section(width=2 * narrow.width)
        assert aci.stress_block_depth(wide) == pytest.approx(aci.stress_block_depth(narrow) / 2)
        assert aci.nominal_moment(wide) > aci.nominal_moment(narrow)

    def test_over_reinforced_rejected(self):
        with pytest.raises(aci.SectionError, match="over-reinforced"):
            section(steel=0.09, fc=20e6)

    @given(st.floats(10e-6, 200e-6), st.floats(250e6, 500e6), st.floats(0.08, 0.3))
    def test_monotone_in_steel_yield_depth(self, steel, fy, depth):
        base = section()
        s = section(steel=steel, fy=fy, depth=depth)
        assert aci.nominal_moment(section(steel=steel * 1.1, fy=fy, depth=depth)) > aci.nominal_moment(s)
        assert aci.nominal_moment(section(steel=steel, fy=fy * 1.05, depth=depth)) > aci.nominal_moment(s)
        assert aci.nominal_moment(section(steel=steel, fy=fy, depth=depth * 1.05)) > aci.nominal_moment(s)


class TestDesignLoad:
    def test_formula_identity(self):
        # M_n = 1 kN*m over a 1 m span: P = 4 kN
        sec = section(span=1.0)
        mn = aci.nominal_moment(sec)
        assert aci.three_point_design_load(sec) == pytest.approx(4.0 * mn)

    def test_scales_inverse_in_span(self):
        p1 = aci.three_point_design_load(section(span=1.0))
        p2 = aci.three_point_design_load(section(span=2.0))
        assert p1 == pytest.approx(2.0 * p2)

    def test_envelope_baseline_within_five_percent(self):
        p = aci.three_point_design_load(section(width=0.076, steel=130e-6))
        assert p == pytest.approx(19.2e3, rel=0.05)

    def test_prismatic_baseline_within_five_percent(self):
        p = aci.three_point_design_load(section(width=0.057, steel=90e-6))
        assert p == pytest.approx(13.5e3, rel=0.05)


class TestSectionFile:
    GOOD = """
[section]
width_cm = 7.6
effective_depth_cm = 12.7
steel_area_cm2 = 1.3
steel_yield_mpa = 372.3
concrete_strength_mpa = 57.2
span_cm = 121.9
"""

    def test_load_and_units(self):
        sec = aci.load_section(self.GOOD)
        assert sec.width == pytest.approx(0.076)
        assert sec.steel_area == pytest.approx(130e-6)
        assert sec.steel_yield == pytest.approx(372.3e6)

    def test_missing_field_named(self):
        with pytest.raises(aci.SectionError, match="span_cm"):
            aci.load_section(self.GOOD.replace("span_cm = 121.9", ""))

    def test_unknown_field_named(self):
        with pytest.raises(aci.SectionError, match="cover_cm"):
            aci.load_section(self.GOOD + "cover_cm = 2.0\n")

    def test_report_has_units(self):
        rep = aci.capacity_report(aci.load_section(self.GOOD))
        assert "kN*m" in rep and "kN" in rep and "mm" in rep
