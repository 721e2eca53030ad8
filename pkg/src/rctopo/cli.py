"""Command-line entry point.

Subcommands: validate, optimize, check-gradients, aci, export. Success exits 0;
failures print one machine-parseable line (``error: kind=... msg=...``) on
stderr and exit 1. Unknown flags exit 2 with usage text.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from . import aci as aci_mod
from . import export as export_mod
from . import optimizer
from .bimodulus import InnerLoopError
from .domain import ConfigError, build_problem
from .fea import SingularSystemError
from .mma import MmaInfeasibleError
from .truss import IsolatedNodeError, ZeroLengthMemberError


def _fail(exc) -> int:
    msg = str(exc).replace('"', "'").replace("\n", " ")
    sys.stderr.write(f'error: kind={type(exc).__name__} msg="{msg}"\n')
    return 1


def _read(path: str) -> str:
    with open(path) as f:
        return f.read()


def cmd_validate(args) -> int:
    problem = build_problem(_read(args.config))
    mesh = problem.mesh
    print(f"ok: {mesh.nx}x{mesh.ny} elements, {mesh.dof_count} DOFs, "
          f"{problem.ground.n_members} truss members, mode={problem.run.mode}")
    return 0


def cmd_optimize(args) -> int:
    problem = build_problem(_read(args.config))
    result = optimizer.run(problem)
    export_mod.write_bundle(result, args.out)
    status = "converged" if result.converged else "iteration limit"
    print(f"{status}: compliance={result.compliance!r} after {len(result.records)} outer iterations")
    print(f"bundle written to {args.out}")
    return 0


def cmd_check_gradients(args) -> int:
    problem = build_problem(_read(args.config))
    report = optimizer.check_gradients(problem)
    ok = True
    for family in ("x_c", "x_t", "x_p"):
        info = report[family]
        best_step = min(info["errors"], key=lambda h: info["errors"][h])
        err = info["best"]
        ok = ok and err < 1e-4
        print(f"gradcheck {family} max_rel_err={err:.3e} step={best_step:g}")
    return 0 if ok else 1


def cmd_aci(args) -> int:
    sec = aci_mod.load_section(_read(args.section))
    sys.stdout.write(aci_mod.capacity_report(sec))
    return 0


def cmd_export(args) -> int:
    bundle = export_mod.load_bundle(args.bundle)
    if args.format == "vtk":
        export_mod.write_vtk(bundle, args.out)
    else:
        os.makedirs(args.out, exist_ok=True)
        export_mod.write_density_csv(bundle, os.path.join(args.out, "density.csv"))
        export_mod.write_truss_csv(bundle, os.path.join(args.out, "truss_nodes.csv"),
                                   os.path.join(args.out, "truss_members.csv"))
    print(f"re-emitted {args.format} to {args.out}")
    return 0


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rctopo", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="parse and feasibility-check a config")
    p.add_argument("config")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("optimize", help="run the optimization and write a bundle")
    p.add_argument("config")
    p.add_argument("--out", required=True, help="output bundle directory")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("check-gradients", help="finite-difference check of all sensitivities")
    p.add_argument("config")
    p.set_defaults(func=cmd_check_gradients)

    p = sub.add_parser("aci", help="capacity report for a prismatic section file")
    p.add_argument("section")
    p.set_defaults(func=cmd_aci)

    p = sub.add_parser("export", help="re-emit geometry from a saved bundle")
    p.add_argument("bundle")
    p.add_argument("--format", choices=("csv", "vtk"), required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export)
    return parser


_KNOWN_ERRORS = (ConfigError, aci_mod.SectionError, InnerLoopError, SingularSystemError,
                 MmaInfeasibleError, IsolatedNodeError, ZeroLengthMemberError, OSError)


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    if args.verbose:
        logging.basicConfig(level=logging.INFO, stream=sys.stderr)
    try:
        return args.func(args)
    except _KNOWN_ERRORS as exc:
        return _fail(exc)


if __name__ == "__main__":
    sys.exit(main())
