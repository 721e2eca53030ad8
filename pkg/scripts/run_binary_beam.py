"""Run the full-resolution binary beam case (160x20) and write a bundle.

Takes a few minutes; progress is logged per outer iteration. Output lands in
out/beam_binary/ (density + truss CSVs, history, VTK geometry).
"""

import logging
import os
import sys
import time

sys.path.insert(0, os.path.join(os.path.dirname(__file__), os.pardir, "src"))

from rctopo import export, optimizer
from rctopo.domain import build_problem

ROOT = os.path.abspath(os.path.join(os.path.dirname(__file__), os.pardir))


def main():
    logging.basicConfig(level=logging.INFO)
    with open(os.path.join(ROOT, "configs", "beam_binary.cfg")) as f:
        problem = build_problem(f.read())
    loop = optimizer.OuterLoop(problem)
    t0 = time.monotonic()
    while loop.it < problem.run.max_outer:
        rec = loop.step()
        done = loop._advance_schedules(rec.max_change < problem.run.change_tol)
        print(f"it {rec.outer:3d}  c={rec.compliance:.6f}  "
              f"Vc={rec.vol_c_frac:.3f} Vt={rec.vol_t_frac:.3f}  "
              f"change={rec.max_change:.4f}  beta={rec.beta:g} ratio={rec.ratio:g}")
        if done and rec.max_change < problem.run.change_tol:
            break
    result = loop._result(converged=loop.it < problem.run.max_outer)
    out = os.path.join(ROOT, "out", "beam_binary")
    export.write_bundle(result, out)
    print(f"finished in {time.monotonic() - t0:.0f}s; bundle in {out}")


if __name__ == "__main__":
    main()
