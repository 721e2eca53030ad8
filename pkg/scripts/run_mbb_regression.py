"""Compare the MMA pipeline against an optimality-criteria baseline on the MBB case.

Both sides solve the same 60x20 half-beam at 50% volume; the report prints the
two final compliances and their relative gap.
"""

import os
import sys
import time

sys.path.insert(0, os.path.join(os.path.dirname(__file__), os.pardir, "src"))
sys.path.insert(0, os.path.join(os.path.dirname(__file__), os.pardir, "tests"))

from rctopo import optimizer
from rctopo.domain import build_problem

from oracles import oc_mbb_compliance

ROOT = os.path.abspath(os.path.join(os.path.dirname(__file__), os.pardir))


def main():
    with open(os.path.join(ROOT, "configs", "mbb_simp.cfg")) as f:
        problem = build_problem(f.read())
    t0 = time.monotonic()
    result = optimizer.run(problem)
    t_mma = time.monotonic() - t0
    t0 = time.monotonic()
    c_oc = oc_mbb_compliance(60, 20, 0.5, 2.4)
    t_oc = time.monotonic() - t0
    gap = abs(result.compliance - c_oc) / c_oc
    print(f"MMA pipeline : c = {result.compliance:.4f}  ({len(result.records)} iters, {t_mma:.1f}s)")
    print(f"OC baseline  : c = {c_oc:.4f}  ({t_oc:.1f}s)")
    print(f"relative gap : {gap * 100:.2f}%")


if __name__ == "__main__":
    main()
