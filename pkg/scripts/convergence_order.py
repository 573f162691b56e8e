"""Observed RK4 order of the delayed oscillator at t = 1.

    python3 scripts/convergence_order.py --delay 0.1
"""
import argparse
import math

import numpy as np

from setiss import dde as D
from setiss import systems as Y
from setiss.sets import HistoryWindow


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--delay", type=float, default=0.1)
    ap.add_argument("--horizon", type=float, default=1.0)
    ap.add_argument("--ref-step", type=float, default=1e-5)
    args = ap.parse_args()

    sys = Y.oscillator_system(Y.OscillatorParams(), delay=args.delay)
    hist = HistoryWindow.constant([1.0, 1.0], args.delay)
    T = args.horizon
    ref = D.integrate(sys, hist, None, T, args.ref_step)(T)
    prev = None
    print(f"{'h':>10} {'error':>12} {'order':>6}")
    for h in (2e-2, 1e-2, 5e-3, 2.5e-3):
        err = float(np.max(np.abs(D.integrate(sys, hist, None, T, h)(T) - ref)))
        order = "" if prev is None else f"{math.log2(prev / err):6.2f}"
        print(f"{h:10.2e} {err:12.3e} {order:>6}")
        prev = err


if __name__ == "__main__":
    main()
