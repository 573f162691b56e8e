"""Delay margin of both case studies as the disturbance bound mu varies."""
import argparse

import numpy as np

from setiss import razumikhin as R
from setiss import systems as Y


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--Delta", type=float, default=2.0)
    ap.add_argument("--points", type=int, default=7)
    args = ap.parse_args()

    certs = {"oscillator": Y.oscillator_certificate(), "stuart_landau": Y.stuart_landau_certificate()}
    print(f"{'mu':>10}" + "".join(f"{name:>16}" for name in certs))
    for mu in np.logspace(-6, 0, args.points):
        row = []
        for cert in certs.values():
            e = cert.extras
            rep = R.delay_margin(e["gamma_theta"], e["gamma1"], cert.alpha1, cert.alpha2, mu, args.Delta)
            row.append(f"{rep.delta_star:16.4e}" if rep.status == "converged" else f"{rep.status:>16}")
        print(f"{mu:10.1e}" + "".join(row))


if __name__ == "__main__":
    main()
