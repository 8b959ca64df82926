"""Omega-energy and period of the contractible orbit families against k.

Writes plot-ready CSV to stdout: system,k,C,T,omega.
"""

import argparse
import csv
import sys

from magshell import cli, dynamics, systems


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--steps", type=int, default=48)
    args = ap.parse_args()
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["system", "k", "C", "T", "omega"])
    for name, hi in (("heisenberg", "0.49"), ("psl2", "0.245")):
        s = systems.make_system(name)
        for k in cli.energy_grid("0.01", hi, args.steps):
            for r in dynamics.contractible_orbits(s, k, l_max=1):
                w.writerow([name, repr(k), repr(r.C), repr(r.T), repr(r.omega)])


if __name__ == "__main__":
    main()
