"""Top Lyapunov exponent on the PSL(2,R) level k across vertical momenta C.

Hyperbolic momenta (A > |1 + C|) should give sqrt(A^2 - (1 + C)^2) / 2, the
rest zero (parabolic ones converge slowly, like log t / t).  Output CSV: C,A,type,exponent,expected.
"""

import argparse
import csv
import math
import sys

import numpy as np

from magshell import cli, dynamics, systems


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--energy", type=float, default=0.5)
    ap.add_argument("--points", type=int, default=9)
    ap.add_argument("--t-max", type=float, default=100.0)
    args = ap.parse_args()
    k = args.energy
    psl2 = systems.make_system("psl2")
    r = math.sqrt(2 * k)
    Cs = np.linspace(-0.95 * r, 0.95 * r, args.points)

    def row(C):
        A = math.sqrt(2 * k - C * C)
        est = dynamics.lyapunov_exponent(psl2, cli.shell_state(psl2, k, float(C)), t_max=args.t_max)
        kind = dynamics.classify_psl2(float(C), A).value
        expected = 0.5 * math.sqrt(max(A * A - (1 + C) ** 2, 0.0))
        return [repr(float(C)), repr(A), kind, repr(est.exponent), repr(expected)]

    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["C", "A", "type", "exponent", "expected"])
    w.writerows(cli.parallel_map(row, Cs))


if __name__ == "__main__":
    main()
