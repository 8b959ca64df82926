"""Newton iterations of the discrete critical-point solver against the
singular-value cut-off of its least-squares steps, over noisy orbit seeds."""

import argparse
import csv
import sys

import numpy as np

from magshell import dynamics, rabinowitz, systems
from magshell.errors import MagshellError

LEVELS = {"heisenberg": 0.375, "psl2": 0.1875, "torus": 0.5}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=4)
    ap.add_argument("--noise", type=float, default=1e-2)
    ap.add_argument("--points", type=int, default=64)
    args = ap.parse_args()
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["system", "rcond", "seed", "iterations", "eta"])
    default = rabinowitz.RCOND
    try:
        for rcond in (1e-10, 1e-8, 1e-6, 1e-5):
            rabinowitz.RCOND = rcond
            for name, k in LEVELS.items():
                s = systems.make_system(name)
                rec = dynamics.contractible_orbits(s, k, l_max=1)[0]
                for seed in range(args.seeds):
                    loop = rabinowitz.orbit_seed(rec, s, args.points, args.noise, bool(seed % 2),
                                                 np.random.default_rng(seed))
                    try:
                        res = rabinowitz.find_critical(loop, s)
                        w.writerow([name, rcond, seed, res.iterations, repr(res.eta)])
                    except MagshellError as exc:
                        w.writerow([name, rcond, seed, "", type(exc).__name__])
    finally:
        rabinowitz.RCOND = default


if __name__ == "__main__":
    main()
