"""Train the BC-DCBL generator on the toy sinusoid set for several seeds.

Prints the dominant bin, fitted amplitude and artifact ratio per seed, and
optionally writes the averaged waveforms as CSV.

Usage: python3 scripts/sinusoid_reproduction.py [--seeds 1 2 3 4 5] [--csv waves.csv]
"""

import argparse
import csv
import time

from waveforge.data import gen_sinusoid_toy
from waveforge.experiments import SinusoidBudget, run_sinusoid
from waveforge.models import Scheme


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, nargs="+", default=[1, 2, 3, 4, 5])
    ap.add_argument("--steps", type=int, default=1000)
    ap.add_argument("--scheme", default="bc-dcbl")
    ap.add_argument("--csv", default=None)
    args = ap.parse_args()
    budget = SinusoidBudget(steps=args.steps)
    results = []
    for seed in args.seeds:
        t0 = time.time()
        r = run_sinusoid(Scheme.parse(args.scheme), seed, budget)
        results.append(r)
        mark = "hit" if r.hits_target else "miss"
        print(f"seed={seed} bin={r.dominant_bin} amp={r.amplitude:.3f} ratio={r.artifact_ratio:.4f} "
              f"{mark} ({time.time() - t0:.0f}s)", flush=True)
    print(f"{sum(r.hits_target for r in results)}/{len(results)} seeds on target")
    if args.csv:
        real = gen_sinusoid_toy(budget.n_train, seed=args.seeds[0], phase=budget.phase).samples[:, 0].mean(axis=0)
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["index", "real", *(f"seed{r.seed}" for r in results)])
            for i in range(len(real)):
                w.writerow([i, f"{real[i]:.8g}", *(f"{r.waveform[i]:.8g}" for r in results)])


if __name__ == "__main__":
    main()
