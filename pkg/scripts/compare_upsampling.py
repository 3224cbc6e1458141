"""Train all six upsampling schemes on the toy sinusoid set and print a ranked table.

Usage: python3 scripts/compare_upsampling.py [--seeds 1 2 3 4 5] [--steps 1000]
"""

import argparse
import time

from waveforge.experiments import ALL_SCHEMES, SinusoidBudget, run_sinusoid, summarize
from waveforge.models import Scheme


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, nargs="+", default=[1, 2, 3, 4, 5])
    ap.add_argument("--steps", type=int, default=1000)
    ap.add_argument("--schemes", nargs="+", default=[s.value for s in ALL_SCHEMES])
    args = ap.parse_args()
    budget = SinusoidBudget(steps=args.steps)
    results = []
    for name in args.schemes:
        for seed in args.seeds:
            t0 = time.time()
            r = run_sinusoid(Scheme.parse(name), seed, budget)
            results.append(r)
            print(
                f"{r.scheme.label:10s} seed={seed} bin={r.dominant_bin} amp={r.amplitude:.3f} "
                f"ratio={r.artifact_ratio:.4f} ({time.time() - t0:.0f}s)",
                flush=True,
            )
    print("\nscheme      median_ratio  mean_amp  hits")
    for s in summarize(results):
        print(f"{s.scheme.label:10s}  {s.median_artifact_ratio:.4f}      {s.mean_amplitude:.3f}     {s.hits}/{s.runs}")


if __name__ == "__main__":
    main()
