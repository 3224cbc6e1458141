"""Train the class-conditioned model on the ERP surrogate and report held-out AUC.

Usage: python3 scripts/cc_erp.py [--steps 1000] [--seed 0] [--channels 1]
"""

import argparse
import time

from waveforge.checkpoint import save_checkpoint
from waveforge.data import gen_erp_surrogate
from waveforge.models import build_pair
from waveforge.training import TrainConfig, train


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--steps", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--channels", type=int, choices=[1, 64], default=1)
    ap.add_argument("--n-per-class", type=int, default=500)
    ap.add_argument("--width", type=float, default=0.125)
    ap.add_argument("--eval-every", type=int, default=50)
    ap.add_argument("--best-out", default=None, help="write the best-AUC checkpoint here")
    args = ap.parse_args()

    data = gen_erp_surrogate(args.n_per_class, args.channels, seed=args.seed)
    pair = build_pair(args.width, channels=args.channels, class_conditioned=True, seed=args.seed)
    cfg = TrainConfig(class_conditioned=True, max_steps=args.steps, seed=args.seed,
                      eval_every=args.eval_every)
    t0 = time.time()

    def show(row):
        print(f"step {row.step:5d}  L_D {row.loss_d:+.3f}  L_C {row.loss_c:.3f}  "
              f"AUC {row.auc:.4f}  ({time.time() - t0:.0f}s)", flush=True)

    state = train(pair.generator, pair.critic, data, cfg, on_log=show)
    print(f"best held-out AUC {state.best_auc:.4f}")
    if args.best_out and state.best_checkpoint is not None:
        save_checkpoint(args.best_out, state.best_checkpoint)


if __name__ == "__main__":
    main()
