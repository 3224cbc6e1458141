"""``waveforge`` command-line front end.

Exit codes: 0 success, 2 usage, 3 numerical abort, 4 I/O or file-format error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .data import (
    DatasetFormatError,
    EpochDataset,
    gen_erp_surrogate,
    gen_sinusoid_toy,
    load_dataset,
    save_dataset,
)
from .evaluation import DegenerateDataError, parseval_spectrum, quality_report
from .experiments import ALL_SCHEMES, SinusoidBudget, run_grid, summarize
from .models import ModelSpec, Scheme, build_pair
from .training import DivergenceError, NonFiniteGradientError, TrainConfig, snapshot, train

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4

log = logging.getLogger("waveforge")


class UsageError(Exception):
    pass


# ------------------------------------------------------------------ config files


def read_config(path: str | Path) -> dict[str, str]:
    """Flat UTF-8 ``key = value`` file; ``#`` starts a comment."""
    out: dict[str, str] = {}
    text = Path(path).read_text(encoding="utf-8")
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def write_config(path: str | Path, values: dict[str, str]) -> None:
    Path(path).write_text("".join(f"{k} = {v}\n" for k, v in values.items()), encoding="utf-8")


def _merge(args: argparse.Namespace, parser: argparse.ArgumentParser, defaults: dict) -> None:
    """Flags beat config-file keys beat defaults.

    Every option is declared with ``default=None`` so an unset flag is
    distinguishable from one set to its default value.
    """
    file_vals = read_config(args.config) if args.config else {}
    actions = {a.dest: a for a in parser._actions}
    unknown = sorted(set(file_vals) - set(defaults))
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(unknown)}")
    for key, default in defaults.items():
        if getattr(args, key, None) is not None:
            continue
        if key in file_vals:
            raw = file_vals[key]
            action = actions[key]
            if isinstance(default, bool):
                value = raw.lower() in ("1", "true", "yes", "on")
            elif action.type is not None:
                try:
                    value = action.type(raw)
                except (TypeError, ValueError) as exc:
                    raise UsageError(f"bad value for {key}: {raw!r}") from exc
            else:
                value = raw
            setattr(args, key, value)
        else:
            setattr(args, key, default)


def _ratio(text: str) -> tuple[int, int]:
    try:
        a, b = (int(p) for p in text.split(":"))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"ratio must look like 1:5, got {text!r}") from exc
    return a, b


def _flag(p, *names, **kw):
    kw.setdefault("default", None)
    p.add_argument(*names, **kw)


# ------------------------------------------------------------------ path checks


def _need_file(path) -> Path:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"no such file: {p}")
    return p


def _out_path(path) -> Path:
    p = Path(path)
    parent = p.parent if str(p.parent) else Path(".")
    if not parent.is_dir():
        raise FileNotFoundError(f"output directory does not exist: {parent}")
    return p


def _out_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


# ------------------------------------------------------------------ csv / svg


def write_series_csv(path, values, index_name="index", value_name="value") -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([index_name, value_name])
        for i, v in enumerate(np.asarray(values).reshape(-1)):
            w.writerow([i, f"{float(v):.10g}"])


PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf")


def svg_line_plot(series: dict[str, np.ndarray], title: str = "", xlabel: str = "", ylabel: str = "",
                  width: int = 640, height: int = 360) -> str:
    """Minimal standalone SVG line chart: one polyline per series plus a legend."""
    ml, mr, mt, mb = 56, 150, 32, 40
    pw, ph = width - ml - mr, height - mt - mb
    ys = np.concatenate([np.asarray(v, dtype=float).ravel() for v in series.values()])
    lo, hi = float(ys.min()), float(ys.max())
    if hi - lo < 1e-12:
        lo, hi = lo - 1, hi + 1
    n_max = max(len(np.asarray(v).ravel()) for v in series.values())

    def sx(i):
        return ml + pw * (i / max(n_max - 1, 1))

    def sy(v):
        return mt + ph * (1 - (v - lo) / (hi - lo))

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<text x="{ml}" y="20" font-family="sans-serif" font-size="14">{escape(title)}</text>',
        f'<line x1="{ml}" y1="{mt + ph}" x2="{ml + pw}" y2="{mt + ph}" stroke="black"/>',
        f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{mt + ph}" stroke="black"/>',
        f'<text x="{ml + pw / 2:.1f}" y="{height - 8}" font-family="sans-serif" font-size="12" '
        f'text-anchor="middle">{escape(xlabel)}</text>',
        f'<text x="14" y="{mt + ph / 2:.1f}" font-family="sans-serif" font-size="12" '
        f'transform="rotate(-90 14 {mt + ph / 2:.1f})" text-anchor="middle">{escape(ylabel)}</text>',
        f'<text x="{ml - 4}" y="{mt + 4}" font-family="sans-serif" font-size="10" text-anchor="end">{hi:.3g}</text>',
        f'<text x="{ml - 4}" y="{mt + ph}" font-family="sans-serif" font-size="10" text-anchor="end">{lo:.3g}</text>',
    ]
    if lo < 0 < hi:
        parts.append(f'<line x1="{ml}" y1="{sy(0):.2f}" x2="{ml + pw}" y2="{sy(0):.2f}" '
                     'stroke="#bbbbbb" stroke-dasharray="4 3"/>')
    for k, (name, values) in enumerate(series.items()):
        v = np.asarray(values, dtype=float).ravel()
        color = PALETTE[k % len(PALETTE)]
        pts = " ".join(f"{sx(i):.2f},{sy(val):.2f}" for i, val in enumerate(v))
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        ly = mt + 14 + 18 * k
        parts.append(f'<line x1="{ml + pw + 12}" y1="{ly - 4}" x2="{ml + pw + 32}" y2="{ly - 4}" '
                     f'stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{ml + pw + 38}" y="{ly}" font-family="sans-serif" '
                     f'font-size="11">{escape(name)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


# ------------------------------------------------------------------ commands


GEN_DATA_DEFAULTS = dict(kind="sinusoid", n=5000, freq=5.0, amp=1.0, noise_var=1.0, phase="random",
                         n_per_class=500, channels=1, seed=0, output=None)


def cmd_gen_data(args) -> int:
    if not args.output:
        raise UsageError("gen-data needs an output path (-o)")
    out = _out_path(args.output)
    if args.kind == "sinusoid":
        ds = gen_sinusoid_toy(args.n, args.freq, args.amp, args.noise_var, args.seed, args.phase)
    elif args.kind == "erp":
        ds = gen_erp_surrogate(args.n_per_class, args.channels, args.seed)
    else:
        raise UsageError(f"unknown dataset kind {args.kind!r}")
    save_dataset(out, ds)
    print(ds.summary())
    return EXIT_OK


TRAIN_DEFAULTS = dict(data=None, scheme="bc-dcbl", width=0.125, steps=1000, seed=0, batch_size=64,
                      ratio=(1, 5), lr=1e-4, lambda_gp=10.0, latent_dim=120, cc=False,
                      eval_every=100, output="model.wfts", log=None)


def spec_path(ckpt: Path) -> Path:
    return ckpt.with_name(ckpt.name + ".cfg")


def cmd_train(args) -> int:
    if not args.data:
        raise UsageError("train needs --data")
    data = load_dataset(_need_file(args.data))
    out = _out_path(args.output)
    log_path = _out_path(args.log) if args.log else out.with_suffix(".log.csv")
    scheme = Scheme.parse(args.scheme)
    cfg = TrainConfig(
        lambda_gp=args.lambda_gp,
        ratio_d_to_g=args.ratio,
        learning_rate=args.lr,
        batch_size=args.batch_size,
        max_steps=args.steps,
        seed=args.seed,
        latent_dim=args.latent_dim,
        class_conditioned=args.cc,
        eval_every=args.eval_every,
    )
    pair = build_pair(args.width, scheme, channels=data.channels, class_conditioned=args.cc,
                      latent_dim=args.latent_dim, seed=args.seed)
    state = train(pair.generator, pair.critic, data, cfg)
    save_checkpoint(out, snapshot(pair.generator, pair.critic))
    write_config(spec_path(out), pair.spec.to_config())
    log_path.write_text(state.log_csv())
    if args.cc and state.best_checkpoint is not None:
        best = out.with_name(out.stem + ".best.wfts")
        save_checkpoint(best, state.best_checkpoint)
        write_config(spec_path(best), pair.spec.to_config())
        print(f"best AUC {state.best_auc:.4f} -> {best}")
    print(f"trained {state.step} steps -> {out}")
    return EXIT_OK


GENERATE_DEFAULTS = dict(checkpoint=None, n=1000, seed=0, label=None, output=None)


def load_generator(ckpt: Path):
    cfg_file = spec_path(ckpt)
    if not cfg_file.is_file():
        raise FileNotFoundError(f"missing model spec next to checkpoint: {cfg_file}")
    spec = ModelSpec.from_config(read_config(cfg_file))
    state = load_checkpoint(ckpt)
    pair = build_pair(spec.width_scale, spec.upsample_scheme, channels=spec.eeg_channels,
                      class_conditioned=spec.class_conditioned, num_classes=spec.num_classes,
                      latent_dim=spec.latent_dim)
    gen = pair.generator
    names = set(gen.params.trainable) | set(gen.params.buffers)
    try:
        gen.params.load_state_dict({k: v for k, v in state.items() if k in names})
    except ValueError as exc:
        raise CheckpointError(f"checkpoint does not match model spec: {exc}") from exc
    return gen


def cmd_generate(args) -> int:
    if not args.checkpoint or not args.output:
        raise UsageError("generate needs -c CHECKPOINT and -o OUTPUT")
    ckpt = _need_file(args.checkpoint)
    out = _out_path(args.output)
    gen = load_generator(ckpt)
    rng = np.random.default_rng(args.seed)
    labels = None
    if gen.spec.class_conditioned:
        if args.label is None or args.label == "balanced":
            labels = np.arange(args.n) % gen.spec.num_classes
        else:
            labels = np.full(args.n, int(args.label))
    elif args.label is not None:
        raise UsageError("--label only applies to class-conditioned checkpoints")
    x = gen.sample(args.n, rng, labels=labels)
    ds = EpochDataset(x[:, 0], labels if labels is not None and len(set(labels)) > 1 else None,
                      metadata=f"generated from {ckpt.name} seed={args.seed}")
    save_dataset(out, ds)
    print(ds.summary())
    return EXIT_OK


EVALUATE_DEFAULTS = dict(real=None, gen=None, gmm_k="auto", k_max=6, covariance="diag",
                         band="5", label=None, seed=0, output="report", plot=True)


def _band(text: str) -> list[int]:
    return [int(b) for b in str(text).replace(",", " ").split()]


def cmd_evaluate(args) -> int:
    if not args.real or not args.gen:
        raise UsageError("evaluate needs --real and --gen")
    real = load_dataset(_need_file(args.real))
    gen = load_dataset(_need_file(args.gen))
    outdir = _out_dir(args.output)
    if real.samples.shape[1:] != gen.samples.shape[1:]:
        raise UsageError(f"real {real.samples.shape[1:]} and generated {gen.samples.shape[1:]} differ")
    xr, xg = real.samples, gen.samples
    if args.label is not None:
        lab = int(args.label)
        if real.labels is None:
            raise UsageError("--label needs a labelled real dataset")
        xr = xr[real.labels == lab]
        if gen.labels is not None:
            xg = xg[gen.labels == lab]
    k_fixed = None if str(args.gmm_k) == "auto" else int(args.gmm_k)
    report = quality_report(xr, xg, k_range=range(1, args.k_max + 1), signal_band=_band(args.band),
                            seed=args.seed, covariance_type=args.covariance, k_fixed=k_fixed)
    (outdir / "report.csv").write_text(report.to_csv())
    (outdir / "summary.txt").write_text(report.summary())
    avg_r = np.asarray(report.averaged_real).reshape(-1, xr.shape[-1]).mean(axis=0)
    avg_g = np.asarray(report.averaged_gen).reshape(-1, xg.shape[-1]).mean(axis=0)
    write_series_csv(outdir / "waveform_real.csv", avg_r)
    write_series_csv(outdir / "waveform_gen.csv", avg_g)
    write_series_csv(outdir / "spectrum_real.csv", parseval_spectrum(avg_r[None])[0], "bin")
    write_series_csv(outdir / "spectrum_gen.csv", parseval_spectrum(avg_g[None])[0], "bin")
    if args.plot:
        svg = svg_line_plot({"real": avg_r, "generated": avg_g}, "Averaged waveform", "sample", "amplitude")
        (outdir / "waveform.svg").write_text(svg)
    print(report.summary(), end="")
    return EXIT_OK


COMPARE_DEFAULTS = dict(seeds="1 2 3 4 5", steps=1000, width=0.125, n=5000, phase="fixed",
                        workers=None, output="compare", plot=True)


def cmd_compare_upsampling(args) -> int:
    outdir = _out_dir(args.output)
    seeds = [int(s) for s in str(args.seeds).replace(",", " ").split()]
    if not seeds:
        raise UsageError("no seeds given")
    budget = SinusoidBudget(width_scale=args.width, steps=args.steps, n_train=args.n, phase=args.phase)
    results = run_grid(ALL_SCHEMES, seeds, budget, workers=args.workers)
    ranking = summarize(results)
    with open(outdir / "ranking.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["rank", "scheme", "median_artifact_ratio", "mean_amplitude", "hits", "runs"])
        for i, s in enumerate(ranking, 1):
            w.writerow([i, s.scheme.label, f"{s.median_artifact_ratio:.6f}",
                        f"{s.mean_amplitude:.6f}", s.hits, s.runs])
    with open(outdir / "runs.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scheme", "seed", "dominant_bin", "amplitude", "artifact_ratio"])
        for r in results:
            w.writerow([r.scheme.label, r.seed, r.dominant_bin, f"{r.amplitude:.6f}",
                        f"{r.artifact_ratio:.6f}"])
    curves = {}
    for scheme in ALL_SCHEMES:
        waves = [r.waveform for r in results if r.scheme is scheme]
        curves[scheme.label] = np.mean(waves, axis=0)
    real = gen_sinusoid_toy(args.n, seed=seeds[0], phase=args.phase).samples[:, 0].mean(axis=0)
    curves = {"real": real, **curves}
    with open(outdir / "waveforms.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", *curves])
        for i in range(len(real)):
            w.writerow([i, *(f"{float(c[i]):.8g}" for c in curves.values())])
    if args.plot:
        (outdir / "overlay.svg").write_text(
            svg_line_plot(curves, "Averaged sinusoid by upsampling scheme", "sample", "amplitude")
        )
    print("rank scheme      median_ratio mean_amp hits")
    for i, s in enumerate(ranking, 1):
        print(f"{i:4d} {s.scheme.label:10s}  {s.median_artifact_ratio:.4f}      "
              f"{s.mean_amplitude:.3f}   {s.hits}/{s.runs}")
    return EXIT_OK


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="waveforge", description="WGAN-GP time-series generation toolkit")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic dataset")
    _flag(p, "--kind", choices=["sinusoid", "erp"])
    _flag(p, "--n", type=int)
    _flag(p, "--freq", type=float)
    _flag(p, "--amp", type=float)
    _flag(p, "--noise-var", type=float)
    _flag(p, "--phase", choices=["random", "fixed"])
    _flag(p, "--n-per-class", type=int)
    _flag(p, "--channels", type=int, choices=[1, 64])
    _flag(p, "--seed", type=int)
    _flag(p, "-o", "--output")
    p.set_defaults(func=cmd_gen_data, defaults=GEN_DATA_DEFAULTS)

    p = sub.add_parser("train", help="train a WGAN-GP or CC-WGAN-GP")
    _flag(p, "--data")
    _flag(p, "--scheme", type=str)
    _flag(p, "--width", type=float)
    _flag(p, "--steps", type=int)
    _flag(p, "--seed", type=int)
    _flag(p, "--batch-size", type=int)
    _flag(p, "--ratio", type=_ratio, help="critic:generator updates, e.g. 1:5")
    _flag(p, "--lr", type=float)
    _flag(p, "--lambda-gp", type=float)
    _flag(p, "--latent-dim", type=int)
    _flag(p, "--cc", action="store_const", const=True)
    _flag(p, "--eval-every", type=int)
    _flag(p, "-o", "--output")
    _flag(p, "--log")
    p.set_defaults(func=cmd_train, defaults=TRAIN_DEFAULTS)

    p = sub.add_parser("generate", help="sample from a trained checkpoint")
    _flag(p, "-c", "--checkpoint")
    _flag(p, "-n", "--n", type=int)
    _flag(p, "--seed", type=int)
    _flag(p, "--label")
    _flag(p, "-o", "--output")
    p.set_defaults(func=cmd_generate, defaults=GENERATE_DEFAULTS)

    p = sub.add_parser("evaluate", help="GMM / spectral quality report")
    _flag(p, "--real")
    _flag(p, "--gen")
    _flag(p, "--gmm-k")
    _flag(p, "--k-max", type=int)
    _flag(p, "--covariance", choices=["diag", "full"])
    _flag(p, "--band", help="signal DFT bins, e.g. '5' or '4,5,6'")
    _flag(p, "--label")
    _flag(p, "--seed", type=int)
    _flag(p, "-o", "--output")
    _flag(p, "--no-plot", dest="plot", action="store_const", const=False)
    p.set_defaults(func=cmd_evaluate, defaults=EVALUATE_DEFAULTS)

    p = sub.add_parser("compare-upsampling", help="train all six upsampling schemes on the toy set")
    _flag(p, "--seeds")
    _flag(p, "--steps", type=int)
    _flag(p, "--width", type=float)
    _flag(p, "--n", type=int)
    _flag(p, "--phase", choices=["random", "fixed"])
    _flag(p, "--workers", type=int)
    _flag(p, "-o", "--output")
    _flag(p, "--no-plot", dest="plot", action="store_const", const=False)
    p.set_defaults(func=cmd_compare_upsampling, defaults=COMPARE_DEFAULTS)

    for action in sub.choices.values():
        action.add_argument("--config", default=None, help="flat key = value file")
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    sub = parser._subparsers._group_actions[0].choices[args.command]
    try:
        _merge(args, sub, args.defaults)
        return args.func(args)
    except UsageError as exc:
        print(f"waveforge {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DivergenceError, NonFiniteGradientError, FloatingPointError) as exc:
        step = getattr(exc, "step", None)
        where = f" at step {step}" if step is not None else ""
        print(f"waveforge {args.command}: numerical abort{where}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, DatasetFormatError, CheckpointError) as exc:
        print(f"waveforge {args.command}: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, DegenerateDataError) as exc:
        print(f"waveforge {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
