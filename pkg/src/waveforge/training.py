"""WGAN-GP and class-conditioned WGAN-GP objectives and the training loop.

Every objective here is *minimised*:

* critic:     mean(D(x_f)) - mean(D(x_r)) + lambda * GP
* generator:  -mean(D(x_f))                       (+ CE(C(x_f), y_f) when conditioned)
* classifier: CE(C(x_r), y_r) + CE(C(x_f), y_f)
"""

from __future__ import annotations

import copy
import io
import logging
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

import numpy as np

from . import tensor as T
from .data import EpochDataset
from .evaluation import roc_auc
from .layers import softmax, softmax_cross_entropy
from .models import CCCritic, Critic, Generator, ModelParams
from .tensor import ShapeError, Tensor

logger = logging.getLogger(__name__)

HOLDOUT_FRACTION = 0.2


class DivergenceError(FloatingPointError):
    """A loss went non-finite; training stops rather than clipping."""

    def __init__(self, step: int, what: str, value: float):
        self.step = step
        self.what = what
        self.value = value
        super().__init__(f"non-finite {what} ({value}) at step {step}")


class NonFiniteGradientError(FloatingPointError):
    def __init__(self, names: list[str]):
        self.names = names
        super().__init__(f"non-finite gradient in {', '.join(names[:5])}")


# ------------------------------------------------------------------ losses


def wasserstein_estimate(d_real: Tensor, d_fake: Tensor) -> Tensor:
    if d_real.size == 0 or d_fake.size == 0:
        raise ValueError("empty batch")
    if d_real.shape != d_fake.shape:
        raise ShapeError("wasserstein_estimate", d_real.shape, d_fake.shape)
    return T.sub(T.reduce_mean(d_real), T.reduce_mean(d_fake))


def interpolate(x_r: np.ndarray, x_f: np.ndarray, eps: np.ndarray) -> np.ndarray:
    """Per-sample points on the segment between real and fake."""
    e = eps.reshape((-1,) + (1,) * (x_r.ndim - 1))
    return e * x_r + (1.0 - e) * x_f


def gradient_penalty(
    critic: Callable[[Tensor], Tensor],
    x_r,
    x_f,
    rng: np.random.Generator,
) -> Tensor:
    """Mean of (||grad_x D(x_hat)||_2 - 1)^2 over random interpolates x_hat.

    The result stays differentiable in the critic's parameters.
    """
    xr = x_r.data if isinstance(x_r, Tensor) else np.asarray(x_r, dtype=np.float64)
    xf = x_f.data if isinstance(x_f, Tensor) else np.asarray(x_f, dtype=np.float64)
    if xr.shape != xf.shape:
        raise ShapeError("gradient_penalty", xr.shape, xf.shape)
    eps = rng.uniform(0.0, 1.0, size=xr.shape[0])
    x_hat = Tensor(interpolate(xr, xf, eps), requires_grad=True)
    scores = critic(x_hat)
    (g,) = T.grad(T.reduce_sum(scores), [x_hat], create_graph=True)
    axes = tuple(range(1, g.ndim))
    norms = T.sqrt(T.reduce_sum(T.mul(g, g), axes))
    return T.reduce_mean(T.power(T.sub(norms, Tensor(1.0)), 2))


def loss_discriminator(d_real: Tensor, d_fake: Tensor, gp, lam: float) -> Tensor:
    gp = gp if isinstance(gp, Tensor) else Tensor(float(gp))
    return T.add(T.neg(wasserstein_estimate(d_real, d_fake)), T.scalar_mul(gp, lam))


def loss_generator(d_fake: Tensor) -> Tensor:
    return T.neg(T.reduce_mean(d_fake))


def loss_generator_cc(d_fake: Tensor, class_logits_fake: Tensor, y_f) -> Tensor:
    return T.add(loss_generator(d_fake), softmax_cross_entropy(class_logits_fake, y_f))


def loss_classifier(class_logits_real: Tensor, y_r, class_logits_fake: Tensor, y_f) -> Tensor:
    return T.add(
        softmax_cross_entropy(class_logits_real, y_r),
        softmax_cross_entropy(class_logits_fake, y_f),
    )


# ------------------------------------------------------------------ optimiser


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: Mapping[str, Tensor],
    grads: Mapping[str, np.ndarray | None],
    state: AdamState,
    lr: float,
    betas: tuple[float, float] = (0.0, 0.9),
    eps: float = 1e-8,
) -> None:
    bad = [k for k, g in grads.items() if g is not None and not np.all(np.isfinite(g))]
    if bad:
        raise NonFiniteGradientError(bad)
    b1, b2 = betas
    state.step += 1
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        state.m[name], state.v[name] = m, v
        p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + eps)


@contextmanager
def frozen(params: Iterable[Tensor]):
    """Temporarily stop gradients flowing into ``params``."""
    params = list(params)
    saved = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad = False
    try:
        yield
    finally:
        for p, s in zip(params, saved):
            p.requires_grad = s


# ------------------------------------------------------------------ loop


@dataclass
class TrainConfig:
    lambda_gp: float = 10.0
    ratio_d_to_g: tuple[int, int] = (1, 5)
    learning_rate: float = 1e-4
    adam_betas: tuple[float, float] = (0.0, 0.9)
    batch_size: int = 64
    max_steps: int = 1000
    seed: int = 0
    latent_dim: int = 120
    class_conditioned: bool = False
    eval_every: int = 100

    def __post_init__(self):
        self.ratio_d_to_g = tuple(int(r) for r in self.ratio_d_to_g)
        self.adam_betas = tuple(float(b) for b in self.adam_betas)
        if self.lambda_gp < 0:
            raise ValueError("lambda_gp must be >= 0")
        if len(self.ratio_d_to_g) != 2 or min(self.ratio_d_to_g) < 1:
            raise ValueError("ratio_d_to_g must be two positive integers")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if len(self.adam_betas) != 2 or not all(0 <= b < 1 for b in self.adam_betas):
            raise ValueError("adam betas must lie in [0, 1)")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.max_steps < 0 or self.eval_every < 1 or self.latent_dim < 1:
            raise ValueError("max_steps >= 0, eval_every >= 1, latent_dim >= 1 required")


@dataclass
class LogRow:
    step: int
    loss_d: float
    loss_g: float
    loss_c: float | None
    w_estimate: float
    gp: float
    auc: float | None


LOG_HEADER = "step,L_D,L_G,L_C,W,gp,auc"


def _fmt(v: float | None) -> str:
    return "" if v is None else f"{v:.10g}"


def format_log(rows: Iterable[LogRow]) -> str:
    buf = io.StringIO()
    buf.write(LOG_HEADER + "\n")
    for r in rows:
        buf.write(
            ",".join(
                [str(r.step), _fmt(r.loss_d), _fmt(r.loss_g), _fmt(r.loss_c),
                 _fmt(r.w_estimate), _fmt(r.gp), _fmt(r.auc)]
            )
            + "\n"
        )
    return buf.getvalue()


@dataclass
class TrainState:
    step: int = 0
    opt_critic: AdamState = field(default_factory=AdamState)
    opt_generator: AdamState = field(default_factory=AdamState)
    best_auc: float | None = None
    best_checkpoint: dict[str, np.ndarray] | None = None
    auc_history: list[tuple[int, float]] = field(default_factory=list)
    best_auc_history: list[tuple[int, float]] = field(default_factory=list)
    logs: list[LogRow] = field(default_factory=list)
    rng: np.random.Generator | None = None

    def log_csv(self) -> str:
        return format_log(self.logs)


def holdout_split(n: int, seed: int, fraction: float = HOLDOUT_FRACTION):
    """Seeded shuffle; the last ``fraction`` of the shuffled order is held out."""
    order = np.random.default_rng([seed, 7919]).permutation(n)
    n_hold = int(round(n * fraction))
    return order[: n - n_hold], order[n - n_hold :]


class _Batches:
    """Endless seeded epoch-by-epoch minibatch indices."""

    def __init__(self, idx: np.ndarray, batch_size: int, rng: np.random.Generator):
        self.idx = idx
        self.bs = min(batch_size, len(idx))
        self.rng = rng
        self.order = np.empty(0, dtype=np.int64)

    def next(self) -> np.ndarray:
        if len(self.order) < self.bs:
            self.order = np.concatenate([self.order, self.rng.permutation(self.idx)])
        out, self.order = self.order[: self.bs], self.order[self.bs :]
        return out


def _grads(params: ModelParams) -> dict[str, np.ndarray | None]:
    return {k: t.grad for k, t in params.trainable.items()}


def _check(step: int, **values: float) -> None:
    for what, v in values.items():
        if not np.isfinite(v):
            raise DivergenceError(step, what, v)


def _class_scores(critic: CCCritic, x: np.ndarray, rng, batch: int = 256) -> np.ndarray:
    out = []
    with T.no_grad():
        for s in range(0, len(x), batch):
            logits = critic.class_forward(Tensor(x[s : s + batch]), train=False, rng=rng)
            out.append(softmax(logits).data[:, 1])
    critic.clear_cache()
    return np.concatenate(out)


def snapshot(generator: Generator, critic) -> dict[str, np.ndarray]:
    state = generator.params.state_dict()
    state.update(critic.params.state_dict())
    return state


def train(
    generator: Generator,
    critic: Critic | CCCritic,
    dataset: EpochDataset,
    cfg: TrainConfig,
    on_log: Callable[[LogRow], None] | None = None,
) -> TrainState:
    """Alternate critic and generator updates; see :class:`TrainConfig`.

    In class-conditioned mode a seeded 20% holdout is scored by the classifier
    branch every ``eval_every`` steps and the best-AUC snapshot is kept.
    """
    if dataset.n == 0:
        raise ValueError("empty dataset")
    cc = cfg.class_conditioned
    if cc and (dataset.labels is None or not isinstance(critic, CCCritic)):
        raise ValueError("class-conditioned training needs labels and a CC critic")
    if generator.spec.latent_dim != cfg.latent_dim:
        raise ValueError("generator latent_dim differs from TrainConfig.latent_dim")

    rng = np.random.default_rng(cfg.seed)
    state = TrainState(rng=rng)
    x_all = dataset.model_input()
    y_all = dataset.labels
    if cc:
        train_idx, hold_idx = holdout_split(dataset.n, cfg.seed)
    else:
        train_idx, hold_idx = np.arange(dataset.n), np.empty(0, dtype=np.int64)
    batches = _Batches(train_idx, cfg.batch_size, rng)
    n_d, n_g = cfg.ratio_d_to_g
    bs = batches.bs
    critic_params = list(critic.params.trainable.values())
    gen_params = list(generator.params.trainable.values())

    def draw_labels():
        return rng.integers(0, generator.spec.num_classes, size=bs) if cc else None

    def critic_fn(x):
        return critic.disc_forward(x, True, rng) if cc else critic(x, True, rng)

    last = dict(loss_d=np.nan, loss_g=np.nan, loss_c=None, w=np.nan, gp=np.nan)
    for step in range(1, cfg.max_steps + 1):
        for _ in range(n_d):
            idx = batches.next()
            xr = Tensor(x_all[idx])
            z = Tensor(rng.standard_normal((bs, cfg.latent_dim)))
            y_f = draw_labels()
            with T.no_grad():
                xf = Tensor(generator(z, y_f, train=True, rng=rng).data)
            d_r = critic_fn(xr)
            d_f = critic_fn(xf)
            gp = gradient_penalty(critic_fn, xr, xf, rng)
            loss = loss_discriminator(d_r, d_f, gp, cfg.lambda_gp)
            if cc:
                l_c = loss_classifier(
                    critic.class_forward(xr, True, rng), y_all[idx],
                    critic.class_forward(xf, True, rng), y_f,
                )
                last["loss_c"] = l_c.item()
                loss = T.add(loss, l_c)
            w = wasserstein_estimate(d_r, d_f).item()
            _check(step, critic_loss=loss.item())
            critic.params.zero_grad()
            T.backward(loss)
            adam_step(critic.params.trainable, _grads(critic.params), state.opt_critic,
                      cfg.learning_rate, cfg.adam_betas)
            if cc:
                critic.clear_cache()
            last.update(loss_d=loss.item(), w=w, gp=gp.item())

        for _ in range(n_g):
            z = Tensor(rng.standard_normal((bs, cfg.latent_dim)))
            y_f = draw_labels()
            with frozen(critic_params):
                xf = generator(z, y_f, train=True, rng=rng)
                if cc:
                    loss_g = loss_generator_cc(
                        critic.disc_forward(xf, True, rng), critic.class_forward(xf, True, rng), y_f
                    )
                else:
                    loss_g = loss_generator(critic(xf, True, rng))
            _check(step, generator_loss=loss_g.item())
            generator.params.zero_grad()
            T.backward(loss_g)
            adam_step(generator.params.trainable, _grads(generator.params), state.opt_generator,
                      cfg.learning_rate, cfg.adam_betas)
            if cc:
                critic.clear_cache()
            last["loss_g"] = loss_g.item()

        state.step = step
        if step % cfg.eval_every == 0 or step == cfg.max_steps:
            auc = None
            if cc:
                auc = roc_auc(_class_scores(critic, x_all[hold_idx], rng), y_all[hold_idx])
                state.auc_history.append((step, auc))
                if state.best_auc is None or auc > state.best_auc:
                    state.best_auc = auc
                    state.best_checkpoint = snapshot(generator, critic)
                state.best_auc_history.append((step, state.best_auc))
            row = LogRow(step, last["loss_d"], last["loss_g"], last["loss_c"], last["w"],
                         last["gp"], auc)
            state.logs.append(row)
            if on_log is not None:
                on_log(row)
            logger.debug("step %d: %s", step, row)
    for p in gen_params + critic_params:
        p.grad = None
    return state


def copy_state(state: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return copy.deepcopy(state)
