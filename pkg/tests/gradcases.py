"""Randomised finite-difference cases for every primitive, layer and loss.

Each builder takes a seeded Generator and returns ``(fn, inputs, tol)``.
Inputs are kept away from kinks (leaky_relu at 0, sqrt at 0) so central
differences are valid.
"""

from __future__ import annotations

import numpy as np

from waveforge import tensor as T
from waveforge import layers as L
from waveforge import training as tr
from waveforge.conv import conv2d, transposed_conv2d
from waveforge.tensor import Tensor

TOL = 1e-4
NESTED_TOL = 1e-3


def _t(rng, *shape, lo=None):
    a = rng.standard_normal(shape)
    if lo is not None:
        a = lo + np.abs(a)
    return Tensor(a, requires_grad=True)


def _away_from_zero(rng, *shape):
    a = rng.standard_normal(shape)
    a = np.sign(a) * (0.1 + np.abs(a))
    return Tensor(a, requires_grad=True)


def c_add(rng):
    return T.add, [_t(rng, 3, 4), _t(rng, 3, 4)], TOL


def c_sub(rng):
    return T.sub, [_t(rng, 5), _t(rng, 5)], TOL


def c_mul(rng):
    return T.mul, [_t(rng, 2, 3), _t(rng, 2, 3)], TOL


def c_scalar_mul(rng):
    c = float(rng.normal())
    return (lambda a: T.scalar_mul(a, c)), [_t(rng, 4, 2)], TOL


def c_div(rng):
    return T.div, [_t(rng, 3, 3), _t(rng, 3, 3, lo=0.5)], TOL


def c_power(rng):
    p = float(rng.choice([2.0, 3.0, 0.5, -1.0]))
    return (lambda a: T.power(a, p)), [_t(rng, 6, lo=0.3)], TOL


def c_exp_log(rng):
    return (lambda a: T.log(T.add(T.exp(a), Tensor(1.0)))), [_t(rng, 2, 5)], TOL


def c_sqrt(rng):
    return T.sqrt, [_t(rng, 7, lo=0.2)], TOL


def c_reduce_sum(rng):
    axis = int(rng.integers(0, 3))
    return (lambda a: T.reduce_sum(a, axis)), [_t(rng, 2, 3, 4)], TOL


def c_reduce_mean(rng):
    return (lambda a: T.reduce_mean(a, (0, 2), keepdims=True)), [_t(rng, 3, 2, 4)], TOL


def c_matmul(rng):
    m, k, n = rng.integers(1, 5, size=3)
    return T.matmul, [_t(rng, m, k), _t(rng, k, n)], TOL


def c_shape_ops(rng):
    def f(a):
        b = T.transpose(T.reshape(a, (4, 3)))
        return T.expand(T.reduce_sum(b, 1, keepdims=True), (3, 5))

    return f, [_t(rng, 2, 6)], TOL


def c_crop_pad(rng):
    return (lambda a: T.pad(T.crop(a, (1, 0), (2, 3)), (0, 2), (1, 0))), [_t(rng, 4, 4)], TOL


def c_take_rows(rng):
    idx = rng.integers(0, 4, size=6)
    return (lambda tab: T.take_rows(tab, idx)), [_t(rng, 4, 3)], TOL


def c_linear_along_axis(rng):
    m = rng.standard_normal((5, 3))
    return (lambda a: T.linear_along_axis(a, m, 1)), [_t(rng, 2, 3, 2)], TOL


def c_conv2d(rng):
    stride = (int(rng.integers(1, 3)), int(rng.integers(1, 3)))
    pad = (int(rng.integers(0, 2)), int(rng.integers(0, 2)))
    return (lambda x, k: conv2d(x, k, stride, pad)), [_t(rng, 2, 2, 5, 6), _t(rng, 3, 2, 3, 2)], TOL


def c_transposed_conv2d(rng):
    s = int(rng.integers(1, 4))
    k = L.deconv_kernel_size(s)
    pad = (s - s % 2) // 2
    return (
        lambda x, w: transposed_conv2d(x, w, (1, s), (0, pad)),
        [_t(rng, 2, 2, 1, 4), _t(rng, 2, 3, 1, k)],
        TOL,
    )


def c_leaky_relu(rng):
    return L.leaky_relu, [_away_from_zero(rng, 3, 4)], TOL


def c_dense(rng):
    return L.dense, [_t(rng, 4, 3), _t(rng, 3, 5), _t(rng, 5)], TOL


def c_batch_norm(rng):
    c = 3
    rm, rv = Tensor(np.zeros(c)), Tensor(np.ones(c))
    return (
        lambda x, g, b: L.batch_norm(x, g, b, rm, rv, train=True),
        [_t(rng, 4, c, 1, 5), _t(rng, c), _t(rng, c)],
        TOL,
    )


def c_batch_norm_eval(rng):
    c = 2
    rm, rv = Tensor(rng.standard_normal(c)), Tensor(0.5 + rng.random(c))
    return (
        lambda x, g, b: L.batch_norm(x, g, b, rm, rv, train=False),
        [_t(rng, 3, c, 2, 2), _t(rng, c), _t(rng, c)],
        TOL,
    )


def c_center_crop(rng):
    return (lambda x: L.center_crop(x, 3, 4)), [_t(rng, 2, 1, 6, 7)], TOL


def c_zero_mean(rng):
    return L.zero_mean_normalize, [_t(rng, 3, 1, 2, 5)], TOL


def c_upsample(rng):
    method = str(rng.choice(["nearest", "bicubic"]))
    f = int(rng.integers(2, 4))
    return (lambda x: L.upsample_interpolate(x, f, method, axes=(-1,))), [_t(rng, 2, 2, 1, 5)], TOL


def c_gaussian_noise(rng):
    seed = int(rng.integers(0, 2**31))
    return (
        lambda x: L.gaussian_noise(x, 0.05, True, np.random.default_rng(seed)),
        [_t(rng, 3, 4)],
        TOL,
    )


def c_class_embedding(rng):
    labels = rng.integers(0, 2, size=5)

    def f(z, table):
        return T.mul(z, L.class_embedding(labels, table))

    return f, [_t(rng, 5, 3), _t(rng, 2, 3)], TOL


def c_softmax_ce(rng):
    labels = rng.integers(0, 3, size=4)
    return (lambda z: L.softmax_cross_entropy(z, labels)), [_t(rng, 4, 3)], TOL


def c_softmax(rng):
    return L.softmax, [_t(rng, 3, 4)], TOL


def c_wgan_losses(rng):
    lam = float(rng.uniform(0, 20))

    def f(dr, df, gp):
        return T.add(
            tr.loss_discriminator(dr, df, T.reduce_sum(gp), lam), tr.loss_generator(df)
        )

    return f, [_t(rng, 6, 1), _t(rng, 6, 1), _t(rng, 1, lo=0.0)], TOL


def c_cc_losses(rng):
    yr, yf = rng.integers(0, 2, size=5), rng.integers(0, 2, size=5)

    def f(df, cr, cf):
        return T.add(tr.loss_generator_cc(df, cf, yf), tr.loss_classifier(cr, yr, cf, yf))

    return f, [_t(rng, 5, 1), _t(rng, 5, 2), _t(rng, 5, 2)], TOL


def c_nested_quadratic(rng):
    """||grad_x x^T A x|| as a function of A and x (second-order path)."""

    def f(a, x):
        q = T.reduce_sum(T.mul(T.matmul(x, a), x))
        (g,) = T.grad(q, [x], create_graph=True)
        return T.sqrt(T.reduce_sum(T.mul(g, g)))

    return f, [_t(rng, 3, 3), _t(rng, 1, 3)], NESTED_TOL


def c_nested_gradient_penalty(rng):
    """Penalty of a 2-layer leaky critic, differentiated w.r.t. its weights."""
    xr = rng.standard_normal((4, 3))
    xf = rng.standard_normal((4, 3))
    seed = int(rng.integers(0, 2**31))

    def f(w1, b1, w2):
        def critic(x):
            return L.dense(L.leaky_relu(L.dense(x, w1, b1)), w2)

        return tr.gradient_penalty(critic, xr, xf, np.random.default_rng(seed))

    return f, [_t(rng, 3, 5), _t(rng, 5), _t(rng, 5, 1)], NESTED_TOL


CASES = {
    name[2:]: fn for name, fn in dict(globals()).items() if name.startswith("c_") and callable(fn)
}
NESTED = {"nested_quadratic", "nested_gradient_penalty"}


def all_configs(seeds_per_case: int = 4):
    """(case name, seed) pairs, every case under ``seeds_per_case`` seeds."""
    return [(name, s) for name in sorted(CASES) for s in range(seeds_per_case)]


def run_case(name: str, seed: int):
    from waveforge.gradcheck import check_grad

    fn, inputs, tol = CASES[name](np.random.default_rng([seed, len(name)]))
    return check_grad(fn, inputs), tol
