"""Gradient-check cases for every operator and both losses.

Each case builds a scalar function of a small ParamSet from a seed. Inputs
to relu (and to max pooling, where ties matter) are kept at least 1e-2
away from the kinks.
"""

import numpy as np

from . import autodiff as ad
from . import model as M
from .autodiff import Tensor


def _away_from_zero(rng, shape, gap=1e-2):
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < gap, np.sign(x + 1e-300) * (gap + np.abs(x)), x)


def _distinct(rng, shape):
    """Values with pairwise gaps so 2x2 maxima are unique."""
    n = int(np.prod(shape))
    return (rng.permutation(n) * 0.05 + rng.uniform(0, 0.01, n)).reshape(shape) - 0.025 * n


def case_conv2d(seed):
    rng = np.random.default_rng(seed)
    x = Tensor(rng.normal(size=(2, 5, 5)))
    p = ad.ParamSet({"w": rng.normal(size=(3, 2, 3, 3)), "b": rng.normal(size=3)})
    stride = 1 + seed % 2
    pad = seed % 2

    def f(q):
        y = ad.conv2d(x, q["w"], q["b"], stride=stride, pad=pad)
        return ad.sum(ad.elementwise_mul(y, Tensor(rng_fixed(seed, y.shape))))

    return f, p


def rng_fixed(seed, shape):
    return np.random.default_rng(seed + 7919).normal(size=shape)


def case_conv2d_input(seed):
    rng = np.random.default_rng(seed)
    w = Tensor(rng.normal(size=(2, 3, 3, 3)))
    p = ad.ParamSet({"x": rng.normal(size=(2, 3, 6, 6))})

    def f(q):
        y = ad.conv2d(q["x"], w, None, stride=1, pad=1)
        return ad.sum(ad.elementwise_mul(y, Tensor(rng_fixed(seed, y.shape))))

    return f, p


def case_relu(seed):
    rng = np.random.default_rng(seed)
    p = ad.ParamSet({"x": _away_from_zero(rng, (4, 3))})
    c = Tensor(rng.normal(size=(4, 3)))
    return (lambda q: ad.sum(ad.elementwise_mul(ad.relu(q["x"]), c))), p


def case_sigmoid(seed):
    rng = np.random.default_rng(seed)
    p = ad.ParamSet({"x": rng.normal(size=(5,))})
    return (lambda q: ad.sum(ad.sigmoid(ad.sigmoid(q["x"])))), p


def case_linear(seed):
    rng = np.random.default_rng(seed)
    p = ad.ParamSet({"w": rng.normal(size=(3, 4)), "b": rng.normal(size=3), "x": rng.normal(size=(2, 4))})
    c = Tensor(rng.normal(size=(2, 3)))
    return (lambda q: ad.sum(ad.elementwise_mul(ad.linear(q["x"], q["w"], q["b"]), c))), p


def case_max_pool(seed):
    rng = np.random.default_rng(seed)
    p = ad.ParamSet({"x": _distinct(rng, (2, 4, 6))})
    c = Tensor(rng.normal(size=(2, 2, 3)))
    return (lambda q: ad.sum(ad.elementwise_mul(ad.max_pool(q["x"]), c))), p


def case_global_avg_pool(seed):
    rng = np.random.default_rng(seed)
    p = ad.ParamSet({"x": rng.normal(size=(3, 4, 4))})
    c = Tensor(rng.normal(size=(3,)))
    return (lambda q: ad.sum(ad.elementwise_mul(ad.global_avg_pool(q["x"]), c))), p


def case_concat_flatten(seed):
    rng = np.random.default_rng(seed)
    p = ad.ParamSet({"a": rng.normal(size=(2, 3, 3)), "b": rng.normal(size=(1, 3, 3))})
    c = Tensor(rng.normal(size=(27,)))
    return (lambda q: ad.sum(ad.elementwise_mul(ad.flatten(ad.concat([q["a"], q["b"]], 0)), c))), p


def case_arith(seed):
    """add, sub, scalar_mul, elementwise_mul, square, exp, log, mean."""
    rng = np.random.default_rng(seed)
    p = ad.ParamSet({"a": rng.normal(size=(3, 2)), "b": rng.uniform(0.5, 2.0, size=(3, 2))})

    def f(q):
        s = ad.add(ad.scalar_mul(q["a"], 0.7), ad.elementwise_mul(q["a"], q["b"]))
        t = ad.sub(ad.exp(ad.scalar_mul(q["a"], 0.3)), ad.log(q["b"]))
        return ad.mean(ad.add(ad.square(s), t))

    return f, p


def case_euclidean_distance(seed):
    rng = np.random.default_rng(seed)
    p = ad.ParamSet({"a": rng.normal(size=(3, 4)), "b": rng.normal(size=(3, 4))})
    return (lambda q: ad.sum(ad.euclidean_distance(q["a"], q["b"]))), p


def case_pairwise_take_logsumexp(seed):
    rng = np.random.default_rng(seed)
    p = ad.ParamSet({"a": rng.normal(size=(3, 4)), "b": rng.normal(size=(3, 4))})
    mask = ~np.eye(3, dtype=bool)

    def f(q):
        d = ad.pairwise_distances(q["a"], q["b"])
        pick = ad.take(ad.reshape(d, (9,)), [0, 4, 5, 4])
        return ad.add(ad.sum(pick), ad.sum(ad.logsumexp(d, axis=1, mask=mask)))

    return f, p


def case_channel_ops(seed):
    """scale_channels and normalize_mean (the excitation rescale)."""
    rng = np.random.default_rng(seed)
    p = ad.ParamSet({"x": rng.normal(size=(2, 3, 3, 3)), "w": rng.uniform(0.2, 1.0, size=(2, 3))})
    c = Tensor(rng.normal(size=(2, 3, 3, 3)))

    def f(q):
        w = ad.normalize_mean(q["w"], 1.3)
        return ad.sum(ad.elementwise_mul(ad.scale_channels(q["x"], w), c))

    return f, p


def _small_model(seed, fusion="excitation"):
    cfg = M.EncoderConfig(channels=(3, 4), input_size=8, fingerprint_dim=6, reduction=4, fusion=fusion)
    # the plain head is unused under excitation or mlp fusion
    params = ad.ParamSet({n: t for n, t in M.init_model(cfg, seed).items() if not n.startswith("head.")})
    rng = np.random.default_rng(seed)
    for name, t in params.items():
        if t.data.ndim and not np.any(t.data):
            t.data[...] = rng.normal(0, 0.3, size=t.shape)
    return cfg, params


def _partition_inputs(seed, n):
    rng = np.random.default_rng(seed + 1)
    return [Tensor(rng.normal(size=(n, 3, 8, 8))) for _ in range(4)]


def case_margin_loss(seed):
    cfg, params = _small_model(seed)
    xa, xb = _partition_inputs(seed, 3), _partition_inputs(seed + 50, 3)
    y = np.array([0, 0, 0, 1, 1, 1])
    ia = np.array([0, 1, 2, 0, 0, 1])
    ib = np.array([0, 1, 2, 1, 2, 2])

    def f(q):
        za, _ = M.excitation_fuse([M.encode_partition(x, q, cfg) for x in xa], q)
        zb, _ = M.excitation_fuse([M.encode_partition(x, q, cfg) for x in xb], q)
        d = ad.take(ad.reshape(ad.pairwise_distances(za, zb), (9,)), ia * 3 + ib)
        return M.margin_contrastive_loss(d, y, m=2.0)

    return f, params


def case_nt_xent_loss(seed):
    cfg, params = _small_model(seed)
    xa, xb = _partition_inputs(seed, 3), _partition_inputs(seed + 50, 3)

    def f(q):
        za, _ = M.excitation_fuse([M.encode_partition(x, q, cfg) for x in xa], q)
        zb, _ = M.excitation_fuse([M.encode_partition(x, q, cfg) for x in xb], q)
        return M.nt_xent_loss(za, zb, tau=0.5)

    return f, params


def case_mlp_fuse(seed):
    cfg, params = _small_model(seed, fusion="mlp")
    xa = _partition_inputs(seed, 2)
    c = Tensor(np.random.default_rng(seed + 3).normal(size=(2, cfg.feature_channels)))

    def f(q):
        feats = [ad.global_avg_pool(M.encode_partition(x, q, cfg)) for x in xa]
        return ad.sum(ad.elementwise_mul(M.mlp_fuse(feats, q), c))

    return f, params


CASES = {
    "conv2d": case_conv2d,
    "conv2d_input": case_conv2d_input,
    "relu": case_relu,
    "sigmoid": case_sigmoid,
    "linear": case_linear,
    "max_pool": case_max_pool,
    "global_avg_pool": case_global_avg_pool,
    "concat_flatten": case_concat_flatten,
    "arithmetic": case_arith,
    "euclidean_distance": case_euclidean_distance,
    "pairwise_take_logsumexp": case_pairwise_take_logsumexp,
    "channel_scaling": case_channel_ops,
    "mlp_fuse": case_mlp_fuse,
    "margin_loss": case_margin_loss,
    "nt_xent_loss": case_nt_xent_loss,
}


def run_all(seeds=range(20), eps=1e-6):
    """Worst relative error per case over ``seeds``."""
    out = {}
    for name, case in CASES.items():
        worst = 0.0
        for s in seeds:
            f, params = case(s)
            worst = max(worst, ad.grad_check(f, params, eps))
        out[name] = worst
    return out
