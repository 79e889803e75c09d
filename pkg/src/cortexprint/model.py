"""Shared-weight partition encoder, fusion heads and contrastive losses."""

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor
from .seeding import derive_seed

FUSIONS = ("excitation", "voting", "mlp")
N_PARTITIONS = 4
HEAD_INIT_STD = 0.1


@dataclass(frozen=True)
class EncoderConfig:
    """Plain conv blocks: 3x3 conv (pad 1), relu, 2x2 max pool per block."""

    channels: tuple = (16, 32, 64, 128)
    in_channels: int = 3
    input_size: int = 224
    fingerprint_dim: int = 512
    reduction: int = 4
    weight_scale: float = 1.0
    fusion: str = "excitation"

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        if not self.channels or min(self.channels) < 1:
            raise ValueError("encoder needs at least one block with positive width")
        if self.input_size % (2 ** len(self.channels)):
            raise ValueError(
                f"input_size {self.input_size} is not divisible by 2^{len(self.channels)}"
            )
        if self.fusion not in FUSIONS:
            raise ValueError(f"unknown fusion {self.fusion!r}; expected one of {FUSIONS}")
        if (N_PARTITIONS * self.channels[-1]) % self.reduction:
            raise ValueError("reduction must divide 4 * final channel count")
        if self.weight_scale <= 0:
            raise ValueError("weight_scale must be positive")

    @property
    def feature_channels(self):
        return self.channels[-1]

    @property
    def feature_size(self):
        return self.input_size // 2 ** len(self.channels)

    @property
    def feature_shape(self):
        return (self.feature_channels, self.feature_size, self.feature_size)

    @property
    def input_shape(self):
        return (self.in_channels, self.input_size, self.input_size)

    def to_text(self):
        return "\n".join([
            "[model]",
            f"channels = {','.join(str(c) for c in self.channels)}",
            f"in_channels = {self.in_channels}",
            f"input_size = {self.input_size}",
            f"fingerprint_dim = {self.fingerprint_dim}",
            f"reduction = {self.reduction}",
            f"weight_scale = {self.weight_scale!r}",
            f"fusion = {self.fusion}",
        ]) + "\n"

    @classmethod
    def from_text(cls, text):
        vals = {}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith(("[", "#")):
                continue
            key, _, value = line.partition("=")
            vals[key.strip()] = value.strip()
        return cls(
            channels=tuple(int(c) for c in vals["channels"].split(",")),
            in_channels=int(vals["in_channels"]),
            input_size=int(vals["input_size"]),
            fingerprint_dim=int(vals["fingerprint_dim"]),
            reduction=int(vals["reduction"]),
            weight_scale=float(vals["weight_scale"]),
            fusion=vals["fusion"],
        )


# ---------------------------------------------------------------- parameters


def _he(rng, shape, fan_in):
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


def init_encoder(cfg, seed):
    rng = np.random.default_rng(derive_seed(seed, "encoder-init"))
    params = ad.ParamSet()
    cin = cfg.in_channels
    for i, cout in enumerate(cfg.channels):
        params[f"enc.{i}.w"] = _he(rng, (cout, cin, 3, 3), cin * 9)
        params[f"enc.{i}.b"] = np.zeros(cout)
        cin = cout
    return params


def init_head(cfg, seed):
    """Plain projection of the concatenated pooled partitions (no excitation).

    The small init scale puts initial fingerprint distances near the
    default margin of 1.0.
    """
    rng = np.random.default_rng(derive_seed(seed, "head-init"))
    d = N_PARTITIONS * cfg.feature_channels
    return ad.ParamSet({
        "head.w": rng.normal(0.0, HEAD_INIT_STD / np.sqrt(d), size=(cfg.fingerprint_dim, d)),
        "head.b": np.zeros(cfg.fingerprint_dim),
    })


def init_excitation(cfg, seed, head=None):
    """Excitation block plus head.

    fc2 starts at zero, so every channel weight starts at exactly
    weight_scale and the block initially reproduces the plain head. When a
    trained plain head is passed it is copied into the excitation head.
    """
    rng = np.random.default_rng(derive_seed(seed, "excitation-init"))
    d = N_PARTITIONS * cfg.feature_channels
    hidden = d // cfg.reduction
    params = ad.ParamSet({
        "exc.fc1.w": _he(rng, (hidden, d), d),
        "exc.fc1.b": np.zeros(hidden),
        "exc.fc2.w": np.zeros((d, hidden)),
        "exc.fc2.b": np.zeros(d),
    })
    src = head if head is not None else init_head(cfg, seed)
    params["exc.head.w"] = src["head.w"].data.copy()
    params["exc.head.b"] = src["head.b"].data.copy()
    return params


def init_mlp(cfg, seed):
    rng = np.random.default_rng(derive_seed(seed, "mlp-init"))
    d = cfg.feature_channels
    return ad.ParamSet({
        "mlp.fc1.w": _he(rng, (2 * d, 4 * d), 4 * d),
        "mlp.fc1.b": np.zeros(2 * d),
        "mlp.fc2.w": _he(rng, (d, 2 * d), 2 * d),
        "mlp.fc2.b": np.zeros(d),
    })


def init_model(cfg, seed):
    params = init_encoder(cfg, seed)
    params.update(init_head(cfg, seed))
    if cfg.fusion == "excitation":
        params.update(init_excitation(cfg, seed, head=params))
    elif cfg.fusion == "mlp":
        params.update(init_mlp(cfg, seed))
    return params


# ---------------------------------------------------------------- encoder


def _as_input(img):
    if isinstance(img, Tensor):
        return img
    data = getattr(img, "data", img)
    return Tensor(np.asarray(data, dtype=np.float64))


def encode_partition(img, params, cfg):
    """Feature map C_f x h x w (or a batch N x C_f x h x w) for partition images."""
    x = _as_input(img)
    if x.shape[-3:] != cfg.input_shape:
        raise ShapeError(f"encode_partition: input {x.shape} does not match {cfg.input_shape}")
    for i in range(len(cfg.channels)):
        x = ad.conv2d(x, params[f"enc.{i}.w"], params[f"enc.{i}.b"], stride=1, pad=1)
        x = ad.max_pool(ad.relu(x))
    return x


def encode_partitions(partitions, params, cfg):
    """Four feature maps from one PartitionSet (or a (4, C, H, W) array)."""
    arr = partitions.to_array() if hasattr(partitions, "to_array") else np.asarray(partitions)
    if arr.shape[0] != N_PARTITIONS:
        raise ShapeError(f"encode_partitions: expected 4 partitions, got {arr.shape[0]}")
    return [encode_partition(Tensor(a), params, cfg) for a in arr]


def _check_four(maps):
    if len(maps) != N_PARTITIONS:
        raise ShapeError(f"fusion needs 4 partition maps, got {len(maps)}")
    for m in maps[1:]:
        if m.shape != maps[0].shape:
            raise ShapeError(f"fusion: partition maps {maps[0].shape} and {m.shape} differ")


def _channel_axis(maps):
    return maps[0].data.ndim - 3


def pooled_concat(maps):
    """Concatenate the four maps along channels and global-average-pool."""
    _check_four(maps)
    return ad.global_avg_pool(ad.concat(maps, axis=_channel_axis(maps)))


def plain_fuse(maps, params):
    """Concatenation head without excitation (stage 1 and ablation D)."""
    return ad.linear(pooled_concat(maps), params["head.w"], params["head.b"])


def excitation_weights(pooled, params, weight_scale=1.0):
    h = ad.relu(ad.linear(pooled, params["exc.fc1.w"], params["exc.fc1.b"]))
    s = ad.sigmoid(ad.linear(h, params["exc.fc2.w"], params["exc.fc2.b"]))
    return ad.normalize_mean(s, weight_scale)


def excitation_fuse(maps, params, weight_scale=1.0):
    """Excitation fusion: returns (fingerprint, channel weights of length 4*C_f)."""
    _check_four(maps)
    cat = ad.concat(maps, axis=_channel_axis(maps))
    w = excitation_weights(ad.global_avg_pool(cat), params, weight_scale)
    pooled = ad.global_avg_pool(ad.scale_channels(cat, w))
    return ad.linear(pooled, params["exc.head.w"], params["exc.head.b"]), w


def excitation_from_pooled(pooled, params, weight_scale=1.0):
    """Same as ``excitation_fuse`` given the already pooled concatenation.

    Channel scaling commutes with average pooling, so a frozen encoder's
    pooled features are all stage 2 needs.
    """
    w = excitation_weights(pooled, params, weight_scale)
    fp = ad.linear(ad.elementwise_mul(pooled, w), params["exc.head.w"], params["exc.head.b"])
    return fp, w


def voting_identify(sims):
    """Element-wise mean of four similarity (distance) matrices."""
    sims = [np.asarray(s, dtype=np.float64) for s in sims]
    if len(sims) != N_PARTITIONS:
        raise ShapeError(f"voting_identify needs 4 matrices, got {len(sims)}")
    for s in sims[1:]:
        if s.shape != sims[0].shape:
            raise ShapeError(f"voting_identify: matrices {sims[0].shape} and {s.shape} differ")
    return np.mean(sims, axis=0)


def mlp_fuse(features, params):
    """Concatenate four pooled vectors (4D) and apply 4D -> 2D -> D with relu."""
    _check_four(features)
    x = ad.concat(features, axis=features[0].data.ndim - 1)
    h = ad.relu(ad.linear(x, params["mlp.fc1.w"], params["mlp.fc1.b"]))
    return ad.linear(h, params["mlp.fc2.w"], params["mlp.fc2.b"])


def fuse(maps, params, cfg, use_excitation=True):
    """Fingerprint from four partition maps under ``cfg.fusion``.

    Voting has no fused vector; it returns the stack of per-partition
    pooled vectors (4 x C_f) whose distances are averaged later.
    """
    if cfg.fusion == "excitation" and use_excitation and "exc.head.w" in params:
        return excitation_fuse(maps, params, cfg.weight_scale)[0]
    if cfg.fusion == "mlp":
        return mlp_fuse([ad.global_avg_pool(m) for m in maps], params)
    if cfg.fusion == "voting":
        return ad.concat([ad.reshape(ad.global_avg_pool(m), (1, -1)) for m in maps], axis=0)
    return plain_fuse(maps, params)


# ---------------------------------------------------------------- losses


def nt_xent_loss(z, z_pos, tau=0.5):
    """Distance-form NT-Xent with the denominator over other samples' positives.

    L = -(1/N) sum_i log[exp(-d(z_i, z_i+)/tau) / sum_{j != i} exp(-d(z_i, z_j+)/tau)]
    """
    if z.shape != z_pos.shape or len(z.shape) != 2:
        raise ShapeError(f"nt_xent_loss: embeddings {z.shape} and {z_pos.shape} must be equal (N, D)")
    n = z.shape[0]
    if n < 2:
        raise ValueError("nt_xent_loss needs N >= 2 (the denominator would be empty)")
    if tau <= 0:
        raise ValueError("tau must be positive")
    d = ad.scalar_mul(ad.pairwise_distances(z, z_pos), 1.0 / tau)
    diag = np.eye(n, dtype=bool)
    pos = ad.sum(ad.take(ad.reshape(d, (n * n,)), np.flatnonzero(diag)))
    # log of the ratio is -d_ii - logsumexp_{j != i}(-d_ij)
    lse = ad.sum(ad.logsumexp(ad.scalar_mul(d, -1.0), axis=1, mask=~diag))
    return ad.scalar_mul(ad.add(pos, lse), 1.0 / n)


def margin_contrastive_loss(dist, y, m=1.0):
    """sum_i (1 - y_i) d_i^2 + y_i max(m - d_i, 0)^2; y = 0 marks a positive pair."""
    y = np.asarray(y, dtype=np.float64)
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0 (positive pair) or 1 (negative pair)")
    if m <= 0:
        raise ValueError("margin must be positive")
    dist = dist if isinstance(dist, Tensor) else Tensor(dist)
    if dist.shape != y.shape:
        raise ShapeError(f"margin_contrastive_loss: dist {dist.shape} and labels {y.shape} differ")
    if np.any(dist.data < 0):
        raise ValueError("distances must be non-negative")
    pos = ad.elementwise_mul(ad.square(dist), Tensor(1.0 - y))
    gap = ad.relu(ad.add_scalar(ad.scalar_mul(dist, -1.0), m))
    neg = ad.elementwise_mul(ad.square(gap), Tensor(y))
    return ad.sum(ad.add(pos, neg))


# ---------------------------------------------------------------- checkpoints


@dataclass
class Model:
    cfg: EncoderConfig
    params: ad.ParamSet
    stats: object = None  # ChannelStats used to normalize inputs
    stage: int = 2
    meta: dict = field(default_factory=dict)

    @property
    def use_excitation(self):
        return self.stage >= 2

    def maps(self, partitions):
        with ad.no_grad():
            return encode_partitions(partitions, self.params, self.cfg)

    def fingerprint(self, partitions):
        with ad.no_grad():
            return fuse(self.maps(partitions), self.params, self.cfg, self.use_excitation).data.copy()


def save_model(model, path_prefix):
    """Write ``<prefix>.pset`` and ``<prefix>.cfg``."""
    from pathlib import Path

    prefix = Path(path_prefix)
    ad.save_params(model.params, prefix.with_suffix(".pset"))
    lines = [model.cfg.to_text(), "[state]", f"stage = {model.stage}"]
    if model.stats is not None:
        lines.append(f"channels = {','.join(model.stats.channels)}")
        lines.append(f"mean = {','.join(repr(float(v)) for v in model.stats.mean)}")
        lines.append(f"std = {','.join(repr(float(v)) for v in model.stats.std)}")
    prefix.with_suffix(".cfg").write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_model(path_prefix):
    from pathlib import Path

    from .raster import ChannelStats

    prefix = Path(path_prefix)
    text = prefix.with_suffix(".cfg").read_text(encoding="utf-8")
    model_part, _, state_part = text.partition("[state]")
    cfg = EncoderConfig.from_text(model_part)
    state = {}
    for line in state_part.splitlines():
        if "=" in line:
            k, _, v = line.partition("=")
            state[k.strip()] = v.strip()
    stats = None
    if "mean" in state:
        stats = ChannelStats(
            mean=np.array([float(v) for v in state["mean"].split(",")]),
            std=np.array([float(v) for v in state["std"].split(",")]),
            channels=tuple(state["channels"].split(",")),
        )
    params = ad.load_params(prefix.with_suffix(".pset"))
    return Model(cfg=cfg, params=params, stats=stats, stage=int(state.get("stage", 2)))
