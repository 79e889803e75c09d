"""Two-stage training, cross-validation, Top-k metrics and reporting."""

import csv
import hashlib
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import model as M
from .autodiff import Tensor
from .raster import (
    FEATURE_NAMES,
    PARTITION_LABELS,
    AugmentPolicy,
    apply_stats,
    augment_pair,
    augment_view,
    build_partitions,
    channel_stats,
    select_channels,
)
from .seeding import derive_seed


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 5e-4
    momentum: float = 0.9
    weight_decay: float = 5e-5
    epochs_per_stage: int = 8
    pretrain_batch: int = 16
    finetune_batch: int = 8
    margin: float = 1.0
    tau: float = 0.5
    loss: str = "margin"
    negatives: str = "unordered"
    seed: int = 0
    augment: AugmentPolicy = field(default_factory=AugmentPolicy)

    def __post_init__(self):
        for name in ("lr", "margin", "tau", "pretrain_batch", "finetune_batch"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.epochs_per_stage < 0 or self.momentum < 0 or self.weight_decay < 0:
            raise ValueError("epochs, momentum and weight_decay must be non-negative")
        if self.loss not in ("margin", "nt_xent"):
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.negatives not in ("unordered", "ordered"):
            raise ValueError(f"unknown negatives mode {self.negatives!r}")
        if min(self.pretrain_batch, self.finetune_batch) < 2:
            raise ValueError("batch sizes must be at least 2 (negatives come from the batch)")


# ---------------------------------------------------------------- datasets


@dataclass
class ScanData:
    """Rasterized partitions for one scan of one subject."""

    subject_id: str
    scan_index: int
    partitions: object


@dataclass
class Dataset:
    """Rasterized cohort: two-scan subjects and single-scan subjects."""

    pairs: list  # list of (ScanData, ScanData)
    singles: list  # list of ScanData
    size: int = 0

    @property
    def n_pairs(self):
        return len(self.pairs)


def rasterize_cohort(cohort, size=112, tol=0.05, max_iter=50):
    """Build partitions for every scan of a synth.Cohort."""
    def scan_data(subj, k):
        left, right = subj.scans[k]
        return ScanData(subj.subject_id, k, build_partitions(left, right, size, size, tol, max_iter))

    pairs = [(scan_data(s, 0), scan_data(s, 1)) for s in cohort.pairs]
    singles = [scan_data(s, 0) for s in cohort.singles]
    return Dataset(pairs, singles, size)


def _stack(views):
    """(B, 4, C, H, W) array from a list of PartitionSets."""
    return np.stack([v.to_array() for v in views])


# ---------------------------------------------------------------- pairs


@dataclass
class Batch:
    views_a: list
    views_b: list
    subjects: list
    pair_a: np.ndarray
    pair_b: np.ndarray
    labels: np.ndarray


def pair_indices(n, negatives="unordered"):
    """Row/column indices into the (a, b) distance matrix plus margin labels."""
    if n < 2:
        raise ValueError("a batch needs at least 2 subjects to form negatives")
    ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    keep = ii < jj if negatives == "unordered" else ii != jj
    a = np.concatenate([np.arange(n), ii[keep]])
    b = np.concatenate([np.arange(n), jj[keep]])
    labels = np.concatenate([np.zeros(n), np.ones(int(keep.sum()))])
    return a, b, labels


def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    chunks = [order[i:i + batch_size] for i in range(0, n, batch_size)]
    if len(chunks) > 1 and len(chunks[-1]) < 2:
        chunks[-2] = np.concatenate([chunks[-2], chunks[-1]])
        chunks.pop()
    return chunks


def make_training_pairs(singles=None, pairs=None, policy=None, seed=0, batch_size=16,
                        negatives="unordered", epoch=0):
    """Batches of (view_a, view_b) with margin labels (0 positive, 1 negative).

    A single scan contributes two augmented views of itself (the default
    policy when ``policy`` is None). A real pair contributes its two scans,
    each augmented with ``policy`` when one is given and left as is
    otherwise.
    """
    items = [("single", s) for s in singles or []] + [("pair", p) for p in pairs or []]
    if not items:
        raise ValueError("no training data")
    single_policy = policy or AugmentPolicy()
    rng = np.random.default_rng(derive_seed(seed, f"batches-{epoch}"))
    out = []
    for chunk in _batches(len(items), batch_size, rng):
        if len(chunk) < 2:
            raise ValueError("a batch with a single subject has no negatives")
        va, vb, subs = [], [], []
        for i in chunk:
            kind, item = items[i]
            if kind == "single":
                key = f"augment-{epoch}-{item.subject_id}-{item.scan_index}"
                a, b = augment_pair(item.partitions, single_policy, derive_seed(seed, key))
                sid = item.subject_id
            else:
                a, b = item[0].partitions, item[1].partitions
                sid = item[0].subject_id
                if policy is not None:
                    key = f"augment-{epoch}-{sid}-pair"
                    a = augment_view(a, policy, derive_seed(seed, key + "-0"))
                    b = augment_view(b, policy, derive_seed(seed, key + "-1"))
            va.append(a)
            vb.append(b)
            subs.append(sid)
        pa, pb, labels = pair_indices(len(chunk), negatives)
        # a subject listed twice is never its own negative
        ok = (labels == 0) | (np.asarray(subs)[pa] != np.asarray(subs)[pb])
        out.append(Batch(va, vb, subs, pa[ok], pb[ok], labels[ok]))
    return out


# ---------------------------------------------------------------- losses on batches


def batch_loss(za, zb, batch, cfg):
    if cfg.loss == "nt_xent":
        return M.nt_xent_loss(za, zb, cfg.tau)
    d = ad.pairwise_distances(za, zb)
    n = za.shape[0]
    flat = ad.take(ad.reshape(d, (n * n,)), batch.pair_a * n + batch.pair_b)
    return M.margin_contrastive_loss(flat, batch.labels, cfg.margin)


def _embed_batch(views, params, mcfg, use_excitation=False):
    arr = _stack(views)
    maps = [M.encode_partition(Tensor(arr[:, k]), params, mcfg) for k in range(len(PARTITION_LABELS))]
    return M.fuse(maps, params, mcfg, use_excitation)


def _check_finite(loss, where):
    if not np.isfinite(loss.item()):
        raise TrainingError(f"non-finite loss during {where}; lower the learning rate or check inputs")


def _run_epochs(params, trainable, batches_for_epoch, n_epochs, forward, cfg, where, state):
    history = []
    for e in range(n_epochs):
        losses = []
        for batch in batches_for_epoch(e):
            trainable.zero_grad()
            loss = batch_loss(*forward(batch), batch, cfg)
            _check_finite(loss, f"{where} epoch {e}")
            ad.backward(loss)
            ad.sgd_step(trainable, None, cfg.lr, cfg.momentum, cfg.weight_decay, state)
            losses.append(loss.item())
        history.append(float(np.mean(losses)))
    return history


def _trainable(params, prefixes):
    return ad.ParamSet({n: t for n, t in params.items() if n.startswith(prefixes)})


@dataclass
class Stage1Result:
    params: ad.ParamSet
    pretrain_history: list
    finetune_history: list


def train_stage1(params, singles, real_pairs, cfg, mcfg, pretrain=True):
    """Pre-train on augmented singles and augmented real pairs, then
    fine-tune on the unaugmented real pairs.

    Only encoder and plain-head parameters are touched; the excitation
    block is bypassed. ``params`` is updated in place and returned.
    """
    trainable = _trainable(params, ("enc.", "head."))
    vmcfg = replace(mcfg, fusion="excitation")  # plain head path during stage 1

    def forward(batch):
        return (_embed_batch(batch.views_a, params, vmcfg, False),
                _embed_batch(batch.views_b, params, vmcfg, False))

    state = {}
    pre = []
    if pretrain and cfg.epochs_per_stage:
        pre = _run_epochs(
            params, trainable,
            lambda e: make_training_pairs(singles, real_pairs, cfg.augment, derive_seed(cfg.seed, "pretrain"),
                                          cfg.pretrain_batch, cfg.negatives, e),
            cfg.epochs_per_stage, forward, cfg, "pre-training", state)
    fine = []
    if real_pairs and cfg.epochs_per_stage:
        state = {}
        fine = _run_epochs(
            params, trainable,
            lambda e: make_training_pairs(None, real_pairs, None, derive_seed(cfg.seed, "finetune"),
                                          cfg.finetune_batch, cfg.negatives, e),
            cfg.epochs_per_stage, forward, cfg, "fine-tuning", state)
    return Stage1Result(params, pre, fine)


def pooled_features(views, params, mcfg):
    """Frozen-encoder pooled concatenation (N, 4*C_f) for a list of PartitionSets."""
    out = []
    with ad.no_grad():
        for v in views:
            maps = M.encode_partitions(v, params, mcfg)
            out.append(M.pooled_concat(maps).data)
    return np.stack(out)


@dataclass
class Stage2Result:
    params: ad.ParamSet
    history: list
    weights: np.ndarray  # mean channel weights over the training scans


def train_stage2(params, real_pairs, cfg, mcfg):
    """Train excitation and head on real pairs with the encoder frozen.

    The encoder checksum is compared before and after; any drift raises.
    """
    if "exc.head.w" not in params:
        params.update(M.init_excitation(mcfg, cfg.seed, head=params))
    enc = _trainable(params, ("enc.",))
    before = enc.checksum()
    trainable = _trainable(params, ("exc.",))
    pa = pooled_features([a.partitions for a, _ in real_pairs], params, mcfg)
    pb = pooled_features([b.partitions for _, b in real_pairs], params, mcfg)

    def batches(e):
        rng = np.random.default_rng(derive_seed(derive_seed(cfg.seed, "stage2"), f"batches-{e}"))
        out = []
        for chunk in _batches(len(real_pairs), cfg.finetune_batch, rng):
            a, b, labels = pair_indices(len(chunk), cfg.negatives)
            out.append((chunk, Batch(None, None, None, a, b, labels)))
        return out

    def forward(item):
        chunk, _ = item
        za, _ = M.excitation_from_pooled(Tensor(pa[chunk]), params, mcfg.weight_scale)
        zb, _ = M.excitation_from_pooled(Tensor(pb[chunk]), params, mcfg.weight_scale)
        return za, zb

    history = []
    state = {}
    for e in range(cfg.epochs_per_stage):
        losses = []
        for item in batches(e):
            trainable.zero_grad()
            loss = batch_loss(*forward(item), item[1], cfg)
            _check_finite(loss, f"stage 2 epoch {e}")
            ad.backward(loss)
            ad.sgd_step(trainable, None, cfg.lr, cfg.momentum, cfg.weight_decay, state)
            losses.append(loss.item())
        history.append(float(np.mean(losses)))
    if enc.checksum() != before:
        raise TrainingError("encoder parameters changed during stage 2")
    with ad.no_grad():
        _, w = M.excitation_from_pooled(Tensor(np.concatenate([pa, pb])), params, mcfg.weight_scale)
    return Stage2Result(params, history, w.data.mean(axis=0))


# ---------------------------------------------------------------- evaluation


def fingerprint(left, right, model, size=None):
    """Fingerprint of one scan: partitions, saved normalization, encode, fuse."""
    size = size or model.cfg.input_size
    ps = build_partitions(left, right, size, size)
    if model.stats is not None:
        ps = apply_stats(ps, model.stats)
    return model.fingerprint(ps)


def similarity_matrix(f1, f2):
    """Euclidean distances between scan-1 rows and scan-2 columns."""
    a = np.asarray(f1, dtype=np.float64)
    b = np.asarray(f2, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ValueError(f"fingerprint arrays {a.shape} and {b.shape} are incompatible")
    diff = a[:, None, :] - b[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


def topk_accuracy(sim, k):
    """Fraction of rows whose diagonal is among the k smallest; ties count against self."""
    sim = np.asarray(sim, dtype=np.float64)
    if k < 1:
        raise ValueError("k must be at least 1")
    if sim.ndim != 2 or sim.shape[0] != sim.shape[1]:
        raise ValueError(f"similarity matrix must be square, got {sim.shape}")
    n = sim.shape[0]
    self_d = np.diag(sim)
    ahead = np.sum(sim <= self_d[:, None], axis=1) - 1  # competitors tied or closer
    return float(np.mean(ahead < k)) if n else 0.0


@dataclass
class Metrics:
    top1: float
    top5: float
    rounds: list  # list of (top1, top5) per round
    folds: list = field(default_factory=list)  # (round, fold, n_test, top1, top5)


def _eval_fold(params, mcfg, stats, test_pairs, stage, channels=None):
    views = []
    for a, b in test_pairs:
        pa, pb = apply_stats(a.partitions, stats), apply_stats(b.partitions, stats)
        if channels is not None:
            pa, pb = select_channels(pa, channels), select_channels(pb, channels)
        views.append((pa, pb))
    model = M.Model(mcfg, params, stats, stage)
    if mcfg.fusion == "voting":
        with ad.no_grad():
            fa = [M.fuse(model.maps(a), params, mcfg).data for a, _ in views]
            fb = [M.fuse(model.maps(b), params, mcfg).data for _, b in views]
        sims = [similarity_matrix([f[k] for f in fa], [f[k] for f in fb]) for k in range(4)]
        sim = M.voting_identify(sims)
    else:
        sim = similarity_matrix([model.fingerprint(a) for a, _ in views],
                                [model.fingerprint(b) for _, b in views])
    return topk_accuracy(sim, 1), topk_accuracy(sim, 5), sim


@dataclass(frozen=True)
class FoldPlan:
    folds: int = 3
    rounds: int = 30

    def splits(self, n, seed, r):
        if n < self.folds:
            raise ValueError(f"{n} two-scan subjects cannot fill {self.folds} folds")
        if self.folds < 2:
            raise ValueError("need at least 2 folds")
        rng = np.random.default_rng(derive_seed(seed, f"round-{r}"))
        parts = np.array_split(rng.permutation(n), self.folds)
        for f, test in enumerate(parts):
            train = np.setdiff1d(np.arange(n), test)
            yield f, np.sort(train), np.sort(test)


@dataclass(frozen=True)
class Condition:
    """Pipeline switches used by cross-validation and the ablation suite."""

    pretrain: bool = True
    finetune: bool = True
    stage2: bool = True
    channels: tuple = None


def run_fold(dataset, train_idx, cfg, mcfg, cond=Condition(), seed_tag=""):
    """Train on one fold. Returns (params, stats, stage, extras)."""
    train_pairs = [dataset.pairs[i] for i in train_idx]
    pool = list(dataset.singles) + [s for p in train_pairs for s in p]
    stats = channel_stats([s.partitions for s in pool])

    def prep(s):
        ps = apply_stats(s.partitions, stats)
        if cond.channels is not None:
            ps = select_channels(ps, cond.channels)
        return replace(s, partitions=ps)

    singles = [prep(s) for s in dataset.singles]
    pairs = [(prep(a), prep(b)) for a, b in train_pairs]
    fcfg = replace(cfg, seed=derive_seed(cfg.seed, f"fold-{seed_tag}"))
    params = M.init_encoder(mcfg, fcfg.seed)
    params.update(M.init_head(mcfg, fcfg.seed))
    if mcfg.fusion == "mlp":
        params.update(M.init_mlp(mcfg, fcfg.seed))
    extras = {}
    stage = 1
    if cond.pretrain or cond.finetune:
        s1 = train_stage1(params, singles, pairs if cond.finetune else [], fcfg, mcfg, cond.pretrain)
        extras["pretrain_history"] = s1.pretrain_history
        extras["finetune_history"] = s1.finetune_history
    extras["stage1_params"] = params.copy()
    if cond.stage2 and mcfg.fusion == "excitation":
        s2 = train_stage2(params, pairs, fcfg, mcfg)
        extras["stage2_history"] = s2.history
        extras["weights"] = s2.weights
        stage = 2
    return params, stats, stage, extras


def cross_validate(dataset, cfg, mcfg, plan=FoldPlan(), cond=Condition(), keep=None):
    """Top-1/Top-5 over ``plan.rounds`` rounds of ``plan.folds``-fold CV.

    Round values weight each fold by its test size. ``keep`` (a dict), when
    given, receives the trained fold artifacts keyed by (round, fold).
    """
    if dataset.n_pairs < 3:
        raise ValueError("cross-validation needs at least 3 two-scan subjects")
    rounds, folds = [], []
    for r in range(plan.rounds):
        t1 = t5 = total = 0.0
        for f, train, test in plan.splits(dataset.n_pairs, cfg.seed, r):
            params, stats, stage, extras = run_fold(dataset, train, cfg, mcfg, cond, f"{r}-{f}")
            test_pairs = [dataset.pairs[i] for i in test]
            a1, a5, sim = _eval_fold(params, mcfg, stats, test_pairs, stage, cond.channels)
            if keep is not None:
                keep[(r, f)] = dict(params=params, stats=stats, stage=stage, test=test, train=train,
                                    sim=sim, **extras)
            folds.append((r, f, len(test), a1, a5))
            t1 += a1 * len(test)
            t5 += a5 * len(test)
            total += len(test)
        rounds.append((t1 / total, t5 / total))
    r1 = [x[0] for x in rounds]
    r5 = [x[1] for x in rounds]
    return Metrics(float(np.mean(r1)), float(np.mean(r5)), rounds, folds)


def evaluate_saved(dataset, keep, mcfg, stage, channels=None, params_key="params"):
    """Re-evaluate stored fold artifacts (e.g. stage-1 params) on their test folds."""
    rounds = {}
    folds = []
    for (r, f), item in sorted(keep.items()):
        test_pairs = [dataset.pairs[i] for i in item["test"]]
        a1, a5, _ = _eval_fold(item[params_key], mcfg, item["stats"], test_pairs, stage, channels)
        folds.append((r, f, len(test_pairs), a1, a5))
        acc = rounds.setdefault(r, [0.0, 0.0, 0])
        acc[0] += a1 * len(test_pairs)
        acc[1] += a5 * len(test_pairs)
        acc[2] += len(test_pairs)
    per = [(v[0] / v[2], v[1] / v[2]) for _, v in sorted(rounds.items())]
    return Metrics(float(np.mean([p[0] for p in per])), float(np.mean([p[1] for p in per])), per, folds)


ABLATION_LABELS = {
    "A": "full pipeline",
    "B": "random encoder, no contrastive training",
    "C": "no augmented pre-training",
    "D": "no excitation, plain concatenation head",
}


def ablation_suite(dataset, cfg, mcfg, plan=FoldPlan(), main=None):
    """Rows A-D as (label, description, Metrics).

    D evaluates the stage-1 model of each A fold (the excitation block is
    trained on top of that exact model, so A and D share every other
    choice). ``main`` may pass an already computed (Metrics, keep) for A.
    """
    if main is None:
        keep = {}
        a = cross_validate(dataset, cfg, mcfg, plan, Condition(), keep)
    else:
        a, keep = main
    d = evaluate_saved(dataset, keep, mcfg, stage=1, params_key="stage1_params")
    b = cross_validate(dataset, cfg, mcfg, plan, Condition(pretrain=False, finetune=False, stage2=False))
    c = cross_validate(dataset, cfg, mcfg, plan, Condition(pretrain=False))
    return [("A", ABLATION_LABELS["A"], a), ("B", ABLATION_LABELS["B"], b),
            ("C", ABLATION_LABELS["C"], c), ("D", ABLATION_LABELS["D"], d)]


def channel_contribution(dataset, cfg, mcfg, plan=FoldPlan(), main=None):
    """Single-channel rows plus the all-channels row."""
    rows = []
    for name in ("curvature", "thickness", "sulc"):
        rows.append((f"{name}-only", cross_validate(dataset, cfg, mcfg, plan, Condition(channels=(name,)))))
    allm = main if main is not None else cross_validate(dataset, cfg, mcfg, plan)
    rows.append(("all", allm))
    return rows


@dataclass
class Separability:
    within_mean: float
    between_mean: float
    between_median: float
    frac_below_median: float  # subjects whose own distance beats the between median
    top1: float


def raw_separability(dataset, channels=None):
    """Identity signal in the normalized rasters before any learning.

    Distances are Euclidean between flattened partition stacks of scan 1
    and scan 2; ``channels`` restricts the comparison to named channels.
    """
    scans = [s for p in dataset.pairs for s in p]
    stats = channel_stats([s.partitions for s in scans])

    def vec(s):
        ps = apply_stats(s.partitions, stats)
        if channels is not None:
            ps = select_channels(ps, channels)
        return ps.to_array().ravel()

    sim = similarity_matrix([vec(a) for a, _ in dataset.pairs], [vec(b) for _, b in dataset.pairs])
    within = np.diag(sim)
    between = sim[~np.eye(len(sim), dtype=bool)]
    med = float(np.median(between))
    return Separability(float(within.mean()), float(between.mean()), med,
                        float(np.mean(within < med)), topk_accuracy(sim, 1))


# ---------------------------------------------------------------- saliency


@dataclass
class Saliency:
    maps: np.ndarray  # (4, H, W) distance increase per pixel
    base_distance: float
    partition_weights: np.ndarray  # mean excitation weight per partition block (4,)


def occlusion_saliency(model, scan_a, scan_b, patch=8, stride=None):
    """Zero a sliding patch in each partition of ``scan_a`` and record how
    much the distance to ``scan_b``'s fingerprint grows.

    Both scans are normalized PartitionSets. Pixels covered by several
    patches get the mean of those patches' effects.
    """
    stride = stride or patch
    arr = scan_a.to_array()
    _, _, h, w = arr.shape
    if patch > h or patch > w or patch < 1:
        raise ValueError(f"patch {patch} does not fit a {h}x{w} image")
    fb = model.fingerprint(scan_b)
    with ad.no_grad():
        maps = [M.encode_partition(Tensor(arr[k]), model.params, model.cfg) for k in range(4)]

        def dist(mp):
            fp = M.fuse(mp, model.params, model.cfg, model.use_excitation).data
            return float(np.linalg.norm(fp - fb))

        base = dist(maps)
        sal = np.zeros((4, h, w))
        cnt = np.zeros((4, h, w))
        ys = list(range(0, h - patch + 1, stride))
        xs = list(range(0, w - patch + 1, stride))
        if ys[-1] != h - patch:
            ys.append(h - patch)
        if xs[-1] != w - patch:
            xs.append(w - patch)
        for k in range(4):
            for y in ys:
                for x in xs:
                    block = arr[k][:, y:y + patch, x:x + patch]
                    if not np.any(block):
                        cnt[k, y:y + patch, x:x + patch] += 1
                        continue
                    img = arr[k].copy()
                    img[:, y:y + patch, x:x + patch] = 0.0
                    mp = list(maps)
                    mp[k] = M.encode_partition(Tensor(img), model.params, model.cfg)
                    sal[k, y:y + patch, x:x + patch] += dist(mp) - base
                    cnt[k, y:y + patch, x:x + patch] += 1
        sal /= np.maximum(cnt, 1)
        weights = np.full(4, np.nan)
        if model.use_excitation and "exc.head.w" in model.params:
            _, wts = M.excitation_fuse(maps, model.params, model.cfg.weight_scale)
            weights = wts.data.reshape(4, -1).mean(axis=1)
    return Saliency(sal, base, weights)


# ---------------------------------------------------------------- outputs


def write_metrics_csv(path, metrics, label="run"):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["label", "round", "fold", "n_test", "top1", "top5"])
        for r, f, n, a1, a5 in metrics.folds:
            w.writerow([label, r, f, n, repr(a1), repr(a5)])
        for r, (a1, a5) in enumerate(metrics.rounds):
            w.writerow([label, r, "all", "", repr(a1), repr(a5)])
        w.writerow([label, "mean", "all", "", repr(metrics.top1), repr(metrics.top5)])


def write_table_csv(path, rows):
    """rows: (condition, description, Metrics)."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["condition", "description", "top1", "top5"])
        for name, desc, m in rows:
            w.writerow([name, desc, repr(m.top1), repr(m.top5)])


def file_sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


__all__ = [
    "FEATURE_NAMES",
    "TrainConfig",
    "Dataset",
    "ScanData",
    "make_training_pairs",
    "train_stage1",
    "train_stage2",
    "fingerprint",
    "similarity_matrix",
    "topk_accuracy",
    "cross_validate",
    "ablation_suite",
    "channel_contribution",
    "occlusion_saliency",
]
