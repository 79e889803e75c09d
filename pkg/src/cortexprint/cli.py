"""Command-line entry point: ``cortexprint <command> [options]``.

Exit codes: 0 success, 1 usage error, 2 data or validation error.
"""

import argparse
import configparser
import csv
import datetime
import hashlib
import os
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


# ---------------------------------------------------------------- configuration


def _floats(text):
    return tuple(float(v) for v in text.split(","))


def _ints(text):
    return tuple(int(v) for v in text.split(","))


def _bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _fmt(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(_fmt(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


# (section, key) -> (default, parser)
SCHEMA = {
    "data": {
        "pairs": (30, int),
        "singles": (60, int),
        "size": (112, int),
        "n_bumps": (24, int),
        "amplitude": ((0.04, 0.10), _floats),
        "width": ((0.12, 0.30), _floats),
        "scan_noise": (0.05, float),
        "bump_jitter": (0.1, float),
        "development_scale": ((1.0, 1.15), _floats),
        "feature_noise": (0.05, float),
        "thickness_noise": (1.0, float),
    },
    "flatten": {
        "tol": (0.05, float),
        "max_iter": (50, int),
    },
    "augment": {
        "rotation": ((-15.0, 15.0), _floats),
        "noise": ((0.01, 0.05), _floats),
        "blur": ((0.5, 1.5), _floats),
        "shared": (False, _bool),
    },
    "model": {
        "channels": ((8, 16, 32, 64), _ints),
        "fingerprint_dim": (512, int),
        "reduction": (4, int),
        "weight_scale": (1.0, float),
        "fusion": ("excitation", str),
    },
    "train": {
        "lr": (5e-4, float),
        "momentum": (0.9, float),
        "weight_decay": (5e-5, float),
        "epochs_per_stage": (8, int),
        "pretrain_batch": (16, int),
        "finetune_batch": (8, int),
        "margin": (1.0, float),
        "tau": (0.5, float),
        "loss": ("margin", str),
        "negatives": ("unordered", str),
    },
    "eval": {
        "folds": (3, int),
        "rounds": (1, int),
        "saliency_patch": (8, int),
    },
}


@dataclass
class RunConfig:
    values: dict = field(default_factory=lambda: {s: {k: v[0] for k, v in keys.items()}
                                                  for s, keys in SCHEMA.items()})

    def __getitem__(self, section):
        return self.values[section]

    @classmethod
    def load(cls, path=None):
        cfg = cls()
        if path is None:
            return cfg
        p = Path(path)
        if not p.is_file():
            raise DataError(f"config file not found: {p}")
        parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
        parser.optionxform = str
        try:
            parser.read_string(p.read_text(encoding="utf-8"), source=str(p))
        except configparser.Error as exc:
            raise DataError(f"{p}: cannot parse config: {exc}".splitlines()[0]) from None
        for section in parser.sections():
            if section not in SCHEMA:
                raise DataError(f"{p}: unknown section [{section}]; expected one of {', '.join(SCHEMA)}")
            for key, raw in parser.items(section):
                if key not in SCHEMA[section]:
                    raise DataError(f"{p}: unknown key '{key}' in [{section}]")
                try:
                    cfg.values[section][key] = SCHEMA[section][key][1](raw)
                except ValueError as exc:
                    raise DataError(f"{p}: bad value for {section}.{key}: {exc}") from None
        return cfg

    def dump(self):
        lines = []
        for section, keys in self.values.items():
            lines.append(f"[{section}]")
            lines.extend(f"{k} = {_fmt(v)}" for k, v in keys.items())
            lines.append("")
        return "\n".join(lines)

    def digest(self):
        return hashlib.sha256(self.dump().encode()).hexdigest()

    # builders for library objects

    def encoder(self):
        from .model import EncoderConfig

        m = self["model"]
        return EncoderConfig(channels=m["channels"], input_size=self["data"]["size"],
                             fingerprint_dim=m["fingerprint_dim"], reduction=m["reduction"],
                             weight_scale=m["weight_scale"], fusion=m["fusion"])

    def augment_policy(self):
        from .raster import AugmentPolicy

        a = self["augment"]
        return AugmentPolicy(a["rotation"], a["noise"], a["blur"], a["shared"])

    def train_config(self, seed):
        from .train import TrainConfig

        t = self["train"]
        return TrainConfig(seed=seed, augment=self.augment_policy(),
                           **{f.name: t[f.name] for f in fields(TrainConfig) if f.name in t})

    def plan(self):
        from .train import FoldPlan

        return FoldPlan(self["eval"]["folds"], self["eval"]["rounds"])

    def identity(self):
        from .synth import IdentitySpec

        d = self["data"]
        return IdentitySpec(seed=0, n_bumps=d["n_bumps"], amplitude=d["amplitude"], width=d["width"])

    def scan_policy(self):
        from .synth import ScanPolicy

        d = self["data"]
        return ScanPolicy(d["scan_noise"], d["bump_jitter"], d["development_scale"],
                          d["feature_noise"], d["thickness_noise"])


# ---------------------------------------------------------------- manifests


def _sha(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_run(out, command, cfg, seed, inputs=(), outputs=()):
    """Persist the resolved config and a run manifest next to the outputs."""
    import numpy
    import scipy

    from . import __version__
    from ._kernels import BACKEND

    out.mkdir(parents=True, exist_ok=True)
    (out / "resolved_config.ini").write_text(cfg.dump(), encoding="utf-8")
    lines = [
        f"command = {command}",
        f"seed = {seed}",
        f"config_sha256 = {cfg.digest()}",
        f"cortexprint = {__version__}",
        f"numpy = {numpy.__version__}",
        f"scipy = {scipy.__version__}",
        f"kernels = {BACKEND}",
    ]
    for p in inputs:
        lines.append(f"input = {p} sha256:{_sha(p)}")
    for p in outputs:
        lines.append(f"output = {p} sha256:{_sha(p)}")
    lines.append(f"timestamp = {datetime.datetime.now(datetime.timezone.utc).isoformat()}")
    (out / "run_manifest.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------- helpers


def _require(path, what):
    p = Path(path)
    if not p.is_file():
        raise DataError(f"{what} not found: {p}")
    return p


def _load_mesh(path, features=None):
    from .mesh import load_mesh

    return load_mesh(_require(path, "mesh"), _require(features, "feature file") if features else None)


def _cohort(args, cfg):
    """Load the cohort named by --cohort, or generate one from [data]."""
    from . import synth

    if args.cohort:
        return synth.load_cohort(_require(args.cohort, "cohort manifest"))
    d = cfg["data"]
    return synth.generate_cohort(d["pairs"], d["singles"], cfg.identity(), cfg.scan_policy(), args.seed)


def _dataset(args, cfg):
    from .train import rasterize_cohort

    f = cfg["flatten"]
    return rasterize_cohort(_cohort(args, cfg), cfg["data"]["size"], f["tol"], f["max_iter"])


def _write_csv(path, header, rows):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


# ---------------------------------------------------------------- commands


def cmd_synth(args, cfg, out):
    from . import synth

    d = cfg["data"]
    pairs = args.subjects if args.subjects is not None else d["pairs"]
    singles = args.singles if args.singles is not None else d["singles"]
    cohort = synth.generate_cohort(pairs, singles, cfg.identity(), cfg.scan_policy(), args.seed, out / "cohort")
    print(f"wrote {len(cohort.manifest_rows)} scans; manifest {cohort.manifest_path}")
    print(f"manifest_sha256 = {_sha(cohort.manifest_path)}")
    return [], [cohort.manifest_path]


def cmd_flatten(args, cfg, out):
    from .flatten import extract_boundary, flatten_disk, split_sphere

    mesh = _load_mesh(args.mesh, args.features)
    halves = {"disk": mesh}
    if args.split:
        pos, neg = split_sphere(mesh)
        halves = {"pos": pos, "neg": neg}
    outputs = []
    for name, disk in halves.items():
        extract_boundary(disk)
        f = cfg["flatten"]
        res = flatten_disk(disk, f["tol"], f["max_iter"])
        uv = res.map.uv
        p_map, p_mu, p_rep = out / f"{name}_map.csv", out / f"{name}_beltrami.csv", out / f"{name}_distortion.txt"
        _write_csv(p_map, ["vertex", "u", "v"], [(i, repr(float(a)), repr(float(b))) for i, (a, b) in enumerate(uv)])
        _write_csv(p_mu, ["face", "mu_re", "mu_im"],
                   [(i, repr(float(m.real)), repr(float(m.imag))) for i, m in enumerate(res.mu.mu)])
        p_rep.write_text(res.report.to_text(), encoding="utf-8")
        print(f"{name}: converged={res.converged} iterations={res.iterations} "
              f"std|mu|={res.report.mu_abs_std:.4g} flipped={res.report.flipped_faces}")
        outputs += [p_map, p_mu, p_rep]
    inputs = [Path(args.mesh)] + ([Path(args.features)] if args.features else [])
    return inputs, outputs


def _read_planar(path, n):
    import numpy as np

    from .flatten import PlanarMap

    with _require(path, "planar map").open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        if next(reader) != ["vertex", "u", "v"]:
            raise DataError(f"{path}: expected header vertex,u,v")
        rows = [(int(i), float(u), float(v)) for i, u, v in reader]
    if len(rows) != n or [r[0] for r in rows] != list(range(n)):
        raise DataError(f"{path}: planar map must list vertices 0..{n - 1} in order")
    return PlanarMap(np.array([(u, v) for _, u, v in rows]), None)


def cmd_rasterize(args, cfg, out):
    from .raster import build_partitions, rasterize, write_fimg

    size = cfg["data"]["size"]
    outputs = []
    if args.left or args.right:
        if not (args.left and args.right):
            raise UsageError("--left and --right must be given together")
        left = _load_mesh(args.left, args.left_features)
        right = _load_mesh(args.right, args.right_features)
        f = cfg["flatten"]
        ps = build_partitions(left, right, size, size, f["tol"], f["max_iter"])
        for label, img in ps.images.items():
            p = out / f"{label}.fimg"
            write_fimg(p, img)
            outputs.append(p)
        inputs = [Path(x) for x in (args.left, args.left_features, args.right, args.right_features) if x]
    else:
        if not (args.mesh and args.map):
            raise UsageError("rasterize needs --mesh and --map, or --left and --right")
        mesh = _load_mesh(args.mesh, args.features)
        img = rasterize(_read_planar(args.map, mesh.n_vertices), mesh, size, size)
        p = out / "image.fimg"
        write_fimg(p, img)
        outputs.append(p)
        inputs = [Path(x) for x in (args.mesh, args.features, args.map) if x]
    print(f"wrote {len(outputs)} image(s) of size {size}x{size}")
    return inputs, outputs


def cmd_augment(args, cfg, out):
    from .raster import PARTITION_LABELS, PartitionSet, augment_pair, read_fimg, write_fimg
    from .seeding import derive_seed

    img = read_fimg(_require(args.input, "FIMG input"))
    ps = PartitionSet({k: img for k in PARTITION_LABELS})
    views = augment_pair(ps, cfg.augment_policy(), derive_seed(args.seed, "augment"))
    outputs = []
    for i, v in enumerate(views):
        p = out / f"view{i}.fimg"
        write_fimg(p, v[PARTITION_LABELS[0]])
        outputs.append(p)
    print("wrote view0.fimg and view1.fimg")
    return [Path(args.input)], outputs


def cmd_train(args, cfg, out):
    import numpy as np

    from . import model as M
    from . import train as T
    from .raster import apply_stats, channel_stats

    ds = _dataset(args, cfg)
    mcfg, tcfg = cfg.encoder(), cfg.train_config(args.seed)
    pool = list(ds.singles) + [s for p in ds.pairs for s in p]
    stats = channel_stats([s.partitions for s in pool])

    def prep(s):
        return T.ScanData(s.subject_id, s.scan_index, apply_stats(s.partitions, stats))

    singles = [prep(s) for s in ds.singles]
    pairs = [(prep(a), prep(b)) for a, b in ds.pairs]
    params = M.init_encoder(mcfg, tcfg.seed)
    params.update(M.init_head(mcfg, tcfg.seed))
    if mcfg.fusion == "mlp":
        params.update(M.init_mlp(mcfg, tcfg.seed))
    s1 = T.train_stage1(params, singles, pairs, tcfg, mcfg)
    stage, hist2, weights = 1, [], None
    if mcfg.fusion == "excitation":
        s2 = T.train_stage2(params, pairs, tcfg, mcfg)
        stage, hist2, weights = 2, s2.history, s2.weights
    model = M.Model(mcfg, params, stats, stage)
    M.save_model(model, out / "model")
    rows = [("pretrain", i, repr(v)) for i, v in enumerate(s1.pretrain_history)]
    rows += [("finetune", i, repr(v)) for i, v in enumerate(s1.finetune_history)]
    rows += [("stage2", i, repr(v)) for i, v in enumerate(hist2)]
    _write_csv(out / "loss_history.csv", ["phase", "epoch", "loss"], rows)
    outputs = [out / "model.pset", out / "model.cfg", out / "loss_history.csv"]
    if weights is not None:
        blocks = np.asarray(weights).reshape(4, -1).mean(axis=1)
        _write_csv(out / "partition_weights.csv", ["partition", "mean_weight"],
                   [(k, repr(float(w))) for k, w in zip(("left_lateral", "left_medial", "right_lateral",
                                                         "right_medial"), blocks)])
        outputs.append(out / "partition_weights.csv")
    print(f"trained on {len(pairs)} pairs and {len(singles)} singles; model at {out / 'model.pset'}")
    return ([Path(args.cohort)] if args.cohort else []), outputs


def cmd_eval(args, cfg, out):
    from . import model as M
    from . import train as T
    from .raster import apply_stats

    ds = _dataset(args, cfg)
    if args.model:
        _require(Path(args.model).with_suffix(".pset"), "model parameters")
        model = M.load_model(args.model)
        if model.stats is None:
            raise DataError(f"{args.model}: checkpoint has no normalization statistics")
        f1 = [model.fingerprint(apply_stats(a.partitions, model.stats)) for a, _ in ds.pairs]
        f2 = [model.fingerprint(apply_stats(b.partitions, model.stats)) for _, b in ds.pairs]
        sim = T.similarity_matrix(f1, f2)
        ids = [a.subject_id for a, _ in ds.pairs]
        _write_csv(out / "similarity.csv", ["subject_id"] + ids,
                   [[i] + [repr(float(v)) for v in row] for i, row in zip(ids, sim)])
        _write_csv(out / "fingerprints.csv", ["subject_id", "scan_index"] + [f"f{k}" for k in range(len(f1[0]))],
                   [[i, k] + [repr(float(v)) for v in f] for k, fs in enumerate((f1, f2)) for i, f in zip(ids, fs)])
        top1, top5 = T.topk_accuracy(sim, 1), T.topk_accuracy(sim, 5)
        _write_csv(out / "metrics.csv", ["top1", "top5"], [[repr(top1), repr(top5)]])
        outputs = [out / "similarity.csv", out / "fingerprints.csv", out / "metrics.csv"]
        inputs = [Path(args.model).with_suffix(".pset"), Path(args.model).with_suffix(".cfg")]
    else:
        m = T.cross_validate(ds, cfg.train_config(args.seed), cfg.encoder(), cfg.plan())
        top1, top5 = m.top1, m.top5
        T.write_metrics_csv(out / "metrics.csv", m, "cv")
        outputs, inputs = [out / "metrics.csv"], []
    print(f"top1 = {top1:.4f}\ntop5 = {top5:.4f}")
    if args.cohort:
        inputs.append(Path(args.cohort))
    return inputs, outputs


def cmd_ablate(args, cfg, out):
    from . import train as T

    rows = T.ablation_suite(_dataset(args, cfg), cfg.train_config(args.seed), cfg.encoder(), cfg.plan())
    T.write_table_csv(out / "ablation.csv", rows)
    for name, desc, m in rows:
        print(f"{name}  top1={m.top1:.4f}  top5={m.top5:.4f}  ({desc})")
    return ([Path(args.cohort)] if args.cohort else []), [out / "ablation.csv"]


def cmd_channels(args, cfg, out):
    from . import train as T

    rows = T.channel_contribution(_dataset(args, cfg), cfg.train_config(args.seed), cfg.encoder(), cfg.plan())
    T.write_table_csv(out / "channels.csv", [(n, "", m) for n, m in rows])
    for name, m in rows:
        print(f"{name:16s} top1={m.top1:.4f}  top5={m.top5:.4f}")
    return ([Path(args.cohort)] if args.cohort else []), [out / "channels.csv"]


def cmd_saliency(args, cfg, out):
    import numpy as np

    from . import model as M
    from . import train as T
    from .raster import apply_stats

    if not args.model:
        raise UsageError("saliency needs --model")
    model = M.load_model(args.model)
    ds = _dataset(args, cfg)
    ids = [a.subject_id for a, _ in ds.pairs]
    sid = args.subject or ids[0]
    if sid not in ids:
        raise DataError(f"subject {sid} has no two-scan entry in the cohort")
    a, b = ds.pairs[ids.index(sid)]
    sal = T.occlusion_saliency(model, apply_stats(a.partitions, model.stats), apply_stats(b.partitions, model.stats),
                               cfg["eval"]["saliency_patch"])
    np.save(out / "saliency.npy", sal.maps)
    _write_csv(out / "partition_weights.csv", ["partition", "mean_weight"],
               [(k, repr(float(w))) for k, w in zip(("left_lateral", "left_medial", "right_lateral", "right_medial"),
                                                    sal.partition_weights)])
    print(f"subject {sid}: base distance {sal.base_distance:.4g}; max saliency {sal.maps.max():.4g}")
    return [Path(args.model).with_suffix(".pset")], [out / "saliency.npy", out / "partition_weights.csv"]


def cmd_gradcheck(args, cfg, out):
    from .gradchecks import run_all

    results = run_all(range(args.seeds))
    worst = 0.0
    rows = []
    for name, err in results.items():
        print(f"{name:26s} max_rel_error={err:.3e}")
        rows.append((name, repr(err)))
        worst = max(worst, err)
    _write_csv(out / "gradcheck.csv", ["operator", "max_rel_error"], rows)
    if worst >= 1e-4:
        raise DataError(f"gradient check failed: worst relative error {worst:.3e} >= 1e-4")
    return [], [out / "gradcheck.csv"]


COMMANDS = {
    "synth": (cmd_synth, "generate a synthetic cohort"),
    "flatten": (cmd_flatten, "flatten a disk mesh (or a split sphere) to the unit square"),
    "rasterize": (cmd_rasterize, "rasterize a planar map, or a left/right sphere pair, to FIMG"),
    "augment": (cmd_augment, "write two augmented views of an FIMG image"),
    "train": (cmd_train, "train stages 1 and 2 on the whole cohort"),
    "eval": (cmd_eval, "fingerprints, similarity and Top-k (cross-validated without --model)"),
    "ablate": (cmd_ablate, "ablation conditions A-D"),
    "channels": (cmd_channels, "single-channel comparison"),
    "saliency": (cmd_saliency, "occlusion saliency for one subject"),
    "gradcheck": (cmd_gradcheck, "finite-difference check of every operator and loss"),
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI-style run configuration")
    common.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    common.add_argument("--out", default="out", help="output directory (default ./out)")
    common.add_argument("--threads", type=int, default=None, help="cap on BLAS threads")

    parser = _Parser(prog="cortexprint", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True
    ps = {}
    for name, (_, helptext) in COMMANDS.items():
        ps[name] = sub.add_parser(name, parents=[common], help=helptext, description=helptext)
    ps["synth"].add_argument("--subjects", type=int, help="two-scan subjects (overrides [data] pairs)")
    ps["synth"].add_argument("--singles", type=int, help="single-scan subjects (overrides [data] singles)")
    ps["flatten"].add_argument("--mesh", required=True)
    ps["flatten"].add_argument("--features")
    ps["flatten"].add_argument("--split", action="store_true", help="split a closed sphere at x = 0 first")
    for flag in ("--mesh", "--features", "--map", "--left", "--left-features", "--right", "--right-features"):
        ps["rasterize"].add_argument(flag)
    ps["augment"].add_argument("--input", required=True)
    for name in ("train", "eval", "ablate", "channels", "saliency"):
        ps[name].add_argument("--cohort", help="cohort manifest.csv (default: generate from [data])")
    for name in ("eval", "saliency"):
        ps[name].add_argument("--model", help="checkpoint prefix (model.pset / model.cfg)")
    ps["saliency"].add_argument("--subject", help="two-scan subject id (default: first)")
    ps["gradcheck"].add_argument("--seeds", type=int, default=20)
    return parser


def _cap_threads(n):
    if n is not None:
        if n < 1:
            raise UsageError("--threads must be at least 1")
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(n)


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        # set before numpy is first imported by a command
        _cap_threads(args.threads)
        cfg = RunConfig.load(args.config)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        inputs, outputs = COMMANDS[args.command][0](args, cfg, out)
        if args.config:
            inputs = [Path(args.config)] + list(inputs)
        write_run(out, args.command, cfg, args.seed, inputs, outputs)
        return EXIT_OK
    except UsageError as exc:
        print(f"cortexprint {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ValueError, OSError, KeyError) as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"cortexprint {args.command}: {msg}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
