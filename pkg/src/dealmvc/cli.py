"""Command-line entry point.

Subcommands::

    synth     write a synthetic multi-view dataset
    train     pretrain + contrastive training, evaluation, checkpoint
    evaluate  score a checkpoint on a dataset
    sweep     grid over (alpha, beta, mu)
    ablation  full method vs. loss ablations over several seeds
    export    fused embeddings + predicted labels as CSV

Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import itertools
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .dataset import NORMALIZE_MODES, generate_synthetic, load_dataset, normalize_views, save_dataset
from .errors import DataError, InvalidInput, NumericError, ShapeMismatch
from .fusion import FusionState
from .metrics import evaluate
from .trainer import (
    ABLATIONS,
    ASSIGN_RULES,
    TrainConfig,
    build_model,
    dump_graphs,
    embed,
    predict_clusters,
    pretrain,
    train,
)

log = logging.getLogger("dealmvc")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

# flag dest -> TrainConfig field
FLAG_FIELDS = {
    "batch_size": "batch_size",
    "lr": "learning_rate",
    "pretrain_epochs": "pretrain_epochs",
    "epochs": "train_epochs",
    "alpha": "alpha",
    "beta": "beta",
    "mu": "mu",
    "tau": "tau",
    "embed_dim": "embed_dim",
    "seed": "seed",
    "normalize": "normalize",
    "assign": "assign",
    "n_clusters": "n_clusters",
}


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# config resolution


def _coerce(name: str, raw: str):
    f = {f.name: f for f in fields(TrainConfig)}[name]
    default = f.default
    if name == "hidden":
        return tuple(int(x) for x in raw.replace(" ", "").split(",") if x)
    if name == "n_clusters":
        return None if raw.lower() in ("", "none") else int(raw)
    if isinstance(default, bool):
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise UsageError(f"config key {name}: expected a boolean, got {raw!r}")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw.strip()


def read_config_file(path) -> dict:
    """Plain ``key=value`` lines; keys are TrainConfig field names (``-`` or ``_``)."""
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"config file not found: {path}")
    known = {f.name for f in fields(TrainConfig)}
    out = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        key = FLAG_FIELDS.get(key, key)
        if key not in known:
            raise UsageError(f"{path}:{lineno}: unknown config key {key!r}")
        try:
            out[key] = _coerce(key, value)
        except ValueError:
            raise UsageError(f"{path}:{lineno}: bad value {value!r} for {key}") from None
    return out


def resolve_config(args) -> TrainConfig:
    """Defaults, then the config file, then explicit flags."""
    values = {}
    if getattr(args, "config", None):
        values.update(read_config_file(args.config))
    for dest, name in FLAG_FIELDS.items():
        v = getattr(args, dest, None)
        if v is not None:
            values[name] = v
    for name in getattr(args, "ablate", None) or []:
        values[ABLATIONS[name]] = True
    if getattr(args, "deterministic", False):
        values["deterministic"] = True
    return TrainConfig(**values)


def config_hash(cfg: TrainConfig) -> str:
    """Git blob hash of the canonical JSON of the config."""
    body = json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha1(b"blob %d\0" % len(body) + body).hexdigest()


def _timestamp(deterministic: bool):
    if deterministic:
        return None
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    when = datetime.fromtimestamp(int(epoch), timezone.utc) if epoch else datetime.now(timezone.utc)
    return when.strftime("%Y-%m-%dT%H:%M:%SZ")


def write_manifest(out_dir: Path, command: str, cfg: TrainConfig, dataset, extra=None) -> Path:
    manifest = {
        "command": command,
        "config": cfg.to_dict(),
        "config_hash": config_hash(cfg),
        "dataset": None if dataset is None else str(dataset),
        "output": str(out_dir),
        "timestamp": _timestamp(cfg.deterministic),
    }
    if extra:
        manifest.update(extra)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _append_log(out_dir: Path, line: str) -> None:
    with open(out_dir / "run.log", "a") as fh:
        fh.write(line + "\n")


def _write_record(path: Path, line: str) -> None:
    path.write_text(line + "\n")


# ---------------------------------------------------------------------------
# training pipeline shared by train / sweep / ablation


def _load_normalized(dataset, cfg: TrainConfig):
    return normalize_views(load_dataset(dataset), cfg.normalize)


def run_training(ds, cfg: TrainConfig, out_dir: Path, checkpoint_every: int = 0,
                 graphs: bool = False, pretrained=None) -> dict:
    """pretrain -> baseline score -> train -> score; writes run artefacts into ``out_dir``."""
    out_dir.mkdir(parents=True, exist_ok=True)
    model = copy.deepcopy(pretrained) if pretrained is not None else pretrain(ds, cfg)
    result = {}
    if ds.labels is not None:
        base = evaluate(predict_clusters(model, ds, "kmeans", cfg.seed), ds.labels)
        line = base.record(stage="pretrain", assign="kmeans", seed=cfg.seed)
        _write_record(out_dir / "baseline.txt", line)
        _append_log(out_dir, line)
        result["baseline"] = base

    fusion_rows = []

    def on_epoch(rec):
        fusion_rows.append(FusionState.from_model(model).row())
        if checkpoint_every and (rec.epoch + 1) % checkpoint_every == 0:
            save_checkpoint(out_dir / f"checkpoint_epoch{rec.epoch + 1:04d}.npz", model, cfg)

    model, history = train(model, ds, cfg, on_epoch=on_epoch)
    save_checkpoint(out_dir / "checkpoint.npz", model, cfg)
    history.to_csv(out_dir / "history.csv")
    with open(out_dir / "fusion.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(FusionState.from_model(model).header())
        for row in fusion_rows:
            writer.writerow([row[0]] + [repr(float(x)) for x in row[1:]])
    if graphs:
        dump_graphs(model, ds, cfg, out_dir / "graphs")

    if ds.labels is not None:
        res = evaluate(predict_clusters(model, ds, cfg.assign, cfg.seed), ds.labels)
        line = res.record(stage="train", assign=cfg.assign, seed=cfg.seed)
        _write_record(out_dir / "metrics.txt", line)
        _append_log(out_dir, line)
        result["metrics"] = res
    result["model"] = model
    result["history"] = history
    return result


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args) -> int:
    dims = _int_list(args.dims, "--dims")
    ds = generate_synthetic(args.k, args.n, dims, args.sep, args.noise, args.seed, name=args.name)
    manifest = save_dataset(ds, args.out)
    print(f"wrote {manifest} (N={ds.n_samples}, V={ds.n_views}, K={ds.n_clusters})")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    out = Path(args.out)
    ds = _load_normalized(args.dataset, cfg)
    write_manifest(out, "train", cfg, args.dataset)
    result = run_training(ds, cfg, out, args.checkpoint_every, args.dump_graphs)
    if "metrics" in result:
        print(result["metrics"].record(baseline_acc=f"{result['baseline'].acc:.6f}"))
    else:
        print(f"trained on unlabelled data; checkpoint at {out / 'checkpoint.npz'}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    model, cfg = load_checkpoint(args.checkpoint)
    ds = _load_normalized(args.dataset, cfg)
    if ds.labels is None:
        raise DataError(f"{args.dataset}: no labels to evaluate against")
    assign = args.assign or cfg.assign
    res = evaluate(predict_clusters(model, ds, assign, cfg.seed), ds.labels)
    line = res.record(stage="evaluate", assign=assign)
    print(line)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_record(out / "metrics.txt", line)
        _append_log(out, line)
    return EXIT_OK


def _sweep_point(job):
    dataset, cfg_dict, out_dir = job
    cfg = TrainConfig.from_dict(cfg_dict)
    ds = _load_normalized(dataset, cfg)
    out_dir = Path(out_dir)
    write_manifest(out_dir, "sweep-point", cfg, dataset)
    result = run_training(ds, cfg, out_dir)
    m = result.get("metrics")
    return None if m is None else (m.acc, m.nmi, m.pur)


def _run_jobs(jobs, n_workers: int):
    if n_workers <= 1:
        return [_sweep_point(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=n_workers) as pool:
        return list(pool.map(_sweep_point, jobs))


def cmd_sweep(args) -> int:
    cfg = resolve_config(args)
    grids = {}
    for name in ("alpha", "beta", "mu"):
        raw = getattr(args, f"{name}_grid")
        if raw is None:
            grids[name] = [getattr(cfg, name)]
        else:
            values = _float_list(raw, f"--{name}-grid")
            if not values:
                raise UsageError(f"--{name}-grid is empty")
            grids[name] = values
    if all(getattr(args, f"{n}_grid") is None for n in grids):
        raise UsageError("sweep needs at least one of --alpha-grid, --beta-grid, --mu-grid")
    out = Path(args.out)
    points = list(itertools.product(grids["alpha"], grids["beta"], grids["mu"]))
    write_manifest(out, "sweep", cfg, args.dataset, {"grid": grids})
    jobs = []
    for i, (a, b, m) in enumerate(points):
        sub = cfg.replace(alpha=a, beta=b, mu=m)
        jobs.append((args.dataset, sub.to_dict(), str(out / f"point{i:03d}")))
    results = _run_jobs(jobs, args.jobs)
    with open(out / "sweep.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["alpha", "beta", "mu", "acc", "nmi", "pur"])
        for (a, b, m), r in zip(points, results):
            scores = ["", "", ""] if r is None else [f"{x:.6f}" for x in r]
            writer.writerow([repr(a), repr(b), repr(m)] + scores)
    print(f"wrote {out / 'sweep.csv'} ({len(points)} rows)")
    return EXIT_OK


ABLATION_VARIANTS = {
    "full": (),
    "wo_L": ("local",),
    "wo_G": ("global",),
    "wo_LG": ("local", "global"),
    "wo_C": ("consistency",),
    "wo_P": ("sampling",),
    "wo_A": ("attention",),
    "wo_PA": ("sampling", "attention"),
}
DEFAULT_VARIANTS = ("full", "wo_L", "wo_G", "wo_LG")


def run_ablation(ds, cfg: TrainConfig, seeds, variants=DEFAULT_VARIANTS, out_dir=None) -> dict:
    """ACC/NMI/PUR per (variant, seed). Pretraining is shared across variants of
    one seed: it does not depend on the contrastive-stage switches."""
    table = {v: [] for v in variants}
    baseline = []
    for seed in seeds:
        scfg = cfg.replace(seed=int(seed))
        pre = pretrain(ds, scfg)
        baseline.append(evaluate(predict_clusters(pre, ds, "kmeans", scfg.seed), ds.labels))
        for v in variants:
            vcfg = scfg.ablated(*ABLATION_VARIANTS[v])
            sub = None if out_dir is None else Path(out_dir) / f"{v}_seed{seed}"
            if sub is None:
                model, _ = train(copy.deepcopy(pre), ds, vcfg)
                table[v].append(evaluate(predict_clusters(model, ds, vcfg.assign, vcfg.seed), ds.labels))
            else:
                write_manifest(sub, "ablation-run", vcfg, None)
                table[v].append(run_training(ds, vcfg, sub, pretrained=pre)["metrics"])
    table["baseline"] = baseline
    return table


def cmd_ablation(args) -> int:
    cfg = resolve_config(args)
    seeds = _int_list(args.seeds, "--seeds")
    if not seeds:
        raise UsageError("--seeds is empty")
    variants = args.variants.split(",") if args.variants else list(DEFAULT_VARIANTS)
    unknown = [v for v in variants if v not in ABLATION_VARIANTS]
    if unknown:
        raise UsageError(f"unknown variants {unknown}; choose from {sorted(ABLATION_VARIANTS)}")
    out = Path(args.out)
    ds = _load_normalized(args.dataset, cfg)
    if ds.labels is None:
        raise DataError("ablation needs a labelled dataset")
    write_manifest(out, "ablation", cfg, args.dataset, {"seeds": seeds, "variants": variants})
    table = run_ablation(ds, cfg, seeds, variants, out)
    with open(out / "ablation.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variant", "seed", "acc", "nmi", "pur"])
        for v in ["baseline", *variants]:
            for seed, r in zip(seeds, table[v]):
                writer.writerow([v, seed, f"{r.acc:.6f}", f"{r.nmi:.6f}", f"{r.pur:.6f}"])
    for v in ["baseline", *variants]:
        accs = [r.acc for r in table[v]]
        print(f"{v:<10s} mean_acc={np.mean(accs):.4f}  " + " ".join(f"{a:.4f}" for a in accs))
    return EXIT_OK


def cmd_export(args) -> int:
    model, cfg = load_checkpoint(args.checkpoint)
    ds = _load_normalized(args.dataset, cfg)
    _, zg = embed(model, ds)
    labels = predict_clusters(model, ds, args.assign or cfg.assign, cfg.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    header = ",".join([f"z{j}" for j in range(zg.shape[1])] + ["label"])
    table = np.column_stack([zg, labels])
    fmt = ["%.17g"] * zg.shape[1] + ["%d"]
    np.savetxt(out, table, fmt=fmt, delimiter=",", header=header, comments="")
    print(f"wrote {out} ({zg.shape[0]} x {zg.shape[1]} + label)")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def _int_list(raw: str, flag: str) -> list:
    try:
        return [int(x) for x in raw.replace(" ", "").split(",") if x]
    except ValueError:
        raise UsageError(f"{flag}: expected comma-separated integers, got {raw!r}") from None


def _float_list(raw: str, flag: str) -> list:
    try:
        return [float(x) for x in raw.replace(" ", "").split(",") if x]
    except ValueError:
        raise UsageError(f"{flag}: expected comma-separated numbers, got {raw!r}") from None


def _training_flags() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("training")
    g.add_argument("--dataset", required=True, help="manifest file or dataset directory")
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--config", help="key=value config file; flags override it")
    g.add_argument("--seed", type=int)
    g.add_argument("--batch-size", type=int)
    g.add_argument("--lr", type=float)
    g.add_argument("--pretrain-epochs", type=int)
    g.add_argument("--epochs", type=int, help="contrastive-stage epochs")
    g.add_argument("--alpha", type=float, help="local calibration weight")
    g.add_argument("--beta", type=float, help="global calibration weight")
    g.add_argument("--mu", type=float, help="label consistency weight")
    g.add_argument("--tau", type=float, help="pseudo-label graph threshold")
    g.add_argument("--embed-dim", type=int)
    g.add_argument("--n-clusters", type=int, help="defaults to the number of label classes")
    g.add_argument("--normalize", choices=NORMALIZE_MODES)
    g.add_argument("--assign", choices=ASSIGN_RULES)
    g.add_argument("--ablate", action="append", choices=sorted(ABLATIONS), default=[])
    g.add_argument("--deterministic", action="store_true", help="deterministic kernels, single thread")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dealmvc", description="Multi-view clustering with dual contrastive calibration.")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v epoch logs, -vv batch logs")
    sub = parser.add_subparsers(dest="command", required=True)
    common = _training_flags()

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--k", type=int, required=True, help="clusters")
    p.add_argument("--n", type=int, required=True, help="samples")
    p.add_argument("--dims", required=True, help="comma-separated view widths, e.g. 8,12")
    p.add_argument("--sep", type=float, default=6.0, help="center distance in noise units")
    p.add_argument("--noise", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--name", default="synthetic")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", parents=[common], help="pretrain, train, evaluate")
    p.add_argument("--checkpoint-every", type=int, default=0, metavar="K", help="extra checkpoint every K epochs")
    p.add_argument("--dump-graphs", action="store_true", help="write W/S graphs of the first batch")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--assign", choices=ASSIGN_RULES)
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", parents=[common], help="grid over alpha, beta, mu")
    p.add_argument("--alpha-grid")
    p.add_argument("--beta-grid")
    p.add_argument("--mu-grid")
    p.add_argument("--jobs", type=int, default=1, help="parallel sub-runs (separate processes)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("ablation", parents=[common], help="loss ablations over seeds")
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--variants", help=f"comma-separated subset of {','.join(ABLATION_VARIANTS)}")
    p.set_defaults(func=cmd_ablation)

    p = sub.add_parser("export", help="write fused embeddings and labels")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--assign", choices=ASSIGN_RULES)
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=cmd_export)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = {0: logging.WARNING, 1: logging.INFO}.get(args.verbose, logging.DEBUG)
    logging.basicConfig(level=level, format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        return args.func(args)
    except (UsageError, InvalidInput) as exc:
        print(f"{parser.prog} {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ShapeMismatch) as exc:
        print(f"{parser.prog} {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"{parser.prog} {args.command}: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
