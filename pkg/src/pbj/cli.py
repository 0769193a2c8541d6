"""Command-line entry point: ``pbj {train,eval,ood,explain,moons-grid}``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import experiments as X
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ExperimentConfig, finalize, image_preset, load_config, moons_preset
from .data import Dataset, generate_two_moons, load_idx_dir, normalize
from .estimators import PBJClassifier
from .evaluation import export_explanations
from .metrics import accuracy
from .model import BaselineModel
from .tensor import no_grad

log = logging.getLogger("pbj")

DATASET_DIRS = {"mnist": "mnist", "fashionmnist": "fashion-mnist", "fashion-mnist": "fashion-mnist"}


def _config(args, default="image") -> ExperimentConfig:
    if getattr(args, "config", None):
        cfg = load_config(args.config)
    else:
        cfg = finalize(moons_preset() if default == "moons" else image_preset())
    if getattr(args, "output_dir", None):
        cfg.output_dir = args.output_dir
    return cfg


def _dataset_dir(name: str, data_dir: str | None) -> str:
    if Path(name).is_dir():
        return name
    root = Path(data_dir or os.environ.get("PBJ_DATA_DIR", "data"))
    return str(root / DATASET_DIRS.get(name.lower(), name))


def _training_data(cfg: ExperimentConfig) -> tuple[Dataset, dict]:
    """Training set plus the metadata needed to rebuild it later."""
    if cfg.data.source == "moons":
        d = cfg.data
        meta = {"source": "moons", "moons_n": d.moons_n, "moons_noise": d.moons_noise, "moons_seed": d.moons_seed}
        return X.moons_dataset(cfg), meta
    if not cfg.data.train_dir:
        raise ValueError("config needs data.train_dir for IDX data")
    task = X.load_image_task(cfg.data.train_dir)
    meta = {"source": "idx", "train_dir": str(Path(cfg.data.train_dir).resolve()), "mean": task["mean"], "std": task["std"]}
    return task["train"], meta


def _rebuild_split(meta: dict, split: str) -> Dataset:
    if meta.get("source") == "moons":
        if split != "train":
            raise ValueError("two moons has only a training split")
        return generate_two_moons(meta["moons_n"], meta["moons_noise"], meta["moons_seed"])
    if meta.get("source") != "idx":
        raise ValueError("checkpoint does not record its training data; pass --config")
    return normalize(load_idx_dir(meta["train_dir"], split), meta["mean"], meta["std"])


def _write_json(path: Path, payload: dict) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2))
    return path


def cmd_train(args) -> int:
    cfg = _config(args)
    if args.head:
        cfg.model.head = args.head
    dataset, meta = _training_data(cfg)
    out = Path(cfg.output_dir)
    meta.update(config_hash=cfg.hash, seed=cfg.train.seed, config=cfg.to_dict())
    clf = X.make_estimator(cfg)
    clf.fit(dataset.features, dataset.labels)
    clf.model_.meta = meta
    ckpt = save_checkpoint(clf.model_, out / "model.ckpt", meta)
    report = clf.train_report_
    report.checkpoint_path = str(ckpt)
    report.to_csv(out / "train_report.csv", cfg.hash, cfg.train.seed)
    print(f"checkpoint: {ckpt}")
    print(f"report: {out / 'train_report.csv'}")
    return 0


def cmd_eval(args) -> int:
    model = load_checkpoint(args.checkpoint)
    meta = model.meta
    out = Path(args.output_dir or Path(args.checkpoint).parent)
    split = args.split
    data = _rebuild_split(meta, split)
    payload = {"config_hash": meta.get("config_hash", ""), "seed": args.seed, "split": split}
    if isinstance(model, BaselineModel):
        with no_grad():
            scores = np.concatenate([model(data.features[i : i + 1024]).data for i in range(0, len(data), 1024)])
        payload["accuracy"] = accuracy(scores.argmax(1), data.labels)
    else:
        train = _rebuild_split(meta, "train")
        clf = PBJClassifier.from_model(model, train.features, train.labels)
        payload["centroid_accuracy"] = accuracy(clf.predict(data.features), data.labels)
        payload["stochastic_accuracy"] = accuracy(clf.predict_stochastic(data.features, args.k, args.seed), data.labels)
        payload["k"] = args.k
    path = _write_json(out / f"eval_{split}.json", payload)
    print(json.dumps(payload))
    print(f"written: {path}")
    return 0


def cmd_ood(args) -> int:
    cfg = _config(args)
    cfg.data.train_dir = _dataset_dir(args.id, args.data_dir)
    cfg.data.ood_dir = _dataset_dir(args.ood, args.data_dir)
    cfg.seeds = tuple(range(args.seeds)) if args.seeds else cfg.seeds
    result = X.run_ood_experiment(cfg, include_baseline=args.baseline)
    tag = f"{Path(args.id).name}_vs_{Path(args.ood).name}"
    path = result.to_json(Path(cfg.output_dir) / f"ood_{tag}.json")
    print(json.dumps(result.to_dict()["summary"]))
    print(f"written: {path}")
    return 0


def cmd_explain(args) -> int:
    model = load_checkpoint(args.checkpoint)
    if isinstance(model, BaselineModel):
        raise ValueError("explanations need a prototype (pbj) checkpoint")
    meta = model.meta
    train = _rebuild_split(meta, "train")
    data = train if meta.get("source") == "moons" else _rebuild_split(meta, args.split)
    if not 0 <= args.image_index < len(data):
        raise ValueError(f"image index {args.image_index} outside [0, {len(data)})")
    clf = PBJClassifier.from_model(model, train.features, train.labels)
    outcome = clf.explain(data.features[args.image_index], k=args.k, random_state=args.seed)
    out = Path(args.output_dir or Path(args.checkpoint).parent)
    stem = f"explain_{args.split}_{args.image_index}"
    extra = {
        "config_hash": meta.get("config_hash", ""),
        "seed": args.seed,
        "image_index": args.image_index,
        "label": int(data.labels[args.image_index]),
    }
    export_explanations(outcome, out / f"{stem}.csv", out / f"{stem}.json", extra)
    print(json.dumps({**outcome.to_dict(), **extra}))
    print(f"written: {out / (stem + '.csv')}, {out / (stem + '.json')}")
    return 0


def cmd_moons_grid(args) -> int:
    cfg = _config(args, default="moons")
    if cfg.data.source != "moons":
        raise ValueError("moons-grid needs a config with data.source = moons")
    bounds = tuple(float(b) for b in args.bounds.split(","))
    if len(bounds) != 4:
        raise ValueError("--bounds takes xmin,xmax,ymin,ymax")
    dataset = X.moons_dataset(cfg)
    if args.checkpoint:
        model = load_checkpoint(args.checkpoint)
        if isinstance(model, BaselineModel):
            raise ValueError("pass a pbj checkpoint or train the baseline with --head baseline")
        clf = PBJClassifier.from_model(model, dataset.features, dataset.labels, calibration_scale=cfg.model.calibration_scale)
        head = "pbj"
    else:
        head = args.head or cfg.model.head
        clf = X.make_estimator(cfg, head).fit(dataset.features, dataset.labels)
    grid = X.moons_grid(clf, bounds, args.resolution)
    path = X.write_grid_csv(grid, Path(cfg.output_dir) / f"moons_grid_{head}.csv", cfg.hash, cfg.train.seed)
    print(f"written: {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pbj", description="Prototype-based joint embedding experiments")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model and write a checkpoint and report")
    t.add_argument("--config", required=True)
    t.add_argument("--output-dir")
    t.add_argument("--head", choices=["pbj", "baseline"])
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="test accuracy of a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--split", default="test", choices=["train", "test"])
    e.add_argument("--k", type=int, default=100)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--output-dir")
    e.set_defaults(func=cmd_eval)

    o = sub.add_parser("ood", help="train on ID data and report AUROC against OOD data")
    o.add_argument("--id", required=True, help="dataset name (mnist, fashionmnist) or IDX directory")
    o.add_argument("--ood", required=True)
    o.add_argument("--seeds", type=int, help="number of seeds, 0..N-1")
    o.add_argument("--baseline", action="store_true", help="also train the softmax baseline")
    o.add_argument("--config")
    o.add_argument("--data-dir")
    o.add_argument("--output-dir")
    o.set_defaults(func=cmd_ood)

    x = sub.add_parser("explain", help="stochastic prototype explanation for one image")
    x.add_argument("--checkpoint", required=True)
    x.add_argument("--image-index", type=int, required=True)
    x.add_argument("--k", type=int, default=100)
    x.add_argument("--seed", type=int, default=0)
    x.add_argument("--split", default="test", choices=["train", "test"])
    x.add_argument("--output-dir")
    x.set_defaults(func=cmd_explain)

    g = sub.add_parser("moons-grid", help="confidence over a grid for the two-moons model")
    g.add_argument("--config")
    g.add_argument("--checkpoint")
    g.add_argument("--head", choices=["pbj", "baseline"])
    g.add_argument("--resolution", type=int, default=100)
    g.add_argument("--bounds", default="-3,4,-3,3.5")
    g.add_argument("--output-dir")
    g.set_defaults(func=cmd_moons_grid)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - report any failure as a diagnostic
        print(f"pbj {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
