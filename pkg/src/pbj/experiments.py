"""Experiment drivers: accuracy runs, ID-vs-OOD separability and the two-moons grid."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .data import Dataset, channel_stats, generate_two_moons, load_idx_dir, normalize
from .estimators import PBJClassifier, SoftmaxClassifier
from .metrics import accuracy, auroc

log = logging.getLogger(__name__)


def load_image_task(train_dir, ood_dir=None):
    """Normalised ID train/test splits (and OOD test split) using ID training statistics."""
    train = load_idx_dir(train_dir, "train")
    test = load_idx_dir(train_dir, "test")
    mean, std = channel_stats(train)
    out = {
        "train": normalize(train, mean, std),
        "test": normalize(test, mean, std),
        "mean": mean.tolist(),
        "std": std.tolist(),
    }
    if ood_dir is not None:
        out["ood"] = normalize(load_idx_dir(ood_dir, "test"), mean, std)
    return out


def moons_dataset(cfg: ExperimentConfig) -> Dataset:
    d = cfg.data
    return generate_two_moons(d.moons_n, d.moons_noise, d.moons_seed)


def make_estimator(cfg: ExperimentConfig, head: str | None = None):
    head = head or cfg.model.head
    params = cfg.estimator_params()
    if head == "pbj":
        params.setdefault("gamma", cfg.train.gamma)
        params.setdefault("calibration_scale", cfg.model.calibration_scale)
        return PBJClassifier(**params)
    params.pop("gamma", None)
    params.pop("calibration_scale", None)
    return SoftmaxClassifier(**params)


def run_accuracy_experiment(cfg: ExperimentConfig, seed: int | None = None) -> dict:
    """Train on the ID training split; test accuracy in centroid and stochastic modes."""
    seed = cfg.train.seed if seed is None else seed
    cfg = cfg.with_seed(seed)
    task = load_image_task(cfg.data.train_dir)
    clf = make_estimator(cfg, "pbj").fit(task["train"].features, task["train"].labels)
    test = task["test"]
    return {
        "seed": seed,
        "config_hash": cfg.hash,
        "centroid_accuracy": accuracy(clf.predict(test.features), test.labels),
        "stochastic_accuracy": accuracy(clf.predict_stochastic(test.features, cfg.k, seed), test.labels),
        "k": cfg.k,
        "estimator": clf,
    }


def _mean_std(values) -> dict:
    arr = np.asarray(values, dtype=np.float64)
    return {"mean": float(arr.mean()), "std": float(arr.std(ddof=1)) if arr.size > 1 else 0.0}


@dataclass
class OODResult:
    config_hash: str
    runs: list[dict] = field(default_factory=list)

    def summary(self, method: str) -> dict:
        rows = [r for r in self.runs if r["method"] == method]
        if not rows:
            raise KeyError(method)
        return {
            "accuracy": _mean_std([r["accuracy"] for r in rows]),
            "auroc": _mean_std([r["auroc"] for r in rows]),
            "seeds": [r["seed"] for r in rows],
        }

    @property
    def methods(self) -> list[str]:
        return sorted({r["method"] for r in self.runs})

    def to_dict(self) -> dict:
        return {
            "config_hash": self.config_hash,
            "runs": self.runs,
            "summary": {m: self.summary(m) for m in self.methods},
        }

    def to_json(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2))
        return path


def evaluate_ood(clf, id_test: Dataset, ood_test: Dataset) -> dict:
    id_scores = clf.score_samples(id_test.features)
    ood_scores = clf.score_samples(ood_test.features)
    return {
        "accuracy": accuracy(clf.predict(id_test.features), id_test.labels),
        "auroc": auroc(id_scores, ood_scores),
    }


def run_ood_experiment(cfg: ExperimentConfig, include_baseline: bool = False, task=None) -> OODResult:
    """Per seed: train on ID, score ID and OOD test sets, report accuracy and AUROC."""
    if task is None:
        if cfg.data.ood_dir is None:
            raise ValueError("the OOD experiment needs data.ood_dir")
        task = load_image_task(cfg.data.train_dir, cfg.data.ood_dir)
    if task["train"].input_shape != task["ood"].input_shape:
        raise ValueError("ID and OOD inputs differ in shape")
    result = OODResult(cfg.hash)
    heads = ["pbj", "baseline"] if include_baseline else ["pbj"]
    for seed in cfg.seeds:
        seeded = cfg.with_seed(seed)
        for head in heads:
            clf = make_estimator(seeded, head).fit(task["train"].features, task["train"].labels)
            row = {"method": head, "seed": seed, **evaluate_ood(clf, task["test"], task["ood"])}
            log.info("ood %s seed %d: acc %.4f auroc %.4f", head, seed, row["accuracy"], row["auroc"])
            result.runs.append(row)
    return result


def grid_points(bounds, resolution: int) -> np.ndarray:
    if resolution < 1:
        raise ValueError("resolution must be positive")
    xmin, xmax, ymin, ymax = bounds
    xs = np.linspace(xmin, xmax, resolution)
    ys = np.linspace(ymin, ymax, resolution)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    return np.stack([gx.ravel(), gy.ravel()], axis=1)


def moons_grid(clf, bounds=(-3.0, 4.0, -3.0, 3.5), resolution: int = 100) -> np.ndarray:
    """Rows of (x, y, confidence): calibrated ID confidence for the prototype
    model, maximum softmax probability for the baseline."""
    points = grid_points(bounds, resolution)
    if isinstance(clf, PBJClassifier):
        value = clf.id_confidence(points)
    else:
        value = clf.score_samples(points)
    return np.column_stack([points, value])


def write_grid_csv(grid: np.ndarray, path, config_hash: str = "", seed=None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["x", "y", "confidence", "config_hash", "seed"])
        for x, y, v in grid:
            w.writerow([repr(float(x)), repr(float(y)), repr(float(v)), config_hash, seed])
    return path
