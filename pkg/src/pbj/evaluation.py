"""Stochastic-prototype and centroid evaluation, OOD scoring and calibration."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from .data import Dataset
from .model import PBJModel, similarity


class StaleCentroidsError(RuntimeError):
    pass


@dataclass(frozen=True)
class LatentCache:
    latents: np.ndarray
    labels: np.ndarray
    num_classes: int
    source_hash: str

    @property
    def class_index(self) -> list[np.ndarray]:
        return [np.flatnonzero(self.labels == c) for c in range(self.num_classes)]

    def check(self, model) -> None:
        if model.fingerprint() != self.source_hash:
            raise StaleCentroidsError("latent cache was built from a different checkpoint")


@dataclass(frozen=True)
class CentroidSet:
    centroids: np.ndarray
    source_hash: str

    def check(self, model) -> None:
        if model.fingerprint() != self.source_hash:
            raise StaleCentroidsError("centroids were built from a different checkpoint")


@dataclass(frozen=True)
class ExplanationRecord:
    prototype_ids: np.ndarray
    scores: np.ndarray
    prediction: int


@dataclass(frozen=True)
class PredictionOutcome:
    prediction: int
    confidence: float
    distribution: np.ndarray
    explanations: list[ExplanationRecord] = field(repr=False)

    def to_dict(self) -> dict:
        return {
            "prediction": self.prediction,
            "confidence": self.confidence,
            "distribution": self.distribution.tolist(),
            "k": len(self.explanations),
        }


@dataclass(frozen=True)
class OODCalibration:
    alpha: float
    sigma: float
    scale: str = "std"

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("calibration spread must be positive")
        if self.scale not in ("std", "variance"):
            raise ValueError("scale must be 'std' or 'variance'")

    @property
    def divisor(self) -> float:
        return self.sigma if self.scale == "std" else self.sigma**2


def first_argmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    # np.argmax already returns the lowest index among ties
    return np.argmax(x, axis=axis)


def build_latent_cache(model: PBJModel, dataset: Dataset, batch_size: int = 1024) -> LatentCache:
    latents = model.encode(dataset.features, batch_size).astype(np.float64)
    return LatentCache(latents, dataset.labels.copy(), dataset.num_classes, model.fingerprint())


def build_centroids(cache: LatentCache) -> CentroidSet:
    centroids = np.empty((cache.num_classes, cache.latents.shape[1]))
    for c, idx in enumerate(cache.class_index):
        if idx.size == 0:
            raise ValueError(f"class {c} has no cached examples")
        centroids[c] = cache.latents[idx].mean(axis=0)
    return CentroidSet(centroids, cache.source_hash)


def similarities(latents: np.ndarray, references: np.ndarray) -> np.ndarray:
    """Similarity of each latent [n, d] to each reference [C, d] or [n, C, d]."""
    latents = np.asarray(latents, dtype=np.float64)
    references = np.asarray(references, dtype=np.float64)
    if references.ndim == 2:
        step = max(1, 2**22 // max(1, references.size))
        d2 = np.concatenate(
            [
                ((latents[i : i + step, None, :] - references[None]) ** 2).sum(-1)
                for i in range(0, len(latents), step)
            ]
        ) if len(latents) else np.empty((0, len(references)))
    else:
        d2 = ((latents[:, None, :] - references) ** 2).sum(-1)
    return similarity(d2)


def _scores(m: np.ndarray, model: PBJModel) -> np.ndarray:
    return m @ model.W.data.astype(np.float64).T


def stochastic_predict(model: PBJModel, cache: LatentCache, x, k: int = 100, seed=None) -> PredictionOutcome:
    """Predict from ``k`` random sets of class examples drawn from the training latents."""
    if k < 1:
        raise ValueError("k must be >= 1")
    cache.check(model)
    rng = np.random.default_rng(seed)
    latent = model.encode(np.asarray(x)[None])[0].astype(np.float64)
    C = cache.num_classes
    ids = np.stack([rng.choice(idx, size=k) for idx in cache.class_index], axis=1)
    m = similarities(np.broadcast_to(latent, (k, latent.size)), cache.latents[ids])
    preds = first_argmax(_scores(m, model), axis=1)
    counts = np.bincount(preds, minlength=C)
    distribution = counts / k
    prediction = int(first_argmax(counts))
    records = [ExplanationRecord(ids[i].copy(), m[i].copy(), int(preds[i])) for i in range(k)]
    return PredictionOutcome(prediction, float(distribution[prediction]), distribution, records)


def centroid_predict_batch(model: PBJModel, centroids: CentroidSet, x) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    centroids.check(model)
    m = similarities(model.encode(np.asarray(x)), centroids.centroids)
    scores = _scores(m, model)
    return first_argmax(scores, axis=1), scores, m


def centroid_predict(model: PBJModel, centroids: CentroidSet, x) -> tuple[int, np.ndarray, np.ndarray]:
    """Single-pass prediction using class centroids as the class examples."""
    preds, scores, m = centroid_predict_batch(model, centroids, np.asarray(x)[None])
    return int(preds[0]), scores[0], m[0]


def ood_scores_from_latents(latents: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    return similarities(latents, centroids).max(axis=1)


def ood_score_batch(model: PBJModel, centroids: CentroidSet, x) -> np.ndarray:
    centroids.check(model)
    return ood_scores_from_latents(model.encode(np.asarray(x)), centroids.centroids)


def ood_score(model: PBJModel, centroids: CentroidSet, x) -> float:
    """Similarity to the nearest class centroid; higher means more in-distribution."""
    return float(ood_score_batch(model, centroids, np.asarray(x)[None])[0])


def calibrate(cache: LatentCache, centroids: CentroidSet, scale: str = "std") -> OODCalibration:
    """Threshold at the 5th percentile of training scores, spread from their std."""
    if len(cache.latents) == 0:
        raise ValueError("empty latent cache")
    m = ood_scores_from_latents(cache.latents, centroids.centroids)
    sigma = float(m.std())
    if sigma <= 0:
        raise ValueError("training scores have zero spread; cannot calibrate")
    return OODCalibration(float(np.percentile(m, 5)), sigma, scale)


def id_confidence(m, calibration: OODCalibration):
    """Sigmoid-calibrated probability that a score comes from the training distribution."""
    return expit((np.asarray(m, dtype=np.float64) - calibration.alpha) / calibration.divisor)


def export_explanations(outcome: PredictionOutcome, csv_path, json_path, meta: dict | None = None) -> None:
    """One CSV row per draw plus a JSON summary."""
    meta = dict(meta or {})
    C = len(outcome.distribution)
    csv_path, json_path = Path(csv_path), Path(json_path)
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    with csv_path.open("w", newline="") as f:
        w = csv.writer(f)
        w.writerow(
            ["draw"]
            + [f"prototype_{c}" for c in range(C)]
            + [f"score_{c}" for c in range(C)]
            + ["prediction", "config_hash", "seed"]
        )
        for i, rec in enumerate(outcome.explanations):
            w.writerow(
                [i]
                + [int(j) for j in rec.prototype_ids]
                + [repr(float(s)) for s in rec.scores]
                + [rec.prediction, meta.get("config_hash", ""), meta.get("seed", "")]
            )
    json_path.write_text(json.dumps({**outcome.to_dict(), **meta}, indent=2))
