"""Shared builders for model-level tests and the acceptance suite."""
from __future__ import annotations

import numpy as np

from oracles import central_difference, relative_error
from pbj import tensor as T
from pbj.data import Dataset, make_training_batch
from pbj.model import BackboneConfig, PBJModel
from pbj.training import pbj_batch_loss


def small_config(kind: str, rng: np.random.Generator) -> BackboneConfig:
    if kind == "mlp":
        return BackboneConfig(
            kind="mlp",
            input_shape=(int(rng.integers(2, 5)),),
            latent_dim=int(rng.integers(2, 5)),
            hidden=tuple(int(w) for w in rng.integers(3, 6, size=rng.integers(1, 3))),
        )
    return BackboneConfig(
        kind="cnn3",
        input_shape=(1, 8, 8),
        latent_dim=int(rng.integers(2, 4)),
        channels=(2, 3, 2),
        paddings=(1, 1, 1),
        fc_width=4,
    )


def random_case(kind: str, num_classes: int, seed: int, per_class: int = 2, batch: int = 4):
    """A float64 model, a toy dataset and one sampled training batch."""
    rng = np.random.default_rng(seed)
    config = small_config(kind, rng)
    model = PBJModel(config, num_classes, gamma=float(rng.choice([1.0, 3.0])), seed=seed, dtype=np.float64)
    # zero biases put pre-activations exactly on relu kinks; the symmetric W
    # init hides mistakes in its gradient. Jitter everything.
    for p in model.parameters():
        p.data += rng.normal(scale=0.1, size=p.shape)
    labels = np.repeat(np.arange(num_classes), per_class)
    features = rng.normal(size=(len(labels),) + config.input_shape)
    dataset = Dataset(features, labels, num_classes)
    anchors = rng.choice(len(dataset), size=min(batch, len(dataset)), replace=False)
    return model, dataset, make_training_batch(dataset, anchors, rng)


def gradient_errors(model, dataset, batch, step=3e-6) -> tuple[dict[str, float], int]:
    """Largest relative error per parameter between autodiff and central differences.

    Entries whose estimate changes between ``step`` and ``step / 3`` sit on a
    relu/maxpool kink inside the stencil; they are left out and counted.
    """
    model.train()
    model.zero_grad()
    loss, _ = pbj_batch_loss(model, dataset, batch)
    T.backward(loss)
    params = model.named_parameters()
    analytic = {name: p.grad.copy() for name, p in params.items()}

    def f():
        with T.no_grad():
            return pbj_batch_loss(model, dataset, batch)[0].item()

    names = list(params)
    arrays = [params[n].data for n in names]
    coarse = central_difference(f, arrays, step=step)
    fine = central_difference(f, arrays, step=step / 3)
    errors, excluded = {}, 0
    for n, g1, g2 in zip(names, coarse, fine):
        # entries below 1e-3 are compared absolutely; FD roundoff there is ~1e-8
        smooth = relative_error(g1, g2, floor=1e-3) < 1e-4
        excluded += int((~smooth).sum())
        # Richardson extrapolation cancels the O(step^2) truncation term
        err = relative_error(analytic[n], (9 * g2 - g1) / 8, floor=1e-3)
        errors[n] = float(err[smooth].max()) if smooth.any() else 0.0
    return errors, excluded


def prototype_toy(seed: int = 0):
    """Untrained 3-class model with 4 training examples per class and its latent cache."""
    from pbj.evaluation import build_latent_cache

    rng = np.random.default_rng(seed)
    model = PBJModel(BackboneConfig(input_shape=(2,), latent_dim=2, hidden=(8,)), 3, gamma=10.0, seed=seed)
    dataset = Dataset(rng.normal(size=(12, 2)).astype(np.float32), np.repeat([0, 1, 2], 4), 3)
    return model, dataset, build_latent_cache(model, dataset)


def total_variation(p, q) -> float:
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


def write_pattern_idx(directory, pattern: str = "quadrants", n_train: int = 80, n_test: int = 40, seed: int = 0):
    """Tiny 8x8, 4-class IDX dataset. ``quadrants`` lights one quadrant per
    class; ``stripes`` lights one row band per class (a shifted distribution)."""
    from pathlib import Path

    from pbj.data import IDX_SPLITS, write_idx

    rng = np.random.default_rng(seed)
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for split, n in (("train", n_train), ("test", n_test)):
        labels = np.arange(n) % 4
        images = rng.integers(0, 60, size=(n, 8, 8))
        for i, c in enumerate(labels):
            if pattern == "quadrants":
                r, q = divmod(int(c), 2)
                images[i, 4 * r : 4 * r + 4, 4 * q : 4 * q + 4] += 180
            else:
                images[i, 2 * c : 2 * c + 2, :] += 180
        img, lbl = IDX_SPLITS[split]
        write_idx(images.astype(np.uint8), labels, directory / img, directory / lbl)
    return directory
