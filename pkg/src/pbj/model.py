"""Backbones, the prototype similarity head and the softmax baseline."""
from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor

DISTANCE_EPS = 1e-10
MAX_SIMILARITY = float(np.log(1.0 / DISTANCE_EPS))


@dataclass(frozen=True)
class BackboneConfig:
    """Shape of the shared encoder that maps inputs to the latent space.

    ``kind`` is ``"mlp"`` (fully connected, ``hidden`` widths) or ``"cnn3"``
    (three conv/batchnorm/relu/maxpool blocks with ``channels`` and
    ``paddings``, then a ``fc_width`` hidden layer). Either way a linear
    projection to ``latent_dim`` follows.
    """

    kind: str = "mlp"
    input_shape: tuple[int, ...] = (2,)
    latent_dim: int = 8
    hidden: tuple[int, ...] = (64, 64)
    channels: tuple[int, ...] = (64, 128, 128)
    paddings: tuple[int, ...] = (1, 0, 1)
    fc_width: int = 256
    projection_bias: bool = False

    def __post_init__(self):
        if self.kind not in ("mlp", "cnn3"):
            raise ValueError(f"unknown backbone kind {self.kind!r}")
        if self.latent_dim < 1:
            raise ValueError("latent_dim must be >= 1")
        widths = self.hidden if self.kind == "mlp" else self.channels + (self.fc_width,)
        if any(w < 1 for w in widths):
            raise ValueError("layer widths must be >= 1")
        if self.kind == "cnn3" and (len(self.channels) != 3 or len(self.paddings) != 3):
            raise ValueError("cnn3 needs exactly three channel and padding entries")
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        object.__setattr__(self, "hidden", tuple(int(s) for s in self.hidden))
        object.__setattr__(self, "channels", tuple(int(s) for s in self.channels))
        object.__setattr__(self, "paddings", tuple(int(s) for s in self.paddings))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "BackboneConfig":
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


def _he(rng, shape, fan_in, dtype):
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


def _uniform(rng, shape, fan_in, dtype):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Backbone:
    """Encoder plus projection. Parameters live in ``params``; running stats in ``buffers``."""

    def __init__(self, config: BackboneConfig, rng: np.random.Generator, dtype=np.float32):
        self.config = config
        self.params: dict[str, Tensor] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self.training = True
        self.encoded_count = 0
        if config.kind == "mlp":
            fan_in = int(np.prod(config.input_shape))
            for i, width in enumerate(config.hidden):
                self._param(f"fc{i}.weight", _he(rng, (width, fan_in), fan_in, dtype))
                self._param(f"fc{i}.bias", np.zeros(width, dtype))
                fan_in = width
        else:
            cin, h, w = config.input_shape
            for i, (cout, pad) in enumerate(zip(config.channels, config.paddings)):
                self._param(f"conv{i}.weight", _he(rng, (cout, cin, 3, 3), cin * 9, dtype))
                self._param(f"bn{i}.weight", np.ones(cout, dtype))
                self._param(f"bn{i}.bias", np.zeros(cout, dtype))
                self.buffers[f"bn{i}.running_mean"] = np.zeros(cout, dtype)
                self.buffers[f"bn{i}.running_var"] = np.ones(cout, dtype)
                h, w = h + 2 * pad - 2, w + 2 * pad - 2
                if h % 2 or w % 2 or h < 2 or w < 2:
                    raise ValueError(f"cnn3 block {i} yields {h}x{w}, which maxpool2 cannot halve")
                h, w, cin = h // 2, w // 2, cout
            fan_in = cin * h * w
            self._param("fc.weight", _he(rng, (config.fc_width, fan_in), fan_in, dtype))
            self._param("fc.bias", np.zeros(config.fc_width, dtype))
            fan_in = config.fc_width
        self.feature_dim = fan_in
        self._param("proj.weight", _uniform(rng, (config.latent_dim, fan_in), fan_in, dtype))
        if config.projection_bias:
            self._param("proj.bias", np.zeros(config.latent_dim, dtype))

    def _param(self, name, value):
        self.params[name] = Tensor(value, requires_grad=True)

    def __call__(self, x) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(x)
        cfg = self.config
        if x.shape[1:] != cfg.input_shape:
            raise ValueError(f"backbone expects inputs of shape {cfg.input_shape}, got {x.shape[1:]}")
        self.encoded_count += x.shape[0]
        p = self.params
        if cfg.kind == "mlp":
            h = T.flatten(x) if x.ndim > 2 else x
            for i in range(len(cfg.hidden)):
                h = T.relu(T.affine(h, p[f"fc{i}.weight"], p[f"fc{i}.bias"]))
        else:
            h = x
            for i, pad in enumerate(cfg.paddings):
                h = T.conv2d(h, p[f"conv{i}.weight"], stride=1, padding=pad)
                h = T.batchnorm2d(
                    h,
                    p[f"bn{i}.weight"],
                    p[f"bn{i}.bias"],
                    self.buffers[f"bn{i}.running_mean"],
                    self.buffers[f"bn{i}.running_var"],
                    training=self.training,
                )
                h = T.maxpool2(T.relu(h))
            h = T.relu(T.affine(T.flatten(h), p["fc.weight"], p["fc.bias"]))
        return T.affine(h, p["proj.weight"], p.get("proj.bias"))


def init_W(num_classes: int, gamma: float, dtype=np.float32) -> np.ndarray:
    """Score matrix with ``gamma`` on the diagonal and ``-gamma/(C-1)`` elsewhere."""
    if num_classes < 2:
        raise ValueError("need at least two classes")
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    W = np.full((num_classes, num_classes), -gamma / (num_classes - 1), dtype=np.float64)
    np.fill_diagonal(W, gamma)
    return W.astype(dtype)


def squared_distances(anchor: Tensor, class_latents: Tensor) -> Tensor:
    """Squared Euclidean distance from each anchor to each of its class latents.

    ``anchor`` is [d] or [batch, d]; ``class_latents`` is [C, d] (shared) or
    [batch, C, d] (one set per anchor).
    """
    if anchor.shape[-1] != class_latents.shape[-1]:
        raise ValueError(f"latent dims differ: {anchor.shape} vs {class_latents.shape}")
    if anchor.ndim == 2:
        anchor = T.reshape(anchor, (anchor.shape[0], 1, anchor.shape[1]))
    return T.tsum(T.square(anchor - class_latents), axis=-1)


def distance_array(anchor: Tensor, class_latents: Tensor) -> Tensor:
    """log((d^2 + 1) / (d^2 + 1e-10)) per class: large when close, towards 0 when far."""
    d2 = squared_distances(anchor, class_latents)
    return T.log(d2 + 1.0) - T.log(d2 + DISTANCE_EPS)


def similarity(d2):
    """The same transform on plain arrays of squared distances (float64)."""
    d2 = np.asarray(d2, dtype=np.float64)
    return np.log(d2 + 1.0) - np.log(d2 + DISTANCE_EPS)


def class_scores(m: Tensor, W: Tensor) -> Tensor:
    """``m @ W.T``: softmax regression without bias over the distance array."""
    if m.shape[-1] != W.shape[1] or W.shape[0] != W.shape[1]:
        raise ValueError(f"distance array {m.shape} incompatible with W {W.shape}")
    if m.ndim == 1:
        return T.reshape(T.affine(T.reshape(m, (1, -1)), W), (W.shape[0],))
    return T.affine(m, W)


class _Model:
    head_kind = ""

    def __init__(self, config: BackboneConfig, num_classes: int, seed=None, dtype=np.float32):
        if num_classes < 2:
            raise ValueError("need at least two classes")
        self.config = config
        self.num_classes = num_classes
        self.backbone = Backbone(config, np.random.default_rng(seed), dtype)
        self.head: dict[str, Tensor] = {}
        self.meta: dict = {}

    @property
    def training(self) -> bool:
        return self.backbone.training

    def train(self) -> "_Model":
        self.backbone.training = True
        return self

    def eval(self) -> "_Model":
        self.backbone.training = False
        return self

    @property
    def buffers(self) -> dict[str, np.ndarray]:
        return self.backbone.buffers

    def named_parameters(self) -> dict[str, Tensor]:
        out = {f"backbone.{k}": v for k, v in self.backbone.params.items()}
        out.update({f"head.{k}": v for k, v in self.head.items()})
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def astype(self, dtype) -> "_Model":
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        for k, b in self.buffers.items():
            self.buffers[k] = b.astype(dtype)
        return self

    def fingerprint(self) -> str:
        """Hash of every parameter and running statistic."""
        h = hashlib.sha256()
        h.update(self.head_kind.encode())
        for name, p in sorted(self.named_parameters().items()):
            h.update(name.encode())
            h.update(np.ascontiguousarray(p.data).tobytes())
        for name, b in sorted(self.buffers.items()):
            h.update(name.encode())
            h.update(np.ascontiguousarray(b).tobytes())
        return h.hexdigest()

    def forward_latent(self, x) -> Tensor:
        """Latent codes [batch, d] from the shared backbone and projection."""
        return self.backbone(x)

    def encode(self, x, batch_size: int = 1024) -> np.ndarray:
        """Latents for a whole array in eval mode, without recording a tape."""
        was_training = self.training
        self.eval()
        try:
            with T.no_grad():
                chunks = [
                    self.forward_latent(x[i : i + batch_size]).data
                    for i in range(0, len(x), batch_size)
                ]
        finally:
            self.backbone.training = was_training
        return np.concatenate(chunks, axis=0)


class PBJModel(_Model):
    """Shared encoder whose class scores come from distances to class examples."""

    head_kind = "pbj"

    def __init__(self, config: BackboneConfig, num_classes: int, gamma: float = 100.0, seed=None, dtype=np.float32):
        super().__init__(config, num_classes, seed, dtype)
        self.gamma = float(gamma)
        self.head["W"] = Tensor(init_W(num_classes, gamma, dtype), requires_grad=True)

    @property
    def W(self) -> Tensor:
        return self.head["W"]

    def scores_from_latents(self, anchor_latents: Tensor, class_latents: Tensor) -> Tensor:
        return class_scores(distance_array(anchor_latents, class_latents), self.W)

    def forward(self, anchors, class_latents: Tensor) -> Tensor:
        return self.scores_from_latents(self.forward_latent(anchors), class_latents)

    __call__ = forward


class BaselineModel(_Model):
    """The same encoder followed by an affine layer onto the classes."""

    head_kind = "baseline"

    def __init__(self, config: BackboneConfig, num_classes: int, seed=None, dtype=np.float32, gamma: float = 0.0):
        super().__init__(config, num_classes, seed, dtype)
        self.gamma = float(gamma)
        rng = np.random.default_rng(None if seed is None else seed + 1)
        d = config.latent_dim
        self.head["weight"] = Tensor(_uniform(rng, (num_classes, d), d, dtype), requires_grad=True)
        self.head["bias"] = Tensor(np.zeros(num_classes, dtype), requires_grad=True)

    def forward(self, x) -> Tensor:
        return T.affine(self.forward_latent(x), self.head["weight"], self.head["bias"])

    __call__ = forward


def pbj_forward(model: PBJModel, anchors, class_latents: Tensor) -> Tensor:
    return model.forward(anchors, class_latents)


def baseline_forward(model: BaselineModel, x) -> Tensor:
    return model.forward(x)


def softmax_confidence(scores) -> np.ndarray:
    """Largest softmax probability per row."""
    s = scores.data if isinstance(scores, Tensor) else np.asarray(scores)
    return T.softmax(s.astype(np.float64)).max(axis=-1)


def build_model(head: str, config: BackboneConfig, num_classes: int, gamma: float = 100.0, seed=None, dtype=np.float32):
    if head == "pbj":
        return PBJModel(config, num_classes, gamma=gamma, seed=seed, dtype=dtype)
    if head == "baseline":
        return BaselineModel(config, num_classes, seed=seed, dtype=dtype, gamma=gamma)
    raise ValueError(f"unknown head {head!r}")
