"""External-attention header classifier.

Pipeline per sample of N bytes::

    byte + position embedding  (N x D)
    -> external attention over two shared S x D memories
    -> valid 1D convolution with L kernels of width Q, ReLU, max over positions
    -> linear map to T logits, softmax

No layer carries a bias term.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import grad
from .grad import Tape, Tensor

FORMAT_NAME = "hdrclass-model"
FORMAT_VERSION = 1
PARAM_NAMES = ("W_E", "P", "M_K", "M_V", "kernels", "W_out")


class VersionMismatch(ValueError):
    pass


class CorruptFile(ValueError):
    pass


ShapeMismatch = grad.ShapeMismatch


@dataclass(frozen=True)
class ModelConfig:
    n: int = 12
    d: int = 32
    s: int = 128
    kernels: int = 64
    q: int = 3
    t: int = 6
    dropout_p: float = 0.1
    seed: int = 0
    # where dropout is applied while training
    dropout_sites: tuple[str, ...] = ("embedding", "attention")

    def __post_init__(self):
        for name in ("n", "d", "s", "kernels", "q", "t"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.q > self.n:
            raise ValueError(f"kernel width q={self.q} exceeds input length n={self.n}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError("dropout_p must lie in [0, 1)")
        unknown = set(self.dropout_sites) - {"embedding", "attention"}
        if unknown:
            raise ValueError(f"unknown dropout sites: {sorted(unknown)}")

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        return {
            "W_E": (256, self.d),
            "P": (self.n, self.d),
            "M_K": (self.s, self.d),
            "M_V": (self.s, self.d),
            "kernels": (self.kernels, self.d, self.q),
            "W_out": (self.t, self.kernels),
        }

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dropout_sites"] = list(self.dropout_sites)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> ModelConfig:
        d = dict(d)
        if "dropout_sites" in d:
            d["dropout_sites"] = tuple(d["dropout_sites"])
        return cls(**d)


def _fans(name: str, shape: tuple[int, ...]) -> tuple[int, int]:
    if name == "kernels":
        n_k, d, q = shape
        return d * q, n_k
    if name == "W_out":
        return shape[1], shape[0]
    return shape[0], shape[1]


def init_params(config: ModelConfig, seed: int | None = None) -> dict[str, np.ndarray]:
    """Glorot-uniform initialisation, deterministic in ``seed`` (defaults to config.seed)."""
    rng = np.random.default_rng(config.seed if seed is None else seed)
    params = {}
    for name, shape in config.param_shapes().items():
        fan_in, fan_out = _fans(name, shape)
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        params[name] = rng.uniform(-bound, bound, size=shape)
    return params


def check_params(params: dict[str, np.ndarray], config: ModelConfig) -> None:
    expected = config.param_shapes()
    if set(params) != set(expected):
        raise ShapeMismatch(f"parameter names {sorted(params)} != {sorted(expected)}")
    for name, shape in expected.items():
        if tuple(params[name].shape) != shape:
            raise ShapeMismatch(f"{name}: shape {params[name].shape}, config wants {shape}")
        if not np.all(np.isfinite(params[name])):
            raise ValueError(f"{name} contains non-finite values")


# -- layers ------------------------------------------------------------------


def embed(x: np.ndarray, w_e: Tensor, pos: Tensor) -> Tensor:
    """Y_E[n] = W_E[x[n]] + P[n] for byte matrix ``x`` of shape (..., N)."""
    x = np.asarray(x)
    if x.size and (x.min() < 0 or x.max() > 255):
        raise ValueError("input bytes must lie in [0, 255]")
    return grad.add(grad.lookup_rows(w_e, x), pos)


def attention_map(y_e: Tensor, m_k: Tensor) -> tuple[Tensor, Tensor]:
    """Return (softmaxed scores, attention map).

    Scores Y_E M_Kᵀ are softmaxed over the N axis, then each row is divided by
    its sum so that every row of the map is a distribution over the S slots.
    """
    scores = grad.matmul(y_e, grad.transpose(m_k))
    col_soft = grad.softmax(scores, axis=-2)
    return col_soft, grad.row_l1_normalize(col_soft, axis=-1)


def external_attention(y_e: Tensor, m_k: Tensor, m_v: Tensor) -> Tensor:
    _, a = attention_map(y_e, m_k)
    return grad.matmul(a, m_v)


def conv_head(y_a: Tensor, kernels: Tensor) -> Tensor:
    """Valid convolution over bytes, ReLU, then max over window positions -> (..., L)."""
    c = grad.conv1d_valid(y_a, kernels)
    return grad.max_pool(grad.relu(c), axis=-2)


def classify(y_c: Tensor, w_out: Tensor) -> Tensor:
    logits = grad.matmul(y_c, grad.transpose(w_out))
    return grad.softmax(logits, axis=-1)


def forward(
    x: np.ndarray,
    params: dict[str, Tensor],
    config: ModelConfig,
    train: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Class probabilities for a (B, N) byte batch."""
    x = np.asarray(x)
    if x.ndim != 2 or x.shape[-1] != config.n:
        raise ShapeMismatch(f"expected a (B, {config.n}) byte batch, got shape {x.shape}")
    p = config.dropout_p
    sites = config.dropout_sites
    h = embed(x, params["W_E"], params["P"])
    if "embedding" in sites:
        h = grad.dropout(h, p, rng, train)
    h = external_attention(h, params["M_K"], params["M_V"])
    if "attention" in sites:
        h = grad.dropout(h, p, rng, train)
    return classify(conv_head(h, params["kernels"]), params["W_out"])


def as_constants(params: dict[str, np.ndarray]) -> dict[str, Tensor]:
    return {k: Tensor(v, check=False) for k, v in params.items()}


def as_tape_params(params: dict[str, np.ndarray], tape: Tape) -> dict[str, Tensor]:
    return {k: tape.param(k, v) for k, v in params.items()}


@dataclass
class Model:
    """Parameters, configuration and class names bundled for inference."""

    config: ModelConfig
    params: dict[str, np.ndarray]
    class_names: tuple[str, ...] = ()
    meta: dict = field(default_factory=dict)
    _consts: dict[str, Tensor] | None = field(default=None, repr=False, compare=False)

    @classmethod
    def initialise(cls, config: ModelConfig, class_names=()) -> Model:
        return cls(config, init_params(config), tuple(class_names))

    def _constants(self) -> dict[str, Tensor]:
        if self._consts is None:
            self._consts = as_constants(self.params)
        return self._consts

    def invalidate(self) -> None:
        self._consts = None

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x)
        if x.ndim == 1:
            return forward(x[None, :], self._constants(), self.config).value[0]
        return forward(x, self._constants(), self.config).value

    def predict(self, x: np.ndarray) -> np.ndarray:
        # np.argmax breaks ties towards the first index
        return np.argmax(self.predict_proba(x), axis=-1)


# -- persistence -------------------------------------------------------------


def save_model(model: Model, path) -> None:
    check_params(model.params, model.config)
    doc = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "config": model.config.to_dict(),
        "class_names": list(model.class_names),
        "meta": model.meta,
        # Python float repr is the shortest string that round-trips exactly
        "tensors": {
            name: {"shape": list(model.params[name].shape), "values": model.params[name].ravel().tolist()}
            for name in PARAM_NAMES
        },
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_model(path) -> Model:
    """Read a model file; the configuration stored in the file is authoritative."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise CorruptFile(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(doc, dict) or doc.get("format") != FORMAT_NAME:
        raise CorruptFile(f"{path}: not a {FORMAT_NAME} file")
    if doc.get("version") != FORMAT_VERSION:
        raise VersionMismatch(f"{path}: format version {doc.get('version')}, expected {FORMAT_VERSION}")
    try:
        config = ModelConfig.from_dict(doc["config"])
        tensors = doc["tensors"]
        params = {}
        for name, shape in config.param_shapes().items():
            entry = tensors[name]
            if tuple(entry["shape"]) != shape:
                raise ShapeMismatch(f"{name}: stored shape {entry['shape']} disagrees with config {shape}")
            values = np.asarray(entry["values"], dtype=np.float64)
            if values.size != math.prod(shape):
                raise CorruptFile(f"{name}: {values.size} values for shape {shape}")
            params[name] = values.reshape(shape)
    except (KeyError, TypeError) as exc:
        raise CorruptFile(f"{path}: missing or malformed field ({exc})") from exc
    check_params(params, config)
    return Model(config, params, tuple(doc.get("class_names", ())), doc.get("meta", {}))
