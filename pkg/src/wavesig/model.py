"""Shared-weight embedding branch and its weights container.

The branch maps a grayscale signature through the scattering transform,
four 3x3 conv blocks (16, 16, 32, 32 filters, ReLU, max-pool per the
configured plan), and one dense layer to a 128-dimensional embedding,
optionally L2-normalized. Both sides of a comparison use the same
ModelWeights object, so weight sharing is structural rather than copied.

Weights file format ("SSNW"): magic bytes, little-endian u32 format
version, u32 manifest length, a JSON manifest (model config plus a named
tensor table with shapes and payload offsets), then raw little-endian
IEEE-754 float32 payloads in row-major order. Round-trips are bit-exact.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .scattering import FilterBank, ScatteringConfig, output_layout, scatter
from .tensor import Parameter, Tensor, conv2d, dense, l2_normalize, maxpool2d, relu

__all__ = [
    "ModelConfig",
    "ModelWeights",
    "Embedding",
    "FormatError",
    "init_model",
    "embed",
    "embed_features",
    "distance",
    "count_parameters",
    "parameter_table",
    "spatial_plan",
    "serialize",
    "deserialize",
    "save_weights",
    "load_weights",
    "write_tensor_container",
    "read_tensor_container",
]

WEIGHTS_MAGIC = b"SSNW"
WEIGHTS_VERSION = 1


class FormatError(ValueError):
    """Malformed or incompatible weights container."""


@dataclass(frozen=True)
class ModelConfig:
    """Architecture of one embedding branch.

    pool_after_block marks which conv blocks are followed by a 2x2
    stride-2 max-pool; pool_ceil_mode marks which of those pools keep
    partial edge windows. The default plan (pool after blocks 1-3, ceil
    mode on the last pool only) is pinned so the total parameter count
    lands inside the published comparison band.
    """

    scattering: ScatteringConfig = field(default_factory=ScatteringConfig)
    conv_filters: tuple[int, ...] = (16, 16, 32, 32)
    kernel: int = 3
    padding_mode: str = "same"
    pool_after_block: tuple[bool, ...] = (True, True, True, False)
    pool_ceil_mode: tuple[bool, ...] = (False, False, True, False)
    embedding_dim: int = 128
    normalize_embeddings: bool = True

    def __post_init__(self):
        object.__setattr__(self, "conv_filters", tuple(self.conv_filters))
        object.__setattr__(self, "pool_after_block", tuple(self.pool_after_block))
        object.__setattr__(self, "pool_ceil_mode", tuple(self.pool_ceil_mode))
        n = len(self.conv_filters)
        if len(self.pool_after_block) != n or len(self.pool_ceil_mode) != n:
            raise ValueError("pool flags must have one entry per conv block")
        if self.padding_mode not in ("same", "valid"):
            raise ValueError(f"padding_mode must be 'same' or 'valid', got {self.padding_mode!r}")
        if self.padding_mode == "same" and self.kernel % 2 == 0:
            raise ValueError("'same' padding requires an odd kernel size")
        if self.kernel < 1 or self.embedding_dim < 1 or not self.conv_filters:
            raise ValueError("kernel, embedding_dim and conv_filters must be positive")

    @property
    def conv_padding(self) -> int:
        return (self.kernel - 1) // 2 if self.padding_mode == "same" else 0

    def to_dict(self) -> dict:
        sc = self.scattering
        return {
            "scattering": {
                "J": sc.J,
                "L": sc.L,
                "input_height": sc.input_height,
                "input_width": sc.input_width,
            },
            "conv_filters": list(self.conv_filters),
            "kernel": self.kernel,
            "padding_mode": self.padding_mode,
            "pool_after_block": list(self.pool_after_block),
            "pool_ceil_mode": list(self.pool_ceil_mode),
            "embedding_dim": self.embedding_dim,
            "normalize_embeddings": self.normalize_embeddings,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        sc = d["scattering"]
        return cls(
            scattering=ScatteringConfig(
                J=int(sc["J"]),
                L=int(sc["L"]),
                input_height=int(sc["input_height"]),
                input_width=int(sc["input_width"]),
            ),
            conv_filters=tuple(int(v) for v in d["conv_filters"]),
            kernel=int(d["kernel"]),
            padding_mode=str(d["padding_mode"]),
            pool_after_block=tuple(bool(v) for v in d["pool_after_block"]),
            pool_ceil_mode=tuple(bool(v) for v in d["pool_ceil_mode"]),
            embedding_dim=int(d["embedding_dim"]),
            normalize_embeddings=bool(d["normalize_embeddings"]),
        )


def _pool_extent(n: int, ceil_mode: bool) -> int:
    # 2x2 window, stride 2; ceil mode keeps a trailing partial window.
    if ceil_mode:
        e = -(-(n - 2) // 2) + 1
        if (e - 1) * 2 >= n:
            e -= 1
        return e
    return (n - 2) // 2 + 1


def spatial_plan(config: ModelConfig) -> list[dict]:
    """Per-block geometry derived from the config alone (no filter bank).

    Returns one record per conv block with input/output channels and the
    spatial extents after the conv and after the optional pool, followed
    by a final record for the dense layer.
    """
    channels, h, w = output_layout(config.scattering)
    plan = []
    c_in = channels
    for i, c_out in enumerate(config.conv_filters):
        if config.padding_mode == "valid":
            h, w = h - config.kernel + 1, w - config.kernel + 1
            if h < 1 or w < 1:
                raise ValueError("spatial extent collapsed to zero under 'valid' padding")
        conv_h, conv_w = h, w
        if config.pool_after_block[i]:
            h = _pool_extent(h, config.pool_ceil_mode[i])
            w = _pool_extent(w, config.pool_ceil_mode[i])
        plan.append(
            {
                "name": f"conv{i + 1}",
                "in_channels": c_in,
                "out_channels": c_out,
                "conv_extent": (conv_h, conv_w),
                "out_extent": (h, w),
            }
        )
        c_in = c_out
    plan.append(
        {
            "name": "dense",
            "in_features": c_in * h * w,
            "out_features": config.embedding_dim,
        }
    )
    return plan


class ModelWeights:
    """All trainable parameters of one branch, addressable by name."""

    def __init__(self, config: ModelConfig, params: dict[str, Parameter], version: int = WEIGHTS_VERSION):
        self.config = config
        self.version = version
        names = list(params)
        if len(set(names)) != len(names):
            raise ValueError("duplicate parameter names")
        self.params = dict(params)

    def __getitem__(self, name: str) -> Parameter:
        return self.params[name]

    def parameters(self) -> list[Parameter]:
        return list(self.params.values())

    def expected_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes: dict[str, tuple[int, ...]] = {}
        k = self.config.kernel
        for entry in spatial_plan(self.config):
            if entry["name"].startswith("conv"):
                shapes[f"{entry['name']}.weight"] = (entry["out_channels"], entry["in_channels"], k, k)
                shapes[f"{entry['name']}.bias"] = (entry["out_channels"],)
            else:
                shapes["dense.weight"] = (entry["out_features"], entry["in_features"])
                shapes["dense.bias"] = (entry["out_features"],)
        return shapes


@dataclass
class Embedding:
    """One branch output: 128 features, unit norm when normalization is on."""

    values: np.ndarray
    source_id: str | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32).reshape(-1)


def init_model(config: ModelConfig, seed: int) -> ModelWeights:
    """Deterministic fan-in-scaled uniform weights, zero biases, float32."""
    rng = np.random.default_rng(seed)
    params: dict[str, Parameter] = {}
    k = config.kernel
    for entry in spatial_plan(config):
        name = entry["name"]
        if name.startswith("conv"):
            c_out, c_in = entry["out_channels"], entry["in_channels"]
            bound = 1.0 / np.sqrt(c_in * k * k)
            w = rng.uniform(-bound, bound, size=(c_out, c_in, k, k)).astype(np.float32)
            params[f"{name}.weight"] = Parameter(f"{name}.weight", w)
            params[f"{name}.bias"] = Parameter(f"{name}.bias", np.zeros(c_out, dtype=np.float32))
        else:
            n_in, n_out = entry["in_features"], entry["out_features"]
            bound = 1.0 / np.sqrt(n_in)
            w = rng.uniform(-bound, bound, size=(n_out, n_in)).astype(np.float32)
            params["dense.weight"] = Parameter("dense.weight", w)
            params["dense.bias"] = Parameter("dense.bias", np.zeros(n_out, dtype=np.float32))
    return ModelWeights(config, params)


def embed_features(features: Tensor, weights: ModelWeights) -> Tensor:
    """Graph from scattering coefficients to the embedding vector.

    Used directly by the training loop so gradients can flow; `embed`
    wraps it for inference.
    """
    cfg = weights.config
    x = features
    for i in range(len(cfg.conv_filters)):
        name = f"conv{i + 1}"
        x = conv2d(
            x,
            weights[f"{name}.weight"].tensor,
            weights[f"{name}.bias"].tensor,
            stride=1,
            padding=cfg.conv_padding,
        )
        x = relu(x)
        if cfg.pool_after_block[i]:
            x = maxpool2d(x, window=2, stride=2, ceil_mode=cfg.pool_ceil_mode[i])
    x = x.reshape((int(np.prod(x.shape)),))
    x = dense(x, weights["dense.weight"].tensor, weights["dense.bias"].tensor)
    if cfg.normalize_embeddings:
        x = l2_normalize(x)
    return x


def embed(image: np.ndarray, weights: ModelWeights, bank: FilterBank, source_id: str | None = None) -> Embedding:
    """Embedding of one grayscale image with pixel values in [0, 1]."""
    cfg = weights.config
    sc = cfg.scattering
    image = np.asarray(image)
    if image.shape != (sc.input_height, sc.input_width):
        raise ValueError(
            f"image extents {image.shape} do not match configured "
            f"{(sc.input_height, sc.input_width)}"
        )
    if not np.all(np.isfinite(image)):
        raise ValueError("image contains non-finite pixels")
    if image.min() < 0.0 or image.max() > 1.0:
        raise ValueError("pixel values must lie in [0, 1]")
    if bank.config != sc:
        raise ValueError("filter bank geometry does not match the model config")
    coeffs = scatter(image, bank).coefficients
    out = embed_features(Tensor(coeffs), weights)
    return Embedding(values=out.data.copy(), source_id=source_id)


def distance(a: Embedding, b: Embedding) -> float:
    """Normalized Euclidean distance between embeddings, in [0, 1].

    Raw distance between unit-norm vectors lies in [0, 2]; the score is
    raw / 2 so thresholds are scale-free. Lower means more similar.
    """
    if a.values.shape != b.values.shape:
        raise ValueError(f"embedding length mismatch: {a.values.shape} vs {b.values.shape}")
    raw = float(np.linalg.norm(a.values.astype(np.float64) - b.values.astype(np.float64)))
    return min(max(raw / 2.0, 0.0), 1.0)


def count_parameters(weights: ModelWeights) -> int:
    return sum(p.data.size for p in weights.parameters())


def parameter_table(weights: ModelWeights) -> list[tuple[str, tuple[int, ...], int]]:
    """(name, shape, element count) per parameter, in layer order."""
    return [(p.name, tuple(p.data.shape), p.data.size) for p in weights.parameters()]


# -- named-tensor container --


def write_tensor_container(manifest_extra: dict, tensors: dict[str, np.ndarray], version: int = WEIGHTS_VERSION) -> bytes:
    table = []
    payload = bytearray()
    for name, arr in tensors.items():
        raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        table.append(
            {"name": name, "shape": list(arr.shape), "offset": len(payload), "nbytes": len(raw)}
        )
        payload.extend(raw)
    manifest = dict(manifest_extra)
    manifest["tensors"] = table
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    header = WEIGHTS_MAGIC + struct.pack("<II", version, len(blob))
    return header + blob + bytes(payload)


def read_tensor_container(data: bytes) -> tuple[dict, dict[str, np.ndarray], int]:
    if len(data) < 12:
        raise FormatError("truncated container: missing header")
    if data[:4] != WEIGHTS_MAGIC:
        raise FormatError(f"bad magic bytes {data[:4]!r}, expected {WEIGHTS_MAGIC!r}")
    version, manifest_len = struct.unpack("<II", data[4:12])
    if version > WEIGHTS_VERSION:
        raise FormatError(f"unsupported format version {version}")
    if len(data) < 12 + manifest_len:
        raise FormatError("truncated container: manifest incomplete")
    try:
        manifest = json.loads(data[12 : 12 + manifest_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"unreadable manifest: {exc}") from exc
    payload = data[12 + manifest_len :]
    tensors: dict[str, np.ndarray] = {}
    for entry in manifest.get("tensors", []):
        lo, hi = entry["offset"], entry["offset"] + entry["nbytes"]
        if hi > len(payload):
            raise FormatError(f"truncated container: tensor {entry['name']!r} extends past payload")
        shape = tuple(int(s) for s in entry["shape"])
        expected = int(np.prod(shape)) * 4
        if entry["nbytes"] != expected:
            raise FormatError(f"tensor {entry['name']!r} byte count does not match its shape")
        arr = np.frombuffer(payload[lo:hi], dtype="<f4").reshape(shape)
        tensors[entry["name"]] = arr.copy()
    return manifest, tensors, version


def serialize(weights: ModelWeights) -> bytes:
    return write_tensor_container(
        {"config": weights.config.to_dict()},
        {p.name: p.data for p in weights.parameters()},
        version=weights.version,
    )


def deserialize(data: bytes) -> ModelWeights:
    manifest, tensors, version = read_tensor_container(data)
    if "config" not in manifest:
        raise FormatError("manifest is missing the model config")
    config = ModelConfig.from_dict(manifest["config"])
    params = {name: Parameter(name, arr) for name, arr in tensors.items()}
    weights = ModelWeights(config, params, version=version)
    expected = weights.expected_shapes()
    if set(expected) != set(tensors):
        missing = sorted(set(expected) ^ set(tensors))
        raise FormatError(f"tensor table does not match config, mismatched names: {missing}")
    for name, shape in expected.items():
        if tensors[name].shape != shape:
            raise FormatError(
                f"tensor {name!r} has shape {tensors[name].shape}, config expects {shape}"
            )
    return weights


def save_weights(path, weights: ModelWeights) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize(weights))


def load_weights(path) -> ModelWeights:
    with open(path, "rb") as fh:
        return deserialize(fh.read())
