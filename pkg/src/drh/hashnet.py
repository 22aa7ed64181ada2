"""Region hashing layer: sigmoid projection, binarization, objective and SGD.

The layer maps a pooled region descriptor x (length C) to h = sigmoid(Wx + b)
and to the binary code y = [h >= 0.5], which equals the sign of the
pre-activation. Training minimizes, summed over a batch,

    0.5 * ||y - h||^2  -  (alpha/2) * ||h||^2
    + (beta/2) * ||W||_F^2  +  (eta/2) * ||b||^2

with y recomputed from the current parameters each batch and treated as a
constant in differentiation. The analytic batch gradients are

    dW = sum_i ((h_i - y_i - alpha*h_i) * sigmoid'(z_i)) x_i^T + beta * W
    db = sum_i  (h_i - y_i - alpha*h_i) * sigmoid'(z_i)        + eta  * b

All training arithmetic is float64 regardless of storage precision.

Model file layout (DRHM, little-endian):
    magic "DRHM" | u32 version=1 | u32 bits | u32 channels |
    bits*channels f32 weights row-major | bits f32 biases
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionMismatch,
    DivergenceDetected,
    EmptyTrainingSet,
    IoFailure,
    MalformedHeader,
)

MODEL_MAGIC = b"DRHM"
MODEL_VERSION = 1

_MODEL_HEADER = struct.Struct("<4sIII")

WORD_BITS = 64


@dataclass
class HashCode:
    """Fixed-length bit vector packed into 64-bit words, LSB-first.

    Bit i lives in words[i // 64] at position i % 64; pad bits are zero.
    """

    bits_len: int
    words: np.ndarray  # uint64, shape (ceil(bits_len / 64),)

    def __post_init__(self):
        self.words = np.ascontiguousarray(self.words, dtype=np.uint64)
        expected = (self.bits_len + WORD_BITS - 1) // WORD_BITS
        if self.words.shape != (expected,):
            raise DimensionMismatch(
                f"{self.bits_len}-bit code needs {expected} words, got {self.words.shape}"
            )

    def __eq__(self, other):
        if not isinstance(other, HashCode):
            return NotImplemented
        return self.bits_len == other.bits_len and np.array_equal(self.words, other.words)

    def popcount(self) -> int:
        return sum(int(w).bit_count() for w in self.words)


def pack_bits(bits: np.ndarray) -> np.ndarray:
    """Pack a 1-D boolean array into uint64 words (pad bits zero)."""
    bits = np.asarray(bits, dtype=bool)
    packed = np.packbits(bits, bitorder="little")
    n_words = (bits.size + WORD_BITS - 1) // WORD_BITS
    padded = np.zeros(n_words * 8, dtype=np.uint8)
    padded[: packed.size] = packed
    return padded.view("<u8").astype(np.uint64)


def unpack_bits(code: HashCode) -> np.ndarray:
    """Inverse of pack_bits; returns a (bits_len,) boolean array."""
    raw = code.words.astype("<u8").view(np.uint8)
    return np.unpackbits(raw, bitorder="little")[: code.bits_len].astype(bool)


@dataclass
class HashLayerParams:
    """Projection matrix (bits x channels) and bias (bits,)."""

    w: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.w = np.ascontiguousarray(self.w, dtype=np.float64)
        self.b = np.ascontiguousarray(self.b, dtype=np.float64)
        if self.w.ndim != 2 or self.b.ndim != 1 or self.w.shape[0] != self.b.shape[0]:
            raise DimensionMismatch(
                f"weights {self.w.shape} incompatible with bias {self.b.shape}"
            )
        if not (np.all(np.isfinite(self.w)) and np.all(np.isfinite(self.b))):
            raise DimensionMismatch("non-finite parameter values")

    @property
    def bits(self) -> int:
        return self.w.shape[0]

    @property
    def channels(self) -> int:
        return self.w.shape[1]


@dataclass
class TrainConfig:
    bits: int = 1024
    alpha: float = 100.0
    beta: float = 1e-3
    eta: float = 1e-3
    learning_rate: float = 0.01
    momentum: float = 0.9
    epochs: int = 30
    batch_size: int = 64
    seed: int = 42
    init_stddev: float = 0.01

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0 or self.eta < 0:
            raise ValueError("alpha, beta, eta must be non-negative")
        if self.learning_rate < 0:
            raise ValueError("learning rate must be non-negative")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if self.bits < 1 or self.epochs < 1 or self.batch_size < 1:
            raise ValueError("bits, epochs and batch_size must be positive")


@dataclass
class TrainResult:
    params: HashLayerParams
    epoch_losses: list[float] = field(default_factory=list)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # Overflow-safe in both tails.
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _as_batch(batch, channels: int | None = None) -> np.ndarray:
    x = np.atleast_2d(np.asarray(batch, dtype=np.float64))
    if channels is not None and x.shape[1] != channels:
        raise DimensionMismatch(f"descriptor dim {x.shape[1]}, layer expects {channels}")
    return x


def forward(params: HashLayerParams, x: np.ndarray) -> np.ndarray:
    """Sigmoid activations for one descriptor; every output in (0, 1)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != params.channels:
        raise DimensionMismatch(f"descriptor shape {x.shape}, expected ({params.channels},)")
    return _sigmoid(params.w @ x + params.b)


def binarize(h: np.ndarray) -> HashCode:
    """Threshold activations at 0.5 (inclusive), matching sign(Wx + b)."""
    h = np.asarray(h)
    return HashCode(h.shape[0], pack_bits(h >= 0.5))


def encode(params: HashLayerParams, x: np.ndarray) -> HashCode:
    """binarize(forward(params, x))."""
    return binarize(forward(params, x))


def encode_words(params: HashLayerParams, batch: np.ndarray) -> np.ndarray:
    """Codes for an (n, C) descriptor matrix as an (n, n_words) uint64 array."""
    x = _as_batch(batch, params.channels)
    z = x @ params.w.T + params.b
    bits = z >= 0.0  # equivalent to sigmoid(z) >= 0.5
    n_words = (params.bits + WORD_BITS - 1) // WORD_BITS
    if x.shape[0] == 0:
        return np.empty((0, n_words), dtype=np.uint64)
    return np.stack([pack_bits(row) for row in bits])


def _activations(params: HashLayerParams, x: np.ndarray):
    z = x @ params.w.T + params.b
    h = _sigmoid(z)
    return z, h


def loss(params: HashLayerParams, batch, cfg: TrainConfig, codes: np.ndarray | None = None) -> float:
    """Objective value over a batch.

    codes, when given, is an (n, bits) 0/1 array of frozen binarization
    targets; otherwise targets are recomputed from the current parameters.
    """
    x = _as_batch(batch, params.channels)
    if x.shape[0] == 0:
        raise EmptyTrainingSet("loss over an empty batch")
    _, h = _activations(params, x)
    y = (h >= 0.5).astype(np.float64) if codes is None else np.asarray(codes, dtype=np.float64)
    if y.shape != h.shape:
        raise DimensionMismatch(f"codes shape {y.shape}, expected {h.shape}")
    quant = 0.5 * float(np.sum((y - h) ** 2))
    spread = 0.5 * cfg.alpha * float(np.sum(h * h))
    reg = 0.5 * cfg.beta * float(np.sum(params.w**2)) + 0.5 * cfg.eta * float(
        np.sum(params.b**2)
    )
    return quant - spread + reg


def gradients(
    params: HashLayerParams, batch, cfg: TrainConfig, codes: np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Analytic (dW, db) with the binarization targets treated as constants."""
    x = _as_batch(batch, params.channels)
    if x.shape[0] == 0:
        raise EmptyTrainingSet("gradients over an empty batch")
    _, h = _activations(params, x)
    y = (h >= 0.5).astype(np.float64) if codes is None else np.asarray(codes, dtype=np.float64)
    if y.shape != h.shape:
        raise DimensionMismatch(f"codes shape {y.shape}, expected {h.shape}")
    g = (h - y - cfg.alpha * h) * h * (1.0 - h)  # sigmoid'(z) = h (1 - h)
    dw = g.T @ x + cfg.beta * params.w
    db = g.sum(axis=0) + cfg.eta * params.b
    return dw, db


def train(descriptors, cfg: TrainConfig) -> TrainResult:
    """SGD with momentum over pooled region descriptors.

    Parameters start from a seeded zero-mean Gaussian (std cfg.init_stddev)
    with zero bias; the velocity update is v = momentum*v - lr*grad,
    params += v. The per-epoch trace holds the full-dataset objective
    evaluated after each epoch. Deterministic given cfg.seed.
    """
    data = np.asarray(list(descriptors) if not isinstance(descriptors, np.ndarray) else descriptors)
    data = np.atleast_2d(data.astype(np.float64))
    if data.size == 0 or data.shape[0] == 0:
        raise EmptyTrainingSet("no descriptors to train on")
    n, channels = data.shape

    rng = np.random.default_rng(cfg.seed)
    params = HashLayerParams(
        rng.normal(0.0, cfg.init_stddev, size=(cfg.bits, channels)),
        np.zeros(cfg.bits),
    )
    vel_w = np.zeros_like(params.w)
    vel_b = np.zeros_like(params.b)

    epoch_losses: list[float] = []
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            batch = data[order[start : start + cfg.batch_size]]
            dw, db = gradients(params, batch, cfg)
            vel_w = cfg.momentum * vel_w - cfg.learning_rate * dw
            vel_b = cfg.momentum * vel_b - cfg.learning_rate * db
            params.w += vel_w
            params.b += vel_b
        epoch_loss = loss(params, data, cfg)
        if not np.isfinite(epoch_loss) or not np.all(np.isfinite(params.w)):
            raise DivergenceDetected(f"loss became non-finite at epoch {len(epoch_losses) + 1}")
        epoch_losses.append(epoch_loss)
    return TrainResult(params, epoch_losses)


def save_params(params: HashLayerParams, path) -> None:
    """Write parameters as a DRHM file (f32 storage precision)."""
    header = _MODEL_HEADER.pack(MODEL_MAGIC, MODEL_VERSION, params.bits, params.channels)
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(params.w.astype("<f4").tobytes())
            fh.write(params.b.astype("<f4").tobytes())
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def load_params(path) -> HashLayerParams:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if len(raw) < _MODEL_HEADER.size:
        raise MalformedHeader(f"{path}: file shorter than header")
    magic, version, bits, channels = _MODEL_HEADER.unpack_from(raw)
    if magic != MODEL_MAGIC:
        raise MalformedHeader(f"{path}: bad magic {magic!r}")
    if version != MODEL_VERSION:
        raise MalformedHeader(f"{path}: unsupported version {version}")
    expected = _MODEL_HEADER.size + 4 * (bits * channels + bits)
    if len(raw) != expected:
        raise DimensionMismatch(f"{path}: {len(raw)} bytes, expected {expected}")
    w = np.frombuffer(raw, dtype="<f4", count=bits * channels, offset=_MODEL_HEADER.size)
    b = np.frombuffer(raw, dtype="<f4", count=bits, offset=_MODEL_HEADER.size + 4 * bits * channels)
    return HashLayerParams(w.reshape(bits, channels).astype(np.float64), b.astype(np.float64))
