"""Numeric substrate: vectors, SPD routines, grid images, RNG streams, OTF1.

Vectors are plain float64 ``numpy`` arrays; :func:`as_vector` is the
validating constructor used at module boundaries.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DimMismatch, FormatError, NoConvergence, NotSpd, ShapeMismatch

SYM_RTOL = 1e-10
MAX_CONDITION = 1e10


def as_vector(x, dim: int | None = None, name: str = "x") -> np.ndarray:
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise DimMismatch(f"{name} must be a non-empty 1-D vector, got shape {v.shape}")
    if dim is not None and v.shape[0] != dim:
        raise DimMismatch(f"{name} has dimension {v.shape[0]}, expected {dim}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} has non-finite entries")
    return v


def check_spd_input(m) -> np.ndarray:
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise NotSpd(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NotSpd("matrix has non-finite entries")
    scale = max(np.abs(a).max(), np.finfo(float).tiny)
    if np.abs(a - a.T).max() > SYM_RTOL * scale:
        raise NotSpd("matrix is not symmetric")
    return a


def cholesky(m) -> np.ndarray:
    """Lower-triangular ``L`` with ``L @ L.T == m``.

    Raises :class:`NotSpd` when a pivot is not strictly positive.
    """
    a = check_spd_input(m)
    try:
        return np.linalg.cholesky(0.5 * (a + a.T))
    except np.linalg.LinAlgError as exc:
        raise NotSpd(f"Cholesky failed: {exc}") from None


def _spd_eig(m) -> tuple[np.ndarray, np.ndarray]:
    a = check_spd_input(m)
    a = 0.5 * (a + a.T)
    try:
        w, q = np.linalg.eigh(a)
    except np.linalg.LinAlgError as exc:
        raise NoConvergence(f"eigensolver failed: {exc}") from None
    if w[0] <= 0.0:
        raise NotSpd(f"smallest eigenvalue {w[0]:.3e} is not positive")
    return w, q


def sym_matrix_sqrt(m) -> np.ndarray:
    """Principal square root of an SPD matrix via symmetric eigendecomposition."""
    w, q = _spd_eig(m)
    b = (q * np.sqrt(w)) @ q.T
    return 0.5 * (b + b.T)


def sym_matrix_inv_sqrt(m) -> np.ndarray:
    w, q = _spd_eig(m)
    b = (q / np.sqrt(w)) @ q.T
    return 0.5 * (b + b.T)


def condition_number(m) -> float:
    w, _ = _spd_eig(m)
    return float(w[-1] / w[0])


def random_spd(rng: np.random.Generator, d: int, low: float = 0.5, high: float = 2.0) -> np.ndarray:
    """Random SPD matrix with eigenvalues uniform in ``[low, high]``."""
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    q = q * np.sign(np.diag(r))
    lam = rng.uniform(low, high, size=d)
    s = (q * lam) @ q.T
    return 0.5 * (s + s.T)


def finite_diff_gradient(score, x, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of ``score.value`` at ``x``."""
    if h <= 0:
        raise ValueError("step size h must be positive")
    x = as_vector(x)
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (score.value(x + e) - score.value(x - e)) / (2.0 * h)
    return g


@dataclass(frozen=True)
class GridImage:
    """An ``height x width x channels`` image stored as a float64 array."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim == 2:
            v = v[:, :, None]
        if v.ndim != 3 or min(v.shape) < 1:
            raise ShapeMismatch(f"GridImage needs shape (h, w[, c]), got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("GridImage has non-finite entries")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_flat(cls, data, height: int, width: int, channels: int = 1) -> "GridImage":
        data = np.asarray(data, dtype=np.float64)
        if data.size != height * width * channels:
            raise ShapeMismatch(
                f"{data.size} values cannot fill a {height}x{width}x{channels} grid"
            )
        return cls(data.reshape(height, width, channels))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def channels(self) -> int:
        return self.values.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.values.shape

    def flat(self) -> np.ndarray:
        return self.values.reshape(-1).copy()

    def plane(self) -> np.ndarray:
        """Single-channel view as a 2-D array; sums channels when there are several."""
        return self.values.sum(axis=2)


@dataclass(frozen=True)
class RngStream:
    """Reproducible, independent random stream keyed by ``(master_seed, stream_index)``.

    Built on ``SeedSequence`` spawn keys, so distinct indices give
    statistically independent PCG64 streams.
    """

    master_seed: int
    stream_index: int = 0
    sub: tuple[int, ...] = field(default=())

    def __post_init__(self):
        if self.stream_index < 0:
            raise ValueError("stream_index must be non-negative")
        if not 0 <= self.master_seed < 2**64:
            raise ValueError("master_seed must fit in 64 bits")

    def child(self, *index: int) -> "RngStream":
        return RngStream(self.master_seed, self.stream_index, self.sub + tuple(index))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(self.master_seed, spawn_key=(self.stream_index, *self.sub))
        return np.random.Generator(np.random.PCG64(ss))


# --- OTF1 binary tensors -------------------------------------------------

OTF1_MAGIC = b"OTF1"


def encode_otf1(array) -> bytes:
    a = np.asarray(array, dtype="<f8", order="C")
    header = OTF1_MAGIC + struct.pack("<I", a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape)
    return header + a.tobytes(order="C")


def decode_otf1(blob: bytes) -> np.ndarray:
    if len(blob) < 8 or blob[:4] != OTF1_MAGIC:
        raise FormatError("not an OTF1 tensor (bad magic bytes)")
    (rank,) = struct.unpack_from("<I", blob, 4)
    off = 8 + 4 * rank
    if len(blob) < off:
        raise FormatError("truncated OTF1 header")
    dims = struct.unpack_from(f"<{rank}I", blob, 8)
    n = int(np.prod(dims, dtype=np.int64)) if rank else 1
    if len(blob) != off + 8 * n:
        raise FormatError(f"OTF1 payload has {len(blob) - off} bytes, expected {8 * n}")
    return np.frombuffer(blob, dtype="<f8", count=n, offset=off).astype(np.float64).reshape(dims)
