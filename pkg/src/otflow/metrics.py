"""Path geometry, oracle comparisons, structure, deletion, and seed-stability metrics."""

from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage, stats

from .attribution import AttributionVector
from .errors import DegeneratePath, DimMismatch, ShapeMismatch, TooFewSeeds
from .models import ScoreModel, VelocityField
from .paths import Trajectory
from .tensor import GridImage

RATIO_EPS = 1e-12
DEFAULT_ALPHA = 10.0
BLUR_SIGMA = 2.0


# --------------------------------------------------------------------------
# Path geometry
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class PathGeometryReport:
    gps: float | None
    fce: float | None
    action: float
    curvature: float | None

    def as_dict(self) -> dict:
        return asdict(self)


def path_length(traj: Trajectory) -> float:
    return float(np.linalg.norm(traj.increments(), axis=1).sum())


def gps(traj: Trajectory) -> float:
    """Discrete path length over endpoint displacement; 1 for a straight path."""
    disp = float(np.linalg.norm(traj.end - traj.start))
    if disp == 0.0:
        raise DegeneratePath("GPS is undefined when the path endpoints coincide")
    return path_length(traj) / disp


def kinetic_action(traj: Trajectory) -> float:
    inc = traj.increments()
    return float(np.sum(inc * inc) / traj.dt)


def curvature(traj: Trajectory) -> float:
    if traj.K < 2:
        raise ValueError("curvature needs K >= 2")
    s, dt = traj.states, traj.dt
    acc = (s[2:] - 2.0 * s[1:-1] + s[:-2]) / (dt * dt)
    return float(np.sum(acc * acc) * dt)


def fce(traj: Trajectory, field: VelocityField) -> float:
    """Mean squared mismatch between finite-difference path velocity and the field."""
    if field.dim != traj.dim:
        raise DimMismatch("field and trajectory dimensions differ")
    diff = _fce_terms(traj.states, field)
    return float(np.sum(diff * diff) / traj.K)


def _fce_terms(states, field):
    K = states.shape[0] - 1
    out = np.empty_like(states[:-1])
    for k in range(K):
        out[k] = (states[k + 1] - states[k]) * K - field.eval(states[k], k / K)
    return out


def path_geometry(traj: Trajectory, field: VelocityField | None = None) -> PathGeometryReport:
    try:
        g = gps(traj)
    except DegeneratePath:
        g = None
    return PathGeometryReport(
        gps=g,
        fce=fce(traj, field) if field is not None else None,
        action=kinetic_action(traj),
        curvature=curvature(traj) if traj.K >= 2 else None,
    )


# batched variants on (K+1, n, d) state stacks ------------------------------


def batch_action(states: np.ndarray) -> np.ndarray:
    K = states.shape[0] - 1
    inc = np.diff(states, axis=0)
    return np.sum(inc * inc, axis=(0, 2)) * K


def batch_curvature(states: np.ndarray) -> np.ndarray:
    K = states.shape[0] - 1
    acc = (states[2:] - 2.0 * states[1:-1] + states[:-2]) * (K * K)
    return np.sum(acc * acc, axis=(0, 2)) / K


def batch_gps(states: np.ndarray) -> np.ndarray:
    length = np.linalg.norm(np.diff(states, axis=0), axis=2).sum(axis=0)
    disp = np.linalg.norm(states[-1] - states[0], axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(disp > 0, length / np.where(disp > 0, disp, 1.0), np.nan)


def batch_relative_field_error(states: np.ndarray, field: VelocityField, ref: VelocityField) -> np.ndarray:
    """Per-trajectory ``RFE`` of ``field`` against ``ref`` on the grid states ``k < K``."""
    K = states.shape[0] - 1
    num = np.zeros(states.shape[1])
    den = np.zeros(states.shape[1])
    for k in range(K):
        v = field.eval(states[k], k / K)
        v_ref = ref.eval(states[k], k / K)
        num += np.sum((v - v_ref) ** 2, axis=1)
        den += np.sum(v_ref * v_ref, axis=1)
    return np.sqrt(num) / (np.sqrt(den) + RATIO_EPS)


# --------------------------------------------------------------------------
# Oracle / reference comparison
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class OracleComparison:
    action_gap: float
    rfe: float
    rae: float

    def as_dict(self) -> dict:
        return asdict(self)


def action_gap(action: float, oracle_action: float) -> float:
    return (action - oracle_action) / (oracle_action + RATIO_EPS)


def relative_field_error(traj: Trajectory, field: VelocityField, ref_field: VelocityField) -> float:
    return float(batch_relative_field_error(traj.states[:, None, :], field, ref_field)[0])


def relative_attribution_error(values, ref_values) -> float:
    values = np.asarray(values, dtype=np.float64)
    ref_values = np.asarray(ref_values, dtype=np.float64)
    if values.shape != ref_values.shape:
        raise DimMismatch("attribution vectors differ in shape")
    return float(np.linalg.norm(values - ref_values) / (np.linalg.norm(ref_values) + RATIO_EPS))


def oracle_comparison(method_traj: Trajectory, oracle_traj: Trajectory, method_field: VelocityField,
                      oracle_field: VelocityField, method_attr: AttributionVector,
                      oracle_attr: AttributionVector, oracle_action_ref: float) -> OracleComparison:
    """``(action gap, RFE, RAE)`` of a method path/field/attribution against the oracle.

    ``oracle_action_ref`` is the reference action ``A*``; the field error is
    measured at the method's own states.
    """
    if method_traj.dim != oracle_traj.dim or method_attr.dim != oracle_attr.dim:
        raise DimMismatch("method and oracle objects differ in dimension")
    return OracleComparison(
        action_gap=action_gap(kinetic_action(method_traj), oracle_action_ref),
        rfe=relative_field_error(method_traj, method_field, oracle_field),
        rae=relative_attribution_error(method_attr.values, oracle_attr.values),
    )


# --------------------------------------------------------------------------
# Structure metrics on image grids
# --------------------------------------------------------------------------


def forward_differences(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Forward differences along rows and columns, replicate boundary (zero in the last row/col)."""
    dy = np.zeros_like(a)
    dx = np.zeros_like(a)
    dy[:-1] = a[1:] - a[:-1]
    dx[:, :-1] = a[:, 1:] - a[:, :-1]
    return dy, dx


def _attr_plane(attr_map) -> np.ndarray:
    if isinstance(attr_map, GridImage):
        return attr_map.plane()
    return np.asarray(attr_map, dtype=np.float64)


def _image_values(image) -> np.ndarray:
    v = image.values if isinstance(image, GridImage) else np.asarray(image, dtype=np.float64)
    return v if v.ndim == 3 else v[:, :, None]


def _edge_terms(attr_map, image):
    phi = _attr_plane(attr_map)
    img = _image_values(image)
    if phi.shape != img.shape[:2]:
        raise ShapeMismatch(f"attribution grid {phi.shape} differs from image grid {img.shape[:2]}")
    py, px = forward_differences(phi)
    s = np.abs(py) + np.abs(px)
    iy, ix = forward_differences(img)
    e = np.sqrt(np.sum(iy * iy + ix * ix, axis=2))
    return s, e


def satv(attr_map, image, alpha: float = DEFAULT_ALPHA) -> float:
    """Attribution total variation, down-weighted by ``exp(-alpha |grad I|)`` near image edges."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    s, e = _edge_terms(attr_map, image)
    return float(np.sum(s * np.exp(-alpha * e)))


def eas(attr_map, image) -> float:
    """Edge-strength average weighted by attribution variation."""
    s, e = _edge_terms(attr_map, image)
    return float(np.sum(s * e) / (np.sum(s) + RATIO_EPS))


# --------------------------------------------------------------------------
# Deletion
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DeletionCurve:
    fractions: np.ndarray
    scores: np.ndarray
    auc: float
    replacement: str


def gaussian_blur(plane: np.ndarray, sigma: float = BLUR_SIGMA, truncate: float = 4.0) -> np.ndarray:
    """Separable Gaussian blur, kernel truncated at ``truncate * sigma`` and renormalized at the borders."""
    radius = int(math.ceil(truncate * sigma))
    xs = np.arange(-radius, radius + 1)
    k = np.exp(-0.5 * (xs / sigma) ** 2)

    def conv(a, axis):
        return ndimage.convolve1d(a, k, axis=axis, mode="constant", cval=0.0)

    num = conv(conv(plane, 0), 1)
    den = conv(conv(np.ones_like(plane), 0), 1)
    return num / den


def deletion_order(values: np.ndarray, absolute: bool = False) -> np.ndarray:
    """Pixel indices by descending (signed, by default) attribution; ties keep index order."""
    key = np.abs(values) if absolute else values
    return np.argsort(-key, kind="stable")


def deletion_curve(score: ScoreModel, image: GridImage, attr, replacement: str = "zero", J: int = 20,
                   absolute: bool = False, blur_sigma: float = BLUR_SIGMA) -> DeletionCurve:
    """Score after replacing the top-ranked fraction ``j/J`` of pixels, ``j = 0..J``.

    ``auc`` is the unnormalized trapezoid area under the score curve.
    """
    if J < 1:
        raise ValueError("J must be >= 1")
    values = attr.values if isinstance(attr, AttributionVector) else np.asarray(attr, dtype=np.float64)
    if image.channels != 1:
        raise ShapeMismatch("deletion works on single-channel grids")
    flat = image.flat()
    n = flat.size
    if values.size != n or score.dim != n:
        raise DimMismatch(f"attribution ({values.size}) / score ({score.dim}) do not match {n} pixels")
    if replacement == "zero":
        fill = np.zeros(n)
    elif replacement == "blur":
        fill = gaussian_blur(image.plane(), blur_sigma).reshape(-1)
    else:
        raise ValueError(f"unknown replacement {replacement!r}")
    order = deletion_order(values, absolute)
    scores = np.empty(J + 1)
    for j in range(J + 1):
        m = (2 * j * n + J) // (2 * J)  # round(j n / J), half up
        x = flat.copy()
        x[order[:m]] = fill[order[:m]]
        # one image at a time so the endpoints match a direct evaluation bit for bit
        scores[j] = score.value(x)
    fractions = np.arange(J + 1) / J
    auc = float(np.sum(0.5 * (scores[1:] + scores[:-1]) * np.diff(fractions)))
    return DeletionCurve(fractions, scores, auc, replacement)


# --------------------------------------------------------------------------
# Seed stability
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class StabilityReport:
    pixel_variance: float
    mean_ssim: float
    mean_rank_corr: float

    def as_dict(self) -> dict:
        return asdict(self)


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    xs = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-0.5 * (xs / sigma) ** 2)
    w = np.outer(g, g)
    return w / w.sum()


def ssim(a: np.ndarray, b: np.ndarray, data_range: float | None = None, window: int = 11,
         sigma: float = 1.5, k1: float = 0.01, k2: float = 0.03) -> float:
    """Single-scale SSIM with a Gaussian window over the valid region.

    ``data_range`` defaults to the joint dynamic range of the pair; the
    window shrinks (odd size) when the image is smaller than it.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise ShapeMismatch("SSIM needs two 2-D maps of equal shape")
    if data_range is None:
        data_range = max(a.max(), b.max()) - min(a.min(), b.min())
    if data_range == 0:
        return 1.0
    size = min(window, a.shape[0] - (1 - a.shape[0] % 2), a.shape[1] - (1 - a.shape[1] % 2))
    w = _gaussian_window(size, sigma)
    view = np.lib.stride_tricks.sliding_window_view
    pa, pb = view(a, w.shape), view(b, w.shape)

    def filt(p):
        return np.einsum("ijkl,kl->ij", p, w)

    mu_a, mu_b = filt(pa), filt(pb)
    var_a = filt(pa * pa) - mu_a**2
    var_b = filt(pb * pb) - mu_b**2
    cov = np.einsum("ijkl,ijkl,kl->ij", pa, pb, w) - mu_a * mu_b
    c1, c2 = (k1 * data_range) ** 2, (k2 * data_range) ** 2
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def spearman(a, b) -> float:
    """Spearman rank correlation with average ranks for ties."""
    ra = stats.rankdata(np.ravel(a))
    rb = stats.rankdata(np.ravel(b))
    ra, rb = ra - ra.mean(), rb - rb.mean()
    den = math.sqrt(float(ra @ ra) * float(rb @ rb))
    return float(ra @ rb / den) if den > 0 else float("nan")


def normalize_max_abs(a: np.ndarray) -> np.ndarray:
    m = np.abs(a).max()
    return a / m if m > 0 else a.copy()


def stability_report(attr_maps) -> StabilityReport:
    """Across-seed agreement of attribution maps for one input (one map per seed)."""
    maps = [_attr_plane(m) for m in attr_maps]
    if len(maps) < 2:
        raise TooFewSeeds(f"stability needs at least two maps, got {len(maps)}")
    if len({m.shape for m in maps}) != 1:
        raise ShapeMismatch("attribution maps differ in shape")
    norm = np.stack([normalize_max_abs(m) for m in maps])
    # shifting by the first map leaves the variance unchanged and makes identical maps give exactly 0
    pixel_var = float(np.mean(np.var(norm - norm[0], axis=0)))
    pairs = list(itertools.combinations(range(len(maps)), 2))
    mean_ssim = float(np.mean([ssim(norm[i], norm[j]) for i, j in pairs]))
    mean_rank = float(np.mean([spearman(norm[i], norm[j]) for i, j in pairs]))
    return StabilityReport(pixel_var, mean_ssim, mean_rank)
