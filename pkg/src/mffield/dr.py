"""Linear dimensionality reduction for field snapshots.

PCA with RIC truncation and its multi-fidelity variants (constrained PCA,
gappy PCA), the DR residuals, and Procrustes manifold alignment.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

# Eigenvalues below this fraction of the leading one are treated as numerical
# zero when "all modes" are kept.
RANK_RTOL = 1e-12


def _readonly(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def ric_dimension(eigenvalues, ric: float) -> int:
    """Smallest ``k`` whose leading eigenvalues hold a fraction ``ric`` of the total."""
    lam = np.clip(np.asarray(eigenvalues, dtype=float), 0.0, None)
    total = lam.sum()
    if total <= 0.0:
        return 0
    frac = np.cumsum(lam) / total
    k = int(np.searchsorted(frac, ric - 1e-12, side="left")) + 1
    return min(k, lam.size)


def _numerical_rank(eigenvalues) -> int:
    lam = np.asarray(eigenvalues)
    if lam.size == 0 or lam[0] <= 0.0:
        return 0
    return int(np.sum(lam > lam[0] * RANK_RTOL))


def _flip_signs(modes: np.ndarray) -> np.ndarray:
    # largest-magnitude entry of each mode made positive, for determinism
    if modes.shape[0] == 0:
        return modes
    idx = np.argmax(np.abs(modes), axis=1)
    signs = np.sign(modes[np.arange(modes.shape[0]), idx])
    signs[signs == 0] = 1.0
    return modes * signs[:, None]


@dataclass(frozen=True)
class PcaModel:
    """Affine projection ``z = modes @ (y - mean)`` and its inverse.

    ``eigenvalues`` holds the whole spectrum of the fit (``sigma_i**2 / n``),
    ``modes`` only the ``d_z`` retained rows.
    """

    mean: np.ndarray
    modes: np.ndarray
    eigenvalues: np.ndarray
    ric: float = 1.0
    n_samples: int = 0
    info: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "mean", _readonly(self.mean))
        object.__setattr__(self, "modes", _readonly(np.atleast_2d(self.modes).reshape(-1, self.mean.size)))
        object.__setattr__(self, "eigenvalues", _readonly(self.eigenvalues))

    @property
    def d_z(self) -> int:
        return self.modes.shape[0]

    @property
    def d_y(self) -> int:
        return self.mean.size

    @property
    def degenerate(self) -> bool:
        return self.d_z == 0

    def _check(self, y):
        y = np.asarray(y, dtype=float)
        if y.shape[-1] != self.d_y:
            raise ValueError(f"field length {y.shape[-1]} does not match model d_y={self.d_y}")
        return y

    def transform(self, y) -> np.ndarray:
        """Latent coordinates of one field or of each row of a matrix."""
        y = self._check(y)
        return (y - self.mean) @ self.modes.T

    def inverse_transform(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        if z.shape[-1] != self.d_z:
            raise ValueError(f"latent length {z.shape[-1]} does not match d_z={self.d_z}")
        return z @ self.modes + self.mean

    def back_project(self, dz) -> np.ndarray:
        """Linear part of the inverse map (no mean added)."""
        return np.asarray(dz, dtype=float) @ self.modes

    def residuals(self, y) -> np.ndarray:
        """Orthogonal part ``y - inverse(transform(y))``."""
        y = self._check(y)
        c = y - self.mean
        return c - (c @ self.modes.T) @ self.modes

    def truncate(self, d_z: int) -> PcaModel:
        if not 0 <= d_z <= self.d_z:
            raise ValueError(f"cannot truncate {self.d_z} modes to {d_z}")
        return PcaModel(self.mean, self.modes[:d_z], self.eigenvalues, self.ric,
                        self.n_samples, dict(self.info))


def _centered_svd(y: np.ndarray, mean: np.ndarray):
    _, s, vt = linalg.svd(y - mean, full_matrices=False, lapack_driver="gesdd")
    return s, vt


def fit_pca(snapshots, ric: float = 0.999) -> PcaModel:
    """PCA of the rows of ``snapshots`` truncated at relative information ``ric``.

    ``ric=1`` keeps every numerically nonzero mode. All snapshots equal gives
    a degenerate model with ``d_z = 0``.
    """
    y = np.asarray(snapshots, dtype=float)
    if y.ndim != 2 or y.shape[0] < 2:
        raise ValueError("fit_pca needs at least 2 snapshots as rows of a matrix")
    if not 0.0 < ric <= 1.0:
        raise ValueError(f"ric must lie in (0, 1], got {ric}")
    n = y.shape[0]
    mean = y.mean(axis=0)
    s, vt = _centered_svd(y, mean)
    lam = s**2 / n
    rank = _numerical_rank(lam)
    d_z = rank if ric >= 1.0 else min(ric_dimension(lam[:rank], ric), rank)
    return PcaModel(mean, _flip_signs(vt[:d_z]), lam, ric, n)


def fit_cpca(y1, y2, rank_rtol: float = RANK_RTOL) -> PcaModel:
    """Constrained PCA: untruncated HF basis enriched by LF information.

    All HF modes are kept; the LF snapshots, centred on the HF mean, are
    projected out of the HF basis and the SVD of what remains supplies the
    extra modes. Modes whose eigenvalue falls below ``rank_rtol`` times the
    leading HF eigenvalue are numerical noise and dropped. The eigenvalues
    are stored block-wise (HF block, then LF block), each descending.
    """
    y1 = np.asarray(y1, dtype=float)
    y2 = np.asarray(y2, dtype=float)
    if y1.shape[1] != y2.shape[1]:
        raise ValueError(f"HF and LF fields differ in length: {y1.shape[1]} vs {y2.shape[1]}")
    if y1.shape[0] < 2:
        raise ValueError("fit_cpca needs at least 2 HF snapshots")
    mean = y1.mean(axis=0)
    s1, vt1 = _centered_svd(y1, mean)
    lam1 = s1**2 / y1.shape[0]
    ref = lam1[0] if lam1.size and lam1[0] > 0 else 0.0

    c2 = y2 - mean
    if ref == 0.0:
        k1 = 0
    else:
        k1 = int(np.sum(lam1 > ref * rank_rtol))
    v1 = _flip_signs(vt1[:k1])
    r2 = c2 - (c2 @ v1.T) @ v1
    _, s2, vt2 = linalg.svd(r2, full_matrices=False, lapack_driver="gesdd")
    lam2 = s2**2 / y2.shape[0]
    if ref == 0.0:
        ref = lam2[0] if lam2.size else 0.0
    k2 = int(np.sum(lam2 > ref * rank_rtol)) if ref > 0 else 0
    v2 = vt2[:k2]
    if k2:
        # re-orthogonalize against the HF block and within the block
        v2 = v2 - (v2 @ v1.T) @ v1
        q, _ = linalg.qr(v2.T, mode="economic")
        v2 = _flip_signs(q.T)
    modes = np.vstack([v1, v2]) if k2 else v1
    return PcaModel(mean, modes, np.concatenate([lam1[:k1], lam2[:k2]]), 1.0, y1.shape[0],
                    {"hf_modes": k1, "lf_modes": k2})


@dataclass(frozen=True)
class GpcaModel:
    """PCA of horizontally stacked ``[HF | LF]`` snapshots."""

    pca: PcaModel
    split: int
    info: dict = field(default_factory=dict, compare=False)

    @property
    def d_z(self) -> int:
        return self.pca.d_z

    @property
    def hf_modes(self) -> np.ndarray:
        return self.pca.modes[:, : self.split]

    @property
    def lf_modes(self) -> np.ndarray:
        return self.pca.modes[:, self.split :]

    @property
    def hf_mean(self) -> np.ndarray:
        return self.pca.mean[: self.split]

    @property
    def lf_mean(self) -> np.ndarray:
        return self.pca.mean[self.split :]


def fit_gpca(y1, y2, ric: float = 0.999) -> GpcaModel:
    """Gappy PCA fitted on paired HF and LF snapshots (same rows, same inputs)."""
    y1 = np.asarray(y1, dtype=float)
    y2 = np.asarray(y2, dtype=float)
    if y1.shape[0] != y2.shape[0]:
        raise ValueError("gappy PCA needs paired HF and LF snapshots")
    return GpcaModel(fit_pca(np.hstack([y1, y2]), ric), y1.shape[1])


GAPPY_COND_MAX = 1e12
GAPPY_RIDGE = 1e-10


def gappy_coefficients(g: GpcaModel, y2_star) -> tuple[np.ndarray, bool]:
    """Least-squares latent coefficients from the LF block alone.

    Returns ``(coeffs, regularized)``. A ridge of ``1e-10 * trace(G)/d_z`` is
    added to the Gram matrix ``G`` when its condition number exceeds 1e12.
    """
    y2_star = np.asarray(y2_star, dtype=float)
    if y2_star.shape[-1] != g.pca.d_y - g.split:
        raise ValueError(
            f"LF field length {y2_star.shape[-1]} does not match {g.pca.d_y - g.split}"
        )
    a = g.lf_modes  # (d_z, d_y2)
    if g.d_z == 0:
        return np.zeros(y2_star.shape[:-1] + (0,)), False
    rhs = (y2_star - g.lf_mean) @ a.T
    gram = a @ a.T
    cond = np.linalg.cond(gram)
    regularized = not np.isfinite(cond) or cond > GAPPY_COND_MAX
    if regularized:
        gram = gram + GAPPY_RIDGE * np.trace(gram) / g.d_z * np.eye(g.d_z)
    coeffs = linalg.solve(gram, rhs.T, assume_a="pos").T
    return coeffs, regularized


def gappy_predict(g: GpcaModel, y2_star) -> np.ndarray:
    """HF field(s) reconstructed from LF field(s) through the stacked modes."""
    coeffs, _ = gappy_coefficients(g, y2_star)
    return coeffs @ g.hf_modes + g.hf_mean


@dataclass(frozen=True)
class MaTransform:
    """Similarity map ``z -> scale * z @ rotation + translation``."""

    rotation: np.ndarray
    scale: float
    translation: np.ndarray
    underdetermined: bool = False

    def __call__(self, z):
        return self.scale * np.asarray(z, dtype=float) @ self.rotation + self.translation


def fit_procrustes(src, tgt) -> MaTransform:
    """Orthogonal Procrustes alignment of ``src`` onto ``tgt`` (paired rows).

    Minimizes ``||tgt - s * src @ R - 1 t^T||_F`` over orthogonal ``R``,
    ``s > 0`` and ``t``.
    """
    a = np.asarray(src, dtype=float)
    b = np.asarray(tgt, dtype=float)
    if a.ndim != 2 or a.shape != b.shape:
        raise ValueError(f"source {a.shape} and target {b.shape} must be equal-shape matrices")
    n, d = a.shape
    if d == 0:
        return MaTransform(np.zeros((0, 0)), 1.0, np.zeros(0))
    ma, mb = a.mean(axis=0), b.mean(axis=0)
    a0, b0 = a - ma, b - mb
    norm_a = np.sum(a0**2)
    if norm_a <= 0.0:
        raise ValueError("source points have zero variance; alignment undefined")
    u, s, vt = linalg.svd(a0.T @ b0)
    rot = u @ vt
    scale = float(np.sum(s) / norm_a)
    if scale <= 0.0:
        scale = 1.0
    underdetermined = n < d
    if underdetermined:
        warnings.warn(f"Procrustes fit with {n} pairs in {d} dimensions", stacklevel=2)
    return MaTransform(rot, scale, mb - scale * ma @ rot, underdetermined)


def apply_ma(t: MaTransform, z) -> np.ndarray:
    return t(z)
