"""Gaussian process regression with a Matérn-5/2 kernel.

Ordinary (universal) Kriging, recursive AR1 co-Kriging, a GP over inputs
augmented with a categorical fidelity flag, and a GP over whole fields with
a tensorized input x mesh covariance.

Hyperparameters are searched in ``log10(lengthscale / width)`` where
``width`` is the per-dimension spread of the training inputs; the variance
and the trend coefficients are profiled out of the likelihood in closed form.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize
from scipy.spatial.distance import cdist

from .data import match_rows

log = logging.getLogger(__name__)

NUGGET_GP = 1e-8
NUGGET_AR1 = 1e-10
JITTER_LADDER = (1e-12, 1e-11, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6)
LOG10_BOUNDS = (-2.0, 2.0)
THETA_F_LOG10_BOUNDS = (-6.0, 0.0)
SIGMA2_FLOOR = 1e-300
_NLL_FAIL = 1e300


def matern52(r):
    """Matérn-5/2 correlation as a function of the scaled distance ``r``."""
    r = np.asarray(r, dtype=float)
    s = np.sqrt(5.0) * np.atleast_1d(r)
    out = s * s
    out /= 3.0
    out += s
    out += 1.0
    np.negative(s, out=s)
    np.exp(s, out=s)
    out *= s
    return out.reshape(r.shape) if r.ndim else float(out[0])


def _as_2d(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    return x


@dataclass(frozen=True)
class Matern52Kernel:
    """Anisotropic Matérn-5/2 kernel ``variance * matern52(r)``."""

    lengthscales: np.ndarray
    variance: float = 1.0

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=float))
        if not np.all(ls > 0) or not np.all(np.isfinite(ls)):
            raise ValueError(f"lengthscales must be positive and finite, got {ls}")
        if not self.variance > 0:
            raise ValueError(f"variance must be positive, got {self.variance}")
        object.__setattr__(self, "lengthscales", ls)

    def correlation(self, a, b) -> np.ndarray:
        a, b = _as_2d(a), _as_2d(b)
        if a.shape[1] != b.shape[1] or a.shape[1] != self.lengthscales.size:
            raise ValueError(
                f"input dimension mismatch: {a.shape[1]}, {b.shape[1]} vs "
                f"{self.lengthscales.size} lengthscales"
            )
        return matern52(cdist(a / self.lengthscales, b / self.lengthscales))

    def __call__(self, a, b) -> np.ndarray:
        return self.variance * self.correlation(a, b)


def _sq_diffs(x: np.ndarray) -> np.ndarray:
    # (d, n, n) squared coordinate differences, reused across likelihood calls
    return (x.T[:, :, None] - x.T[:, None, :]) ** 2


def _corr_from_sq(sq: np.ndarray, ls: np.ndarray) -> np.ndarray:
    r2 = np.tensordot(5.0 / np.asarray(ls) ** 2, sq, axes=1)
    s = np.sqrt(r2, out=r2)
    out = s * s
    out /= 3.0
    out += s
    out += 1.0
    np.negative(s, out=s)
    np.exp(s, out=s)
    out *= s
    return out


def kernel_eval(k: Matern52Kernel, a, b) -> float:
    """Covariance between two single input vectors."""
    a = np.atleast_1d(np.asarray(a, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    if a.shape != b.shape:
        raise ValueError(f"inputs of different lengths: {a.size} vs {b.size}")
    return float(k(a[None, :], b[None, :])[0, 0])


def _cholesky(r: np.ndarray, nugget: float, strict: bool = True):
    """Lower Cholesky factor of ``r + nugget*I``, escalating jitter on failure.

    Returns ``(L, jitter)`` or ``(None, None)`` when ``strict`` is False and
    every rung of the ladder fails.
    """
    n = r.shape[0]
    eye = np.eye(n)
    for jitter in (0.0,) + JITTER_LADDER:
        try:
            l = linalg.cholesky(r + (nugget + jitter) * eye, lower=True, check_finite=False)
            return l, jitter
        except linalg.LinAlgError:
            continue
    if strict:
        raise linalg.LinAlgError(
            f"covariance not positive definite after jitter {JITTER_LADDER[-1]:g}"
        )
    return None, None


@dataclass
class _Profile:
    chol: np.ndarray
    jitter: float
    ft: np.ndarray  # L^-1 F
    beta: np.ndarray
    resid: np.ndarray  # L^-1 (y - F beta)
    sigma2: float
    nll: float


def _profile(r: np.ndarray, f: np.ndarray, y: np.ndarray, nugget: float, strict=True):
    """Concentrated negative log-likelihood with GLS trend and profiled variance."""
    chol, jitter = _cholesky(r, nugget, strict)
    if chol is None:
        return None
    ft = linalg.solve_triangular(chol, f, lower=True, check_finite=False)
    yt = linalg.solve_triangular(chol, y, lower=True, check_finite=False)
    beta = linalg.lstsq(ft, yt, lapack_driver="gelsy", check_finite=False)[0]
    resid = yt - ft @ beta
    n = y.size
    sigma2 = max(float(resid @ resid) / n, SIGMA2_FLOOR)
    nll = 0.5 * n * np.log(sigma2) + float(np.sum(np.log(np.diag(chol))))
    if jitter:
        log.debug("covariance needed jitter %.0e", jitter)
    return _Profile(chol, jitter, ft, beta, resid, sigma2, nll)


def _multistart(fun, lower, upper, restarts: int, rng: np.random.Generator,
                maxiter: int = 200):
    """Minimize ``fun`` by COBYLA from ``restarts`` uniform starts in the box.

    The best point over every evaluation is returned, so the result is never
    worse than any starting value.
    """
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    best = [np.inf, None]

    def tracked(p):
        p = np.clip(p, lower, upper)
        val = fun(p)
        if val < best[0]:
            best[0], best[1] = val, p.copy()
        return val

    bounds = optimize.Bounds(lower, upper)
    for start in rng.uniform(lower, upper, size=(max(restarts, 1), lower.size)):
        optimize.minimize(tracked, start, method="COBYLA", bounds=bounds,
                          options={"maxiter": maxiter, "rhobeg": 0.5, "tol": 1e-2})
    return best[1], best[0]


def _widths(x: np.ndarray) -> np.ndarray:
    w = np.ptp(x, axis=0)
    return np.where(w > 0, w, 1.0)


def _collapse_duplicates(x, y, f):
    keys = {}
    groups = []
    for i, row in enumerate(np.ascontiguousarray(x)):
        k = row.tobytes()
        if k in keys:
            groups[keys[k]].append(i)
        else:
            keys[k] = len(groups)
            groups.append([i])
    if len(groups) == x.shape[0]:
        return x, y, f
    warnings.warn(f"{x.shape[0] - len(groups)} duplicate input rows averaged", stacklevel=3)
    first = [g[0] for g in groups]
    y = np.array([y[g].mean() for g in groups])
    f = np.array([f[g].mean(axis=0) for g in groups])
    return x[first], y, f


@dataclass(frozen=True)
class GpModel:
    """Kriging model with a linear trend ``F beta`` and a Matérn-5/2 covariance.

    ``kernel.variance`` holds the profiled process variance. The default
    trend is a constant; a custom regression basis must be passed again at
    prediction time.
    """

    x: np.ndarray
    y: np.ndarray
    kernel: Matern52Kernel
    beta: np.ndarray
    nugget: float
    chol: np.ndarray
    alpha: np.ndarray
    ft: np.ndarray
    nll: float
    jitter: float = 0.0
    info: dict = field(default_factory=dict, compare=False)

    @property
    def d(self) -> int:
        return self.x.shape[1]

    @property
    def n(self) -> int:
        return self.x.shape[0]

    def _cross(self, xq: np.ndarray) -> np.ndarray:
        return self.kernel.correlation(xq, self.x)

    def predict(self, x, basis=None, return_var: bool = True):
        """Posterior mean (and variance) at the rows of ``x``.

        ``basis`` is the regression row for each query; ones by default.
        """
        xq = _as_2d(x)
        if xq.shape[1] != self.d:
            raise ValueError(f"query has {xq.shape[1]} inputs, model expects {self.d}")
        f = np.ones((xq.shape[0], 1)) if basis is None else _as_2d(basis)
        if f.shape != (xq.shape[0], self.beta.size):
            raise ValueError(f"basis shape {f.shape} does not match {self.beta.size} trend terms")
        r = self._cross(xq)
        mean = f @ self.beta + r @ self.alpha
        if not return_var:
            return mean
        v = linalg.solve_triangular(self.chol, r.T, lower=True)
        var = 1.0 - np.sum(v * v, axis=0)
        u = self.ft.T @ v - f.T
        g = self.ft.T @ self.ft
        var = var + np.sum(u * (linalg.pinvh(g) @ u), axis=0)
        return mean, np.clip(self.kernel.variance * var, 0.0, None)


def _finish(cls, x, y, ls, prof: _Profile, nugget, **extra):
    alpha = linalg.solve_triangular(prof.chol.T, prof.resid, lower=False)
    return cls(
        x=x, y=y, kernel=Matern52Kernel(ls, prof.sigma2), beta=prof.beta, nugget=nugget,
        chol=prof.chol, alpha=alpha, ft=prof.ft, nll=prof.nll, jitter=prof.jitter, **extra,
    )


def _prepare(x, y, basis):
    x = _as_2d(x)
    y = np.asarray(y, dtype=float).ravel()
    if x.shape[0] != y.size:
        raise ValueError(f"{x.shape[0]} input rows but {y.size} outputs")
    if x.shape[0] < 1:
        raise ValueError("no training data")
    f = np.ones((y.size, 1)) if basis is None else _as_2d(basis)
    if f.shape[0] != y.size:
        raise ValueError("basis row count does not match outputs")
    return _collapse_duplicates(x, y, f)


def fit_gp(
    x,
    y,
    restarts: int = 20,
    seed=None,
    nugget: float = NUGGET_GP,
    lengthscales=None,
    isotropic: bool = False,
    basis=None,
    maxiter: int = 200,
) -> GpModel:
    """Fit a Kriging model by maximum likelihood.

    Parameters
    ----------
    x : (n, d) array
    y : (n,) array
    restarts : int
        Number of uniformly drawn COBYLA starting points.
    seed : int or Generator, optional
    nugget : float
        Added to the diagonal of the correlation matrix.
    lengthscales : array, optional
        Fixed lengthscales; skips the likelihood optimization.
    isotropic : bool
        One lengthscale shared by all dimensions.
    basis : (n, p) array, optional
        Regression matrix of the trend; a column of ones by default.
    """
    x, y, f = _prepare(x, y, basis)
    d = x.shape[1]
    width = _widths(x)
    if lengthscales is not None:
        ls = np.broadcast_to(np.asarray(lengthscales, dtype=float), (d,)).copy()
        prof = _profile(Matern52Kernel(ls).correlation(x, x), f, y, nugget)
        return _finish(GpModel, x, y, ls, prof, nugget)

    dims = 1 if isotropic else d
    scale = np.full(d, np.sqrt(np.sum(width**2) / d)) if isotropic else width

    def to_ls(p):
        return scale * 10.0 ** (np.repeat(p, d) if isotropic else p)

    sq = _sq_diffs(x)

    def nll(p):
        prof = _profile(_corr_from_sq(sq, to_ls(p)), f, y, nugget, strict=False)
        return _NLL_FAIL if prof is None else prof.nll

    if x.shape[0] == 1:
        p_best = np.zeros(dims)
    else:
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        lo, hi = LOG10_BOUNDS
        p_best, _ = _multistart(nll, np.full(dims, lo), np.full(dims, hi), restarts, rng, maxiter)
    ls = to_ls(p_best)
    prof = _profile(Matern52Kernel(ls).correlation(x, x), f, y, nugget)
    return _finish(GpModel, x, y, ls, prof, nugget, info={"log10_rel_lengthscales": p_best})


@dataclass(frozen=True)
class Ar1Model:
    """Two-level co-Kriging ``z1(x) = rho * z2(x) + delta(x)``.

    ``delta`` carries the regression basis ``[m2(x), 1]`` so its first trend
    coefficient is ``rho``.
    """

    lf: GpModel
    delta: GpModel

    @property
    def rho(self) -> float:
        return float(self.delta.beta[0])

    def predict(self, x, return_var: bool = True):
        m2, v2 = self.lf.predict(x)
        f = np.column_stack([m2, np.ones_like(m2)])
        if not return_var:
            return self.delta.predict(x, basis=f, return_var=False)
        md, vd = self.delta.predict(x, basis=f)
        # rho*m2 is already part of the delta trend
        return md, self.rho**2 * v2 + vd


def fit_ar1(x2, y2, x1, y1, restarts: int = 20, seed=None, nugget: float = NUGGET_AR1,
            maxiter: int = 200) -> Ar1Model:
    """Recursive AR1 co-Kriging on a nested design.

    The LF GP is fitted on ``(x2, y2)``. The discrepancy GP is fitted on the
    HF data with trend ``rho * y2(x1) + b``, so ``rho`` and ``b`` come from
    generalized least squares jointly with the discrepancy hyperparameters.
    """
    x1, x2 = _as_2d(x1), _as_2d(x2)
    y1 = np.asarray(y1, dtype=float).ravel()
    y2 = np.asarray(y2, dtype=float).ravel()
    pairs = match_rows(x1, x2)
    if len(pairs) != x1.shape[0]:
        raise ValueError(
            f"AR1 needs nested designs: {x1.shape[0] - len(pairs)} HF inputs are not LF inputs"
        )
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    lf = fit_gp(x2, y2, restarts, rng, nugget, maxiter=maxiter)
    y2_at_1 = y2[[j for _, j in pairs]]
    basis = np.column_stack([y2_at_1, np.ones_like(y2_at_1)])
    delta = fit_gp(x1, y1, restarts, rng, nugget, basis=basis, maxiter=maxiter)
    return Ar1Model(lf, delta)


@dataclass(frozen=True)
class CategGpModel(GpModel):
    """GP over ``(u, flag)`` with correlation ``k_u(u, u') * (1 if same flag else theta_f)``.

    Predictions are made at the high-fidelity flag (1).
    """

    flags: np.ndarray = None
    theta_f: float = 1.0

    def _cross(self, xq: np.ndarray) -> np.ndarray:
        factor = np.where(self.flags == 1, 1.0, self.theta_f)
        return self.kernel.correlation(xq, self.x) * factor[None, :]


def _categ_corr(ku: np.ndarray, flags: np.ndarray, theta_f: float) -> np.ndarray:
    same = flags[:, None] == flags[None, :]
    return ku * np.where(same, 1.0, theta_f)


def fit_categ_gp(x_aug, y, restarts: int = 20, seed=None, nugget: float = NUGGET_GP,
                 maxiter: int = 200, lengthscales=None, theta_f: float | None = None
                 ) -> CategGpModel:
    """Fit a GP over inputs whose last column is the fidelity flag (1 or 2).

    ``lengthscales`` and ``theta_f`` may be fixed; the free ones maximize
    the likelihood.
    """
    x_aug = _as_2d(x_aug)
    flags = x_aug[:, -1]
    if not np.all(np.isin(flags, (1.0, 2.0))):
        raise ValueError("fidelity flags must be 1 or 2")
    x, y, _ = _prepare(x_aug, y, None)
    flags, x = x[:, -1].copy(), x[:, :-1]
    d = x.shape[1]
    width = _widths(x)
    single = np.unique(flags).size == 1
    if single:
        warnings.warn("only one fidelity present; theta_f fixed to 1", stacklevel=2)

    fixed_ls = None if lengthscales is None else np.broadcast_to(
        np.asarray(lengthscales, dtype=float), (d,)).copy()
    if theta_f is not None and not 0.0 < theta_f <= 1.0:
        raise ValueError(f"theta_f must lie in (0, 1], got {theta_f}")
    fixed_tf = 1.0 if single else theta_f
    n_ls = 0 if fixed_ls is not None else d

    def unpack(p):
        ls = fixed_ls if fixed_ls is not None else width * 10.0 ** p[:d]
        return ls, (fixed_tf if fixed_tf is not None else 10.0 ** p[n_ls])

    sq = _sq_diffs(x)

    def nll(p):
        ls, theta_f = unpack(p)
        r = _categ_corr(_corr_from_sq(sq, ls), flags, theta_f)
        prof = _profile(r, np.ones((y.size, 1)), y, nugget, strict=False)
        return _NLL_FAIL if prof is None else prof.nll

    free_tf = fixed_tf is None
    lo = [LOG10_BOUNDS[0]] * n_ls + ([THETA_F_LOG10_BOUNDS[0]] if free_tf else [])
    hi = [LOG10_BOUNDS[1]] * n_ls + ([THETA_F_LOG10_BOUNDS[1]] if free_tf else [])
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if lo:
        p_best, _ = _multistart(nll, lo, hi, restarts, rng, maxiter)
    else:
        p_best = np.zeros(0)
    ls, theta_f = unpack(p_best)
    r = _categ_corr(Matern52Kernel(ls).correlation(x, x), flags, theta_f)
    prof = _profile(r, np.ones((y.size, 1)), y, nugget)
    return _finish(CategGpModel, x, y, ls, prof, nugget, flags=flags, theta_f=theta_f)


@dataclass(frozen=True)
class TensCovGpModel:
    """GP over whole fields with covariance ``sigma2 * Phi_u (x) Phi_x``.

    On a shared mesh the mesh factor cancels from the posterior mean, which
    reduces to ``mean + phi_u(u*, U) Phi_u^-1 (Y - mean)``. The mesh kernel
    and ``sigma2`` only enter the predictive variance.
    """

    inputs: np.ndarray
    mesh: np.ndarray
    mean: np.ndarray
    kernel_u: Matern52Kernel
    kernel_x: Matern52Kernel
    chol_u: np.ndarray
    alpha: np.ndarray  # Phi_u^-1 (Y - mean)
    jitter: float = 0.0
    info: dict = field(default_factory=dict, compare=False)

    @property
    def d_y(self) -> int:
        return self.mean.size

    def predict(self, u, return_var: bool = False):
        u = _as_2d(u)
        if u.shape[1] != self.inputs.shape[1]:
            raise ValueError(f"query has {u.shape[1]} inputs, model expects {self.inputs.shape[1]}")
        r = self.kernel_u.correlation(u, self.inputs)
        mean = self.mean + r @ self.alpha
        if not return_var:
            return mean
        v = linalg.solve_triangular(self.chol_u, r.T, lower=True)
        var_u = np.clip(1.0 - np.sum(v * v, axis=0), 0.0, None)
        diag_x = np.full(self.d_y, self.kernel_x.variance)
        return mean, var_u[:, None] * diag_x[None, :]


def _kfold(n: int, k: int, rng: np.random.Generator):
    perm = rng.permutation(n)
    return [np.sort(perm[i::k]) for i in range(k)]


def _tenscov_cv(inputs, fields, ls, folds, center):
    k = Matern52Kernel(ls)
    full = k.correlation(inputs, inputs)
    sse = 0.0
    n = inputs.shape[0]
    for test in folds:
        train = np.setdiff1d(np.arange(n), test)
        y = fields[train]
        mu = y.mean(axis=0) if center else np.zeros(fields.shape[1])
        chol, _ = _cholesky(full[np.ix_(train, train)], 0.0, strict=False)
        if chol is None:
            return _NLL_FAIL
        a = linalg.cho_solve((chol, True), y - mu)
        pred = mu + full[np.ix_(test, train)] @ a
        sse += float(np.sum((pred - fields[test]) ** 2))
    return sse


def fit_tenscov(
    inputs,
    mesh,
    fields,
    cv_folds: int | None = None,
    restarts: int = 20,
    seed=None,
    center: bool = True,
    lengthscales=None,
    maxiter: int = 200,
) -> TensCovGpModel:
    """Fit a tensorized-covariance GP on snapshots sharing one mesh.

    The input lengthscales minimize the ``cv_folds``-fold cross-validation
    error (``min(10, n)`` folds by default). The mesh lengthscale and the
    variance maximize the matrix-normal likelihood given those. No nugget is
    used; jitter is added only if a factorization fails.
    """
    u = _as_2d(inputs)
    y = np.asarray(fields, dtype=float)
    x = _as_2d(mesh)
    if y.ndim != 2 or y.shape[0] != u.shape[0]:
        raise ValueError(f"fields must be an (n, d_y) matrix with n={u.shape[0]}")
    if x.shape[0] != y.shape[1]:
        raise ValueError(f"mesh has {x.shape[0]} nodes but fields have {y.shape[1]} values")
    n, d = u.shape
    width = _widths(u)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    info = {}
    if lengthscales is not None:
        ls = np.broadcast_to(np.asarray(lengthscales, dtype=float), (d,)).copy()
    elif n < 3:
        ls = width.copy()
    else:
        k = min(10, n) if cv_folds is None else int(cv_folds)
        if not 2 <= k <= n:
            raise ValueError(f"cv_folds must lie in [2, n], got {k}")
        folds = _kfold(n, k, rng)
        p, cv = _multistart(lambda p: _tenscov_cv(u, y, width * 10.0**p, folds, center),
                            np.full(d, LOG10_BOUNDS[0]), np.full(d, LOG10_BOUNDS[1]),
                            restarts, rng, maxiter)
        ls = width * 10.0**p
        info["cv_sse"] = cv

    mean = y.mean(axis=0) if center else np.zeros(y.shape[1])
    y0 = y - mean
    ku = Matern52Kernel(ls)
    chol_u, jitter = _cholesky(ku.correlation(u, u), 0.0)
    alpha = linalg.cho_solve((chol_u, True), y0)

    # mesh lengthscale and variance from the matrix-normal likelihood
    a = y0.T @ alpha
    logdet_u = 2.0 * float(np.sum(np.log(np.diag(chol_u))))
    xw = _widths(x)

    def mesh_nll(q):
        chol_x, _ = _cholesky(Matern52Kernel(xw * 10.0**q).correlation(x, x), 0.0, strict=False)
        if chol_x is None:
            return _NLL_FAIL, None
        s2 = max(float(np.trace(linalg.cho_solve((chol_x, True), a))) / y0.size, SIGMA2_FLOOR)
        logdet_x = 2.0 * float(np.sum(np.log(np.diag(chol_x))))
        return 0.5 * (y0.size * np.log(s2) + x.shape[0] * logdet_u + n * logdet_x), s2

    res = optimize.minimize_scalar(lambda q: mesh_nll(q)[0], bounds=LOG10_BOUNDS,
                                   method="bounded", options={"xatol": 1e-2})
    _, s2 = mesh_nll(res.x)
    s2 = SIGMA2_FLOOR if s2 is None else s2
    kx = Matern52Kernel(xw * 10.0**res.x, s2)
    return TensCovGpModel(u, x, mean, ku, kx, chol_u, alpha, jitter, info)


def tenscov_predict(m: TensCovGpModel, u) -> np.ndarray:
    return m.predict(u)
