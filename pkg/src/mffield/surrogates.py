"""Named multi-fidelity surrogates assembled from DR and GP blocks.

Every surrogate follows one contract: ``train(spec, dataset)`` returns a
:class:`TrainedSurrogate` whose ``predict(u, lf)`` gives HF fields. Families
that need the LF simulator at prediction time (corrective and mapping) take
an LF field provider, a callable mapping input rows to LF fields.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import dr, gp
from .data import DatasetError, MultiFidelityDataset, match_rows

FAMILIES = ("single_fidelity", "corrective", "mapping", "fusion")
DR_KINDS = ("HFPCA", "LFPCA", "MFPCA", "SFPCA", "DiffPCA", "CPCA", "GPCA", "none")
INTERMEDIATES = ("GPR", "AR1", "CategGPR", "TensCov", "GappyLS")

LfFieldProvider = Callable[[np.ndarray], np.ndarray]

# name -> (family, dr_kind, intermediate, use_ma, model_residuals)
_TABLE = {
    "S-HFPCA-GPR": ("single_fidelity", "HFPCA", "GPR", False, False),
    "TensCovGPR": ("single_fidelity", "none", "TensCov", False, False),
    "C-DiffPCA-GPR": ("corrective", "DiffPCA", "GPR", False, False),
    "M-GPCA": ("mapping", "GPCA", "GappyLS", False, False),
    "M-SFPCA-GPR": ("mapping", "SFPCA", "GPR", False, False),
    "F-CPCA-AR1": ("fusion", "CPCA", "AR1", False, False),
    "F-HFPCA-AR1": ("fusion", "HFPCA", "AR1", False, False),
    "F-MFPCA-AR1": ("fusion", "MFPCA", "AR1", False, False),
    "F-MFPCA-CategGPR": ("fusion", "MFPCA", "CategGPR", False, False),
    "F-SFPCA-AR1": ("fusion", "SFPCA", "AR1", False, False),
    "F-SFPCA-MA-AR1": ("fusion", "SFPCA", "AR1", True, False),
    "F-LFPCA-AR1": ("fusion", "LFPCA", "AR1", False, False),
    "F-LFPCA-AR1-Resid": ("fusion", "LFPCA", "AR1", False, True),
}
NAMES = tuple(_TABLE)


@dataclass(frozen=True)
class SurrogateSpec:
    """One catalog entry. Only the combinations listed in the catalog are valid."""

    name: str
    family: str
    dr_kind: str
    intermediate: str
    use_ma: bool = False
    model_residuals: bool = False
    ric: float = 0.999

    def __post_init__(self):
        row = _TABLE.get(self.name)
        if row is None:
            raise ValueError(f"unknown surrogate {self.name!r}; choose from {', '.join(NAMES)}")
        if row != (self.family, self.dr_kind, self.intermediate, self.use_ma, self.model_residuals):
            raise ValueError(f"{self.name}: fields do not match the catalog entry {row}")
        if not 0.0 < self.ric <= 1.0:
            raise ValueError(f"ric must lie in (0, 1], got {self.ric}")

    @property
    def needs_lf(self) -> bool:
        return self.family in ("corrective", "mapping")

    @property
    def linear_decomposition(self) -> bool:
        """Whether ``e^2 = e_dr^2 + e_ism^2`` holds exactly for this surrogate."""
        return self.dr_kind not in ("GPCA", "none") and not self.model_residuals

    def with_ric(self, ric: float) -> SurrogateSpec:
        return replace(self, ric=ric)


def get_spec(name: str, ric: float = 0.999) -> SurrogateSpec:
    if name not in _TABLE:
        raise ValueError(f"unknown surrogate {name!r}; choose from {', '.join(NAMES)}")
    return SurrogateSpec(name, *_TABLE[name], ric=ric)


def catalog(ric: float = 0.999) -> list[SurrogateSpec]:
    """All 13 surrogates, in a fixed order."""
    return [get_spec(n, ric) for n in NAMES]


@dataclass(frozen=True)
class LookupLfProvider:
    """LF provider backed by stored snapshots, matched on exact input rows."""

    inputs: np.ndarray
    outputs: np.ndarray

    def __call__(self, u) -> np.ndarray:
        u = np.atleast_2d(np.asarray(u, dtype=float))
        pairs = dict(match_rows(u, self.inputs))
        missing = [i for i in range(u.shape[0]) if i not in pairs]
        if missing:
            raise KeyError(f"no stored LF snapshot for query row {missing[0]}")
        return self.outputs[[pairs[i] for i in range(u.shape[0])]]


@dataclass(frozen=True)
class TrainedSurrogate:
    """Fitted DR and intermediate models of one surrogate.

    ``hf_dr`` is the linear DR whose inverse produces the prediction, when
    there is one. ``latent_models`` holds one GP-type model per latent
    variable.
    """

    spec: SurrogateSpec
    hf_dr: dr.PcaModel | None = None
    lf_dr: dr.PcaModel | None = None
    gpca: dr.GpcaModel | None = None
    latent_models: tuple = ()
    residual_model: gp.TensCovGpModel | None = None
    field_model: gp.TensCovGpModel | None = None
    ma: dr.MaTransform | None = None
    train_seconds: float = 0.0
    dims: dict = field(default_factory=dict)

    def _lf(self, u, lf):
        if lf is None:
            raise ValueError(f"{self.spec.name} needs an LF field provider to predict")
        y2 = np.atleast_2d(np.asarray(lf(u), dtype=float))
        if y2.shape[0] != u.shape[0]:
            raise ValueError(f"LF provider returned {y2.shape[0]} fields for {u.shape[0]} inputs")
        return y2

    def _latent_inputs(self, u, lf):
        if self.spec.family == "mapping":
            return self.lf_dr.transform(self._lf(u, lf))
        return u

    def predict_latent(self, u, lf: LfFieldProvider | None = None) -> np.ndarray:
        """Predicted latent coordinates in the basis of ``hf_dr``."""
        if self.hf_dr is None:
            raise ValueError(f"{self.spec.name} has no latent space")
        u = np.atleast_2d(np.asarray(u, dtype=float))
        x = self._latent_inputs(u, lf)
        cols = [m.predict(x, return_var=False) for m in self.latent_models]
        return np.column_stack(cols) if cols else np.zeros((u.shape[0], 0))

    def decomposition_target(self, u, truths, lf=None):
        """``(basis, target fields, predicted latents)`` for the error split.

        The target is what the linear DR acts on: the HF field, or the HF
        minus LF difference for the corrective family. ``None`` when the
        prediction is not an inverse DR of latent predictions.
        """
        if self.hf_dr is None:
            return None
        u = np.atleast_2d(np.asarray(u, dtype=float))
        truths = np.asarray(truths, dtype=float)
        if self.spec.family == "corrective":
            truths = truths - self._lf(u, lf)
        return self.hf_dr, truths, self.predict_latent(u, lf)

    def predict(self, u, lf: LfFieldProvider | None = None) -> np.ndarray:
        """HF field prediction for every row of ``u``."""
        u = np.atleast_2d(np.asarray(u, dtype=float))
        s = self.spec
        if s.needs_lf and lf is None:
            raise ValueError(f"{s.name} needs an LF field provider to predict")
        if s.intermediate == "TensCov":
            return self.field_model.predict(u)
        if s.intermediate == "GappyLS":
            return dr.gappy_predict(self.gpca, self._lf(u, lf))
        y = self.hf_dr.inverse_transform(self.predict_latent(u, lf))
        if s.family == "corrective":
            y = y + self._lf(u, lf)
        if self.residual_model is not None:
            y = y + self.residual_model.predict(u)
        return y


def _child(rng: np.random.Generator) -> np.random.Generator:
    return np.random.default_rng(rng.integers(2**63))


def _fit_gprs(x, z, rng, restarts, isotropic=False):
    return tuple(
        gp.fit_gp(x, z[:, k], restarts, _child(rng), isotropic=isotropic)
        for k in range(z.shape[1])
    )


def _check_same_nodes(ds: MultiFidelityDataset, name: str):
    if ds.hf.d_y != ds.lf.d_y:
        raise DatasetError(
            f"{name} needs HF and LF fields on one mesh layout, got {ds.hf.d_y} and {ds.lf.d_y} nodes"
        )


def _fusion_latents(spec, ds):
    """DR basis for the HF prediction and the latent data of both fidelities."""
    y1, y2 = ds.hf.outputs, ds.lf.outputs
    kind = spec.dr_kind
    if kind != "SFPCA":
        _check_same_nodes(ds, spec.name)
    if kind == "HFPCA":
        basis = dr.fit_pca(y1, spec.ric)
    elif kind == "LFPCA":
        basis = dr.fit_pca(y2, spec.ric)
    elif kind == "MFPCA":
        basis = dr.fit_pca(np.vstack([y1, y2]), spec.ric)
    elif kind == "CPCA":
        basis = dr.fit_cpca(y1, y2)
    else:
        p1, p2 = dr.fit_pca(y1, spec.ric), dr.fit_pca(y2, spec.ric)
        dz = min(p1.d_z, p2.d_z)
        p1, p2 = p1.truncate(dz), p2.truncate(dz)
        return p1, p2, p1.transform(y1), p2.transform(y2), {"hf": p1.d_z, "lf": p2.d_z}
    return basis, basis, basis.transform(y1), basis.transform(y2), {"hf": basis.d_z}


def train(spec: SurrogateSpec, ds: MultiFidelityDataset, seed=None,
          restarts: int = 20) -> TrainedSurrogate:
    """Fit ``spec`` on ``ds``.

    Corrective and mapping surrogates use only the inputs evaluated at both
    fidelities; the extra LF snapshots are ignored.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    t0 = time.perf_counter()
    fam = spec.family
    out: dict = {}

    if fam == "single_fidelity":
        u1, y1 = ds.hf.inputs, ds.hf.outputs
        if spec.intermediate == "TensCov":
            out["field_model"] = gp.fit_tenscov(u1, ds.hf.mesh, y1, restarts=restarts, seed=_child(rng))
        else:
            basis = dr.fit_pca(y1, spec.ric)
            out.update(hf_dr=basis, latent_models=_fit_gprs(u1, basis.transform(y1), rng, restarts))
            out["dims"] = {"hf": basis.d_z}

    elif fam == "corrective":
        _check_same_nodes(ds, spec.name)
        uc, y1c, y2c = ds.common_part()
        diff = y1c - y2c
        basis = dr.fit_pca(diff, spec.ric)
        out.update(hf_dr=basis, latent_models=_fit_gprs(uc, basis.transform(diff), rng, restarts))
        out["dims"] = {"diff": basis.d_z}

    elif fam == "mapping":
        uc, y1c, y2c = ds.common_part()
        if spec.dr_kind == "GPCA":
            g = dr.fit_gpca(y1c, y2c, spec.ric)
            out.update(gpca=g, dims={"gpca": g.d_z})
        else:
            p1, p2 = dr.fit_pca(y1c, spec.ric), dr.fit_pca(y2c, spec.ric)
            z2 = p2.transform(y2c)
            out.update(hf_dr=p1, lf_dr=p2, dims={"hf": p1.d_z, "lf": p2.d_z})
            # a Euclidean kernel over the LF latent coordinates
            out["latent_models"] = _fit_gprs(z2, p1.transform(y1c), rng, restarts, isotropic=True)

    else:
        basis, lf_basis, z1, z2, dims = _fusion_latents(spec, ds)
        u1, u2 = ds.hf.inputs, ds.lf.inputs
        if spec.use_ma and basis.d_z:
            hi, lo = np.array(ds.common_index).T
            t = dr.fit_procrustes(z2[lo], z1[hi])
            z2 = t(z2)
            out["ma"] = t
        models = []
        for k in range(basis.d_z):
            if spec.intermediate == "AR1":
                models.append(gp.fit_ar1(u2, z2[:, k], u1, z1[:, k], restarts, _child(rng)))
            else:
                x_aug = np.vstack([np.column_stack([u1, np.ones(len(u1))]),
                                   np.column_stack([u2, np.full(len(u2), 2.0)])])
                models.append(gp.fit_categ_gp(x_aug, np.concatenate([z1[:, k], z2[:, k]]),
                                              restarts, _child(rng)))
        out.update(hf_dr=basis, lf_dr=lf_basis, latent_models=tuple(models), dims=dims)
        if spec.model_residuals:
            resid = basis.residuals(ds.hf.outputs)
            out["residual_model"] = gp.fit_tenscov(u1, ds.hf.mesh, resid, restarts=restarts,
                                                   seed=_child(rng))

    return TrainedSurrogate(spec, train_seconds=time.perf_counter() - t0, **out)


def latent_dimensions(ds: MultiFidelityDataset, ric: float = 0.999) -> dict[str, int]:
    """Latent dimension each PCA variant retains on ``ds``."""
    y1, y2 = ds.hf.outputs, ds.lf.outputs
    _, y1c, y2c = ds.common_part()
    out = {"HFPCA": dr.fit_pca(y1, ric).d_z, "LFPCA": dr.fit_pca(y2, ric).d_z}
    if ds.hf.d_y == ds.lf.d_y:
        out["MFPCA"] = dr.fit_pca(np.vstack([y1, y2]), ric).d_z
        out["DiffPCA"] = dr.fit_pca(y1c - y2c, ric).d_z
        cp = dr.fit_cpca(y1, y2)
        out["CPCA"] = cp.d_z
    out["SFPCA"] = min(out["HFPCA"], out["LFPCA"])
    out["GPCA"] = dr.fit_gpca(y1c, y2c, ric).d_z
    return out
