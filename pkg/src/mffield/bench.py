"""Error metrics, the repetition protocol, rankings and result files.

A protocol run trains every requested surrogate on a fresh nested design
for each ``(n1, n2, repetition)`` unit and scores it on one validation set
shared by all units. Each result row carries its own keys, so rows can be
produced in any order and by any number of workers.
"""

from __future__ import annotations

import csv
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from . import sim, surrogates
from .data import MultiFidelityDataset, match_rows
from .doe import BoxDomain, lhs, nested_lhs

THRESHOLDS = (1.05, 1.25, 2.0)
RESULT_COLUMNS = ("surrogate", "case", "n1", "n2", "rep", "e", "e_norm", "e_dr", "e_ism",
                  "dz", "train_seconds")
EXTRA_COLUMNS = ("e_dr_norm", "e_ism_norm", "dz_lf", "error")


# ---------------------------------------------------------------- metrics

def _pair(pred, truth):
    pred = np.atleast_2d(np.asarray(pred, dtype=float))
    truth = np.atleast_2d(np.asarray(truth, dtype=float))
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: predictions {pred.shape} vs truths {truth.shape}")
    return pred, truth


def rmse(predictions, truths) -> float:
    """Root mean over samples of the squared Euclidean norm of the field error."""
    p, t = _pair(predictions, truths)
    return float(np.sqrt(np.mean(np.sum((p - t) ** 2, axis=1))))


def spread(truths) -> float:
    """RMS distance of the fields to their mean field."""
    t = np.atleast_2d(np.asarray(truths, dtype=float))
    return rmse(np.broadcast_to(t.mean(axis=0), t.shape), t)


def normed_rmse(e: float, truths) -> float:
    s = spread(truths)
    if s == 0.0:
        raise ValueError("validation fields have zero variance; normed error undefined")
    return e / s


def dr_error(model, truths) -> float:
    """RMS of the DR round-trip residuals, i.e. the information lost by ``model``."""
    return float(np.sqrt(np.mean(np.sum(model.residuals(truths) ** 2, axis=1))))


def ism_error(model, latent_pred, truths) -> float:
    """RMS of the latent prediction error mapped back through the DR modes."""
    dz = model.transform(truths) - np.asarray(latent_pred, dtype=float)
    return float(np.sqrt(np.mean(np.sum(model.back_project(dz) ** 2, axis=1))))


def error_split(trained, inputs, truths, lf=None) -> tuple[float, float]:
    """``(e_dr, e_ism)`` of a trained surrogate, NaN when not defined."""
    parts = trained.decomposition_target(inputs, truths, lf)
    if parts is None:
        return math.nan, math.nan
    model, target, z = parts
    return dr_error(model, target), ism_error(model, z, target)


# ---------------------------------------------------------------- cases

class Case(Protocol):
    name: str
    d_u: int

    def validation(self, n_v: int, seed) -> tuple[np.ndarray, np.ndarray, object]: ...

    def dataset(self, n1: int, n2: int, seed) -> MultiFidelityDataset: ...

    def describe(self) -> dict: ...


@dataclass(frozen=True)
class VffCase:
    """Viscous free fall, simulated on demand."""

    variant: str = "no_ground"
    horizon: float = sim.DEFAULT_HORIZON
    n_nodes: int = sim.N_NODES
    ode_tol: float = sim.DEFAULT_ODE_TOL

    def __post_init__(self):
        if self.variant not in sim.VARIANTS:
            raise ValueError(f"variant must be one of {sim.VARIANTS}, got {self.variant!r}")

    @property
    def name(self) -> str:
        return f"vff-{self.variant.replace('_', '-')}"

    @property
    def d_u(self) -> int:
        return sim.DOMAIN.d

    def lf_provider(self):
        return sim.LfSimulator(self.variant, self.n_nodes, self.horizon)

    def validation(self, n_v, seed):
        u = lhs(n_v, sim.DOMAIN, seed)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            y = sim.hf_fields(u, self.variant, self.n_nodes, self.horizon, self.ode_tol)
        return u, y, self.lf_provider()

    def dataset(self, n1, n2, seed):
        return sim.generate_case(nested_lhs(n1, n2, sim.DOMAIN, seed), self.variant,
                                 self.n_nodes, self.horizon, self.ode_tol)

    def describe(self):
        return {"case": "vff", "variant": self.variant, "horizon": self.horizon,
                "n_nodes": self.n_nodes, "ode_tol": self.ode_tol}


def _snap(targets: np.ndarray, pool: np.ndarray, available: np.ndarray) -> np.ndarray:
    """Pool row nearest to each target among rows still available (consumed in order)."""
    available = available.copy()
    chosen = []
    for t in targets:
        d2 = np.sum((pool - t) ** 2, axis=1)
        d2[~available] = np.inf
        j = int(np.argmin(d2))
        if not np.isfinite(d2[j]):
            raise ValueError("dataset pool exhausted")
        available[j] = False
        chosen.append(j)
    return np.array(chosen, dtype=int)


@dataclass(frozen=True)
class PoolCase:
    """An ingested dataset used as a pool of precomputed snapshots.

    Designs are drawn in the bounding box of the pool inputs and snapped
    to the nearest unused pool input, so the protocol can run on data from
    external solvers. HF rows are usable only where the LF snapshot at the
    same input exists.
    """

    pool: MultiFidelityDataset
    label: str = "dataset"
    reserved: np.ndarray | None = None  # inputs held out for validation

    def reserve(self, inputs) -> PoolCase:
        return replace(self, reserved=np.asarray(inputs, dtype=float))

    def _free(self, inputs: np.ndarray) -> np.ndarray:
        free = np.ones(inputs.shape[0], bool)
        if self.reserved is not None:
            free[[i for i, _ in match_rows(inputs, self.reserved)]] = False
        return free

    @property
    def name(self) -> str:
        return self.label

    @property
    def d_u(self) -> int:
        return self.pool.d_u

    def _domain(self):
        x = self.pool.lf.inputs
        lo, hi = x.min(axis=0), x.max(axis=0)
        hi = np.where(hi > lo, hi, lo + 1.0)
        return BoxDomain(lo, hi)

    def _unit(self, x):
        return self._domain().to_unit(x)

    def _paired(self):
        hi, lo = np.array(self.pool.common_index, dtype=int).reshape(-1, 2).T
        return hi, lo

    def validation(self, n_v, seed):
        hi, lo = self._paired()
        if n_v > hi.size:
            raise ValueError(f"n_v={n_v} exceeds the {hi.size} pool inputs with both fidelities")
        x = self._unit(self.pool.hf.inputs[hi])
        k = _snap(self._domain().to_unit(lhs(n_v, self._domain(), seed)), x, np.ones(hi.size, bool))
        lf = surrogates.LookupLfProvider(self.pool.lf.inputs, self.pool.lf.outputs)
        return self.pool.hf.inputs[hi[k]], self.pool.hf.outputs[hi[k]], lf

    def dataset(self, n1, n2, seed):
        hi, lo = self._paired()
        doe = nested_lhs(n1, n2, self._domain(), seed)
        k1 = _snap(self._unit(doe.u1), self._unit(self.pool.hf.inputs[hi]),
                   self._free(self.pool.hf.inputs[hi]))
        lf_avail = self._free(self.pool.lf.inputs)
        lf_avail[lo[k1]] = False
        k2 = _snap(self._unit(doe.u2[n1:]), self._unit(self.pool.lf.inputs), lf_avail)
        lf_rows = np.concatenate([lo[k1], k2])
        hf = self.pool.hf.subset(hi[k1])
        lf = self.pool.lf.subset(lf_rows)
        return MultiFidelityDataset(hf, lf, tuple((i, i) for i in range(n1)),
                                    metadata=dict(self.pool.metadata))

    def describe(self):
        return {"case": self.label, "pool_hf": self.pool.hf.n, "pool_lf": self.pool.lf.n}


# ---------------------------------------------------------------- protocol

@dataclass(frozen=True)
class BenchConfig:
    """Grid, repetitions and seeds of a protocol run.

    ``n1 = m1 * d_u`` for each ``m1`` in ``n1_mult`` and ``n2 = m2 * n1``
    for each ``m2`` in ``n2_mult``.
    """

    n1_mult: tuple[int, ...] = (2, 5, 10)
    n2_mult: tuple[int, ...] = (1, 5, 10)
    reps: int = 10
    n_v: int = 1000
    ric: float = 0.999
    seed: int = 0
    restarts: int = 20

    def __post_init__(self):
        if not self.n1_mult or not self.n2_mult or min(self.n1_mult + self.n2_mult) < 1:
            raise ValueError("grid multipliers must be positive integers")
        if self.reps < 1 or self.n_v < 1:
            raise ValueError("reps and n_v must be >= 1")
        if not 0.0 < self.ric <= 1.0:
            raise ValueError(f"ric must lie in (0, 1], got {self.ric}")

    def grid(self, d_u: int) -> list[tuple[int, int]]:
        return [(a * d_u, a * d_u * b) for a in self.n1_mult for b in self.n2_mult]


@dataclass
class BenchResult:
    surrogate: str
    case: str
    n1: int
    n2: int
    rep: int
    e: float = math.nan
    e_norm: float = math.nan
    e_dr: float = math.nan
    e_ism: float = math.nan
    dz: float = math.nan
    train_seconds: float = math.nan
    e_dr_norm: float = math.nan
    e_ism_norm: float = math.nan
    dz_lf: float = math.nan
    error: str = ""

    @property
    def ok(self) -> bool:
        return not self.error and math.isfinite(self.e)

    @property
    def key(self) -> tuple[int, int, int]:
        return self.n1, self.n2, self.rep


def _seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1, np.uint64)[0])


def _validation_seed(cfg: BenchConfig) -> int:
    return _seed(cfg.seed, 1)


def evaluate(trained, u_v, y_v, lf, scale: float | None = None) -> dict:
    """Metrics of one trained surrogate on a validation set."""
    pred = trained.predict(u_v, lf if trained.spec.needs_lf else None)
    s = spread(y_v) if scale is None else scale
    e = rmse(pred, y_v)
    e_dr, e_ism = error_split(trained, u_v, y_v, lf)
    return {"e": e, "e_norm": e / s, "e_dr": e_dr, "e_ism": e_ism,
            "e_dr_norm": e_dr / s, "e_ism_norm": e_ism / s}


def _dims(trained):
    d = trained.dims
    main = next((d[k] for k in ("hf", "diff", "gpca") if k in d), math.nan)
    return float(main), float(d.get("lf", math.nan))


def _run_unit(args):
    cfg, case, names, n1, n2, rep, u_v, y_v, lf = args
    scale = spread(y_v)
    out = []
    try:
        ds = case.dataset(n1, n2, _seed(cfg.seed, 2, n1, n2, rep))
    except Exception as exc:  # noqa: BLE001 - the failure is recorded per row
        msg = f"dataset: {type(exc).__name__}: {exc}"
        return [BenchResult(n, case.name, n1, n2, rep, error=msg) for n in names]
    for name in names:
        row = BenchResult(name, case.name, n1, n2, rep)
        try:
            spec = surrogates.get_spec(name, cfg.ric)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                trained = surrogates.train(spec, ds, _seed(cfg.seed, 3, n1, n2, rep,
                                                            surrogates.NAMES.index(name)),
                                           cfg.restarts)
                metrics = evaluate(trained, u_v, y_v, lf, scale)
            for k, v in metrics.items():
                setattr(row, k, v)
            row.dz, row.dz_lf = _dims(trained)
            row.train_seconds = trained.train_seconds
        except Exception as exc:  # noqa: BLE001
            row.error = f"{type(exc).__name__}: {exc}".replace("\n", " ")
        out.append(row)
    return out


def run_protocol(cfg: BenchConfig, names: Sequence[str], case: Case | None = None,
                 jobs: int = 1, progress=None, validation=None) -> list[BenchResult]:
    """Train and score ``names`` over the grid and repetitions of ``cfg``.

    Failures of a single training or evaluation are recorded on their row
    and do not stop the run. ``validation`` may carry a precomputed
    ``(u_v, y_v, lf)`` triple.
    """
    names = list(names)
    for n in names:
        surrogates.get_spec(n)
    case = VffCase() if case is None else case
    u_v, y_v, lf = validation if validation is not None else case.validation(
        cfg.n_v, _validation_seed(cfg))
    if hasattr(case, "reserve"):
        case = case.reserve(u_v)
    units = [(cfg, case, names, n1, n2, rep, u_v, y_v, lf)
             for n1, n2 in cfg.grid(case.d_u) for rep in range(cfg.reps)]
    results: list[BenchResult] = []
    if jobs > 1 and len(units) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for rows in pool.map(_run_unit, units):
                results.extend(rows)
                if progress:
                    progress(rows)
    else:
        for unit in units:
            rows = _run_unit(unit)
            results.extend(rows)
            if progress:
                progress(rows)
    order = {n: i for i, n in enumerate(names)}
    results.sort(key=lambda r: (r.n1, r.n2, r.rep, order.get(r.surrogate, len(order))))
    return results


# ---------------------------------------------------------------- ranking

@dataclass
class Ranking:
    """Rank histograms and threshold counts over complete combinations.

    ``histogram[name][k]`` counts how often ``name`` ranked ``k + 1``;
    ``within[name][t]`` counts results with ``e <= t * best``.
    """

    order: list[str]
    histogram: dict[str, list[int]]
    within: dict[str, dict[float, int]]
    n_combinations: int
    skipped: list[tuple[int, int, int]] = field(default_factory=list)


def rank(results: Sequence[BenchResult], thresholds=THRESHOLDS) -> Ranking:
    """Rank surrogates per ``(n1, n2, rep)`` combination by ascending RMSE.

    Ties are broken by surrogate name. A combination missing a successful
    row for any surrogate is skipped with a warning.
    """
    names = sorted({r.surrogate for r in results})
    groups: dict[tuple, dict[str, BenchResult]] = {}
    for r in results:
        groups.setdefault(r.key, {})[r.surrogate] = r
    hist = {n: [0] * len(names) for n in names}
    within = {n: {t: 0 for t in thresholds} for n in names}
    skipped = []
    used = 0
    for key in sorted(groups):
        rows = groups[key]
        if set(rows) != set(names) or not all(rows[n].ok for n in names):
            skipped.append(key)
            continue
        used += 1
        ordered = sorted(names, key=lambda n: (rows[n].e, n))
        best = rows[ordered[0]].e
        for pos, n in enumerate(ordered):
            hist[n][pos] += 1
            for t in thresholds:
                within[n][t] += rows[n].e <= t * best
    if skipped:
        warnings.warn(f"{len(skipped)} incomplete combinations skipped in ranking", stacklevel=2)
    order = sorted(names, key=lambda n: tuple(-within[n][t] for t in thresholds) + (n,))
    return Ranking(order, hist, within, used, skipped)


# ---------------------------------------------------------------- files

class ResultsFileError(ValueError):
    pass


def _fmt(v) -> str:
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


def write_results(results: Sequence[BenchResult], path) -> Path:
    path = Path(path)
    cols = RESULT_COLUMNS + EXTRA_COLUMNS
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r in results:
            w.writerow([_fmt(getattr(r, c)) for c in cols])
    return path


def read_results(path) -> list[BenchResult]:
    path = Path(path)
    if not path.exists():
        raise ResultsFileError(f"{path}: no such results file")
    types = {f.name: f.type for f in fields(BenchResult)}
    out = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or any(c not in header for c in RESULT_COLUMNS):
            raise ResultsFileError(f"{path.name}: header must contain {', '.join(RESULT_COLUMNS)}")
        for lineno, line in enumerate(reader, start=2):
            if len(line) != len(header):
                raise ResultsFileError(
                    f"{path.name}: line {lineno} has {len(line)} fields, expected {len(header)}"
                )
            kw = {}
            for col, cell in zip(header, line):
                if col not in types:
                    continue
                t = types[col]
                try:
                    if t == "int":
                        kw[col] = int(cell)
                    elif t == "float":
                        kw[col] = math.nan if cell == "" else float(cell)
                    else:
                        kw[col] = cell
                except ValueError:
                    raise ResultsFileError(
                        f"{path.name}: line {lineno}, column {col!r}: bad value {cell!r}"
                    ) from None
            out.append(BenchResult(**kw))
    return out


def _stats(vals):
    v = np.array([x for x in vals if math.isfinite(x)])
    if v.size == 0:
        return {"median": math.nan, "mean": math.nan, "q1": math.nan, "q3": math.nan,
                "min": math.nan, "max": math.nan}
    return {"median": float(np.median(v)), "mean": float(v.mean()),
            "q1": float(np.percentile(v, 25)), "q3": float(np.percentile(v, 75)),
            "min": float(v.min()), "max": float(v.max())}


def summary_rows(results: Sequence[BenchResult], ranking: Ranking | None = None) -> list[dict]:
    """One row per surrogate: aggregate errors, rank histogram, threshold counts."""
    ranking = rank(results) if ranking is None else ranking
    rows = []
    for pos, name in enumerate(ranking.order, start=1):
        mine = [r for r in results if r.surrogate == name]
        ok = [r for r in mine if r.ok]
        row = {"order": pos, "surrogate": name, "rows": len(mine), "failed": len(mine) - len(ok)}
        for metric in ("e", "e_norm", "e_dr_norm", "e_ism_norm", "train_seconds"):
            s = _stats([getattr(r, metric) for r in ok])
            row[f"median_{metric}"] = s["median"]
            row[f"mean_{metric}"] = s["mean"]
        for t, c in ranking.within[name].items():
            row[f"within_{t:g}"] = c
        for k, c in enumerate(ranking.histogram[name], start=1):
            row[f"rank_{k}"] = c
        rows.append(row)
    return rows


def size_rows(results: Sequence[BenchResult]) -> list[dict]:
    """Boxplot-ready statistics of ``e_norm`` per surrogate and ``(n1, n2)``."""
    keys = sorted({(r.surrogate, r.n1, r.n2) for r in results})
    rows = []
    for name, n1, n2 in keys:
        vals = [r.e_norm for r in results if (r.surrogate, r.n1, r.n2) == (name, n1, n2) and r.ok]
        s = _stats(vals)
        rows.append({"surrogate": name, "n1": n1, "n2": n2, "count": len(vals),
                     **{f"{k}_e_norm": v for k, v in s.items()}})
    return rows


def write_rows(rows: list[dict], path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        if not rows:
            fh.write("")
            return path
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(v) for k, v in r.items()})
    return path

