import math
import warnings

import numpy as np
import pytest

from mffield import bench, doe, sim
from mffield.bench import BenchConfig, BenchResult


def test_rmse_hand_values():
    pred = np.array([[1.0, 2.0], [0.0, 0.0]])
    truth = np.array([[1.0, 0.0], [3.0, 4.0]])
    # row errors 2 and 5 -> sqrt((4 + 25) / 2)
    assert bench.rmse(pred, truth) == pytest.approx(math.sqrt(14.5))
    assert bench.spread([[0.0, 0.0], [2.0, 0.0]]) == pytest.approx(1.0)
    with pytest.raises(ValueError, match="shape"):
        bench.rmse(np.zeros((2, 2)), np.zeros((2, 3)))


def test_normed_error_of_mean_predictor_is_one(rng):
    y = rng.normal(size=(50, 7))
    e = bench.rmse(np.broadcast_to(y.mean(0), y.shape), y)
    assert bench.normed_rmse(e, y) == pytest.approx(1.0)
    with pytest.raises(ValueError, match="zero variance"):
        bench.normed_rmse(1.0, np.ones((3, 2)))


def _rows(table):
    out = []
    for rep, errs in enumerate(table):
        for name, e in errs.items():
            out.append(BenchResult(name, "c", 4, 4, rep, e=e, e_norm=e))
    return out


def test_rank_hand_example():
    res = _rows([{"A": 1.0, "B": 1.04, "C": 3.0},
                 {"A": 2.0, "B": 1.0, "C": 1.2}])
    r = bench.rank(res)
    assert r.n_combinations == 2
    assert r.histogram == {"A": [1, 0, 1], "B": [1, 1, 0], "C": [0, 1, 1]}
    assert r.within["A"] == {1.05: 1, 1.25: 1, 2.0: 2}
    assert r.within["B"] == {1.05: 2, 1.25: 2, 2.0: 2}
    assert r.within["C"] == {1.05: 0, 1.25: 1, 2.0: 1}
    assert r.order == ["B", "A", "C"]


def test_rank_ties_and_incomplete():
    res = _rows([{"B": 1.0, "A": 1.0}, {"A": 1.0}])
    with pytest.warns(UserWarning, match="1 incomplete"):
        r = bench.rank(res)
    assert r.histogram == {"A": [1, 0], "B": [0, 1]}
    assert r.skipped == [(4, 4, 1)]


def test_grid_and_config_validation():
    assert BenchConfig().grid(4) == [(8, 8), (8, 40), (8, 80), (20, 20), (20, 100), (20, 200),
                                     (40, 40), (40, 200), (40, 400)]
    with pytest.raises(ValueError):
        BenchConfig(reps=0)
    with pytest.raises(ValueError):
        BenchConfig(ric=0.0)


def test_results_file_round_trip(tmp_path):
    rows = [BenchResult("S-HFPCA-GPR", "vff", 8, 8, 0, 0.1, 0.01, 0.05, 0.05, 3.0, 1.5),
            BenchResult("M-GPCA", "vff", 8, 8, 0, error="LinAlgError: boom, twice")]
    path = bench.write_results(rows, tmp_path / "results.csv")
    back = bench.read_results(path)
    assert back[0] == rows[0]
    assert back[1].error == rows[1].error and not back[1].ok and math.isnan(back[1].e)


def test_results_file_errors(tmp_path):
    p = tmp_path / "r.csv"
    p.write_text("a,b\n1,2\n")
    with pytest.raises(bench.ResultsFileError, match="header"):
        bench.read_results(p)
    bench.write_results([BenchResult("A", "c", 1, 1, 0, 1.0, 1.0)], p)
    p.write_text(p.read_text().replace(",1,1,0,", ",x,1,0,"))
    with pytest.raises(bench.ResultsFileError, match="line 2"):
        bench.read_results(p)
    with pytest.raises(bench.ResultsFileError, match="no such"):
        bench.read_results(tmp_path / "missing.csv")


def test_summary_and_size_rows():
    res = _rows([{"A": 1.0, "B": 2.0}, {"A": 3.0, "B": 2.0}])
    rows = bench.summary_rows(res)
    assert [r["surrogate"] for r in rows] == ["A", "B"]
    assert rows[0]["median_e"] == 2.0 and rows[0]["rank_1"] == 1
    size = bench.size_rows(res)
    assert size[0]["count"] == 2 and size[0]["q1_e_norm"] == 1.5


def test_seed_derivation_is_stable():
    assert bench._seed(0, 2, 8, 8, 0) == bench._seed(0, 2, 8, 8, 0)
    assert bench._seed(0, 2, 8, 8, 0) != bench._seed(0, 2, 8, 8, 1)


TINY = BenchConfig(n1_mult=(1,), n2_mult=(1, 2), reps=1, n_v=15, restarts=1)
NAMES = ["S-HFPCA-GPR", "C-DiffPCA-GPR", "F-SFPCA-AR1"]


@pytest.fixture(scope="module")
def tiny_run():
    return bench.run_protocol(TINY, NAMES)


def test_protocol_rows_and_metrics(tiny_run):
    assert len(tiny_run) == 6
    assert [(r.n1, r.n2) for r in tiny_run[::3]] == [(4, 4), (4, 8)]
    for r in tiny_run:
        assert r.ok, r.error
        assert r.e_norm > 0 and r.train_seconds >= 0
        assert r.e**2 == pytest.approx(r.e_dr**2 + r.e_ism**2, rel=1e-9)


def test_protocol_deterministic_and_parallel_equal(tiny_run):
    again = bench.run_protocol(TINY, NAMES, jobs=2)
    assert [(r.surrogate, r.e) for r in again] == [(r.surrogate, r.e) for r in tiny_run]


def test_protocol_records_failures():
    class Broken(bench.VffCase):
        def dataset(self, n1, n2, seed):
            raise RuntimeError("solver crashed")

    res = bench.run_protocol(BenchConfig(n1_mult=(1,), n2_mult=(1,), reps=1, n_v=5, restarts=1),
                             ["S-HFPCA-GPR"], Broken())
    assert len(res) == 1 and "solver crashed" in res[0].error


def test_protocol_rejects_unknown_name():
    with pytest.raises(ValueError, match="unknown"):
        bench.run_protocol(TINY, ["nope"])


def test_pool_case_uses_only_pool_rows():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        pool = sim.generate_case(doe.nested_lhs(40, 60, sim.DOMAIN, 2))
    case = bench.PoolCase(pool, "pool")
    u_v, y_v, lf = case.validation(10, 0)
    case = case.reserve(u_v)
    ds = case.dataset(4, 8, 1)
    assert ds.is_nested and ds.hf.n == 4 and ds.lf.n == 8
    pool_rows = {r.tobytes() for r in pool.lf.inputs}
    assert all(r.tobytes() in pool_rows for r in ds.lf.inputs)
    assert not {r.tobytes() for r in ds.hf.inputs} & {r.tobytes() for r in u_v}
    assert np.array_equal(lf(u_v), sim.lf_fields(u_v))
    with pytest.raises(ValueError, match="exceeds"):
        case.validation(41, 0)


def test_metric_trivial_values(rng):
    y = rng.normal(size=(4, 3))
    assert bench.rmse(y, y) == 0.0
    assert bench.rmse([[3.0, 4.0]], [[0.0, 0.0]]) == 5.0
    assert bench.normed_rmse(bench.rmse(y, y), y) == 0.0


def test_rmse_matches_double_loop(rng):
    p, t = rng.normal(size=(10, 101)), rng.normal(size=(10, 101))
    total = 0.0
    for i in range(10):
        sq = 0.0
        for j in range(101):
            sq += (p[i, j] - t[i, j]) ** 2
        total += sq
    assert bench.rmse(p, t) == pytest.approx(math.sqrt(total / 10), rel=1e-12)


def test_split_trivial_cases(rng):
    from mffield import dr
    y = rng.normal(size=(12, 6))
    full = dr.fit_pca(y, 1.0)
    assert bench.dr_error(full, y) == pytest.approx(0.0, abs=1e-12)
    part = dr.fit_pca(y, 0.8)
    assert bench.ism_error(part, part.transform(y), y) == 0.0


def test_rank_dominant_and_ties():
    r = bench.rank(_rows([{"A": 1.0, "B": 2.0}] * 4))
    assert r.histogram["A"][0] == r.n_combinations == 4
    r = bench.rank(_rows([{"B": 1.5, "A": 1.5}]))
    assert r.histogram == {"A": [1, 0], "B": [0, 1]}
    assert r.within["A"][1.05] == r.within["B"][1.05] == 1


class _LineCase:
    """One-input case with cheap analytic fields, for protocol bookkeeping tests."""

    name, d_u = "line", 1
    t = np.linspace(0, 1, 11)

    def _f(self, u, hf):
        return np.sin(np.outer(1 + u[:, 0], self.t) * 3) + (0.1 * u if hf else 0)

    def validation(self, n_v, seed):
        u = doe.lhs(n_v, doe.BoxDomain.unit(1), seed)
        return u, self._f(u, True), lambda q: self._f(np.atleast_2d(q), False)

    def dataset(self, n1, n2, seed):
        from mffield.data import MultiFidelityDataset, SnapshotSet
        d = doe.nested_lhs(n1, n2, doe.BoxDomain.unit(1), seed)
        return MultiFidelityDataset(SnapshotSet(d.u1, self._f(d.u1, True), self.t, 1),
                                    SnapshotSet(d.u2, self._f(d.u2, False), self.t, 2))

    def describe(self):
        return {"case": "line"}


def test_full_grid_row_count_and_fault_isolation(monkeypatch):
    from mffield import surrogates
    real = surrogates.train
    calls = {"n": 0}

    def flaky(spec, ds, seed=None, restarts=20):
        calls["n"] += 1
        if calls["n"] == 17:
            raise np.linalg.LinAlgError("injected")
        return real(spec, ds, seed, restarts)

    monkeypatch.setattr(surrogates, "train", flaky)
    res = bench.run_protocol(BenchConfig(reps=10, n_v=20, restarts=1), ["S-HFPCA-GPR"], _LineCase())
    assert len(res) == 90
    assert sum(r.ok for r in res) == 89
    assert [r.error for r in res if not r.ok] == ["LinAlgError: injected"]
