import hashlib
import json
import subprocess
import sys

import pytest

from mffield import cli
from mffield.bench import read_results
from mffield.data import load_dataset


def test_generate_writes_dataset(tmp_path, capsys):
    out = tmp_path / "ds"
    assert cli.main(["generate", "--n1", "3", "--n2", "6", "--seed", "1", "--out", str(out),
                     "--variant", "ground"]) == 0
    ds = load_dataset(out)
    assert ds.hf.n == 3 and ds.lf.n == 6 and ds.is_nested
    assert ds.metadata["run"]["config"]["variant"] == "ground"
    assert "wrote" in capsys.readouterr().out


def test_generate_usage_errors(tmp_path, capsys):
    assert cli.main(["generate", "--n1", "5", "--n2", "2", "--out", str(tmp_path)]) == 1
    assert "n1" in capsys.readouterr().err
    with pytest.raises(SystemExit) as exc:
        cli.main(["generate", "--n1", "2"])
    assert exc.value.code == 1


def test_bench_unknown_surrogate_exits_1(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["bench", "--surrogates", "F-KPCA-AR1", "--out", str(tmp_path)])
    assert exc.value.code == 1
    assert "unknown surrogate" in capsys.readouterr().err


@pytest.fixture(scope="module")
def bench_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("bench")
    code = cli.main(["bench", "--surrogates", "S-HFPCA-GPR,F-LFPCA-AR1", "--n1-mult", "1",
                     "--n2-mult", "2", "--reps", "2", "--n-v", "10", "--restarts", "1",
                     "--jobs", "1", "--out", str(out), "--quiet"])
    assert code == 0
    return out


def test_bench_outputs(bench_dir):
    for f in ("results.csv", "summary.csv", "summary_by_size.csv", "manifest.json"):
        assert (bench_dir / f).exists()
    m = json.loads((bench_dir / "manifest.json").read_text())
    assert m["config"]["grid"] == [[4, 8]] and m["rows"] == 4 and m["failed_rows"] == 0
    header = (bench_dir / "results.csv").read_text().splitlines()[0].split(",")
    assert header[:11] == ["surrogate", "case", "n1", "n2", "rep", "e", "e_norm", "e_dr",
                           "e_ism", "dz", "train_seconds"]


@pytest.mark.parametrize("fmt", ["text", "csv", "json"])
def test_report_formats(bench_dir, tmp_path, capsys, fmt):
    assert cli.main(["report", str(bench_dir), "--format", fmt, "--out", str(tmp_path)]) == 0
    text = capsys.readouterr().out
    assert "S-HFPCA-GPR" in text
    if fmt == "json":
        assert json.loads(text)["combinations"] == 2
    assert (tmp_path / "summary.csv").exists()


def test_report_malformed_file(tmp_path, capsys):
    bad = tmp_path / "results.csv"
    bad.write_text("not,a,results,file\n")
    assert cli.main(["report", str(bad)]) == 1
    assert "header" in capsys.readouterr().err
    assert cli.main(["report", str(tmp_path / "none.csv")]) == 1


def test_bench_on_ingested_dataset(tmp_path):
    pool = tmp_path / "pool"
    assert cli.main(["generate", "--n1", "30", "--n2", "40", "--out", str(pool)]) == 0
    out = tmp_path / "out"
    assert cli.main(["bench", "--dataset", str(pool), "--surrogates", "M-GPCA",
                     "--n1-mult", "1", "--n2-mult", "1", "--reps", "1", "--n-v", "8",
                     "--restarts", "1", "--jobs", "1", "--out", str(out), "--quiet"]) == 0
    assert json.loads((out / "manifest.json").read_text())["config"]["case"] == "pool"


def test_bench_all_rows_failed_exit_3(tmp_path):
    pool = tmp_path / "pool"
    cli.main(["generate", "--n1", "12", "--n2", "12", "--out", str(pool)])
    # every HF row with both fidelities is needed for validation, so datasets cannot be drawn
    code = cli.main(["bench", "--dataset", str(pool), "--surrogates", "S-HFPCA-GPR",
                     "--n1-mult", "1", "--n2-mult", "1", "--reps", "1", "--n-v", "12",
                     "--restarts", "1", "--jobs", "1", "--out", str(tmp_path / "o"), "--quiet"])
    assert code == 3


def test_console_entry_point():
    r = subprocess.run([sys.executable, "-m", "mffield.cli", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.startswith("mffield ")


def _digest(path):
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(path.iterdir()) if p.suffix == ".csv"}


def test_generate_same_seed_identical_files(tmp_path):
    for d in ("a", "b"):
        assert cli.main(["generate", "--n1", "8", "--n2", "8", "--seed", "4", "--out",
                         str(tmp_path / d)]) == 0
    assert _digest(tmp_path / "a") == _digest(tmp_path / "b")


def test_generate_ground_variant_is_clipped(tmp_path):
    cli.main(["generate", "--n1", "8", "--n2", "16", "--variant", "ground", "--out", str(tmp_path)])
    ds = load_dataset(tmp_path)
    assert ds.lf.outputs.min() == 0.0 and ds.hf.outputs.min() >= 0.0


def test_surrogates_all_selects_thirteen():
    args = cli.build_parser().parse_args(["bench", "--surrogates", "all", "--out", "x"])
    assert len(args.surrogates) == 13


def test_ric_changes_latent_dimension(tmp_path):
    dz = {}
    for ric in ("0.999", "0.999999"):
        out = tmp_path / ric
        cli.main(["bench", "--surrogates", "S-HFPCA-GPR", "--n1-mult", "5", "--n2-mult", "1",
                  "--reps", "1", "--n-v", "5", "--restarts", "1", "--jobs", "1", "--ric", ric,
                  "--out", str(out), "--quiet"])
        dz[ric] = read_results(out / "results.csv")[0].dz
    assert dz["0.999999"] > dz["0.999"]
