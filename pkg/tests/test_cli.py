import json
import os
import subprocess
import sys

import numpy as np
import pytest

from co2coreset import cli
from co2coreset.data import PointCloud, load_csv


@pytest.fixture
def points_csv(tmp_path):
    X = np.random.default_rng(0).normal(size=(100, 2))
    path = tmp_path / "points.csv"
    np.savetxt(path, X, delimiter=",")
    return path


def run_cli(*args, env=None):
    full_env = dict(os.environ, **(env or {}))
    return subprocess.run([sys.executable, "-m", "co2coreset.cli", *map(str, args)],
                          capture_output=True, text=True, env=full_env)


def test_compress_round_trip(points_csv, tmp_path):
    out = tmp_path / "cs"
    assert cli.main(["compress", str(points_csv), "--epsilon", "1", "--m", "10",
                     "--out", str(out), "--no-timestamp"]) == 0
    doc = json.loads((tmp_path / "cs.json").read_text())
    assert set(doc) >= {"version", "method", "indices", "weights", "config", "seed"}
    assert doc["version"] == 1
    assert len(doc["indices"]) <= 10
    assert sum(doc["weights"]) == pytest.approx(1.0, abs=1e-10)
    cs = cli.load_coreset(tmp_path / "cs.json", load_csv(points_csv))
    rows = (tmp_path / "cs.csv").read_text().splitlines()
    assert rows[0] == "index,weight"
    assert [int(r.split(",")[0]) for r in rows[1:]] == list(cs.indices)
    np.testing.assert_array_equal([float(r.split(",")[1]) for r in rows[1:]], cs.weights)


def test_reload_rejects_foreign_parent(points_csv, tmp_path):
    out = tmp_path / "cs"
    cli.main(["compress", str(points_csv), "--epsilon", "1", "--m", "10", "--out", str(out)])
    with pytest.raises(ValueError):
        cli.load_coreset(tmp_path / "cs.json", PointCloud(np.zeros((5, 2))))


def test_tau_mode(points_csv, tmp_path):
    out = tmp_path / "cs"
    assert cli.main(["compress", str(points_csv), "--epsilon", "1", "--beta", "0.2",
                     "--out", str(out), "--no-timestamp"]) == 0
    doc = json.loads((tmp_path / "cs.json").read_text())
    assert doc["diagnostics"]["quad_error"] <= doc["diagnostics"]["tau"]


def test_m_and_tau_are_exclusive(points_csv, tmp_path, capsys):
    with pytest.raises(SystemExit) as err:
        cli.main(["compress", str(points_csv), "--epsilon", "1", "--m", "5", "--tau", "0.1",
                  "--out", str(tmp_path / "x")])
    assert err.value.code == 2
    assert "usage" in capsys.readouterr().err


def test_missing_epsilon_is_usage_error(points_csv, tmp_path):
    with pytest.raises(SystemExit) as err:
        cli.main(["compress", str(points_csv), "--m", "5", "--out", str(tmp_path / "x")])
    assert err.value.code == 2


def test_bad_input_file_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("1,2\n3,x\n")
    code = cli.main(["compress", str(bad), "--epsilon", "1", "--m", "1", "--out", str(tmp_path / "o")])
    assert code == 2
    assert "non-numeric" in capsys.readouterr().err


def test_numerical_failure_exit_1(points_csv, tmp_path, capsys):
    code = cli.main(["compress", str(points_csv), "--epsilon", "0.01", "--m", "5",
                     "--max-iter", "2", "--out", str(tmp_path / "o")])
    assert code == 1
    assert "numerical failure" in capsys.readouterr().err


def test_byte_identical_across_runs_and_threads(points_csv, tmp_path):
    outputs = []
    for i, threads in enumerate(["1", "4", "1"]):
        out = tmp_path / f"run{i}"
        res = run_cli("compress", points_csv, "--epsilon", "1", "--m", "10", "--seed", "7",
                      "--out", out, "--no-timestamp", env={"CO2_THREADS": threads})
        assert res.returncode == 0, res.stderr
        outputs.append(((tmp_path / f"run{i}.json").read_bytes(),
                        (tmp_path / f"run{i}.csv").read_bytes()))
    assert outputs[0] == outputs[1] == outputs[2]


def test_timestamp_present_by_default(points_csv, tmp_path):
    cli.main(["compress", str(points_csv), "--epsilon", "1", "--m", "10", "--out", str(tmp_path / "t")])
    assert "timestamp" in json.loads((tmp_path / "t.json").read_text())


def test_sinkhorn_subcommand(tmp_path, capsys):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    a.write_text("0,1\n")
    b.write_text("2,-1\n")
    assert cli.main(["sinkhorn", str(a), str(b), "--epsilon", "0.5"]) == 0
    assert float(capsys.readouterr().out) == pytest.approx(8.0, abs=1e-8)


def test_diag_single_point(tmp_path):
    p = tmp_path / "one.csv"
    p.write_text("0.5,0.5\n")
    doc = cli.diagnostics(load_csv(p), 1.0)
    assert doc["plan_spectrum"] == pytest.approx([1.0])
    assert doc["suggested_m"] == 1


def test_diag_flat_spectrum_needs_every_point():
    # far-apart points make K/n close to I/n
    cloud = PointCloud(100.0 * np.arange(8.0)[:, None])
    assert cli.diagnostics(cloud, 1.0)["suggested_m"] == 8


def test_diag_sublinear_growth():
    rng = np.random.default_rng(0)
    small = cli.diagnostics(PointCloud(rng.normal(size=(250, 1))), 1.0)["suggested_m"]
    large = cli.diagnostics(PointCloud(rng.normal(size=(500, 1))), 1.0)["suggested_m"]
    assert small <= large < 2 * small


def test_diag_writes_json(tmp_path, capsys):
    p = tmp_path / "pts.csv"
    np.savetxt(p, np.random.default_rng(1).normal(size=(30, 2)), delimiter=",")
    assert cli.main(["diag", str(p), "--epsilon", "1", "--out", str(tmp_path / "d"),
                     "--no-timestamp"]) == 0
    doc = json.loads((tmp_path / "d.json").read_text())
    assert len(doc["tail_sums"]) == 31
    assert "suggested m" in capsys.readouterr().out


def test_bench_recovery_schema(tmp_path):
    out = tmp_path / "rec"
    assert cli.main(["bench", "recovery", "--n", "120", "--d", "2", "--m", "4,8", "--trials", "2",
                     "--out", str(out), "--no-timestamp"]) == 0
    lines = (tmp_path / "rec.csv").read_text().splitlines()
    header = lines[0].split(",")
    assert {"method", "m", "trial", "divergence"} <= set(header)
    methods = {row.split(",")[header.index("method")] for row in lines[1:]}
    assert {"co2", "random"} <= methods


def test_bench_baselines_has_herding(tmp_path):
    out = tmp_path / "base"
    assert cli.main(["bench", "baselines", "--n", "100", "--d", "3", "--m", "5", "--trials", "1",
                     "--methods", "co2,herding,random", "--out", str(out), "--no-timestamp"]) == 0
    doc = json.loads((tmp_path / "base.json").read_text())
    assert {r["method"] for r in doc["records"]} == {"co2", "herding", "random"}


def test_bench_rejects_unknown_method(tmp_path):
    with pytest.raises(SystemExit) as err:
        cli.main(["bench", "baselines", "--methods", "co2,halton", "--out", str(tmp_path / "x")])
    assert err.value.code == 2


def test_bench_deterministic_across_threads(tmp_path):
    texts = []
    for threads in ("1", "3"):
        out = tmp_path / f"mix{threads}"
        res = run_cli("bench", "mixture", "--n", "150", "--trials", "3", "--seed", "4",
                      "--out", out, "--no-timestamp", env={"CO2_THREADS": threads})
        assert res.returncode == 0, res.stderr
        texts.append((tmp_path / f"mix{threads}.csv").read_text())
    # wall times differ; everything else must match
    strip = [[",".join(row.split(",")[:-1]) for row in t.splitlines()] for t in texts]
    assert strip[0] == strip[1]
