import csv
import json

import numpy as np
import pytest

from ifaa.cli import build_parser, effective_config, main


def write_json(path, obj):
    path.write_text(json.dumps(obj))
    return path


@pytest.fixture
def scenario(tmp_path):
    return write_json(tmp_path / "sc.json", {"n_subjects": 10, "n_taxa": 6, "seed": 4})


def read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_simulate_minimal(tmp_path, scenario):
    out = tmp_path / "sim"
    assert main(["simulate", str(scenario), "--out", str(out)]) == 0
    counts, cov, truth = (read_csv(out / f) for f in ("counts.csv", "covariates.csv", "truth.csv"))
    assert len(counts) == len(cov) == 11
    assert [r[0] for r in counts[1:]] == [r[0] for r in cov[1:]]
    assert len(counts[0]) == 7 and len(truth) == 7
    assert json.loads((out / "manifest.json").read_text())["command"] == "simulate"


def test_simulate_byte_identical(tmp_path, scenario):
    for d in ("a", "b"):
        assert main(["simulate", str(scenario), "--out", str(tmp_path / d)]) == 0
    for f in ("counts.csv", "covariates.csv", "truth.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_simulate_rejects_bad_fraction(tmp_path, capsys):
    bad = write_json(tmp_path / "bad.json", {"c1": 0})
    assert main(["simulate", str(bad), "--out", str(tmp_path / "o")]) == 1
    assert "c1" in capsys.readouterr().err


def simulated(tmp_path, **kw):
    sc = write_json(tmp_path / "sc.json", {"n_subjects": 40, "n_taxa": 30, "seed": 2, **kw})
    out = tmp_path / "sim"
    assert main(["simulate", str(sc), "--out", str(out)]) == 0
    return out


def analyze(tmp_path, sim, name="ana", *extra):
    out = tmp_path / name
    code = main(["analyze", str(sim / "counts.csv"), str(sim / "covariates.csv"), "--x-cols", "group",
                 "--out", str(out), "--refs", "6", "--perms", "6", "--bootstrap", "30", "--alpha", "0.2",
                 "--seed", "1", *extra])
    return code, out


def test_analyze_outputs(tmp_path):
    code, out = analyze(tmp_path, simulated(tmp_path))
    assert code == 0
    for f in ("phase1.json", "heatmap.csv", "estimates.csv", "manifest.json"):
        assert (out / f).exists()
    man = json.loads((out / "manifest.json").read_text())
    assert man["config"]["r_refs"] == 6 and man["config"]["alpha"] == 0.2
    assert set(man["inputs"]) == {"counts", "covariates"}
    assert len(man["inputs"]["counts"]["sha256"]) == 64
    p1 = json.loads((out / "phase1.json").read_text())
    est = read_csv(out / "estimates.csv")
    assert {r[0] for r in est[1:]} == set(p1["set_a"])


def test_analyze_rerun_identical(tmp_path):
    sim = simulated(tmp_path)
    _, a = analyze(tmp_path, sim, "a", "--threads", "1")
    _, b = analyze(tmp_path, sim, "b", "--threads", "3")
    for f in ("phase1.json", "heatmap.csv", "estimates.csv"):
        assert (a / f).read_bytes() == (b / f).read_bytes()


def test_analyze_no_usable_taxa(tmp_path, capsys):
    (tmp_path / "c.csv").write_text("sample_id,a,b\ns1,1,0\ns2,0,1\ns3,0,2\n")
    (tmp_path / "x.csv").write_text("sample_id,g\ns1,0\ns2,1\ns3,1\n")
    code = main(["analyze", str(tmp_path / "c.csv"), str(tmp_path / "x.csv"), "--x-cols", "g",
                 "--out", str(tmp_path / "o")])
    assert code == 1
    assert "error" in capsys.readouterr().err


def test_analyze_missing_column_named(tmp_path, capsys):
    sim = simulated(tmp_path)
    code = main(["analyze", str(sim / "counts.csv"), str(sim / "covariates.csv"), "--x-cols", "dose",
                 "--out", str(tmp_path / "o")])
    assert code == 1 and "dose" in capsys.readouterr().err


def test_analyze_empty_set_b_exit_code(tmp_path):
    # every taxon strongly associated: with alpha near 1 the threshold floor of 1 captures all
    r = np.random.default_rng(0)
    n, T = 40, 5
    x = np.r_[np.zeros(n // 2), np.ones(n // 2)]
    eff = np.array([3.0, -3.0, 2.0, -2.0, 4.0])
    Y = np.round(np.exp(3 + np.outer(x, eff) + 0.05 * r.standard_normal((n, T))))
    with open(tmp_path / "c.csv", "w") as fh:
        fh.write("sample_id," + ",".join(f"t{k}" for k in range(T)) + "\n")
        for i in range(n):
            fh.write(f"s{i}," + ",".join(f"{v:g}" for v in Y[i]) + "\n")
    with open(tmp_path / "x.csv", "w") as fh:
        fh.write("sample_id,g\n" + "".join(f"s{i},{x[i]:g}\n" for i in range(n)))
    code = main(["analyze", str(tmp_path / "c.csv"), str(tmp_path / "x.csv"), "--x-cols", "g", "--out",
                 str(tmp_path / "o"), "--refs", "5", "--perms", "4", "--alpha", "0.9"])
    assert code == 2
    assert read_csv(tmp_path / "o" / "estimates.csv")[1:] == []


def test_benchmark_empty_dir(tmp_path):
    (tmp_path / "none").mkdir()
    assert main(["benchmark", str(tmp_path / "none"), "--out", str(tmp_path / "o")]) == 1


def test_benchmark_smoke(tmp_path):
    d = tmp_path / "sc"
    d.mkdir()
    write_json(d / "a.json", {"n_subjects": 30, "n_taxa": 30, "c1": "1/30", "c2": "1/30"})
    write_json(d / "b.json", {"n_subjects": 30, "n_taxa": 30, "c1": "1/6", "c2": "1/90"})
    out = tmp_path / "o"
    assert main(["benchmark", str(d), "--out", str(out), "--replicates", "2", "--refs", "6", "--perms", "6",
                 "--threads", "1"]) == 0
    rows = read_csv(out / "report.csv")
    assert len(rows) == 1 + 2 * 3 * 4
    assert {r[0] for r in rows[1:]} == {"a", "b"}


def test_config_precedence(tmp_path, monkeypatch):
    monkeypatch.setenv("IFAA_THREADS", "3")
    cfg_file = {"alpha": 0.3, "r_refs": 10, "threads": 2}
    args = build_parser().parse_args(["analyze", "c", "x", "--out", "o", "--alpha", "0.1"])
    cfg = effective_config(args, cfg_file)
    assert (cfg.alpha, cfg.r_refs, cfg.n_perms, cfg.threads) == (0.1, 10, 40, 2)
    cfg = effective_config(build_parser().parse_args(["analyze", "c", "x", "--out", "o"]), {})
    assert cfg.threads == 3 and cfg.alpha == 0.25


def test_bad_config_file(tmp_path, capsys):
    (tmp_path / "cfg.json").write_text("[1, 2]")
    sim = simulated(tmp_path)
    code = main(["analyze", str(sim / "counts.csv"), str(sim / "covariates.csv"), "--x-cols", "group",
                 "--out", str(tmp_path / "o"), "--config", str(tmp_path / "cfg.json")])
    assert code == 1 and "JSON object" in capsys.readouterr().err
