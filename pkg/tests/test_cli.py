import json

import pytest

from dropnet.cli import EXIT_FAIL, EXIT_IO, EXIT_OK, EXIT_USAGE, SEED_ENV, main

GRID = '{"n_trees": [10], "max_depth": [3], "min_samples_leaf": [1]}'
FAST = ["--grid", GRID, "--target-folds", "4", "--no-logit"]


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    args = ["--n-cohorts", "6", "--total-students", "300", "--seed", "1"]
    assert main(["generate", "--out", str(root / "clean"), *args]) == EXIT_OK
    assert main(["generate", "--out", str(root / "leaky"), *args, "--plant-leaks"]) == EXIT_OK
    return root


@pytest.fixture(autouse=True)
def no_seed_env(monkeypatch):
    monkeypatch.delenv(SEED_ENV, raising=False)


def _files(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir())}


def test_generate_is_byte_stable(data, tmp_path):
    assert main(["generate", "--out", str(tmp_path / "again"), "--n-cohorts", "6",
                 "--total-students", "300", "--seed", "1"]) == EXIT_OK
    assert _files(tmp_path / "again") == _files(data / "clean")


def test_generate_rejects_bad_config(tmp_path):
    assert main(["generate", "--out", str(tmp_path / "x"), "--n-cohorts", "0"]) == EXIT_USAGE


def test_argparse_errors_exit_64():
    with pytest.raises(SystemExit) as exc:
        main(["no-such-command"])
    assert exc.value.code == EXIT_USAGE
    with pytest.raises(SystemExit) as exc:
        main(["audit", "--vot", "three"])
    assert exc.value.code == EXIT_USAGE


def test_audit_exit_codes(data, tmp_path, capsys):
    assert main(["audit", "--data", str(data / "clean")]) == EXIT_OK
    assert "audit verdict: PASS" in capsys.readouterr().out
    assert main(["audit", "--data", str(data / "leaky"), "--out", str(tmp_path)]) == EXIT_FAIL
    doc = json.loads((tmp_path / "audit.json").read_text())
    assert doc["verdict"] == "fail"
    assert sorted({f["column"] for f in doc["findings"] if f["severity"] == "fatal"}) == \
        ["graduated_flag", "still_enrolled_after_vot"]


def test_audit_needs_exactly_one_source(data):
    assert main(["audit"]) == EXIT_USAGE
    assert main(["audit", "--data", str(data / "leaky"), "--matrix", "m.csv"]) == EXIT_USAGE


def test_audit_from_exported_matrix(data, tmp_path):
    assert main(["export-matrix", "--data", str(data / "leaky"), "--out", str(tmp_path / "m.csv")]) == EXIT_OK
    assert main(["audit", "--matrix", str(tmp_path / "m.csv"), "--out", str(tmp_path / "a")]) == EXIT_FAIL
    assert main(["audit", "--data", str(data / "leaky"), "--out", str(tmp_path / "b")]) == EXIT_FAIL
    assert (tmp_path / "a" / "audit.json").read_bytes() == (tmp_path / "b" / "audit.json").read_bytes()


def test_missing_input_exit_74(tmp_path):
    assert main(["audit", "--data", str(tmp_path / "nothing")]) == EXIT_IO
    assert main(["report", "--report", str(tmp_path / "nothing.json"), "--out", str(tmp_path)]) == EXIT_IO
    (tmp_path / "bad.json").write_text("{}")
    assert main(["report", "--report", str(tmp_path / "bad.json"), "--out", str(tmp_path)]) == EXIT_IO


def test_pipeline_stops_on_failed_audit(data, tmp_path):
    out = tmp_path / "o"
    assert main(["pipeline", "--data", str(data / "leaky"), "--out", str(out), *FAST]) == EXIT_FAIL
    assert (out / "audit.json").exists()
    assert not (out / "report.json").exists()


def test_pipeline_fix_strips_and_continues(data, tmp_path):
    out = tmp_path / "o"
    assert main(["pipeline", "--data", str(data / "leaky"), "--out", str(out), "--fix", *FAST]) == EXIT_OK
    assert json.loads((out / "audit_fixed.json").read_text())["verdict"] == "pass"
    report = json.loads((out / "report.json").read_text())
    names = {c for cols in report["columns"].values() for c, _ in cols}
    assert not names & {"graduated_flag", "still_enrolled_after_vot"}
    for name in ("model_comparison.csv", "importance_topk.csv", "net_effect.csv", "foldwise.csv", "summary.md"):
        assert (out / name).exists()


def test_skip_audit_hits_the_gate(data, tmp_path):
    args = ["pipeline", "--data", str(data / "leaky"), "--skip-audit", *FAST]
    assert main([*args, "--out", str(tmp_path / "a")]) == EXIT_FAIL
    assert main([*args, "--out", str(tmp_path / "b"), "--gate-off"]) == EXIT_OK
    assert main(["pipeline", "--data", str(data / "clean"), "--out", str(tmp_path / "c"), *FAST]) == EXIT_OK
    leaky = json.loads((tmp_path / "b" / "report.json").read_text())["summary"]
    clean = json.loads((tmp_path / "c" / "report.json").read_text())["summary"]
    for name in leaky:
        assert leaky[name]["metrics"]["f1"]["mean"] > clean[name]["metrics"]["f1"]["mean"] + 0.1


def test_pipeline_reruns_are_byte_identical(data, tmp_path):
    for name in ("a", "b"):
        assert main(["pipeline", "--data", str(data / "clean"), "--out", str(tmp_path / name), *FAST]) == EXIT_OK
    assert _files(tmp_path / "a") == _files(tmp_path / "b")


def test_ablate_then_report_matches_pipeline(data, tmp_path):
    assert main(["pipeline", "--data", str(data / "clean"), "--out", str(tmp_path / "p"), *FAST]) == EXIT_OK
    assert main(["ablate", "--data", str(data / "clean"), "--out", str(tmp_path / "r.json"), *FAST]) == EXIT_OK
    assert (tmp_path / "r.json").read_bytes() == (tmp_path / "p" / "report.json").read_bytes()
    assert main(["report", "--report", str(tmp_path / "r.json"), "--out", str(tmp_path / "t")]) == EXIT_OK
    assert (tmp_path / "t" / "net_effect.csv").read_bytes() == (tmp_path / "p" / "net_effect.csv").read_bytes()


def test_seed_precedence(data, tmp_path, monkeypatch):
    def seed(*extra):
        out = tmp_path / "r.json"
        argv = ["ablate", "--data", str(data / "clean"), "--out", str(out), *FAST, *extra]
        assert main(argv) == EXIT_OK
        return json.loads(out.read_text())["seed"]

    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"seed": 4}))
    assert seed() == 0
    assert seed("--config", str(cfg)) == 4
    monkeypatch.setenv(SEED_ENV, "5")
    assert seed() == 5
    assert seed("--config", str(cfg)) == 5
    assert seed("--seed", "9") == 9
    monkeypatch.setenv(SEED_ENV, "five")
    assert main(["ablate", "--data", str(data / "clean"), "--out", str(tmp_path / "x.json")]) == EXIT_USAGE


def test_config_file(data, tmp_path):
    out = tmp_path / "r.json"
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"target-folds": 2, "grid": json.loads(GRID), "no_logit": True}))
    assert main(["ablate", "--data", str(data / "clean"), "--out", str(out), "--config", str(cfg)]) == EXIT_OK
    report = json.loads(out.read_text())
    assert len(report["plan"]["folds"]) == 2
    assert all(r["logit"] is None for r in report["results"])

    cfg.write_text(json.dumps({"target_folds": 2, "colour": "blue"}))
    assert main(["ablate", "--data", str(data / "clean"), "--out", str(out), "--config", str(cfg)]) == EXIT_USAGE
    cfg.write_text("{not json")
    assert main(["ablate", "--data", str(data / "clean"), "--out", str(out), "--config", str(cfg)]) == EXIT_USAGE
    assert main(["ablate", "--data", str(data / "clean"), "--out", str(out),
                 "--config", str(tmp_path / "absent.json")]) == EXIT_IO


def test_bad_grid_is_usage_error(data, tmp_path):
    out = str(tmp_path / "r.json")
    assert main(["ablate", "--data", str(data / "clean"), "--out", out, "--grid", "[1, 2]"]) == EXIT_USAGE
    assert main(["ablate", "--data", str(data / "clean"), "--out", out,
                 "--grid", '{"n_trees": [0]}']) == EXIT_USAGE
    assert main(["ablate", "--data", str(data / "clean"), "--out", out, "--min-test", "100000"]) == EXIT_USAGE


def test_graph_and_net_stats(data, tmp_path, capsys):
    assert main(["graph-stats", "--data", str(data / "clean")]) == EXIT_OK
    g = json.loads(capsys.readouterr().out)
    assert g["n_nodes"] == 40 and g["bottlenecks"]
    edges = tmp_path / "edges.csv"
    assert main(["net-stats", "--data", str(data / "clean"), "--edges", str(edges)]) == EXIT_OK
    n = json.loads(capsys.readouterr().out)
    assert len(n) == 6 and all(c["n_students"] > 0 for c in n.values())
    assert edges.read_text().splitlines()[0] == "cohort_year,student_i,student_j,weight"
