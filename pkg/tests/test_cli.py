import hashlib
import json
from pathlib import Path

import pytest

from d3ood import cli
from d3ood.errors import NumericalError


def run(args):
    return cli.main(args)


def tree_checksums(root: Path) -> dict:
    return {
        str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
        for p in sorted(root.rglob("*"))
        if p.is_file()
    }


@pytest.fixture(scope="module")
def small_benchmark(tmp_path_factory):
    out = tmp_path_factory.mktemp("bench") / "toy"
    code = run(
        [
            "gen-toy",
            "--out",
            str(out),
            "--seed",
            "0",
            "--n",
            "24",
            "--n-train",
            "200",
            "--n-bank",
            "60",
        ]
    )
    assert code == 0
    return out


def test_gen_toy_writes_all_roles(small_benchmark):
    manifest = json.loads((small_benchmark / "manifest.json").read_text())
    roles = {d["role"] for d in manifest["datasets"]}
    assert roles == {"InD-calibration", "InD-test", "OoD-test", "feature-bank"}
    assert (small_benchmark / "run_config.json").exists()
    assert (small_benchmark / "classifier.json").exists()


def test_gen_toy_same_seed_identical_checksums(small_benchmark, tmp_path):
    other = tmp_path / "again"
    assert (
        run(
            [
                "gen-toy",
                "--out",
                str(other),
                "--seed",
                "0",
                "--n",
                "24",
                "--n-train",
                "200",
                "--n-bank",
                "60",
            ]
        )
        == 0
    )
    a = tree_checksums(small_benchmark)
    b = tree_checksums(other)
    # run_config echoes the differing --out path; everything else matches
    a.pop("run_config.json")
    b.pop("run_config.json")
    assert a == b


def test_score_produces_one_file_per_detector(small_benchmark, tmp_path):
    out = tmp_path / "scores"
    code = run(
        [
            "score",
            "--benchmark",
            str(small_benchmark),
            "--split",
            "ind-test",
            "--detectors",
            "msp,energy,mls,d3",
            "--out",
            str(out),
        ]
    )
    assert code == 0
    names = sorted(p.name for p in out.glob("scores_*.csv"))
    assert names == [
        "scores_ind-test_d3.csv",
        "scores_ind-test_energy.csv",
        "scores_ind-test_mls.csv",
        "scores_ind-test_msp.csv",
    ]
    lines = (out / "scores_ind-test_msp.csv").read_text().splitlines()
    assert lines[0] == "id,detector,score,flags"
    assert len(lines) == 25  # header + 24 records, input order preserved
    assert [ln.split(",")[0] for ln in lines[1:]] == [f"ind-test-{i:05d}" for i in range(24)]


def test_score_d3_requires_calibration_role(small_benchmark, tmp_path, capsys):
    # a benchmark stripped of its InD-calibration datasets cannot score d3
    crippled = tmp_path / "crippled"
    crippled.mkdir()
    for p in small_benchmark.iterdir():
        if "ind-cal" not in p.name:
            (crippled / p.name).write_bytes(p.read_bytes())
    manifest = json.loads((crippled / "manifest.json").read_text())
    manifest["splits"] = [s for s in manifest["splits"] if s != "ind-cal"]
    manifest["datasets"] = [d for d in manifest["datasets"] if not d["name"].startswith("ind-cal")]
    manifest["labels"].pop("ind-cal")
    (crippled / "manifest.json").write_text(json.dumps(manifest))
    code = run(
        [
            "score",
            "--benchmark",
            str(crippled),
            "--split",
            "ind-test",
            "--detectors",
            "d3",
            "--out",
            str(tmp_path / "s"),
        ]
    )
    assert code == 2
    assert "InD-calibration" in capsys.readouterr().err


def test_full_pipeline_and_eval(small_benchmark, tmp_path):
    scores_ind = tmp_path / "si"
    scores_ood = tmp_path / "so"
    for split, out in (("ind-test", scores_ind), ("ood-test", scores_ood)):
        assert (
            run(
                [
                    "score",
                    "--benchmark",
                    str(small_benchmark),
                    "--split",
                    split,
                    "--detectors",
                    "msp,d3,knn,vim,energy,gradnorm,odin,mls",
                    "--out",
                    str(out),
                ]
            )
            == 0
        )
    eval_out = tmp_path / "eval"
    ind_files = ",".join(str(p) for p in sorted(scores_ind.glob("scores_*.csv")))
    ood_files = ",".join(str(p) for p in sorted(scores_ood.glob("scores_*.csv")))
    assert run(["eval", "--ind", ind_files, "--ood", ood_files, "--out", str(eval_out)]) == 0
    reports = json.loads((eval_out / "eval_report.json").read_text())
    assert {r["detector"] for r in reports} == {
        "msp",
        "d3",
        "knn",
        "vim",
        "energy",
        "gradnorm",
        "odin",
        "mls",
    }
    table_out = tmp_path / "table"
    assert run(["report", "--eval", str(eval_out / "eval_report.json"), "--out", str(table_out)]) == 0
    table = (table_out / "table.csv").read_text().splitlines()
    assert table[0] == "detector,ood-test_fpr,ood-test_auroc,avg_fpr,avg_auroc"
    assert len(table) == 9


def test_eval_fixtures(tmp_path):
    ind = tmp_path / "ind.csv"
    ood = tmp_path / "ood.csv"
    eval_out = tmp_path / "e1"
    ind.write_text("id,detector,score,flags\na,msp,2.0,\nb,msp,3.0,\n")
    ood.write_text("id,detector,score,flags\nc,msp,0.0,\nd,msp,1.0,\n")
    assert run(["eval", "--ind", str(ind), "--ood", str(ood), "--out", str(eval_out)]) == 0
    (report,) = json.loads((eval_out / "eval_report.json").read_text())
    assert report["fpr_at_95tpr"] == 0.0 and report["auroc"] == 1.0

    same = tmp_path / "same.csv"
    same.write_text("id,detector,score,flags\na,msp,1.0,\nb,msp,2.0,\n")
    eval_out2 = tmp_path / "e2"
    assert run(["eval", "--ind", str(same), "--ood", str(same), "--out", str(eval_out2)]) == 0
    (report,) = json.loads((eval_out2 / "eval_report.json").read_text())
    assert report["auroc"] == 0.5


def test_eval_detector_mismatch(tmp_path, capsys):
    ind = tmp_path / "ind.csv"
    ood = tmp_path / "ood.csv"
    ind.write_text("id,detector,score,flags\na,msp,2.0,\n")
    ood.write_text("id,detector,score,flags\nc,energy,0.0,\n")
    assert run(["eval", "--ind", str(ind), "--ood", str(ood), "--out", str(tmp_path / "e")]) == 2
    assert "detector mismatch" in capsys.readouterr().err


def test_ablate_lambda_grid(small_benchmark, tmp_path):
    out = tmp_path / "ablate"
    code = run(
        [
            "ablate",
            "--benchmark",
            str(small_benchmark),
            "--out",
            str(out),
            "--seed",
            "0",
            "--n",
            "16",
            "--lambda-grid",
            "0,0.5,1",
            "--t-grid",
            "24",
        ]
    )
    assert code == 0
    rows = (out / "sweep_report.csv").read_text().splitlines()
    assert len(rows) == 4  # header + 3 grid points
    lam_rows = (out / "lambda_sweep.csv").read_text().splitlines()
    assert len(lam_rows) == 4
    t_rows = (out / "t_sweep.csv").read_text().splitlines()
    assert len(t_rows) == 2


def test_ablate_t_grid_and_determinism(small_benchmark, tmp_path):
    args = [
        "ablate",
        "--benchmark",
        str(small_benchmark),
        "--seed",
        "0",
        "--n",
        "16",
        "--lambda-grid",
        "0.5",
        "--t-grid",
        "2,24",
    ]
    out1, out2 = tmp_path / "a1", tmp_path / "a2"
    assert run(args + ["--out", str(out1)]) == 0
    assert run(args + ["--out", str(out2)]) == 0
    rows = (out1 / "sweep_report.csv").read_text().splitlines()
    assert len(rows) == 3
    a = tree_checksums(out1)
    b = tree_checksums(out2)
    a.pop("run_config.json")
    b.pop("run_config.json")
    assert a == b


def test_usage_errors_exit_one(capsys):
    assert run(["no-such-command"]) == 1
    assert run(["score", "--no-such-flag", "x"]) == 1
    assert run(["score"]) == 1  # --benchmark missing
    capsys.readouterr()


def test_data_errors_exit_two(tmp_path):
    assert run(["score", "--benchmark", str(tmp_path / "missing"), "--out", str(tmp_path / "o")]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run(["gen-toy", "--config", str(bad), "--out", str(tmp_path / "g")]) == 2


def test_numerical_errors_exit_three(monkeypatch):
    def blow_up(merged):
        raise NumericalError("non-finite score")

    monkeypatch.setitem(cli._COMMANDS, "gen-toy", ({}, blow_up))
    assert run(["gen-toy"]) == 3


def test_config_file_merge_precedence(tmp_path):
    config = tmp_path / "cfg.json"
    config.write_text(json.dumps({"n": 6, "n_train": 150, "n_bank": 40, "seed": 3}))
    out = tmp_path / "from-config"
    assert run(["gen-toy", "--config", str(config), "--out", str(out), "--n", "9"]) == 0
    echoed = json.loads((out / "run_config.json").read_text())
    assert echoed["n"] == 9  # explicit flag beats the config file
    assert echoed["n_train"] == 150  # config file beats the default
    manifest = json.loads((out / "manifest.json").read_text())
    counts = {d["name"]: d["count"] for d in manifest["datasets"]}
    assert counts["ind-test/input"] == 9 and counts["bank"] == 40


def test_config_file_unknown_key(tmp_path, capsys):
    config = tmp_path / "cfg.json"
    config.write_text(json.dumps({"nn": 6}))
    assert run(["gen-toy", "--config", str(config), "--out", str(tmp_path / "x")]) == 1
    assert "unknown keys" in capsys.readouterr().err


def test_output_root_env(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUTPUT_ROOT_ENV, str(tmp_path / "root"))
    assert run(["gen-toy", "--n", "4", "--n-train", "120", "--n-bank", "10"]) == 0
    assert (tmp_path / "root" / "toy-benchmark" / "manifest.json").exists()


def test_calibrate_command(small_benchmark, tmp_path):
    out = tmp_path / "cal"
    assert run(["calibrate", "--benchmark", str(small_benchmark), "--out", str(out)]) == 0
    payload = json.loads((out / "calibration.json").read_text())
    stats = payload["stats"]
    assert stats["kl_min"] <= stats["kl_max"]
    assert stats["l2_min"] <= stats["l2_max"]
    # the stored stats feed score --calibration
    scores = tmp_path / "cal-scores"
    assert (
        run(
            [
                "score",
                "--benchmark",
                str(small_benchmark),
                "--split",
                "ood-test",
                "--detectors",
                "d3",
                "--calibration",
                str(out / "calibration.json"),
                "--out",
                str(scores),
            ]
        )
        == 0
    )
    assert (scores / "scores_ood-test_d3.csv").exists()
