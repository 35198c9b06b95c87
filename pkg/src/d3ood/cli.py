"""Command-line entry point.

Commands: gen-toy, calibrate, score, eval, ablate, report. Flags follow
``--key value``; ``--config file.json`` supplies defaults that explicit
flags override. All randomness flows from ``--seed``, so rerunning a
command with the same configuration reproduces its outputs byte for byte.
Every run directory receives a ``run_config.json`` echo of the exact
configuration that produced it.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical guard.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import detectors as det
from . import evaluation, rectify, toydiff
from .errors import CalibrationError, DataError, NumericalError, UsageError
from .records import TEXT_FORMAT, FORMATS
from .streams import derive_seed, stream

OUTPUT_ROOT_ENV = "D3OOD_OUTPUT_ROOT"


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit code 1 instead of argparse's 2
        raise UsageError(message)


def _output_dir(merged: dict, default_name: str) -> Path:
    out = merged.get("out")
    if out is None:
        root = os.environ.get(OUTPUT_ROOT_ENV, "runs")
        out = Path(root) / default_name
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_run_config(outdir: Path, command: str, merged: dict) -> None:
    payload = {"command": command, **{k: v for k, v in merged.items() if v is not None}}
    payload = {k: (str(v) if isinstance(v, Path) else v) for k, v in payload.items()}
    (outdir / "run_config.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def _merge_config(defaults: dict, provided: dict) -> dict:
    merged = dict(defaults)
    config_path = provided.pop("config", None)
    if config_path is not None:
        try:
            file_values = json.loads(Path(config_path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise DataError(f"no such config file: {config_path}") from None
        except json.JSONDecodeError as exc:
            raise DataError(f"{config_path}: invalid JSON ({exc})") from None
        unknown = set(file_values) - set(defaults)
        if unknown:
            raise UsageError(f"unknown keys in config file: {sorted(unknown)}")
        merged.update(file_values)
    merged.update(provided)
    return merged


def _floats(text: str) -> list[float]:
    return [float(v) for v in str(text).split(",") if v != ""]


def _ints(text: str) -> list[int]:
    return [int(v) for v in str(text).split(",") if v != ""]


def _names(text: str) -> list[str]:
    return [v.strip() for v in str(text).split(",") if v.strip()]


# ---------------------------------------------------------------------------
# gen-toy
# ---------------------------------------------------------------------------

GEN_DEFAULTS = {
    "out": None,
    "seed": 0,
    "n": 256,
    "n_train": 600,
    "n_bank": None,
    "t_steps": 24,
    "beta_start": 1e-4,
    "beta_end": 0.25,
    "sampler": "ddim",
    "t_start": None,
    "guidance": "conditional",
    "guidance_scale": 1.0,
    "format": TEXT_FORMAT,
}


def cmd_gen_toy(merged: dict) -> int:
    outdir = _output_dir(merged, "toy-benchmark")
    spec_in = toydiff.default_ind_spec()
    spec_out = toydiff.default_ood_spec()
    schedule = toydiff.make_schedule(merged["t_steps"], merged["beta_start"], merged["beta_end"])
    train_points, train_labels = toydiff.sample_points(
        spec_in, merged["n_train"], stream(merged["seed"], "train")
    )
    clf = toydiff.train_toy_classifier(
        train_points, train_labels, toydiff.ToyTrainConfig(seed=derive_seed(merged["seed"], "clf"))
    )
    sampler = toydiff.SamplerConfig(
        sampler=merged["sampler"],
        t_start=merged["t_start"],
        guidance=merged["guidance"],
        guidance_scale=merged["guidance_scale"],
    )
    bench = toydiff.build_benchmark(
        spec_in,
        spec_out,
        clf,
        schedule,
        sampler,
        n_per_split=merged["n"],
        seed=merged["seed"],
        n_bank=merged["n_bank"],
    )
    toydiff.write_benchmark(bench, outdir, merged["format"])
    _write_run_config(outdir, "gen-toy", merged)
    print(f"benchmark written to {outdir}")
    return 0


# ---------------------------------------------------------------------------
# calibrate / score
# ---------------------------------------------------------------------------

CAL_DEFAULTS = {
    "out": None,
    "benchmark": None,
    "lam": 0.5,
    "rectify_mode": "react",
    "removal_target": "generation",
    "c": None,
    "alpha": None,
    "beta": None,
}


def _rectify_config(merged: dict, bank_features: np.ndarray) -> rectify.RectifyConfig:
    """Explicit clip constants win; otherwise derive them from InD percentiles."""
    mode = merged["rectify_mode"]
    if mode == "none":
        return rectify.RectifyConfig(mode="none")
    explicit = [merged.get(k) is not None for k in ("c", "alpha", "beta")]
    if any(explicit):
        base = rectify.config_from_percentiles(bank_features, mode)
        return rectify.RectifyConfig(
            mode=mode,
            c=merged["c"] if merged.get("c") is not None else base.c,
            alpha=merged["alpha"] if merged.get("alpha") is not None else base.alpha,
            beta=merged["beta"] if merged.get("beta") is not None else base.beta,
        )
    return rectify.config_from_percentiles(bank_features, mode)


def _d3_config(merged: dict, bank_features: np.ndarray) -> det.D3Config:
    return det.D3Config(
        lam=merged["lam"],
        rectify=_rectify_config(merged, bank_features),
        removal_target=merged["removal_target"],
    )


def _load_benchmark(merged: dict) -> toydiff.LoadedBenchmark:
    if merged.get("benchmark") is None:
        raise UsageError("--benchmark is required")
    return toydiff.load_benchmark(merged["benchmark"])


def cmd_calibrate(merged: dict) -> int:
    bench = _load_benchmark(merged)
    outdir = _output_dir(merged, "calibration")
    cfg = _d3_config(merged, bench.bank_features)
    if "ind-cal" not in bench.pairs:
        raise CalibrationError("benchmark has no dataset with role InD-calibration")
    stats = det.calibrate(bench.pairs["ind-cal"], bench.head, cfg)
    payload = {
        "stats": stats.to_dict(),
        "rectify": {"mode": cfg.rectify.mode, "c": cfg.rectify.c, "alpha": cfg.rectify.alpha, "beta": cfg.rectify.beta},
        "lam": cfg.lam,
        "removal_target": cfg.removal_target,
    }
    (outdir / "calibration.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    _write_run_config(outdir, "calibrate", merged)
    print(f"calibration written to {outdir / 'calibration.json'}")
    return 0


SCORE_DEFAULTS = {
    "out": None,
    "benchmark": None,
    "split": "ind-test",
    "detectors": "msp,energy,mls,d3",
    "lam": 0.5,
    "rectify_mode": "react",
    "removal_target": "generation",
    "c": None,
    "alpha": None,
    "beta": None,
    "calibration": None,
    "k": 1,
    "residual_dim": None,
    "odin_temperature": 1000.0,
    "gradnorm_temperature": 1.0,
    "gradnorm_orientation": "forward",
}


def _build_detectors(names: list[str], bench: toydiff.LoadedBenchmark, merged: dict) -> list[det.Detector]:
    built: list[det.Detector] = []
    for name in names:
        if name == "msp":
            built.append(det.MspDetector())
        elif name == "mls":
            built.append(det.MlsDetector())
        elif name == "energy":
            built.append(det.EnergyDetector())
        elif name == "odin":
            built.append(det.OdinDetector(temperature=merged["odin_temperature"]))
        elif name == "gradnorm":
            built.append(
                det.GradNormDetector(
                    bench.head,
                    temperature=merged["gradnorm_temperature"],
                    orientation=merged["gradnorm_orientation"],
                )
            )
        elif name == "knn":
            if bench.bank_features.size == 0:
                raise CalibrationError("knn requires a dataset with role feature-bank")
            built.append(det.KnnDetector(det.knn_fit(bench.bank_features, k=merged["k"])))
        elif name == "vim":
            if bench.bank_features.size == 0:
                raise CalibrationError("vim requires a dataset with role feature-bank")
            m = bench.bank_features.shape[1]
            residual_dim = merged["residual_dim"] or max(1, m // 2)
            built.append(
                det.VimDetector(det.vim_fit(bench.bank_features, bench.bank_logits, residual_dim))
            )
        elif name == "d3":
            cfg = _d3_config(merged, bench.bank_features)
            if merged.get("calibration") is not None:
                payload = json.loads(Path(merged["calibration"]).read_text(encoding="utf-8"))
                stats = det.CalibrationStats.from_dict(payload["stats"])
            else:
                if "ind-cal" not in bench.pairs:
                    raise CalibrationError(
                        "d3 requires calibration: provide --calibration or a benchmark "
                        "dataset with role InD-calibration"
                    )
                stats = det.calibrate(bench.pairs["ind-cal"], bench.head, cfg)
            built.append(det.D3Detector(bench.head, cfg, stats))
        else:
            raise UsageError(f"unknown detector {name!r}; expected one of {det.DETECTOR_NAMES}")
    return built


def cmd_score(merged: dict) -> int:
    bench = _load_benchmark(merged)
    outdir = _output_dir(merged, "scores")
    if merged["split"] not in bench.pairs:
        raise DataError(f"benchmark has no split {merged['split']!r}")
    pairs = bench.pairs[merged["split"]]
    names = _names(merged["detectors"])
    for detector in _build_detectors(names, bench, merged):
        scores = detector.score_pairs(pairs)
        det.save_scores(scores, detector.name, outdir / f"scores_{merged['split']}_{detector.name}.csv")
    _write_run_config(outdir, "score", merged)
    print(f"{len(names)} score file(s) written to {outdir}")
    return 0


# ---------------------------------------------------------------------------
# eval / report
# ---------------------------------------------------------------------------

EVAL_DEFAULTS = {
    "out": None,
    "ind": None,
    "ood": None,
    "ood_name": "ood-test",
    "tpr": 0.95,
}


def cmd_eval(merged: dict) -> int:
    if not merged.get("ind") or not merged.get("ood"):
        raise UsageError("--ind and --ood score files are required")
    outdir = _output_dir(merged, "eval")
    ind_files = _names(merged["ind"])
    ood_files = _names(merged["ood"])
    ind_scores = dict(_load_score_file(f) for f in ind_files)
    ood_scores = dict(_load_score_file(f) for f in ood_files)
    if set(ind_scores) != set(ood_scores):
        raise DataError(
            f"detector mismatch: InD files have {sorted(ind_scores)} "
            f"but OoD files have {sorted(ood_scores)}"
        )
    reports = []
    for name in sorted(ind_scores):
        reports.append(
            evaluation.evaluate(
                ind_scores[name],
                ood_scores[name],
                detector=name,
                ood_dataset=merged["ood_name"],
                tpr_target=merged["tpr"],
            )
        )
    evaluation.write_reports_json(reports, outdir / "eval_report.json")
    evaluation.write_reports_csv(reports, outdir / "eval_report.csv")
    _write_run_config(outdir, "eval", merged)
    for r in reports:
        print(f"{r.detector}: fpr@95tpr={r.fpr_at_95tpr:.4f} auroc={r.auroc:.4f}")
    return 0


def _load_score_file(path: str) -> tuple[str, list[float]]:
    name, records = det.load_scores(path)
    return name, [r.score for r in records]


REPORT_DEFAULTS = {"out": None, "eval": None}


def cmd_report(merged: dict) -> int:
    if not merged.get("eval"):
        raise UsageError("--eval report file(s) required")
    outdir = _output_dir(merged, "report")
    reports = []
    for path in _names(merged["eval"]):
        reports.extend(evaluation.load_reports_json(path))
    evaluation.write_table(reports, outdir / "table.csv")
    _write_run_config(outdir, "report", merged)
    print(f"table written to {outdir / 'table.csv'}")
    return 0


# ---------------------------------------------------------------------------
# ablate
# ---------------------------------------------------------------------------

ABLATE_DEFAULTS = {
    "out": None,
    "benchmark": None,
    "seed": 0,
    "n": None,
    "lambda_grid": "0.0,0.25,0.5,0.75,1.0",
    "t_grid": "24",
    "rectify_modes": "react",
    "removal_targets": "generation",
    "guidances": "conditional",
    "guidance_scale": 1.0,
    "sampler": "ddim",
}


def _rebuild_for_point(
    bench: toydiff.LoadedBenchmark, point: evaluation.SweepPoint, merged: dict
) -> toydiff.ToyBenchmark:
    toy = bench.toy_config
    spec_in = toydiff.GmmSpec.from_dict(toy["spec_in"])
    spec_out = toydiff.GmmSpec.from_dict(toy["spec_out"])
    beta = toy["schedule"]["beta"]
    schedule = toydiff.make_schedule(point.t_steps, beta[0], beta[-1])
    sampler = toydiff.SamplerConfig(
        sampler=merged["sampler"],
        t_start=None,
        guidance=point.guidance,
        guidance_scale=merged["guidance_scale"],
    )
    n = merged["n"] or toy["n_per_split"]
    # generation depends only on (T, guidance); points differing in metric
    # coordinates reuse an identical benchmark, so metric ablations compare
    # on the same data
    seed = derive_seed(merged["seed"], "ablate", point.t_steps, point.guidance)
    return toydiff.build_benchmark(
        spec_in, spec_out, bench.clf, schedule, sampler, n_per_split=n, seed=seed
    )


def cmd_ablate(merged: dict) -> int:
    bench = _load_benchmark(merged)
    outdir = _output_dir(merged, "ablation")
    points = evaluation.expand_grid(
        lams=_floats(merged["lambda_grid"]),
        t_steps=_ints(merged["t_grid"]),
        rectify_modes=_names(merged["rectify_modes"]),
        removal_targets=_names(merged["removal_targets"]),
        guidances=_names(merged["guidances"]),
    )
    cache: dict[tuple[int, str], toydiff.ToyBenchmark] = {}

    def run_point(point: evaluation.SweepPoint) -> evaluation.EvalReport:
        key = (point.t_steps, point.guidance)
        if key not in cache:
            cache[key] = _rebuild_for_point(bench, point, merged)
        b = cache[key]
        cfg = det.D3Config(
            lam=point.lam,
            rectify=_rectify_config(
                {"rectify_mode": point.rectify_mode, "c": None, "alpha": None, "beta": None},
                bench.bank_features,
            ),
            removal_target=point.removal_target,
        )
        stats = det.calibrate(b.splits["ind-cal"], b.clf.head, cfg)
        scorer = det.D3Detector(b.clf.head, cfg, stats)
        ind = [r.score for r in scorer.score_pairs(b.splits["ind-test"])]
        ood = [r.score for r in scorer.score_pairs(b.splits["ood-test"])]
        report = evaluation.evaluate(ind, ood, detector="d3", ood_dataset="ood-test")
        report.extras = {
            "lam": point.lam,
            "t_steps": point.t_steps,
            "rectify_mode": point.rectify_mode,
            "removal_target": point.removal_target,
            "guidance": point.guidance,
        }
        return report

    reports = evaluation.sweep(points, run_point)
    evaluation.write_reports_json(reports, outdir / "sweep_report.json")
    _write_sweep_csv(reports, outdir / "sweep_report.csv")
    _write_curve(reports, "lam", outdir / "lambda_sweep.csv")
    _write_curve(reports, "t_steps", outdir / "t_sweep.csv")
    _write_run_config(outdir, "ablate", merged)
    print(f"{len(reports)} grid point(s) written to {outdir}")
    return 0


def _write_sweep_csv(reports, path: Path) -> None:
    lines = ["lam,t_steps,rectify_mode,removal_target,guidance,fpr_at_95tpr,auroc"]
    for r in reports:
        e = r.extras
        lines.append(
            f"{e['lam']!r},{e['t_steps']},{e['rectify_mode']},{e['removal_target']},"
            f"{e['guidance']},{r.fpr_at_95tpr!r},{r.auroc!r}"
        )
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _write_curve(reports, key: str, path: Path) -> None:
    """Average FPR/AUROC per value of one grid coordinate."""
    groups: dict[float, list] = {}
    for r in reports:
        groups.setdefault(r.extras[key], []).append(r)
    lines = [f"{key},fpr_at_95tpr,auroc"]
    for value in sorted(groups):
        rs = groups[value]
        fpr = float(np.mean([r.fpr_at_95tpr for r in rs]))
        auc = float(np.mean([r.auroc for r in rs]))
        lines.append(f"{value!r},{fpr!r},{auc!r}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# Parser and dispatch
# ---------------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="d3ood", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    S = argparse.SUPPRESS

    p = sub.add_parser("gen-toy", help="generate the toy diffusion benchmark")
    p.add_argument("--out", default=S)
    p.add_argument("--seed", type=int, default=S)
    p.add_argument("--n", type=int, default=S, help="samples per split")
    p.add_argument("--n-train", dest="n_train", type=int, default=S)
    p.add_argument("--n-bank", dest="n_bank", type=int, default=S)
    p.add_argument("--t-steps", dest="t_steps", type=int, default=S)
    p.add_argument("--beta-start", dest="beta_start", type=float, default=S)
    p.add_argument("--beta-end", dest="beta_end", type=float, default=S)
    p.add_argument("--sampler", choices=toydiff.SAMPLERS, default=S)
    p.add_argument("--t-start", dest="t_start", type=int, default=S)
    p.add_argument("--guidance", choices=toydiff.GUIDANCES, default=S)
    p.add_argument("--guidance-scale", dest="guidance_scale", type=float, default=S)
    p.add_argument("--format", choices=FORMATS, default=S)
    p.add_argument("--config", default=S)

    p = sub.add_parser("calibrate", help="min/max disparity stats on InD calibration data")
    p.add_argument("--benchmark", default=S)
    p.add_argument("--out", default=S)
    p.add_argument("--lambda", dest="lam", type=float, default=S)
    p.add_argument("--rectify-mode", dest="rectify_mode", choices=rectify.MODES, default=S)
    p.add_argument("--removal-target", dest="removal_target", choices=rectify.REMOVAL_TARGETS, default=S)
    p.add_argument("--c", type=float, default=S)
    p.add_argument("--alpha", type=float, default=S)
    p.add_argument("--beta", type=float, default=S)
    p.add_argument("--config", default=S)

    p = sub.add_parser("score", help="run detectors over one benchmark split")
    p.add_argument("--benchmark", default=S)
    p.add_argument("--out", default=S)
    p.add_argument("--split", choices=toydiff.SPLITS, default=S)
    p.add_argument("--detectors", default=S, help="comma-separated detector names")
    p.add_argument("--lambda", dest="lam", type=float, default=S)
    p.add_argument("--rectify-mode", dest="rectify_mode", choices=rectify.MODES, default=S)
    p.add_argument("--removal-target", dest="removal_target", choices=rectify.REMOVAL_TARGETS, default=S)
    p.add_argument("--c", type=float, default=S)
    p.add_argument("--alpha", type=float, default=S)
    p.add_argument("--beta", type=float, default=S)
    p.add_argument("--calibration", default=S, help="calibration.json from the calibrate command")
    p.add_argument("--k", type=int, default=S, help="nearest-neighbor rank")
    p.add_argument("--residual-dim", dest="residual_dim", type=int, default=S)
    p.add_argument("--odin-temperature", dest="odin_temperature", type=float, default=S)
    p.add_argument("--gradnorm-temperature", dest="gradnorm_temperature", type=float, default=S)
    p.add_argument(
        "--gradnorm-orientation",
        dest="gradnorm_orientation",
        choices=("forward", "reverse"),
        default=S,
    )
    p.add_argument("--config", default=S)

    p = sub.add_parser("eval", help="FPR@95TPR and AUROC from score files")
    p.add_argument("--ind", default=S, help="comma-separated InD score files")
    p.add_argument("--ood", default=S, help="comma-separated OoD score files")
    p.add_argument("--ood-name", dest="ood_name", default=S)
    p.add_argument("--tpr", type=float, default=S)
    p.add_argument("--out", default=S)
    p.add_argument("--config", default=S)

    p = sub.add_parser("ablate", help="grid sweep over the ensemble and sampler knobs")
    p.add_argument("--benchmark", default=S)
    p.add_argument("--out", default=S)
    p.add_argument("--seed", type=int, default=S)
    p.add_argument("--n", type=int, default=S)
    p.add_argument("--lambda-grid", dest="lambda_grid", default=S)
    p.add_argument("--t-grid", dest="t_grid", default=S)
    p.add_argument("--rectify-modes", dest="rectify_modes", default=S)
    p.add_argument("--removal-targets", dest="removal_targets", default=S)
    p.add_argument("--guidances", default=S)
    p.add_argument("--guidance-scale", dest="guidance_scale", type=float, default=S)
    p.add_argument("--sampler", choices=toydiff.SAMPLERS, default=S)
    p.add_argument("--config", default=S)

    p = sub.add_parser("report", help="assemble a detector-by-dataset table")
    p.add_argument("--eval", default=S, help="comma-separated eval_report.json files")
    p.add_argument("--out", default=S)
    p.add_argument("--config", default=S)
    return parser


_COMMANDS = {
    "gen-toy": (GEN_DEFAULTS, cmd_gen_toy),
    "calibrate": (CAL_DEFAULTS, cmd_calibrate),
    "score": (SCORE_DEFAULTS, cmd_score),
    "eval": (EVAL_DEFAULTS, cmd_eval),
    "ablate": (ABLATE_DEFAULTS, cmd_ablate),
    "report": (REPORT_DEFAULTS, cmd_report),
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = vars(parser.parse_args(argv))
        command = args.pop("command")
        defaults, runner = _COMMANDS[command]
        merged = _merge_config(defaults, args)
        return runner(merged)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"numerical guard: {exc}", file=sys.stderr)
        return 3
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
