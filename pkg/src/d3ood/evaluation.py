"""Detection-quality metrics and report assembly.

AUROC follows the Mann-Whitney convention (ties credited 0.5). The FPR@TPR
threshold is the largest observed InD score that still keeps the strict-">"
true-positive rate at or above the target; when even the smallest InD score
fails (the target needs every InD sample above threshold), the threshold is
placed one unit below the minimum. A sample scoring exactly at the threshold
is decided OoD, consistent with the strict decision rule.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import numpy as np
from scipy.stats import rankdata

from .errors import DataError


@dataclass
class EvalReport:
    detector: str
    ood_dataset: str
    fpr_at_95tpr: float
    auroc: float
    threshold_s: float
    n_ind: int
    n_ood: int
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = {
            "detector": self.detector,
            "ood_dataset": self.ood_dataset,
            "fpr_at_95tpr": self.fpr_at_95tpr,
            "auroc": self.auroc,
            "threshold_s": self.threshold_s,
            "n_ind": self.n_ind,
            "n_ood": self.n_ood,
        }
        if self.extras:
            d["extras"] = self.extras
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(
            detector=d["detector"],
            ood_dataset=d["ood_dataset"],
            fpr_at_95tpr=float(d["fpr_at_95tpr"]),
            auroc=float(d["auroc"]),
            threshold_s=float(d["threshold_s"]),
            n_ind=int(d["n_ind"]),
            n_ood=int(d["n_ood"]),
            extras=d.get("extras", {}),
        )


def auroc(ind_scores, ood_scores) -> float:
    """P(random InD score > random OoD score), ties counted half.

    Computed via midranks; equals the O(n^2) pairwise statistic exactly.
    """
    ind = np.asarray(ind_scores, dtype=np.float64)
    ood = np.asarray(ood_scores, dtype=np.float64)
    if ind.size == 0 or ood.size == 0:
        raise DataError("auroc: empty score list")
    ranks = rankdata(np.concatenate([ind, ood]), method="average")
    rank_sum = float(np.sum(ranks[: ind.size]))
    u = rank_sum - ind.size * (ind.size + 1) / 2.0
    return u / (ind.size * ood.size)


def fpr_at_tpr(ind_scores, ood_scores, tpr_target: float = 0.95) -> tuple[float, float]:
    """FPR on OoD at the loosest threshold meeting the TPR target on InD.

    Returns (fpr, threshold). TPR and FPR both count strictly-greater
    scores, matching the decision rule.
    """
    ind = np.sort(np.asarray(ind_scores, dtype=np.float64))[::-1]
    ood = np.asarray(ood_scores, dtype=np.float64)
    if ind.size == 0 or ood.size == 0:
        raise DataError("fpr_at_tpr: empty score list")
    if not 0.0 < tpr_target <= 1.0:
        raise DataError(f"tpr_target must be in (0, 1], got {tpr_target}")
    n = ind.size
    needed = int(np.ceil(n * tpr_target - 1e-12))
    # scan distinct InD scores in descending order; the first occurrence
    # index of a value is exactly the count of strictly-greater elements
    threshold = None
    i = 0
    while i < n:
        value = ind[i]
        if i >= needed:
            threshold = float(value)
            break
        while i < n and ind[i] == value:
            i += 1
    if threshold is None:
        threshold = float(ind[-1]) - 1.0
    fpr = float(np.sum(ood > threshold)) / ood.size
    return fpr, threshold


def achieved_tpr(ind_scores, threshold: float) -> float:
    ind = np.asarray(ind_scores, dtype=np.float64)
    return float(np.sum(ind > threshold)) / ind.size


def evaluate(
    ind_scores,
    ood_scores,
    detector: str = "",
    ood_dataset: str = "",
    tpr_target: float = 0.95,
) -> EvalReport:
    fpr, threshold = fpr_at_tpr(ind_scores, ood_scores, tpr_target)
    return EvalReport(
        detector=detector,
        ood_dataset=ood_dataset,
        fpr_at_95tpr=fpr,
        auroc=auroc(ind_scores, ood_scores),
        threshold_s=threshold,
        n_ind=len(ind_scores),
        n_ood=len(ood_scores),
    )


@dataclass(frozen=True)
class SweepPoint:
    """One point of an ablation grid."""

    lam: float = 0.5
    t_steps: int = 24
    rectify_mode: str = "react"
    removal_target: str = "generation"
    guidance: str = "none"


def expand_grid(
    lams: Iterable[float] = (0.5,),
    t_steps: Iterable[int] = (24,),
    rectify_modes: Iterable[str] = ("react",),
    removal_targets: Iterable[str] = ("generation",),
    guidances: Iterable[str] = ("none",),
) -> list[SweepPoint]:
    """Cartesian product in a fixed, deterministic order."""
    points = []
    for t in t_steps:
        for guidance in guidances:
            for mode in rectify_modes:
                for target in removal_targets:
                    for lam in lams:
                        points.append(
                            SweepPoint(
                                lam=float(lam),
                                t_steps=int(t),
                                rectify_mode=mode,
                                removal_target=target,
                                guidance=guidance,
                            )
                        )
    return points


def sweep(points: list[SweepPoint], run_point: Callable[[SweepPoint], EvalReport]) -> list[EvalReport]:
    """One report per grid point, in grid order.

    ``run_point`` owns all pipeline state; points are independent, so a
    parallel map would be equally valid.
    """
    return [run_point(p) for p in points]


def write_reports_csv(reports: list[EvalReport], path: str | Path) -> None:
    lines = ["detector,ood_dataset,fpr_at_95tpr,auroc,threshold_s,n_ind,n_ood"]
    for r in reports:
        lines.append(
            f"{r.detector},{r.ood_dataset},{r.fpr_at_95tpr!r},{r.auroc!r},"
            f"{r.threshold_s!r},{r.n_ind},{r.n_ood}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_reports_json(reports: list[EvalReport], path: str | Path) -> None:
    payload = [r.to_dict() for r in reports]
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_reports_json(path: str | Path) -> list[EvalReport]:
    return [EvalReport.from_dict(d) for d in json.loads(Path(path).read_text(encoding="utf-8"))]


def write_table(reports: list[EvalReport], path: str | Path) -> None:
    """Detector-by-dataset table: FPR/AUROC columns per OoD set plus the average."""
    datasets = sorted({r.ood_dataset for r in reports})
    detectors = []
    for r in reports:
        if r.detector not in detectors:
            detectors.append(r.detector)
    by_key = {(r.detector, r.ood_dataset): r for r in reports}
    header = ["detector"]
    for ds in datasets:
        header += [f"{ds}_fpr", f"{ds}_auroc"]
    header += ["avg_fpr", "avg_auroc"]
    lines = [",".join(header)]
    for det in detectors:
        row = [det]
        fprs, aurocs = [], []
        for ds in datasets:
            r = by_key.get((det, ds))
            if r is None:
                row += ["", ""]
            else:
                row += [f"{100 * r.fpr_at_95tpr:.2f}", f"{100 * r.auroc:.2f}"]
                fprs.append(r.fpr_at_95tpr)
                aurocs.append(r.auroc)
        if fprs:
            row += [f"{100 * float(np.mean(fprs)):.2f}", f"{100 * float(np.mean(aurocs)):.2f}"]
        else:
            row += ["", ""]
        lines.append(",".join(row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
