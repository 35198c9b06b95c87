"""Scoring functions behind one uniform detector interface.

Every detector returns higher-is-more-InD scores. The disparity ensemble
scores a (input, generation) pair from its min-max-normalized KL-ratio and
feature-distance components; the remaining detectors are post-hoc baselines
over the input record alone (max probability, temperature-scaled max
probability, energy, max logit, head-gradient norm, feature-bank nearest
neighbor, and a residual-subspace virtual logit).

Detectors are immutable once built (fit phases produce frozen models);
scoring is pure, so records may be scored in parallel against shared banks.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from . import metrics
from .errors import CalibrationError, DataError, DegenerateInputError, NumericalError
from .records import ClassifierHead, PairedRecord, RepresentationRecord
from .rectify import REMOVAL_TARGETS, RectifyConfig, rectified_outputs
from .toydiff import ToyClassifier

#: floor applied to normalized disparities before taking reciprocals, so the
#: calibration minimum (normalized exactly to 0) cannot produce an infinite score
EPS_SCORE = 1e-6

FLAG_KL_CLAMPED = "kl_denominator_clamped"
FLAG_NORM_DEGENERATE = "normalization_degenerate"

BASELINES = ("msp", "odin", "energy", "gradnorm", "vim", "knn", "mls")
DETECTOR_NAMES = BASELINES + ("d3",)


@dataclass
class D3Config:
    """Ensemble weight, rectification scheme and which pair side it applies to."""

    lam: float = 0.5
    rectify: RectifyConfig = field(default_factory=RectifyConfig)
    removal_target: str = "generation"

    def __post_init__(self) -> None:
        if not 0.0 <= self.lam <= 1.0:
            raise DataError(f"lambda must be in [0, 1], got {self.lam}")
        if self.removal_target not in REMOVAL_TARGETS:
            raise DataError(
                f"unknown removal target {self.removal_target!r}; expected one of {REMOVAL_TARGETS}"
            )


@dataclass
class CalibrationStats:
    """Extremes of the raw disparities over the InD calibration set."""

    kl_min: float
    kl_max: float
    l2_min: float
    l2_max: float
    kl_degenerate: bool = False
    l2_degenerate: bool = False

    def to_dict(self) -> dict:
        return {
            "kl_min": self.kl_min,
            "kl_max": self.kl_max,
            "l2_min": self.l2_min,
            "l2_max": self.l2_max,
            "kl_degenerate": self.kl_degenerate,
            "l2_degenerate": self.l2_degenerate,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CalibrationStats":
        return cls(
            kl_min=float(d["kl_min"]),
            kl_max=float(d["kl_max"]),
            l2_min=float(d["l2_min"]),
            l2_max=float(d["l2_max"]),
            kl_degenerate=bool(d["kl_degenerate"]),
            l2_degenerate=bool(d["l2_degenerate"]),
        )


@dataclass
class ScoreRecord:
    id: str
    score: float
    components: dict[str, float] | None = None
    guard_flags: frozenset[str] = frozenset()


@dataclass(eq=False)
class FeatureBank:
    """Unit-normalized InD features for nearest-neighbor scoring."""

    features: np.ndarray  # (count, m), rows unit-norm
    k: int


@dataclass(eq=False)
class VimModel:
    """Residual-subspace projection fitted on InD features and logits."""

    basis: np.ndarray  # (m, residual_dim), orthonormal columns
    offset: np.ndarray  # (m,)
    scale: float  # mean max-logit / mean residual norm on the fit set


# ---------------------------------------------------------------------------
# Pair disparities and the ensemble
# ---------------------------------------------------------------------------


def _pair_outputs(pair: PairedRecord, head: ClassifierHead, cfg: D3Config):
    """Features and logits for both sides, rectifying only the targeted ones.

    Untargeted sides keep their stored features and logits, so the
    no-removal configuration scores exactly the unmodified pair.
    """

    def side_outputs(record: RepresentationRecord, targeted: bool):
        if targeted and cfg.rectify.mode != "none":
            return rectified_outputs(record, head, cfg.rectify)
        return record.features, record.logits

    target = cfg.removal_target
    h_x, z_x = side_outputs(pair.input, target in ("input", "both"))
    h_gen, z_gen = side_outputs(pair.generation, target in ("generation", "both"))
    return h_x, z_x, h_gen, z_gen


def raw_disparities(
    pair: PairedRecord, head: ClassifierHead, cfg: D3Config
) -> tuple[float, float, bool]:
    """(eps_kl, eps_l2, denominator_clamped) for one pair under ``cfg``."""
    h_x, z_x, h_gen, z_gen = _pair_outputs(pair, head, cfg)
    kl, clamped = metrics.eps_kl_detailed(metrics.softmax(z_x), metrics.softmax(z_gen))
    return kl, metrics.eps_l2(h_x, h_gen), clamped


def calibrate(pairs: list[PairedRecord], head: ClassifierHead, cfg: D3Config) -> CalibrationStats:
    """Exact min/max of the raw disparities over the InD calibration pairs.

    A degenerate range (max == min) is flagged; normalization then falls
    back to the identity on that disparity.
    """
    if len(pairs) < 2:
        raise CalibrationError(f"calibration needs >= 2 pairs, got {len(pairs)}")
    kls, l2s = [], []
    for pair in pairs:
        kl, l2, _ = raw_disparities(pair, head, cfg)
        kls.append(kl)
        l2s.append(l2)
    kl_min, kl_max = min(kls), max(kls)
    l2_min, l2_max = min(l2s), max(l2s)
    return CalibrationStats(
        kl_min=kl_min,
        kl_max=kl_max,
        l2_min=l2_min,
        l2_max=l2_max,
        kl_degenerate=kl_max == kl_min,
        l2_degenerate=l2_max == l2_min,
    )


def _normalize(value: float, lo: float, hi: float, degenerate: bool) -> float:
    # affine extrapolation outside the calibration range on purpose:
    # clamping would collapse the ranking among extreme samples
    return value if degenerate else (value - lo) / (hi - lo)


def d3_score(
    pair: PairedRecord, head: ClassifierHead, cfg: D3Config, stats: CalibrationStats
) -> ScoreRecord:
    """Ensemble score lam/eps_kl~ + (1-lam)/eps_l2~ on normalized disparities."""
    kl_raw, l2_raw, clamped = raw_disparities(pair, head, cfg)
    kl_norm = _normalize(kl_raw, stats.kl_min, stats.kl_max, stats.kl_degenerate)
    l2_norm = _normalize(l2_raw, stats.l2_min, stats.l2_max, stats.l2_degenerate)
    score = cfg.lam / max(kl_norm, EPS_SCORE) + (1.0 - cfg.lam) / max(l2_norm, EPS_SCORE)
    flags = set()
    if clamped:
        flags.add(FLAG_KL_CLAMPED)
    if (cfg.lam > 0 and stats.kl_degenerate) or (cfg.lam < 1 and stats.l2_degenerate):
        flags.add(FLAG_NORM_DEGENERATE)
    if not np.isfinite(score):
        raise NumericalError(f"non-finite ensemble score for pair {pair.input.id!r}")
    return ScoreRecord(
        id=pair.input.id,
        score=float(score),
        components={
            "eps_kl_raw": kl_raw,
            "eps_l2_raw": l2_raw,
            "eps_kl_norm": kl_norm,
            "eps_l2_norm": l2_norm,
        },
        guard_flags=frozenset(flags),
    )


# ---------------------------------------------------------------------------
# Post-hoc baselines
# ---------------------------------------------------------------------------


def msp_score(record: RepresentationRecord) -> float:
    """Maximum softmax probability of the stored logits."""
    return float(np.max(metrics.softmax(record.logits)))


def mls_score(record: RepresentationRecord) -> float:
    """Maximum raw logit."""
    return float(np.max(record.logits))


def energy_score(record: RepresentationRecord) -> float:
    """log-sum-exp of the logits, computed max-stabilized."""
    logits = np.asarray(record.logits, dtype=np.float64)
    if not np.all(np.isfinite(logits)):
        raise DataError("energy_score: non-finite logits")
    return float(logsumexp(logits))


def odin_score(
    record: RepresentationRecord,
    temperature: float = 1000.0,
    perturbation: float = 0.0,
    toy_point: np.ndarray | None = None,
    toy_classifier: ToyClassifier | None = None,
) -> float:
    """Max temperature-scaled softmax, optionally after an input perturbation.

    The perturbation needs gradients through the full input-space model, so
    it is available only when the raw toy point and classifier are supplied;
    the point is nudged against the sign of the loss gradient of its
    predicted class before re-scoring. In representation-only mode the
    perturbation must be 0.
    """
    if temperature <= 0:
        raise DataError(f"temperature must be > 0, got {temperature}")
    if perturbation == 0.0:
        return float(np.max(metrics.softmax(record.logits / temperature)))
    if toy_point is None or toy_classifier is None:
        raise DataError(
            "ODIN input perturbation requires the toy point and classifier; "
            "representation-only records support perturbation=0 only"
        )
    grad = _toy_input_loss_gradient(np.asarray(toy_point, dtype=np.float64), toy_classifier, temperature)
    nudged = np.asarray(toy_point, dtype=np.float64) - perturbation * np.sign(grad)
    logits = toy_classifier.logits_of(nudged)
    return float(np.max(metrics.softmax(logits / temperature)))


def _toy_input_loss_gradient(point: np.ndarray, clf: ToyClassifier, temperature: float) -> np.ndarray:
    """Gradient of -log softmax(z/T)[predicted] w.r.t. the input point."""
    phi = clf.features_of(point)
    z = clf.head.logits(phi)
    predicted = int(np.argmax(z))
    g = metrics.softmax(z / temperature)
    # dz/dphi = W, dphi_i/dx = phi_i * (c_i - x) / bandwidth^2
    dlogp_dz = -g / temperature
    dlogp_dz[predicted] += 1.0 / temperature
    dphi_dx = phi[:, None] * (clf.centers - point[None, :]) / clf.bandwidth**2
    return -(dphi_dx.T @ (clf.head.weights @ dlogp_dz))


def gradnorm_gradient(
    record: RepresentationRecord,
    head: ClassifierHead,
    temperature: float = 1.0,
    orientation: str = "forward",
) -> np.ndarray:
    """Closed-form gradient of the uniform-reference KL w.r.t. the head weights.

    ``forward`` differentiates KL(g || u) as written in the scoring rule;
    ``reverse`` differentiates KL(u || g), the orientation the original
    gradient-norm method trains against. The two differ, so both are
    offered. Logits are recomputed from the head at temperature T.
    """
    if record.m != head.m:
        raise DataError(f"record has m={record.m} but head expects m={head.m}")
    if temperature <= 0:
        raise DataError(f"temperature must be > 0, got {temperature}")
    h = record.features
    g = metrics.softmax(head.logits(h) / temperature)
    if orientation == "forward":
        dz = g * (np.log(g) - float(np.sum(g * np.log(g))))
    elif orientation == "reverse":
        dz = g - metrics.uniform(g.shape[0])
    else:
        raise DataError(f"unknown orientation {orientation!r}")
    return np.outer(h, dz) / temperature


def gradnorm_score(
    record: RepresentationRecord,
    head: ClassifierHead,
    temperature: float = 1.0,
    orientation: str = "forward",
) -> float:
    """Elementwise l1 norm of the head-weight gradient."""
    return float(np.sum(np.abs(gradnorm_gradient(record, head, temperature, orientation))))


def knn_fit(bank_features: np.ndarray, k: int = 1) -> FeatureBank:
    """Store unit-normalized bank rows for k-th nearest neighbor scoring."""
    bank = np.asarray(bank_features, dtype=np.float64)
    if bank.ndim != 2 or bank.shape[0] == 0:
        raise DataError("knn_fit: bank must be a nonempty (count, m) array")
    if not 1 <= k <= bank.shape[0]:
        raise DataError(f"k={k} outside [1, {bank.shape[0]}]")
    norms = np.sqrt(np.sum(bank * bank, axis=1))
    if np.any(norms == 0.0):
        raise DegenerateInputError("knn_fit: zero-norm bank row")
    return FeatureBank(features=bank / norms[:, None], k=k)


def knn_score(record: RepresentationRecord, bank: FeatureBank) -> float:
    """Negative k-th smallest distance between the normalized query and the bank."""
    norm = float(np.sqrt(np.sum(record.features * record.features)))
    if norm == 0.0:
        raise DegenerateInputError("knn_score: zero-norm query features")
    query = record.features / norm
    diff = bank.features - query[None, :]
    dists = np.sqrt(np.sum(diff * diff, axis=1))
    kth = np.partition(dists, bank.k - 1)[bank.k - 1]
    return float(-kth)


def vim_fit(bank_features: np.ndarray, bank_logits: np.ndarray, residual_dim: int) -> VimModel:
    """PCA residual subspace of the centered bank plus the virtual-logit scale.

    The scale is the ratio of the mean max-logit to the mean residual norm
    over the fit set, so the virtual logit lives on the scale of the real
    ones.
    """
    bank = np.asarray(bank_features, dtype=np.float64)
    logits = np.asarray(bank_logits, dtype=np.float64)
    if bank.ndim != 2 or logits.ndim != 2 or bank.shape[0] != logits.shape[0]:
        raise DataError("vim_fit: features and logits must be aligned 2-D arrays")
    n, m = bank.shape
    if not 1 <= residual_dim < m:
        raise DataError(f"residual_dim={residual_dim} outside [1, m-1] for m={m}")
    if n < m:
        raise DataError(f"vim_fit needs at least m={m} samples, got {n}")
    offset = np.mean(bank, axis=0)
    centered = bank - offset
    # principal directions from the SVD of the centered data; the residual
    # basis spans the trailing right-singular vectors
    _, svals, vt = np.linalg.svd(centered, full_matrices=True)
    principal_dim = m - residual_dim
    if svals[principal_dim - 1] <= 1e-12 * max(1.0, svals[0]):
        raise DataError(
            f"vim_fit: rank-deficient fit (singular value {principal_dim} is ~0); "
            "the residual subspace is not identifiable"
        )
    basis = vt[principal_dim:].T
    residual_norms = np.linalg.norm(centered @ basis, axis=1)
    mean_residual = float(np.mean(residual_norms))
    mean_max_logit = float(np.mean(np.max(logits, axis=1)))
    scale = mean_max_logit / max(mean_residual, 1e-12)
    return VimModel(basis=basis, offset=offset, scale=scale)


def vim_residual_norm(features: np.ndarray, model: VimModel) -> float:
    centered = np.asarray(features, dtype=np.float64) - model.offset
    return float(np.linalg.norm(centered @ model.basis))


def vim_score(record: RepresentationRecord, model: VimModel) -> float:
    """1 - softmax probability of the scaled residual norm as a virtual logit."""
    virtual = model.scale * vim_residual_norm(record.features, model)
    extended = np.concatenate([record.logits, [virtual]])
    return float(1.0 - metrics.softmax(extended)[-1])


def decide(score: float, threshold: float) -> str:
    """InD iff score strictly exceeds the threshold."""
    if not (np.isfinite(score) and np.isfinite(threshold)):
        raise DataError("decide: non-finite score or threshold")
    return "InD" if score > threshold else "OoD"


# ---------------------------------------------------------------------------
# Uniform detector interface
# ---------------------------------------------------------------------------


class Detector:
    """A named scorer over paired records; higher score means more InD."""

    name = "base"

    def score_pair(self, pair: PairedRecord) -> ScoreRecord:
        raise NotImplementedError

    def score_pairs(self, pairs: list[PairedRecord]) -> list[ScoreRecord]:
        return [self.score_pair(p) for p in pairs]


class _RecordDetector(Detector):
    """Baselines that look only at the input record of a pair."""

    def _score(self, record: RepresentationRecord) -> float:
        raise NotImplementedError

    def score_pair(self, pair: PairedRecord) -> ScoreRecord:
        return ScoreRecord(id=pair.input.id, score=self._score(pair.input))


class MspDetector(_RecordDetector):
    name = "msp"

    def _score(self, record):
        return msp_score(record)


class MlsDetector(_RecordDetector):
    name = "mls"

    def _score(self, record):
        return mls_score(record)


class EnergyDetector(_RecordDetector):
    name = "energy"

    def _score(self, record):
        return energy_score(record)


class OdinDetector(_RecordDetector):
    name = "odin"

    def __init__(self, temperature: float = 1000.0):
        self.temperature = temperature

    def _score(self, record):
        return odin_score(record, temperature=self.temperature)


class GradNormDetector(_RecordDetector):
    name = "gradnorm"

    def __init__(self, head: ClassifierHead, temperature: float = 1.0, orientation: str = "forward"):
        self.head = head
        self.temperature = temperature
        self.orientation = orientation

    def _score(self, record):
        return gradnorm_score(record, self.head, self.temperature, self.orientation)


class KnnDetector(_RecordDetector):
    name = "knn"

    def __init__(self, bank: FeatureBank):
        self.bank = bank

    def _score(self, record):
        return knn_score(record, self.bank)


class VimDetector(_RecordDetector):
    name = "vim"

    def __init__(self, model: VimModel):
        self.model = model

    def _score(self, record):
        return vim_score(record, self.model)


class D3Detector(Detector):
    name = "d3"

    def __init__(self, head: ClassifierHead, cfg: D3Config, stats: CalibrationStats):
        self.head = head
        self.cfg = cfg
        self.stats = stats

    def score_pair(self, pair: PairedRecord) -> ScoreRecord:
        return d3_score(pair, self.head, self.cfg, self.stats)


# ---------------------------------------------------------------------------
# Score files
# ---------------------------------------------------------------------------


def save_scores(records: list[ScoreRecord], detector: str, path: str | Path) -> None:
    """Delimited text, columns (id, detector, score, flags), input order."""
    lines = ["id,detector,score,flags"]
    for rec in records:
        flags = ";".join(sorted(rec.guard_flags))
        lines.append(f"{rec.id},{detector},{rec.score!r},{flags}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_scores(path: str | Path) -> tuple[str, list[ScoreRecord]]:
    """Read one score file back; returns (detector name, records)."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != "id,detector,score,flags":
        raise DataError(f"{path}: not a score file")
    detector = ""
    records = []
    for i, line in enumerate(lines[1:]):
        parts = line.split(",")
        if len(parts) != 4:
            raise DataError(f"{path}: row {i}: expected 4 columns")
        rec_id, det, score, flags = parts
        detector = det
        records.append(
            ScoreRecord(
                id=rec_id,
                score=float(score),
                guard_flags=frozenset(f for f in flags.split(";") if f),
            )
        )
    return detector, records
