"""Analytic toy stand-in for a diffusion model plus classifier-under-protection.

The in-distribution is a labeled Gaussian mixture, so the diffused marginals
stay mixtures in closed form and the exact score of the diffused density
replaces a learned denoiser. Reverse sampling (ancestral or deterministic
DDIM) reconstructs a partially-noised input; a small radial-basis softmax
classifier supplies the features and logits every other module consumes.

All stochastic stages draw from addressable Philox streams keyed by
(seed, split, sample index), so benchmarks are bit-reproducible under any
parallel schedule.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import logsumexp, softmax as _softmax

from .errors import DataError, NumericalError
from .records import (
    ClassifierHead,
    DatasetManifest,
    PairedRecord,
    RepresentationRecord,
    TEXT_FORMAT,
    load_benchmark_manifest,
    make_manifest,
    pair_datasets,
    save_records,
    verify_manifest,
    write_benchmark_manifest,
)
from .streams import stream

SPLIT_ROLES = {
    "ind-cal": "InD-calibration",
    "ind-test": "InD-test",
    "ood-test": "OoD-test",
}
SPLITS = ("ind-cal", "ind-test", "ood-test")

SAMPLERS = ("ddim", "ancestral")
GUIDANCES = ("none", "conditional")


# ---------------------------------------------------------------------------
# Mixture specification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GaussianComponent:
    weight: float
    mean: tuple[float, ...]
    variance: float  # isotropic


@dataclass(frozen=True)
class GmmSpec:
    """Per-class isotropic Gaussian mixture with class priors."""

    classes: tuple[tuple[GaussianComponent, ...], ...]
    priors: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.classes) != len(self.priors):
            raise DataError("GmmSpec: one prior per class required")
        if abs(sum(self.priors) - 1.0) > 1e-9 or any(p <= 0 for p in self.priors):
            raise DataError("GmmSpec: priors must be positive and sum to 1")
        for comps in self.classes:
            if abs(sum(c.weight for c in comps) - 1.0) > 1e-9:
                raise DataError("GmmSpec: component weights must sum to 1 per class")
            for c in comps:
                if c.weight <= 0 or c.variance <= 0:
                    raise DataError("GmmSpec: weights and variances must be positive")
                if len(c.mean) != self.dim:
                    raise DataError("GmmSpec: all component means must share the dimension")

    @property
    def dim(self) -> int:
        return len(self.classes[0][0].mean)

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    def flat_components(self, class_condition: int | None = None):
        """(weights, means, variances) arrays, optionally for a single class."""
        if class_condition is None:
            weights, means, variances = [], [], []
            for prior, comps in zip(self.priors, self.classes):
                for c in comps:
                    weights.append(prior * c.weight)
                    means.append(c.mean)
                    variances.append(c.variance)
        else:
            if not 0 <= class_condition < self.n_classes:
                raise DataError(f"class_condition {class_condition} out of range")
            comps = self.classes[class_condition]
            weights = [c.weight for c in comps]
            means = [c.mean for c in comps]
            variances = [c.variance for c in comps]
        return (
            np.array(weights, dtype=np.float64),
            np.array(means, dtype=np.float64),
            np.array(variances, dtype=np.float64),
        )

    def to_dict(self) -> dict:
        return {
            "priors": list(self.priors),
            "classes": [
                [{"weight": c.weight, "mean": list(c.mean), "variance": c.variance} for c in comps]
                for comps in self.classes
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GmmSpec":
        classes = tuple(
            tuple(
                GaussianComponent(c["weight"], tuple(float(v) for v in c["mean"]), c["variance"])
                for c in comps
            )
            for comps in d["classes"]
        )
        return cls(classes=classes, priors=tuple(float(p) for p in d["priors"]))


def default_ind_spec() -> GmmSpec:
    """3 classes x 2 components on a circle of radius 2, sigma 0.35."""
    return _template_spec(radius=2.0, sigma=0.35)


def default_ood_spec() -> GmmSpec:
    """The InD template with shifted means and inflated variance.

    Means move to radius 2.8 and rotate between the InD clusters; sigma
    grows to 0.6. Close enough that detectors disagree, far enough that a
    good one separates well.
    """
    return _template_spec(radius=2.8, sigma=0.6, rotation_deg=60.0)


def _template_spec(radius: float, sigma: float, rotation_deg: float = 0.0) -> GmmSpec:
    angles = [(0.0, 30.0), (120.0, 150.0), (240.0, 270.0)]
    classes = []
    for pair in angles:
        comps = []
        for deg in pair:
            rad = math.radians(deg + rotation_deg)
            comps.append(
                GaussianComponent(
                    weight=0.5,
                    mean=(radius * math.cos(rad), radius * math.sin(rad)),
                    variance=sigma * sigma,
                )
            )
        classes.append(tuple(comps))
    return GmmSpec(classes=tuple(classes), priors=(1 / 3, 1 / 3, 1 / 3))


def sample_point(spec: GmmSpec, rng: np.random.Generator) -> tuple[np.ndarray, int]:
    """One draw from the mixture; returns (point, class label)."""
    label = int(rng.choice(spec.n_classes, p=np.array(spec.priors)))
    comps = spec.classes[label]
    weights = np.array([c.weight for c in comps])
    j = int(rng.choice(len(comps), p=weights))
    comp = comps[j]
    point = np.array(comp.mean) + math.sqrt(comp.variance) * rng.standard_normal(spec.dim)
    return point, label


def sample_points(spec: GmmSpec, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    points = np.empty((n, spec.dim))
    labels = np.empty(n, dtype=np.int64)
    for i in range(n):
        points[i], labels[i] = sample_point(spec, rng)
    return points, labels


# ---------------------------------------------------------------------------
# Noise schedule and diffused mixture
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DiffusionSchedule:
    """Variance schedule beta_1..beta_T with cumulative alpha_bar products."""

    beta: np.ndarray
    alpha_bar: np.ndarray

    @property
    def t_max(self) -> int:
        return self.beta.shape[0]

    def alpha_bar_at(self, t: int) -> float:
        """alpha_bar at step t, with alpha_bar_0 = 1 (no noise)."""
        if not 0 <= t <= self.t_max:
            raise DataError(f"t={t} outside [0, {self.t_max}]")
        return 1.0 if t == 0 else float(self.alpha_bar[t - 1])

    def to_dict(self) -> dict:
        return {"beta": self.beta.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "DiffusionSchedule":
        beta = np.array(d["beta"], dtype=np.float64)
        return cls(beta=beta, alpha_bar=np.cumprod(1.0 - beta))


def make_schedule(t_steps: int, beta_start: float = 1e-4, beta_end: float = 0.25) -> DiffusionSchedule:
    """Linear beta schedule of ``t_steps`` steps."""
    if t_steps < 1:
        raise DataError(f"t_steps must be >= 1, got {t_steps}")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise DataError(f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})")
    beta = np.linspace(beta_start, beta_end, t_steps)
    return DiffusionSchedule(beta=beta, alpha_bar=np.cumprod(1.0 - beta))


def _diffused(spec: GmmSpec, t: int, schedule: DiffusionSchedule, class_condition: int | None):
    """Weights, means and variances of the mixture diffused to step t."""
    weights, means, variances = spec.flat_components(class_condition)
    a_bar = schedule.alpha_bar_at(t)
    return weights, math.sqrt(a_bar) * means, a_bar * variances + (1.0 - a_bar)


def log_density(
    x: np.ndarray,
    t: int,
    spec: GmmSpec,
    schedule: DiffusionSchedule,
    class_condition: int | None = None,
) -> float | np.ndarray:
    """log p_t(x) of the diffused mixture at points x of shape (d,) or (n, d)."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    pts = np.atleast_2d(x)
    weights, means, variances = _diffused(spec, t, schedule, class_condition)
    d = means.shape[1]
    sq = np.sum((pts[:, None, :] - means[None, :, :]) ** 2, axis=-1)
    log_comp = -0.5 * d * np.log(2.0 * math.pi * variances)[None, :] - sq / (2.0 * variances[None, :])
    out = logsumexp(log_comp + np.log(weights)[None, :], axis=1)
    return float(out[0]) if single else out


def gmm_score(
    x: np.ndarray,
    t: int,
    spec: GmmSpec,
    schedule: DiffusionSchedule,
    class_condition: int | None = None,
) -> np.ndarray:
    """Exact gradient of log p_t at x; shape matches x ((d,) or (n, d))."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    pts = np.atleast_2d(x)
    weights, means, variances = _diffused(spec, t, schedule, class_condition)
    d = means.shape[1]
    diff = pts[:, None, :] - means[None, :, :]
    sq = np.sum(diff**2, axis=-1)
    log_comp = (
        np.log(weights)[None, :]
        - 0.5 * d * np.log(2.0 * math.pi * variances)[None, :]
        - sq / (2.0 * variances[None, :])
    )
    resp = _softmax(log_comp, axis=1)
    score = np.sum(resp[:, :, None] * (-diff / variances[None, :, None]), axis=1)
    return score[0] if single else score


# ---------------------------------------------------------------------------
# Forward and reverse sampling
# ---------------------------------------------------------------------------


def _draw_normal(rng, shape: tuple[int, int]) -> np.ndarray:
    if isinstance(rng, np.random.Generator):
        return rng.standard_normal(shape)
    if len(rng) != shape[0]:
        raise DataError(f"need one stream per row: {len(rng)} streams for {shape[0]} rows")
    return np.stack([g.standard_normal(shape[1]) for g in rng])


def forward_marginal_sample(x0: np.ndarray, t: int, schedule: DiffusionSchedule, rng) -> np.ndarray:
    """Draw from the closed-form forward marginal q(x_t | x_0)."""
    if not 1 <= t <= schedule.t_max:
        raise DataError(f"t={t} outside [1, {schedule.t_max}]")
    x0 = np.asarray(x0, dtype=np.float64)
    single = x0.ndim == 1
    pts = np.atleast_2d(x0)
    a_bar = schedule.alpha_bar_at(t)
    noise = _draw_normal(rng, pts.shape)
    out = math.sqrt(a_bar) * pts + math.sqrt(1.0 - a_bar) * noise
    return out[0] if single else out


def _guided_score(pts, t, spec, schedule, guidance_scale, condition):
    base = gmm_score(pts, t, spec, schedule)
    if condition is None or guidance_scale == 0.0:
        return base
    cond = np.broadcast_to(np.asarray(condition, dtype=np.int64), (pts.shape[0],))
    cond_score = np.empty_like(base)
    for label in np.unique(cond):
        rows = cond == label
        cond_score[rows] = gmm_score(pts[rows], t, spec, schedule, class_condition=int(label))
    return base + guidance_scale * (cond_score - base)


def reverse_sample(
    x_input: np.ndarray,
    spec: GmmSpec,
    schedule: DiffusionSchedule,
    *,
    sampler: str = "ddim",
    guidance: str = "none",
    guidance_scale: float = 1.0,
    condition: int | np.ndarray | None = None,
    t_start: int | None = None,
    rng,
) -> np.ndarray:
    """Noise the input to ``t_start`` and run the reverse process back to 0.

    ``x_input`` may be a point (d,) or a batch (n, d); ``rng`` is a single
    generator (batch draws) or one generator per row (stream-addressed
    draws; row i then depends only on stream i and x_input[i]). The DDIM
    path is deterministic after the forward draw. Under conditional
    guidance the exact gradient of the diffused class-posterior
    log-probability is added to the score, scaled by ``guidance_scale``.
    """
    if sampler not in SAMPLERS:
        raise DataError(f"unknown sampler {sampler!r}; expected one of {SAMPLERS}")
    if guidance not in GUIDANCES:
        raise DataError(f"unknown guidance {guidance!r}; expected one of {GUIDANCES}")
    if guidance == "conditional" and condition is None:
        raise DataError("conditional guidance requires a condition class")
    if guidance == "none":
        condition = None
    if guidance_scale < 0:
        raise DataError(f"guidance scale must be >= 0, got {guidance_scale}")
    t_start = schedule.t_max if t_start is None else t_start
    if not 0 <= t_start <= schedule.t_max:
        raise DataError(f"t_start={t_start} outside [0, {schedule.t_max}]")
    x_input = np.asarray(x_input, dtype=np.float64)
    single = x_input.ndim == 1
    pts = np.atleast_2d(x_input)
    if t_start == 0:
        return x_input.copy()

    x = math.sqrt(schedule.alpha_bar_at(t_start)) * pts + math.sqrt(
        1.0 - schedule.alpha_bar_at(t_start)
    ) * _draw_normal(rng, pts.shape)

    for t in range(t_start, 0, -1):
        score = _guided_score(x, t, spec, schedule, guidance_scale, condition)
        a_bar_t = schedule.alpha_bar_at(t)
        a_bar_prev = schedule.alpha_bar_at(t - 1)
        if sampler == "ddim":
            eps_hat = -math.sqrt(1.0 - a_bar_t) * score
            x0_pred = (x - math.sqrt(1.0 - a_bar_t) * eps_hat) / math.sqrt(a_bar_t)
            x = math.sqrt(a_bar_prev) * x0_pred + math.sqrt(1.0 - a_bar_prev) * eps_hat
        else:
            beta_t = float(schedule.beta[t - 1])
            mean = (x + beta_t * score) / math.sqrt(1.0 - beta_t)
            var = (1.0 - a_bar_prev) / (1.0 - a_bar_t) * beta_t
            x = mean
            if var > 0.0:
                x = x + math.sqrt(var) * _draw_normal(rng, pts.shape)
    return x[0] if single else x


# ---------------------------------------------------------------------------
# Toy classifier
# ---------------------------------------------------------------------------


@dataclass
class ToyTrainConfig:
    n_centers: int = 24
    bandwidth: float | None = None  # None: half the median pairwise center distance
    steps: int = 400
    learning_rate: float = 2.0
    seed: int = 0


@dataclass(eq=False)
class ToyClassifier:
    """Radial-basis feature map with a trained softmax head."""

    centers: np.ndarray  # (n_centers, d)
    bandwidth: float
    head: ClassifierHead

    def features_of(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        pts = np.atleast_2d(x)
        sq = np.sum((pts[:, None, :] - self.centers[None, :, :]) ** 2, axis=-1)
        phi = np.exp(-sq / (2.0 * self.bandwidth**2))
        return phi[0] if single else phi

    def logits_of(self, x: np.ndarray) -> np.ndarray:
        return self.head.logits(self.features_of(x))

    def cross_entropy(self, x: np.ndarray, labels: np.ndarray) -> float:
        probs = _softmax(self.logits_of(np.atleast_2d(x)), axis=1)
        picked = probs[np.arange(len(labels)), np.asarray(labels, dtype=np.int64)]
        return float(-np.mean(np.log(np.maximum(picked, 1e-300))))

    def accuracy(self, x: np.ndarray, labels: np.ndarray) -> float:
        pred = np.argmax(self.logits_of(np.atleast_2d(x)), axis=1)
        return float(np.mean(pred == np.asarray(labels)))

    def to_dict(self) -> dict:
        return {
            "centers": self.centers.tolist(),
            "bandwidth": self.bandwidth,
            "head": self.head.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ToyClassifier":
        return cls(
            centers=np.array(d["centers"], dtype=np.float64),
            bandwidth=float(d["bandwidth"]),
            head=ClassifierHead.from_dict(d["head"]),
        )


def train_toy_classifier(
    points: np.ndarray, labels: np.ndarray, config: ToyTrainConfig | None = None
) -> ToyClassifier:
    """Fit the radial-basis softmax classifier by full-batch gradient descent.

    Deterministic given the config seed. Training diverging to a non-finite
    loss raises NumericalError with the config echoed.
    """
    config = config or ToyTrainConfig()
    points = np.asarray(points, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n_classes = int(labels.max()) + 1 if labels.size else 0
    if n_classes < 2 or len(np.unique(labels)) < n_classes:
        raise DataError("training data must represent every class 0..C-1, with C >= 2")
    if points.shape[0] < config.n_centers:
        raise DataError(
            f"need at least n_centers={config.n_centers} training points, got {points.shape[0]}"
        )
    rng = stream(config.seed, "classifier-centers")
    centers = points[rng.choice(points.shape[0], size=config.n_centers, replace=False)]
    if config.bandwidth is not None:
        bandwidth = float(config.bandwidth)
    else:
        diffs = centers[:, None, :] - centers[None, :, :]
        dists = np.sqrt(np.sum(diffs**2, axis=-1))
        bandwidth = 0.5 * float(np.median(dists[np.triu_indices(len(centers), k=1)]))
    if bandwidth <= 0:
        raise DataError("bandwidth must be positive")

    sq = np.sum((points[:, None, :] - centers[None, :, :]) ** 2, axis=-1)
    phi = np.exp(-sq / (2.0 * bandwidth**2))
    n, m = phi.shape
    weights = np.zeros((m, n_classes))
    bias = np.zeros(n_classes)
    onehot = np.eye(n_classes)[labels]
    for step in range(config.steps):
        probs = _softmax(phi @ weights + bias, axis=1)
        loss = float(-np.mean(np.log(np.maximum(probs[np.arange(n), labels], 1e-300))))
        if not math.isfinite(loss):
            raise NumericalError(f"training diverged at step {step} with config {config}")
        grad = (probs - onehot) / n
        weights -= config.learning_rate * (phi.T @ grad)
        bias -= config.learning_rate * np.sum(grad, axis=0)
    return ToyClassifier(centers=centers, bandwidth=bandwidth, head=ClassifierHead(weights, bias))


def embed(point: np.ndarray, clf: ToyClassifier, record_id: str = "") -> RepresentationRecord:
    """Record of radial-basis features and head logits for one point."""
    features = clf.features_of(point)
    return RepresentationRecord(record_id, features, clf.head.logits(features))


def embed_batch(points: np.ndarray, clf: ToyClassifier, ids: Sequence[str]) -> list[RepresentationRecord]:
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if len(ids) != points.shape[0]:
        raise DataError(f"{points.shape[0]} points but {len(ids)} ids")
    features = clf.features_of(points)
    logits = clf.head.logits(features)
    return [
        RepresentationRecord(ids[i], features[i].copy(), logits[i].copy())
        for i in range(points.shape[0])
    ]


# ---------------------------------------------------------------------------
# Benchmark construction
# ---------------------------------------------------------------------------


@dataclass
class SamplerConfig:
    sampler: str = "ddim"
    t_start: int | None = None  # None: start from the last schedule step
    guidance: str = "conditional"
    guidance_scale: float = 1.0


@dataclass(eq=False)
class ToyBenchmark:
    spec_in: GmmSpec
    spec_out: GmmSpec
    clf: ToyClassifier
    schedule: DiffusionSchedule
    sampler: SamplerConfig
    seed: int
    n_per_split: int
    splits: dict[str, list[PairedRecord]]
    raw: dict[str, tuple[np.ndarray, np.ndarray]]  # split -> (inputs, generations)
    labels: dict[str, np.ndarray]
    bank_ids: list[str]
    bank_features: np.ndarray
    bank_logits: np.ndarray


def build_benchmark(
    spec_in: GmmSpec,
    spec_out: GmmSpec,
    clf: ToyClassifier,
    schedule: DiffusionSchedule,
    sampler: SamplerConfig,
    n_per_split: int,
    seed: int,
    n_bank: int | None = None,
) -> ToyBenchmark:
    """Sample, reconstruct and embed the three evaluation splits plus a bank.

    For every input point x the reverse process produces its reconstruction,
    both are embedded through the classifier, and the pair is emitted. The
    feature bank is an independent InD sample standing in for stored
    training features.
    """
    if spec_in.dim != spec_out.dim:
        raise DataError("InD and OoD specs must share the dimension")
    if sampler.sampler not in SAMPLERS:
        raise DataError(f"unknown sampler {sampler.sampler!r}")
    n_bank = 2 * n_per_split if n_bank is None else n_bank
    splits: dict[str, list[PairedRecord]] = {}
    raw: dict[str, tuple[np.ndarray, np.ndarray]] = {}
    labels: dict[str, np.ndarray] = {}
    for split in SPLITS:
        spec = spec_in if split.startswith("ind") else spec_out
        points = np.empty((n_per_split, spec.dim))
        lab = np.empty(n_per_split, dtype=np.int64)
        for i in range(n_per_split):
            points[i], lab[i] = sample_point(spec, stream(seed, split, i, "point"))
        condition = None
        if sampler.guidance == "conditional" and n_per_split > 0:
            condition = np.argmax(clf.logits_of(points), axis=1)
        diffusion_streams = [stream(seed, split, i, "diffusion") for i in range(n_per_split)]
        if n_per_split > 0:
            generated = reverse_sample(
                points,
                spec_in,
                schedule,
                sampler=sampler.sampler,
                guidance=sampler.guidance,
                guidance_scale=sampler.guidance_scale,
                condition=condition,
                t_start=sampler.t_start,
                rng=diffusion_streams,
            )
        else:
            generated = points.copy()
        ids = [f"{split}-{i:05d}" for i in range(n_per_split)]
        input_records = embed_batch(points, clf, ids) if n_per_split else []
        gen_records = embed_batch(generated, clf, ids) if n_per_split else []
        splits[split] = pair_datasets(input_records, gen_records, lab)
        raw[split] = (points, generated)
        labels[split] = lab

    bank_points = np.empty((n_bank, spec_in.dim))
    for i in range(n_bank):
        bank_points[i], _ = sample_point(spec_in, stream(seed, "bank", i, "point"))
    bank_ids = [f"bank-{i:05d}" for i in range(n_bank)]
    bank_features = clf.features_of(bank_points) if n_bank else np.empty((0, clf.centers.shape[0]))
    bank_logits = clf.head.logits(bank_features) if n_bank else np.empty((0, clf.head.n_classes))
    return ToyBenchmark(
        spec_in=spec_in,
        spec_out=spec_out,
        clf=clf,
        schedule=schedule,
        sampler=sampler,
        seed=seed,
        n_per_split=n_per_split,
        splits=splits,
        raw=raw,
        labels=labels,
        bank_ids=bank_ids,
        bank_features=bank_features,
        bank_logits=bank_logits,
    )


def _ext(fmt: str) -> str:
    return "csv" if fmt == TEXT_FORMAT else "bin"


def write_benchmark(bench: ToyBenchmark, outdir: str | Path, fmt: str = TEXT_FORMAT) -> Path:
    """Emit record files, the feature bank, the classifier and the manifest."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    manifests: list[DatasetManifest] = []
    for split, pairs in bench.splits.items():
        role = SPLIT_ROLES[split]
        for side in ("input", "generation"):
            fname = f"{split}_{side}.{_ext(fmt)}"
            records = [getattr(p, side) for p in pairs]
            save_records(records, outdir / fname, fmt)
            manifests.append(make_manifest(f"{split}/{side}", role, outdir / fname, fmt))
    bank_records = [
        RepresentationRecord(bench.bank_ids[i], bench.bank_features[i], bench.bank_logits[i])
        for i in range(len(bench.bank_ids))
    ]
    bank_file = f"bank.{_ext(fmt)}"
    save_records(bank_records, outdir / bank_file, fmt)
    manifests.append(make_manifest("bank", "feature-bank", outdir / bank_file, fmt))

    (outdir / "classifier.json").write_text(
        json.dumps(bench.clf.to_dict(), sort_keys=True) + "\n", encoding="utf-8"
    )
    toy_config = {
        "spec_in": bench.spec_in.to_dict(),
        "spec_out": bench.spec_out.to_dict(),
        "schedule": bench.schedule.to_dict(),
        "sampler": {
            "sampler": bench.sampler.sampler,
            "t_start": bench.sampler.t_start,
            "guidance": bench.sampler.guidance,
            "guidance_scale": bench.sampler.guidance_scale,
        },
        "n_per_split": bench.n_per_split,
        "seed": bench.seed,
    }
    (outdir / "toy_config.json").write_text(
        json.dumps(toy_config, sort_keys=True) + "\n", encoding="utf-8"
    )
    payload = {
        "kind": "toy-benchmark",
        "seed": bench.seed,
        "format": fmt,
        "splits": list(bench.splits.keys()),
        "labels": {split: [int(v) for v in lab] for split, lab in bench.labels.items()},
        "datasets": [m.to_dict() for m in manifests],
        "classifier": "classifier.json",
        "toy_config": "toy_config.json",
    }
    write_benchmark_manifest(outdir / "manifest.json", payload)
    return outdir / "manifest.json"


@dataclass(eq=False)
class LoadedBenchmark:
    manifest: dict
    clf: ToyClassifier
    head: ClassifierHead
    pairs: dict[str, list[PairedRecord]]
    labels: dict[str, np.ndarray]
    bank_features: np.ndarray
    bank_logits: np.ndarray
    toy_config: dict


def load_benchmark(outdir: str | Path) -> LoadedBenchmark:
    """Load and verify a benchmark directory written by :func:`write_benchmark`."""
    outdir = Path(outdir)
    manifest = load_benchmark_manifest(outdir / "manifest.json")
    datasets = {d["name"]: DatasetManifest.from_dict(d) for d in manifest["datasets"]}
    pairs: dict[str, list[PairedRecord]] = {}
    labels: dict[str, np.ndarray] = {}
    for split in manifest["splits"]:
        inputs = verify_manifest(datasets[f"{split}/input"], outdir)
        gens = verify_manifest(datasets[f"{split}/generation"], outdir)
        lab = np.array(manifest["labels"][split], dtype=np.int64)
        pairs[split] = pair_datasets(inputs, gens, lab)
        labels[split] = lab
    bank_records = verify_manifest(datasets["bank"], outdir)
    bank_features = (
        np.stack([r.features for r in bank_records]) if bank_records else np.empty((0, 0))
    )
    bank_logits = np.stack([r.logits for r in bank_records]) if bank_records else np.empty((0, 0))
    clf = ToyClassifier.from_dict(
        json.loads((outdir / manifest["classifier"]).read_text(encoding="utf-8"))
    )
    toy_config = json.loads((outdir / manifest["toy_config"]).read_text(encoding="utf-8"))
    return LoadedBenchmark(
        manifest=manifest,
        clf=clf,
        head=clf.head,
        pairs=pairs,
        labels=labels,
        bank_features=bank_features,
        bank_logits=bank_logits,
        toy_config=toy_config,
    )
