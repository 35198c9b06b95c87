"""Anomaly removal: clip penultimate features and re-project through the head.

Two truncation schemes are supported: a ceiling clip at ``c`` and a band
clip that zeroes below ``alpha`` and caps at ``beta``. Rectified logits are
always recomputed from the head; clipping acts on features, so only
re-projection reflects its downstream effect.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .records import ClassifierHead, RepresentationRecord

MODES = ("none", "react", "vra")

#: which side(s) of a pair get rectified
REMOVAL_TARGETS = ("generation", "input", "both", "none")


@dataclass(frozen=True)
class RectifyConfig:
    """Truncation mode and its constants.

    The stock defaults (c=0.1, alpha=0.1, beta=0.5) suit large pretrained
    backbones; toy pipelines should derive levels from InD feature
    percentiles via :func:`config_from_percentiles` instead.
    """

    mode: str = "react"
    c: float = 0.1
    alpha: float = 0.1
    beta: float = 0.5

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise DataError(f"unknown rectify mode {self.mode!r}; expected one of {MODES}")
        if self.mode == "vra" and not self.alpha < self.beta:
            raise DataError(f"vra requires alpha < beta, got alpha={self.alpha}, beta={self.beta}")


def react_clip(h: np.ndarray, c: float) -> np.ndarray:
    """Elementwise min(h, c); idempotent."""
    h = np.asarray(h, dtype=np.float64)
    if not np.all(np.isfinite(h)):
        raise DataError("react_clip: non-finite features")
    return np.minimum(h, c)


def vra_clip(h: np.ndarray, alpha: float, beta: float) -> np.ndarray:
    """0 below alpha, identity on [alpha, beta], beta above; idempotent."""
    if not alpha < beta:
        raise DataError(f"vra_clip requires alpha < beta, got alpha={alpha}, beta={beta}")
    h = np.asarray(h, dtype=np.float64)
    if not np.all(np.isfinite(h)):
        raise DataError("vra_clip: non-finite features")
    out = np.where(h < alpha, 0.0, np.minimum(h, beta))
    return out


def clip_features(h: np.ndarray, cfg: RectifyConfig) -> np.ndarray:
    if cfg.mode == "none":
        return np.asarray(h, dtype=np.float64)
    if cfg.mode == "react":
        return react_clip(h, cfg.c)
    return vra_clip(h, cfg.alpha, cfg.beta)


def rectified_outputs(
    record: RepresentationRecord, head: ClassifierHead, cfg: RectifyConfig
) -> tuple[np.ndarray, np.ndarray]:
    """Clipped features and their re-projected logits for one record."""
    if record.m != head.m:
        raise DataError(f"record has m={record.m} but head expects m={head.m}")
    features = clip_features(record.features, cfg)
    return features, head.logits(features)


def config_from_percentiles(
    bank_features: np.ndarray,
    mode: str,
    c_percentile: float = 90.0,
    alpha_percentile: float = 10.0,
    beta_percentile: float = 90.0,
) -> RectifyConfig:
    """Derive clip levels from InD feature statistics.

    The ceiling ``c`` sits at the 90th percentile of all InD activations;
    the band uses the 10th and 90th. Percentiles are global over the
    flattened bank, matching how ceiling clips are usually calibrated.
    """
    flat = np.asarray(bank_features, dtype=np.float64).ravel()
    if flat.size == 0:
        raise DataError("config_from_percentiles: empty feature bank")
    return RectifyConfig(
        mode=mode,
        c=float(np.percentile(flat, c_percentile)),
        alpha=float(np.percentile(flat, alpha_percentile)),
        beta=float(np.percentile(flat, beta_percentile)),
    )
