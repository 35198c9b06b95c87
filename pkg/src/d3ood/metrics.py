"""Disparity metrics over paired representations, plus softmax/KL primitives.

Feature-space disparity is the l2 distance between unit-normalized feature
vectors; probability-space disparity is a KL ratio against the uniform
reference. Two ablation alternatives (direct KL, cosine similarity) share
the primitives. All arithmetic is float64; ratio metrics amplify rounding.
Everything here is a pure function, safe for unrestricted parallel use.
"""

from __future__ import annotations

import numpy as np

from .errors import DataError, DegenerateInputError

#: probability floor: softmax outputs are clamped here, then renormalized,
#: so no log ever sees an exact zero
EPS_FLOOR = 1e-12

#: guard for the KL-ratio denominator when an input is classified exactly uniformly
EPS_DIV = 1e-12

METRIC_KINDS = ("eps_l2", "eps_kl", "eps_kl_alt", "eps_cos")


def softmax(logits: np.ndarray) -> np.ndarray:
    """Max-stabilized softmax, floored at EPS_FLOOR and renormalized.

    Shift-invariant: softmax(z) == softmax(z + a) for any scalar a.
    """
    logits = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(logits)):
        raise DataError("softmax: non-finite logits")
    z = logits - np.max(logits, axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / np.sum(e, axis=-1, keepdims=True)
    p = np.maximum(p, EPS_FLOOR)
    return p / np.sum(p, axis=-1, keepdims=True)


def uniform(n_classes: int) -> np.ndarray:
    return np.full(n_classes, 1.0 / n_classes)


def is_probability_vector(p: np.ndarray, tol: float = 1e-9) -> bool:
    p = np.asarray(p)
    return (
        p.ndim == 1
        and p.shape[0] >= 2
        and bool(np.all(p >= 0.0))
        and abs(float(np.sum(p)) - 1.0) <= tol
    )


def kl_div(p: np.ndarray, q: np.ndarray) -> float:
    """D_KL(p || q) = sum_i p_i log(p_i / q_i), entries floored at EPS_FLOOR."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise DataError(f"kl_div: shape mismatch {p.shape} vs {q.shape}")
    p = np.maximum(p, EPS_FLOOR)
    q = np.maximum(q, EPS_FLOOR)
    val = float(np.sum(p * (np.log(p) - np.log(q))))
    return max(val, 0.0)


def kl_to_uniform(p: np.ndarray) -> float:
    return kl_div(p, uniform(np.asarray(p).shape[0]))


def _unit(h: np.ndarray, side: str) -> np.ndarray:
    h = np.asarray(h, dtype=np.float64)
    norm = float(np.linalg.norm(h))
    if norm == 0.0:
        raise DegenerateInputError(f"zero-norm feature vector ({side})")
    return h / norm


def eps_l2(h_x: np.ndarray, h_gen: np.ndarray) -> float:
    """l2 distance between unit-normalized features; in [0, 2]."""
    return float(np.linalg.norm(_unit(h_gen, "generation") - _unit(h_x, "input")))


def eps_kl_detailed(g_x: np.ndarray, g_gen: np.ndarray) -> tuple[float, bool]:
    """KL ratio D(g_gen || u) / D(g_x || u) and whether the denominator was clamped.

    An input classified exactly uniformly would divide by zero; the
    denominator is clamped to EPS_DIV and the clamp is reported so score
    records can flag it.
    """
    numerator = kl_to_uniform(g_gen)
    denominator = kl_to_uniform(g_x)
    clamped = denominator < EPS_DIV
    return numerator / max(denominator, EPS_DIV), clamped


def eps_kl(g_x: np.ndarray, g_gen: np.ndarray) -> float:
    return eps_kl_detailed(g_x, g_gen)[0]


def eps_kl_alt(g_x: np.ndarray, g_gen: np.ndarray) -> float:
    """Direct KL between the two probability vectors, no uniform reference."""
    return kl_div(g_gen, g_x)


def eps_cos(h_x: np.ndarray, h_gen: np.ndarray) -> float:
    """Cosine similarity of the features; in [-1, 1]. Note eps_l2^2 == 2 - 2*eps_cos."""
    return float(np.dot(_unit(h_gen, "generation"), _unit(h_x, "input")))
