import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from d3ood.errors import DataError
from d3ood.records import ClassifierHead, RepresentationRecord
from d3ood.rectify import (
    RectifyConfig,
    clip_features,
    config_from_percentiles,
    react_clip,
    rectified_outputs,
    vra_clip,
)

feature_arrays = st.lists(
    st.floats(min_value=-10, max_value=10, allow_nan=False), min_size=1, max_size=12
).map(np.array)


def test_react_elementwise_definition():
    out = react_clip(np.array([0.05, 0.2, -1.0]), 0.1)
    assert out.tolist() == [0.05, 0.1, -1.0]


def test_react_identity_below_ceiling():
    h = np.array([0.01, 0.05, -3.0])
    assert react_clip(h, 0.1).tolist() == h.tolist()


@given(feature_arrays)
def test_react_idempotent_and_bounded(h):
    once = react_clip(h, 0.1)
    assert np.array_equal(react_clip(once, 0.1), once)
    assert np.all(once <= 0.1)


def test_vra_piecewise_definition():
    out = vra_clip(np.array([0.05, 0.3, 0.9]), 0.1, 0.5)
    assert out.tolist() == [0.0, 0.3, 0.5]


def test_vra_identity_inside_band():
    h = np.array([0.1, 0.3, 0.5])
    assert vra_clip(h, 0.1, 0.5).tolist() == h.tolist()


@given(feature_arrays)
def test_vra_idempotent_and_in_range(h):
    once = vra_clip(h, 0.1, 0.5)
    assert np.array_equal(vra_clip(once, 0.1, 0.5), once)
    assert np.all((once == 0.0) | ((once >= 0.1) & (once <= 0.5)))


def test_vra_requires_alpha_below_beta():
    with pytest.raises(DataError):
        vra_clip(np.ones(3), 0.5, 0.5)
    with pytest.raises(DataError):
        RectifyConfig(mode="vra", alpha=0.6, beta=0.5)


def test_unknown_mode_rejected():
    with pytest.raises(DataError):
        RectifyConfig(mode="prune")


def _random_head(rng, m=5, n_classes=3):
    return ClassifierHead(rng.standard_normal((m, n_classes)), rng.standard_normal(n_classes))


def test_mode_none_returns_features_and_reprojected_logits():
    rng = np.random.default_rng(0)
    head = _random_head(rng)
    features = rng.standard_normal(5)
    record = RepresentationRecord("a", features, head.logits(features))
    out_features, out_logits = rectified_outputs(record, head, RectifyConfig(mode="none"))
    assert np.array_equal(out_features, features)
    assert np.allclose(out_logits, record.logits, atol=1e-12)


def test_zero_features_give_bias_logits():
    rng = np.random.default_rng(1)
    head = _random_head(rng)
    record = RepresentationRecord("a", np.zeros(5), head.bias.copy())
    for mode in ("none", "react", "vra"):
        cfg = RectifyConfig(mode=mode, c=0.1, alpha=0.1, beta=0.5)
        features, logits = rectified_outputs(record, head, cfg)
        # react/vra keep zeros at zero (0 <= c; 0 < alpha maps to 0)
        assert np.array_equal(features, np.zeros(5))
        assert np.array_equal(logits, head.bias)


def test_rectified_logits_match_matvec_oracle():
    rng = np.random.default_rng(2)
    for _ in range(25):
        head = _random_head(rng, m=6, n_classes=4)
        features = rng.standard_normal(6)
        record = RepresentationRecord("a", features, head.logits(features))
        cfg = RectifyConfig(mode="react", c=0.1)
        out_features, out_logits = rectified_outputs(record, head, cfg)
        clipped = np.minimum(features, 0.1)
        oracle = [
            sum(clipped[i] * head.weights[i, j] for i in range(6)) + head.bias[j] for j in range(4)
        ]
        assert np.allclose(out_logits, oracle, atol=1e-12)
        assert np.array_equal(out_features, clipped)


def test_dimension_mismatch_rejected():
    rng = np.random.default_rng(3)
    head = _random_head(rng, m=5)
    record = RepresentationRecord("a", np.ones(4), np.ones(3))
    with pytest.raises(DataError):
        rectified_outputs(record, head, RectifyConfig(mode="react"))


def test_config_from_percentiles():
    bank = np.linspace(0.0, 1.0, 101).reshape(-1, 1)
    cfg = config_from_percentiles(bank, "vra")
    assert cfg.alpha == pytest.approx(0.1)
    assert cfg.beta == pytest.approx(0.9)
    assert config_from_percentiles(bank, "react").c == pytest.approx(0.9)


def test_clip_features_dispatch():
    h = np.array([-0.2, 0.3, 0.8])
    assert np.array_equal(clip_features(h, RectifyConfig(mode="none")), h)
    assert np.array_equal(clip_features(h, RectifyConfig(mode="react", c=0.5)), np.minimum(h, 0.5))
    assert np.array_equal(
        clip_features(h, RectifyConfig(mode="vra", alpha=0.1, beta=0.5)),
        np.array([0.0, 0.3, 0.5]),
    )
