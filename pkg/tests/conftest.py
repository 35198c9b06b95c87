import pytest

from d3ood import detectors as det
from d3ood import toydiff
from d3ood.rectify import config_from_percentiles
from d3ood.streams import derive_seed, stream

# canonical toy pipeline (default geometry, seed 0) shared across test modules


@pytest.fixture(scope="session")
def ind_spec():
    return toydiff.default_ind_spec()


@pytest.fixture(scope="session")
def ood_spec():
    return toydiff.default_ood_spec()


@pytest.fixture(scope="session")
def schedule24():
    return toydiff.make_schedule(24)


@pytest.fixture(scope="session")
def toy_clf(ind_spec):
    points, labels = toydiff.sample_points(ind_spec, 600, stream(0, "train"))
    return toydiff.train_toy_classifier(
        points, labels, toydiff.ToyTrainConfig(seed=derive_seed(0, "clf"))
    )


@pytest.fixture(scope="session")
def benchmark(ind_spec, ood_spec, toy_clf, schedule24):
    return toydiff.build_benchmark(
        ind_spec, ood_spec, toy_clf, schedule24, toydiff.SamplerConfig(), n_per_split=256, seed=0
    )


@pytest.fixture(scope="session")
def react_config(benchmark):
    return det.D3Config(
        lam=0.5,
        rectify=config_from_percentiles(benchmark.bank_features, "react"),
        removal_target="generation",
    )


@pytest.fixture(scope="session")
def calibration(benchmark, toy_clf, react_config):
    return det.calibrate(benchmark.splits["ind-cal"], toy_clf.head, react_config)


def random_record(rng, m=6, n_classes=4, rec_id="r"):
    from d3ood.records import RepresentationRecord

    return RepresentationRecord(rec_id, rng.standard_normal(m), rng.standard_normal(n_classes))
