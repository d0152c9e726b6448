import numpy as np
import pytest

from copyshield.data import SyntheticSpec, gen_synthetic_dataset
from copyshield.numerics import DimensionError, LabeledSample
from copyshield.training import (
    Dataset,
    TrainConfig,
    TrainingDivergedError,
    evaluate_accuracy,
    init_model,
    predictions,
    train,
)


@pytest.fixture(scope="module")
def blobs():
    return gen_synthetic_dataset(SyntheticSpec(3, 8, 200, separation=6.0, seed=3, test_count=300))


def cfg(seed, **kw):
    base = dict(architecture=(8, 12, 3), epochs=5)
    base.update(kw)
    return TrainConfig(seed, **base)


def test_same_seed_gives_identical_parameters(blobs):
    a = train(blobs[0], cfg(1))
    b = train(blobs[0], cfg(1))
    assert a.flat_params.tobytes() == b.flat_params.tobytes()


def test_different_seeds_differ(blobs):
    a = train(blobs[0], cfg(1))
    b = train(blobs[0], cfg(2))
    assert not np.array_equal(a.flat_params, b.flat_params)


def test_separable_blobs_are_learned(blobs):
    assert evaluate_accuracy(train(blobs[0], cfg(1, epochs=20)), blobs[1]) >= 0.95


def test_identical_class_means_give_chance_accuracy():
    tr, te = gen_synthetic_dataset(SyntheticSpec(3, 8, 200, separation=0.0, seed=4, test_count=600))
    acc = evaluate_accuracy(train(tr, cfg(1)), te)
    assert abs(acc - 1 / 3) <= 0.1


def test_accuracy_counts_exactly():
    from conftest import linear_model
    m = linear_model([[1.0, 0.0], [0.0, 1.0]], [0.0, 0.0])
    X = np.array([[0.9, 0.1], [0.1, 0.9], [0.8, 0.3], [0.2, 0.6]])
    d = Dataset(X, np.array([0, 1, 1, 0]), 2)
    assert predictions(m, d).tolist() == [0, 1, 0, 1]
    assert evaluate_accuracy(m, d) == 0.5


def test_accuracy_invariant_under_permutation(blobs):
    m = train(blobs[0], cfg(1, epochs=1))
    perm = np.random.default_rng(0).permutation(len(blobs[1]))
    assert evaluate_accuracy(m, blobs[1]) == evaluate_accuracy(m, blobs[1].subset(perm))


def test_init_is_he_normal_and_seeded():
    m = init_model((400, 300, 3), 5)
    W = m.layers[0].weights
    assert abs(W.std() - np.sqrt(2 / 400)) < 0.003
    assert not np.any(m.layers[0].bias)
    assert m.activations == ["relu", "identity"]
    assert np.array_equal(W, init_model((400, 300, 3), 5).layers[0].weights)


def test_divergence_is_reported(blobs):
    with pytest.raises(TrainingDivergedError):
        train(blobs[0], cfg(1, learning_rate=1e200, momentum=0.0))


def test_shape_checks(blobs):
    with pytest.raises(DimensionError):
        train(blobs[0], cfg(1, architecture=(7, 3)))
    with pytest.raises(DimensionError):
        train(blobs[0], cfg(1, architecture=(8, 2)))
    with pytest.raises(ValueError):
        TrainConfig(1, momentum=1.0)
    with pytest.raises(ValueError):
        Dataset(np.zeros((2, 2)), np.array([0, 3]), 2)


def test_dataset_clips_and_freezes():
    d = Dataset.from_samples([LabeledSample(np.array([1.5, -0.2]), 1)], 2)
    assert d.X.tolist() == [[1.0, 0.0]]
    with pytest.raises(ValueError):
        d.X[0, 0] = 0.5
