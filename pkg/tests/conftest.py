import numpy as np
import pytest

from hingecells.core import LabeledDataset, NetworkShape, Params


TOY_POSITIVES = [(-0.5, -0.2), (-0.1, -0.4), (-0.2, 1.3), (0.2, 1.4), (0.0, 1.7)]
TOY_NEGATIVES = [(1.6, 1.3), (2.0, 1.5), (1.9, 1.2), (1.9, 1.8), (2.0, -0.3)]


def random_instance(rng, L=1, d=2, N=5, alpha=0.25, R=1, K=3):
    """Random dataset and params of the requested mode and depth"""

    points = rng.normal(size=(N, d))
    if R == 1:
        labels = rng.choice([-1, 1], size=N)
        labels[0] = -1
    else:
        labels = rng.integers(1, R + 1, size=N)
    weights = rng.uniform(0.5, 1.5, size=N)
    data = LabeledDataset.from_labels(points, labels, weights, classes=R if R > 1 else None)

    shape = NetworkShape.build(d, [K] * L, R, alpha)
    return data, Params.uniform(shape, rng)


@pytest.fixture
def toy_data():
    points = np.array(TOY_POSITIVES + TOY_NEGATIVES)
    labels = np.array([1] * 5 + [-1] * 5)
    return LabeledDataset.from_labels(points, labels)


@pytest.fixture
def toy_shape():
    return NetworkShape.build(2, [2], 1, alpha=0.0, output_bias=False)


@pytest.fixture
def toy_a(toy_shape):
    return Params(toy_shape, [[[-2.5, 0.4], [2.4, 0.4]]], [[1.28, -3.84]], [[1.0, -3.0]], [0.0])


@pytest.fixture
def toy_b(toy_shape):
    return Params(toy_shape, [[[-1.5, 1.9], [1.7, 1.4]]], [[-1.35, -4.31]], [[2.0, -10.0]], [0.0])


@pytest.fixture
def toy_c(toy_shape):
    return Params(toy_shape, [[[-1.0, 0.0], [1.0, 0.0]]], [[-1.0, -2.7]], [[1.0, -1.0]], [0.0])


@pytest.fixture
def sharp_point():
    # one input location carrying both labels; the +1 copy sits on its hinge kink
    data = LabeledDataset.from_labels([[0.0], [0.0]], [1, -1], [0.6, 0.4])
    shape = NetworkShape.build(1, [1], 1, alpha=0.0)
    params = Params(shape, [[[1.0]]], [[0.5]], [[0.0]], [1.0])
    return data, params
