import numpy as np
import pytest

from hingecells import core
from hingecells.core import LabeledDataset, Mode, NetworkShape, Params
from hingecells.errors import DatasetError, Divergence, NotSeparable, ParamsError, ShapeError, UnsupportedConfiguration

from conftest import random_instance


def test_leaky_relu():
    assert core.leaky_relu(-2.0, 0.25) == pytest.approx(-0.5)
    assert core.leaky_relu(3.0, 0.0) == 3.0
    assert core.leaky_relu(3.0, 1.0) == 3.0
    assert core.leaky_relu(0.0, 0.25) == 0.0


def test_forward_hand_evaluation():
    # setup test problem
    # -------------------------------------------------------------------------
    shape = NetworkShape.build(1, [1], 1, alpha=0.0)
    params = Params(shape, [[[1.0]]], [[-1.0]], [[1.0]], [0.0])

    # check single and batched passes
    # -------------------------------------------------------------------------
    features, out = core.forward(params, [2.0])
    assert features[1].tolist() == [1.0]
    assert out.tolist() == [1.0]

    _, batch = core.forward_batch(params, np.array([[2.0], [0.0]]))
    assert batch[:, 0].tolist() == [1.0, 0.0]


def test_forward_without_hidden_layers():
    rng = np.random.default_rng(0)
    shape = NetworkShape.build(3, [], 2)
    params = Params.uniform(shape, rng)
    x = rng.normal(size=3)

    _, out = core.forward(params, x)
    assert np.allclose(out, params.V @ x + params.c, rtol=0, atol=1e-15)


def test_forward_matches_straight_line_evaluation():
    rng = np.random.default_rng(1)
    tol = 1e-14

    for _ in range(20):
        data, params = random_instance(rng, L=2, alpha=0.25)
        x = data.points[0]

        h = x
        for w, b in zip(params.W, params.b):
            z = w @ h + b
            h = np.array([ zk if zk > 0 else 0.25 * zk for zk in z ])
        expected = params.V @ h + params.c

        _, out = core.forward(params, x)
        assert np.allclose(out, expected, rtol=tol, atol=tol)


@pytest.mark.parametrize('L', [1, 2, 3])
def test_forward_positive_homogeneity(L):
    rng = np.random.default_rng(10 + L)
    tol = 1e-12

    for t in [0.5, 2.0, 3.7]:
        data, params = random_instance(rng, L=L, alpha=0.25)
        for b in params.b:
            b[:] = 0.0
        params.c[:] = 0.0

        scaled = params.copy()
        for w in scaled.W:
            w *= t
        scaled.V *= t

        _, out = core.forward_batch(params, data.points)
        _, out_scaled = core.forward_batch(scaled, data.points)
        assert np.allclose(out_scaled, t ** (L + 1) * out, rtol=tol, atol=tol)


def test_hinge_binary():
    assert core.hinge_binary(0.0, 1) == 1.0
    assert core.hinge_binary(2.0, 1) == 0.0
    assert core.hinge_binary(-0.5, 1) == 1.5


def test_hinge_multi():
    assert core.hinge_multi(np.zeros(4), 2) == 3.0
    assert core.hinge_multi([5.0, 0.0, 0.0], 1) == 0.0

    with pytest.raises(ShapeError):
        core.hinge_multi([0.0, 1.0], 3)


def test_hinge_multi_forms_agree():
    rng = np.random.default_rng(2)
    tol = 1e-12

    for _ in range(50):
        R = int(rng.integers(2, 6))
        y_hat = rng.normal(size=R) * 2
        r0 = int(rng.integers(1, R + 1))
        onehot = np.eye(R)[r0 - 1]

        assert abs(core.hinge_multi(y_hat, r0) - core.hinge_multi_vector(y_hat, onehot)) < tol


def test_total_loss_toy_configurations(toy_data, toy_a, toy_b, toy_c):
    tol = 1e-12

    assert abs(core.total_loss(toy_a, toy_data) - 0.0) < tol
    assert abs(core.total_loss(toy_b, toy_data) - 0.3) < tol
    assert abs(core.total_loss(toy_c, toy_data) - 1.0) < tol


def test_total_loss_multiclass_matches_per_point_sum():
    rng = np.random.default_rng(3)
    data, params = random_instance(rng, L=1, R=3)

    _, outputs = core.forward_batch(params, data.points)
    expected = sum(mu * core.hinge_multi(out, int(r) + 1) for mu, out, r in zip(data.weights, outputs, data.classes))
    assert abs(core.total_loss(params, data) - expected) < 1e-12


def test_ova_loss():
    # setup test problem
    # -------------------------------------------------------------------------
    rng = np.random.default_rng(4)
    data = LabeledDataset.from_labels(rng.normal(size=(6, 2)), [1, 2, 3, 1, 2, 3], classes=3)
    shape = NetworkShape.build(2, [2], 3)

    # zero outputs: every class criterion is the sum of the weights
    # -------------------------------------------------------------------------
    zero = Params.zeros(shape)
    for r in (1, 2, 3):
        assert core.per_class_loss(zero, data, r) == pytest.approx(1.0)

    # random instance against brute-force summation
    # -------------------------------------------------------------------------
    params = Params.uniform(shape, rng)
    _, outputs = core.forward_batch(params, data.points)
    expected = 0.0
    for i in range(data.N):
        for r in range(3):
            y = 1.0 if data.classes[i] == r else -1.0
            expected += data.weights[i] * max(0.0, 1.0 - y * outputs[i, r])

    assert abs(core.ova_loss(params, data) - expected) < 1e-12
    assert abs(sum(core.per_class_loss(params, data, r) for r in (1, 2, 3)) - expected) < 1e-12

    with pytest.raises(UnsupportedConfiguration):
        core.ova_loss(Params.zeros(NetworkShape.build(2, [2], 1)), LabeledDataset.from_labels(data.points, [1, -1] * 3))


def test_dataset_validation():
    points = np.zeros((2, 1))

    with pytest.raises(DatasetError):
        LabeledDataset(points, [1, -1], [0.5, 0.6], Mode.BINARY)
    with pytest.raises(DatasetError):
        LabeledDataset(points, [1, -1], [1.0, 0.0], Mode.BINARY)
    with pytest.raises(DatasetError):
        LabeledDataset(points, [1, 2], [0.5, 0.5], Mode.BINARY)
    with pytest.raises(ShapeError):
        LabeledDataset(points, [1, -1, 1], [0.5, 0.5], Mode.BINARY)
    with pytest.raises(DatasetError):
        LabeledDataset(points, [[1, 1], [0, 1]], [0.5, 0.5], Mode.MULTICLASS)

    relaxed = LabeledDataset(points, [1, -1], [0.3, 0.3], Mode.BINARY, strict_weights=False)
    assert relaxed.weights.sum() == pytest.approx(0.6)


def test_dataset_mode_inference():
    binary = LabeledDataset.from_labels([[0.0], [1.0]], [1, -1])
    assert binary.mode is Mode.BINARY
    assert binary.R == 1
    assert binary.onehot().tolist() == [[1.0, 0.0], [0.0, 1.0]]

    multi = LabeledDataset.from_labels([[0.0], [1.0], [2.0]], [1, 3, 2])
    assert multi.mode is Mode.MULTICLASS
    assert multi.R == 3
    assert multi.classes.tolist() == [0, 2, 1]
    assert multi.weights.tolist() == pytest.approx([1 / 3] * 3)


def test_params_layout_and_errors():
    shape = NetworkShape.build(2, [3, 2], 1)
    assert [ name for name, _ in shape.layout() ] == ['W1', 'b1', 'W2', 'b2', 'V', 'c']
    assert shape.size == 6 + 3 + 6 + 2 + 2 + 1
    assert shape.D == 3 + 2 + 1

    vector = np.arange(shape.size, dtype=float)
    params = Params.from_vector(shape, vector)
    assert params.W[0].tolist() == [[0.0, 1.0], [2.0, 3.0], [4.0, 5.0]]
    assert params.c.tolist() == [float(shape.size - 1)]

    with pytest.raises(ShapeError):
        Params.from_vector(shape, vector[:-1])
    with pytest.raises(ParamsError):
        Params.from_vector(shape, np.full(shape.size, np.nan))
    with pytest.raises(ShapeError):
        NetworkShape.build(2, [2], 1, alpha=1.5)


def test_pinned_output_bias():
    rng = np.random.default_rng(5)
    shape = NetworkShape.build(2, [2], 1, output_bias=False)

    mask = core.free_mask(shape)
    assert not mask[-1] and mask[:-1].all()
    assert Params.uniform(shape, rng).c.tolist() == [0.0]


def test_lipschitz_bound_holds():
    # setup test problem
    # -------------------------------------------------------------------------
    rng = np.random.default_rng(6)
    from hingecells import cells

    # check observed changes against the bound
    # -------------------------------------------------------------------------
    for L in (1, 2):
        data, params = random_instance(rng, L=L)
        radius = 0.1
        bound = core.lipschitz_bound(params, data, radius)
        base = params.vector()
        pre = cells.preactivations(params, data)

        for _ in range(50):
            step = rng.normal(size=base.shape[0])
            step *= radius * rng.uniform() / np.linalg.norm(step)
            moved = params.replace(base + step)

            norm = np.linalg.norm(step)
            assert np.abs(cells.preactivations(moved, data) - pre).max() <= bound.preactivation * norm + 1e-12
            assert abs(core.total_loss(moved, data) - core.total_loss(params, data)) <= bound.loss * norm + 1e-12


def test_error_messages_carry_values():
    assert str(NotSeparable(-0.25)) == 'best margin -0.25 is not positive'
    assert str(Divergence(12, 2e6)) == 'loss 2000000.0 exceeded guard at step 12'
