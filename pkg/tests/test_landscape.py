import numpy as np
import pytest

from hingecells import cells, clarke, core, landscape, multilinear
from hingecells.core import LabeledDataset, NetworkShape, Params
from hingecells.errors import BudgetExceeded, NotSeparable, PreconditionError
from hingecells.landscape import GenericityKind, MinimumKind


def probe_instances(toy_data, count, rng, v_zero=False):
    """Random leaky points on the toy data well away from every boundary"""

    shape = NetworkShape.build(2, [3], 1, alpha=0.25)
    found = []
    while len(found) < count:
        params = Params.uniform(shape, rng, scale=2.0)
        if v_zero:
            params.V[:] = 0.0
            params.c[:] = 0.3
        if np.min(np.abs(cells.preactivations(params, toy_data))) < 1e-2:
            continue
        if not v_zero and (core.total_loss(params, toy_data) == 0.0 or np.min(np.abs(params.V)) < 1e-2):
            continue
        found.append(params)
    return found


def test_separability_line():
    data = LabeledDataset.from_labels([[-1.0], [1.0]], [-1, 1])
    hyperplane = landscape.separability(data)

    assert hyperplane.q.tolist() == pytest.approx([1.0])
    assert hyperplane.beta == pytest.approx(0.0, abs=1e-9)
    assert hyperplane.margin == pytest.approx(1.0)


def test_separability_toy(toy_data):
    hyperplane = landscape.separability(toy_data)

    assert np.linalg.norm(hyperplane.q) == pytest.approx(1.0)
    assert hyperplane.margin > 0
    values = toy_data.targets * (toy_data.points @ hyperplane.q + hyperplane.beta)
    assert np.all(values >= hyperplane.margin - 1e-9)


def test_separability_single_class():
    data = LabeledDataset([[0.5, 1.0], [-2.0, 0.0]], [1.0, 1.0], [0.5, 0.5], 'binary')
    hyperplane = landscape.separability(data)

    assert hyperplane.margin > 0
    assert np.all(data.points @ hyperplane.q + hyperplane.beta >= hyperplane.margin)


def test_not_separable():
    data = LabeledDataset.from_labels([[0.5, 0.5], [0.5, 0.5]], [1, -1])

    with pytest.raises(NotSeparable):
        landscape.separability(data)


def test_genericity_single_point():
    data = LabeledDataset([[0.3]], [1.0], [1.0], 'binary')
    assert landscape.genericity(data, 0.25, 1).kind is GenericityKind.GENERIC


def test_genericity_balanced_duplicate_is_rare():
    data = LabeledDataset.from_labels([[0.5], [0.5]], [1, -1])
    verdict = landscape.genericity(data, 0.25, 1)

    assert verdict.kind is GenericityKind.RARE
    assert verdict.lambdas.tolist() == [1.0, 1.0]
    assert verdict.eps_point.tolist() == [1.0, 1.0]
    assert multilinear.rare_check(data, verdict.eps, verdict.lambdas)


def test_genericity_unbalanced_duplicate_is_generic():
    data = LabeledDataset.from_labels([[0.5], [0.5]], [1, -1], [0.6, 0.4])
    assert landscape.genericity(data, 0.25, 1).kind is GenericityKind.GENERIC

    data = LabeledDataset.from_labels([[0.5], [0.5]], [1, -1], [0.4, 0.6])
    assert landscape.genericity(data, 0.5, 1).kind is GenericityKind.GENERIC


def test_genericity_slopes_balance_weights():
    # setup test problem
    # -------------------------------------------------------------------------
    data = LabeledDataset.from_labels([[0.5, 0.5], [0.5, 0.5]], [1, -1], [1.0 / 3.0, 2.0 / 3.0])
    witness = 1.0 - data.onehot()
    lambdas = np.array([1.0, 0.5])

    # the weights alone do not balance, the slopes make up for it
    assert multilinear.rare_check(data, witness, lambdas)
    assert not multilinear.weirdcond_check(data, witness, lambdas)

    verdict = landscape.genericity(data, 0.5, 1)
    assert verdict.kind is GenericityKind.RARE
    assert verdict.lambdas.tolist() == [1.0, 0.5]
    assert verdict.eps.tolist() == witness.tolist()
    assert multilinear.rare_check(data, verdict.eps, verdict.lambdas)


def test_genericity_budget():
    rng = np.random.default_rng(0)
    data = LabeledDataset.from_labels(rng.normal(size=(30, 2)), [1, -1] * 15)

    with pytest.raises(BudgetExceeded):
        landscape.genericity(data, 0.25, 1)


@pytest.mark.parametrize('name, loss', [('toy_a', 0.0), ('toy_b', 0.3), ('toy_c', 1.0)])
def test_toy_minima_are_flat(request, toy_data, name, loss):
    params = request.getfixturevalue(name)
    result = landscape.classify_minimum(params, toy_data, rng=np.random.default_rng(0))

    assert result.loss == pytest.approx(loss)
    assert result.kind is MinimumKind.FLAT_TYPE_I
    assert result.flat_cells
    assert landscape.zero_loss_type_check(result).passed


@pytest.mark.parametrize('name', ['toy_b', 'toy_c'])
def test_relu_unsolved_points_sit_on_blind_side(request, toy_data, name):
    params = request.getfixturevalue(name)
    critical, cert = clarke.is_critical(params, toy_data)
    assert critical

    verdict = landscape.thm6_check(params, toy_data, cert)
    assert verdict.passed
    assert verdict.details['unsolved']


def test_sharp_minimum(sharp_point):
    data, params = sharp_point
    result = landscape.classify_minimum(params, data, rng=np.random.default_rng(0))

    assert result.kind is MinimumKind.SHARP_TYPE_II
    assert result.loss == pytest.approx(0.8)
    assert result.flat_cells == []
    assert landscape.zero_loss_type_check(result).details['vacuous']


def test_rho_coefficients(sharp_point):
    data, params = sharp_point
    _, cert = clarke.is_critical(params, data)

    rho = landscape.rho_coefficients(cert, data, params.shape)
    assert rho[:, 0].tolist() == pytest.approx([0.4, 0.4])


def test_non_critical_point_is_not_minimum(toy_data):
    rng = np.random.default_rng(1)
    params = probe_instances(toy_data, 1, rng)[0]

    result = landscape.classify_minimum(params, toy_data, rng=rng)
    assert result.kind is MinimumKind.NOT_MINIMUM
    assert result.evidence['descent'] == 'not_critical'


def test_leaky_zero_loss_point(toy_data, toy_a):
    # the same weights keep every margin with a leaky slope
    # -------------------------------------------------------------------------
    shape = NetworkShape.build(2, [2], 1, alpha=0.25, output_bias=False)
    params = Params(shape, toy_a.W, toy_a.b, toy_a.V, toy_a.c)
    assert core.total_loss(params, toy_data) == 0.0

    critical, cert = clarke.is_critical(params, toy_data)
    assert critical
    assert landscape.thm4_check(params, toy_data, cert).passed

    result = landscape.classify_minimum(params, toy_data, rng=np.random.default_rng(2))
    assert landscape.thm5_check(params, toy_data, result).passed


def test_theorem_preconditions(toy_data, toy_c, sharp_point):
    _, cert = clarke.is_critical(toy_c, toy_data)

    with pytest.raises(PreconditionError) as e:
        landscape.thm4_check(toy_c, toy_data, cert)
    assert e.value.reason == 'alpha'

    data, params = sharp_point
    _, cert = clarke.is_critical(params, data)
    with pytest.raises(PreconditionError) as e:
        landscape.thm6_check(params, data, cert)
    assert e.value.reason == 'not_separable'

    rng = np.random.default_rng(3)
    params = probe_instances(toy_data, 1, rng)[0]
    _, cert = clarke.is_critical(params, toy_data)
    with pytest.raises(PreconditionError) as e:
        landscape.thm4_check(params, toy_data, cert)
    assert e.value.reason == 'not_critical'


def test_unbalanced_classes_rejected(toy_data):
    shape = NetworkShape.build(2, [2], 1, alpha=0.25)
    params = Params.uniform(shape, np.random.default_rng(4))
    data = toy_data.with_weights(np.r_[np.full(5, 0.12), np.full(5, 0.08)])
    result = landscape.classify_minimum(params, data, rng=np.random.default_rng(4))

    with pytest.raises(PreconditionError) as e:
        landscape.thm5_check(params, data, result)
    assert e.value.reason == 'unbalanced'


def test_tilt_probe_decrease(toy_data):
    rng = np.random.default_rng(5)
    hyperplane = landscape.separability(toy_data)

    for params in probe_instances(toy_data, 20, rng):
        for k in range(3):
            result = landscape.descent_probe(params, toy_data, hyperplane, 1, k)
            assert result.observed[1e-5] >= 0.9 * result.predicted[1e-5]


def test_output_weight_probes(toy_data):
    rng = np.random.default_rng(6)
    hyperplane = landscape.separability(toy_data)

    for params in probe_instances(toy_data, 5, rng, v_zero=True):
        for k in range(3):
            grow = landscape.descent_probe(params, toy_data, hyperplane, 2, k)
            for t, value in grow.predicted.items():
                assert grow.observed[t] == pytest.approx(value, abs=1e-13)

            tilt = landscape.descent_probe(params, toy_data, hyperplane, 3, k)
            assert tilt.holds()


def test_probe_preconditions(toy_data, toy_c):
    hyperplane = landscape.separability(toy_data)

    with pytest.raises(PreconditionError) as e:
        landscape.descent_probe(toy_c, toy_data, hyperplane, 2)
    assert e.value.reason == 'v_nonzero'

    with pytest.raises(PreconditionError) as e:
        landscape.descent_probe(toy_c, toy_data, hyperplane, 1, k=5)
    assert e.value.reason == 'neuron'


def test_convex_optimum():
    data = LabeledDataset.from_labels([[0.5], [0.5]], [1, -1])
    assert landscape.convex_hinge_optimum(data) == pytest.approx(1.0)

    separable = LabeledDataset.from_labels([[-1.0], [1.0]], [-1, 1])
    assert landscape.convex_hinge_optimum(separable) == pytest.approx(0.0, abs=1e-9)


def test_deep_linear_separable(toy_data):
    # setup test problem
    # -------------------------------------------------------------------------
    hyperplane = landscape.separability(toy_data)
    s = 2.0 / hyperplane.margin
    shape = NetworkShape.build(2, [1, 1], 1, alpha=1.0)
    params = Params(shape, [[s * hyperplane.q], [[1.0]]], [[s * hyperplane.beta], [0.0]], [[1.0]], [0.0])

    # zero loss with non-zero end-to-end weights
    # -------------------------------------------------------------------------
    assert core.total_loss(params, toy_data) == 0.0
    assert np.allclose(landscape.end_to_end_weights(params), s * hyperplane.q)

    critical, cert = clarke.is_critical(params, toy_data)
    assert critical
    verdict = landscape.deep_linear_check(params, toy_data, cert)
    assert verdict.passed
    assert verdict.details['gap'] == pytest.approx(0.0, abs=1e-9)


def test_deep_linear_zero_weights():
    data = LabeledDataset.from_labels([[0.5], [0.5]], [1, -1])
    shape = NetworkShape.build(1, [1], 1, alpha=1.0)
    params = Params.zeros(shape)

    critical, cert = clarke.is_critical(params, data)
    assert critical

    verdict = landscape.deep_linear_check(params, data, cert, rng=np.random.default_rng(7))
    assert verdict.passed
    assert verdict.details['loss'] == pytest.approx(1.0)

    with pytest.raises(PreconditionError):
        landscape.deep_linear_check(Params.zeros(NetworkShape.build(1, [1], 1, alpha=0.25)), data, cert)
