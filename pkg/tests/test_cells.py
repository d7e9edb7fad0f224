import numpy as np
import pytest

from hingecells import cells
from hingecells.core import LabeledDataset, NetworkShape, Params
from hingecells.errors import TooManyZeros

from conftest import random_instance


def one_neuron(b, w=1.0, x=1.0, alpha=0.0):
    data = LabeledDataset.from_labels([[x]], [-1])
    shape = NetworkShape.build(1, [1], 1, alpha)
    return data, Params(shape, [[[w]]], [[b]], [[1.0]], [0.0])


def test_signature_entries():
    data, params = one_neuron(0.5)
    assert cells.signature(params, data, tau=0.0).entries[0, 0] == 1

    data, params = one_neuron(-1.0)
    sig = cells.signature(params, data, tau=0.0)
    assert sig.entries[0, 0] == 0
    assert sig.zeros() == [(0, 1, 0)]


def test_random_points_are_smooth():
    rng = np.random.default_rng(0)

    for _ in range(2000):
        data, params = random_instance(rng, L=2, alpha=0.25)
        assert cells.signature(params, data).is_smooth


def test_cell_of_is_stable():
    rng = np.random.default_rng(1)
    data, params = random_instance(rng)

    first = cells.cell_of(params, data)
    second = cells.cell_of(params.copy(), data)
    assert isinstance(first, cells.CellId)
    assert first == second
    assert first.key == second.key
    assert len(first.hex) == 16


def test_cell_of_boundary_report():
    # setup test problem
    # -------------------------------------------------------------------------
    rng = np.random.default_rng(2)
    data, params = random_instance(rng, N=4)

    # put point 2 exactly on the hyperplane of neuron 1
    # -------------------------------------------------------------------------
    params.b[0][1] = -params.W[0][1] @ data.points[2]

    report = cells.cell_of(params, data)
    assert isinstance(report, cells.BoundaryReport)
    assert (2, 1, 1) in report.zeros
    assert report.degenerate == []


def test_cell_constant_along_segment():
    rng = np.random.default_rng(3)
    data, params = random_instance(rng)
    u = cells.cell_of(params, data)

    radius = cells.safe_radius(params, data)
    step = rng.normal(size=params.shape.size)
    step *= 0.9 * radius / np.linalg.norm(step)

    base = params.vector()
    for t in np.linspace(0.0, 1.0, 100):
        assert cells.cell_of(params.replace(base + t * step), data) == u


def test_cell_id_validation():
    with pytest.raises(ValueError):
        cells.CellId([[1, 0]])
    with pytest.raises(ValueError):
        cells.CellId([1, -1])

    u = cells.CellId([[1, -1], [-1, 1]])
    assert u != cells.CellId([[1, -1], [1, 1]])
    assert u.key == cells.cell_hash(np.array([[1, -1], [-1, 1]]))


def test_incidence_smooth_point():
    rng = np.random.default_rng(4)
    data, params = random_instance(rng)

    assert cells.incidence_set(params, data) == {cells.cell_of(params, data)}


def test_incidence_single_zero():
    data, params = one_neuron(-1.0)

    incident = cells.incidence_cells(params, data)
    assert len(incident) == 2
    assert sorted(int(u.entries[0, 0]) for u in incident) == [-1, 1]


def test_incidence_two_zeros_matches_sampling():
    # setup test problem
    # -------------------------------------------------------------------------
    data = LabeledDataset([[1.0]], [1.0], [1.0], 'binary')
    shape = NetworkShape.build(1, [2], 1, alpha=0.25)
    params = Params(shape, [[[1.0], [2.0]]], [[-1.0, -2.0]], [[1.0, 1.0]], [0.0])

    # enumerate and compare against a sphere of radius 1e-4
    # -------------------------------------------------------------------------
    incident = cells.incidence_set(params, data)
    assert len(incident) == 4

    rng = np.random.default_rng(5)
    base = params.vector()
    sampled = set()
    for _ in range(400):
        step = rng.normal(size=base.shape[0])
        step *= 1e-4 / np.linalg.norm(step)
        sampled.add(cells.cell_of(params.replace(base + step), data))

    assert sampled == incident


def test_incidence_respects_max_zeros():
    data = LabeledDataset.from_labels(np.ones((3, 1)), [1, -1, 1])
    shape = NetworkShape.build(1, [2], 1)
    params = Params(shape, [[[1.0], [1.0]]], [[-1.0, -1.0]], [[1.0, 1.0]], [0.0])

    with pytest.raises(TooManyZeros) as e:
        cells.incidence_cells(params, data, max_zeros=5)
    assert e.value.zeros == 6
