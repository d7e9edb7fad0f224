import numpy as np
import pytest

from hingecells import clarke, core, landscape, optimize, penalty
from hingecells.core import LabeledDataset, NetworkShape, Params
from hingecells.errors import Divergence, UnsupportedConfiguration
from hingecells.optimize import Objective, Schedule

from conftest import random_instance


@pytest.fixture
def two_points():
    return LabeledDataset.from_labels([[-1.0], [1.0]], [-1, 1])


def test_schedules():
    assert Schedule.constant.step(0.5, 10) == 0.5
    assert Schedule.inv_sqrt.step(0.5, 3) == pytest.approx(0.25)
    assert Schedule.names() == ['constant', 'inv_sqrt']
    assert Objective.names() == ['binary', 'multiclass', 'penalty']
    assert Objective.penalty.spec.replicated


def test_two_point_run(two_points):
    shape = NetworkShape.build(1, [1], 1, alpha=0.25)
    init = Params.uniform(shape, np.random.default_rng(0))

    traj = optimize.subgradient_descent(Objective.binary, two_points, init, max_iters=10_000)
    assert traj.final_loss <= 1e-4
    assert len(traj.losses) == len(traj.steps) + 1
    assert sum(traj.occupancy_fractions().values()) == pytest.approx(1.0)


def test_runs_are_reproducible(toy_data):
    shape = NetworkShape.build(2, [2], 1, alpha=0.25)
    init = Params.uniform(shape, np.random.default_rng(1))

    first = optimize.subgradient_descent(Objective.binary, toy_data, init, max_iters=500, thin=50)
    second = optimize.subgradient_descent(Objective.binary, toy_data, init.copy(), max_iters=500, thin=50)
    assert first.digest() == second.digest()
    assert len(first.iterates) == len(second.iterates)


def test_leaky_runs_reach_zero_loss(toy_data):
    shape = NetworkShape.build(2, [2], 1, alpha=0.25)
    runs = optimize.multi_start(Objective.binary, toy_data, shape, 50, seed=0, max_iters=20_000)

    assert len(runs) == 50
    for traj in runs:
        assert traj.final_loss <= 1e-4
        if traj.stopped_early and np.linalg.norm(traj.final.V) > 1e-9:
            verdict = landscape.thm4_check(traj.final, toy_data, traj.certificate)
            assert verdict.passed
            assert verdict.details['loss'] <= 1e-6


def test_relu_runs_find_blind_side_minima(toy_data):
    shape = NetworkShape.build(2, [2], 1, alpha=0.0)
    runs = optimize.multi_start(Objective.binary, toy_data, shape, 50, seed=0, max_iters=20_000)

    stuck = [ t for t in runs if t.certificate is not None and t.certificate.critical and t.final_loss >= 0.1 ]
    assert stuck
    for traj in stuck:
        assert landscape.thm6_check(traj.final, toy_data, traj.certificate).passed


def test_relu_run_stalls_in_flat_cell(toy_data, toy_b):
    # setup test problem
    # -------------------------------------------------------------------------
    start = toy_b.replace(toy_b.vector() + 1e-6 * np.random.default_rng(2).standard_normal(toy_b.shape.size) * core.free_mask(toy_b.shape))

    # descent has nowhere to go and the point is a sub-optimal critical one
    # -------------------------------------------------------------------------
    traj = optimize.subgradient_descent(Objective.binary, toy_data, start)
    assert traj.stopped_early
    assert traj.steps == []
    assert traj.final_loss == pytest.approx(0.3)

    assert landscape.thm6_check(traj.final, toy_data, traj.certificate).passed


def test_multi_start_matches_single_run(toy_data):
    shape = NetworkShape.build(2, [2], 1, alpha=0.25)
    runs = optimize.multi_start(Objective.binary, toy_data, shape, 1, seed=3, max_iters=200)

    init = Params.uniform(shape, np.random.default_rng((3, 0)))
    single = optimize.subgradient_descent(Objective.binary, toy_data, init, seed=(3, 0), max_iters=200)
    assert runs[0].digest() == single.digest()


def test_multi_start_workers(toy_data):
    shape = NetworkShape.build(2, [2], 1, alpha=0.25)

    serial = optimize.multi_start(Objective.binary, toy_data, shape, 4, seed=4, max_iters=200)
    threaded = optimize.multi_start(Objective.binary, toy_data, shape, 4, seed=4, max_iters=200, workers=3)
    assert [ t.digest() for t in serial ] == [ t.digest() for t in threaded ]
    assert [ t.final_loss for t in serial ] == sorted(t.final_loss for t in serial)


def test_divergence(toy_data):
    shape = NetworkShape.build(2, [2], 1, alpha=0.25)
    rng = np.random.default_rng(5)
    init = Params.uniform(shape, rng)
    while core.total_loss(init, toy_data) == 0.0:
        init = Params.uniform(shape, rng)

    with pytest.raises(Divergence):
        optimize.subgradient_descent(Objective.binary, toy_data, init, schedule=Schedule.constant, eta=1e9, max_iters=10)


def test_objective_mismatch(toy_data):
    rng = np.random.default_rng(6)
    data, params = random_instance(rng, R=3)

    with pytest.raises(UnsupportedConfiguration):
        optimize.subgradient_descent(Objective.penalty, data, params)
    with pytest.raises(UnsupportedConfiguration):
        optimize.subgradient_descent(Objective.binary, data, params)
    with pytest.raises(UnsupportedConfiguration):
        optimize.subgradient_descent(Objective.multiclass, data, params, class_weights=np.ones((data.N, 3)))


def test_multiclass_baseline_run():
    rng = np.random.default_rng(7)
    data, params = random_instance(rng, R=3, N=9)

    traj = optimize.subgradient_descent(Objective.multiclass, data, params, max_iters=300)
    assert np.isfinite(traj.final_loss)
    assert traj.final.shape == params.shape


def test_penalty_runs():
    # setup test problem
    # -------------------------------------------------------------------------
    angles = np.array([0.0, 2.0, 4.0]) * np.pi / 3.0
    directions = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    points = np.vstack([ rho * directions for rho in (0.8, 1.2) ])
    data = LabeledDataset.from_labels(points, np.tile([1, 2, 3], 2), classes=3)
    shape = NetworkShape.build(2, [3], 3, alpha=0.25)

    # runs ending on a passed check have equal replicas and zero loss
    # -------------------------------------------------------------------------
    runs = optimize.multi_start(Objective.penalty, data, shape, 20, seed=8, gamma=1.0, max_iters=3000)
    assert len(runs) == 20
    for traj in runs:
        assert isinstance(traj.final, penalty.ReplicatedParams)
        assert np.isfinite(traj.final_loss)
        if not traj.stopped_early:
            continue

        deviation, tol_rep = penalty.replica_deviation(traj.final)
        assert deviation <= tol_rep
        assert penalty.thm7_check(traj.final, data, traj.certificate).passed
        assert penalty.multiclass_leaky_check(traj.final, data, traj.certificate).passed


def test_deep_linear_runs_match_convex_optimum():
    rng = np.random.default_rng(11)
    tol = 1e-5

    for k in range(20):
        labels = rng.choice([-1, 1], size=6)
        labels[0] = -1
        data = LabeledDataset.from_labels(rng.normal(size=(6, 2)), labels)
        shape = NetworkShape.build(2, [2, 2], 1, alpha=1.0)
        init = Params.uniform(shape, rng)

        traj = optimize.subgradient_descent(Objective.binary, data, init, seed=(11, k), max_iters=5000)
        if traj.certificate is None or not traj.certificate.critical:
            continue

        verdict = landscape.deep_linear_check(traj.final, data, traj.certificate)
        assert verdict.passed
        if not verdict.details.get('vacuous'):
            assert verdict.details['gap'] <= tol


def test_occupancy_combination(toy_data):
    shape = NetworkShape.build(2, [2], 1, alpha=0.25)
    init = Params.uniform(shape, np.random.default_rng(9))
    traj = optimize.subgradient_descent(Objective.binary, toy_data, init, max_iters=300)

    visited = list(traj.occupancy)
    generators = [ (key, np.full(3, float(i))) for i, key in enumerate(visited) ] + [('unvisited', np.ones(3))]
    weights, vector = optimize.occupancy_combination(traj, generators)

    assert weights.sum() == pytest.approx(1.0)
    assert weights[-1] == 0.0
    assert vector.shape == (3,)


def test_certificate_of_final_iterate(two_points):
    shape = NetworkShape.build(1, [1], 1, alpha=0.25)
    init = Params.uniform(shape, np.random.default_rng(10))

    traj = optimize.subgradient_descent(Objective.binary, two_points, init, max_iters=50, check_every=1000)
    critical, cert = clarke.is_critical(traj.final, two_points)
    assert traj.certificate.residual_norm == pytest.approx(cert.residual_norm)
