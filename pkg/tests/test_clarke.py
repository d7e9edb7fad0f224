import numpy as np
import pytest

from hingecells import clarke
from hingecells.errors import NonConvergence

from conftest import random_instance


def grid_min_norm(G, resolution):
    """
    Smallest norm of `theta @ G` over simplex points with coordinates on a
    `resolution` grid. All but the last two coordinates are enumerated, the
    last two are settled exactly: the norm is quadratic along that edge.
    """

    G = np.asarray(G, dtype=np.float64)
    steps = int(round(1.0 / resolution))
    n = G.shape[0]
    if n == 1:
        return float(np.linalg.norm(G[0]))

    if n == 2:
        prefix = np.zeros((1, 0))
    elif n == 3:
        prefix = np.arange(steps + 1)[:, None]
    else:
        i, k = np.meshgrid(np.arange(steps + 1), np.arange(steps + 1), indexing='ij')
        keep = i + k <= steps
        prefix = np.stack([i[keep], k[keep]], axis=1)

    rest = steps - prefix.sum(axis=1)
    a = prefix @ G[:n - 2] + rest[:, None] * G[n - 1]
    e = G[n - 2] - G[n - 1]
    ee = float(e @ e)

    best = np.inf
    center = -(a @ e) / ee if ee > 0 else np.zeros(rest.shape)
    for r in (np.floor(center), np.ceil(center)):
        r = np.clip(r, 0, rest)
        best = min(best, float(np.linalg.norm(a + r[:, None] * e, axis=1).min()))
    return best / steps


def test_opposite_generators():
    g = np.array([1.0, -2.0, 0.5])
    theta, point, norm = clarke.min_norm_point([g, -g])

    assert theta.tolist() == pytest.approx([0.5, 0.5])
    assert norm == pytest.approx(0.0, abs=1e-12)
    assert np.allclose(point, 0.0)


def test_single_generator():
    g = np.array([3.0, 4.0])
    theta, point, norm = clarke.min_norm_point([g])

    assert theta.tolist() == [1.0]
    assert norm == pytest.approx(5.0)


def test_hull_excluding_origin():
    # segment from (1, 1) to (1, -1), closest point (1, 0)
    theta, point, norm = clarke.min_norm_point([[1.0, 1.0], [1.0, -1.0], [2.0, 0.0]])

    assert point.tolist() == pytest.approx([1.0, 0.0])
    assert theta[2] == pytest.approx(0.0)


def test_matches_grid_search():
    rng = np.random.default_rng(0)
    tol = 2e-3

    for _ in range(100):
        G = rng.normal(size=(rng.integers(2, 5), rng.integers(1, 4)))
        history = []
        result = clarke.min_norm_point(G, history=history)
        grid = grid_min_norm(G, 1e-3)

        assert result.norm <= grid + 1e-12
        assert result.norm >= grid - tol
        assert all(b < a for a, b in zip(history, history[1:]))
        assert np.all(result.theta >= 0) and result.theta.sum() == pytest.approx(1.0)


def test_cycle_budget():
    g = np.array([1.0, 0.0])

    with pytest.raises(NonConvergence) as e:
        clarke.min_norm_point([g, -g], max_cycles=0)
    assert e.value.theta.sum() == pytest.approx(1.0)


def test_smooth_point_with_errors_is_not_critical():
    rng = np.random.default_rng(1)
    data, params = random_instance(rng, alpha=0.25)

    critical, cert = clarke.is_critical(params, data)
    assert len(cert.cells) == 1
    assert critical == (cert.residual_norm <= cert.eps_crit)
    assert cert.verify()


def test_flat_interior_point_is_critical(toy_data, toy_a):
    critical, cert = clarke.is_critical(toy_a, toy_data)

    assert critical
    assert cert.residual_norm == 0.0
    assert cert.verify()


def test_two_cell_certificate(sharp_point):
    # setup test problem
    # -------------------------------------------------------------------------
    data, params = sharp_point
    pairs = clarke.clarke_generators(params, data)
    assert len(pairs) == 2

    # the cell where the kinked point is still penalized carries weight 2/3
    # -------------------------------------------------------------------------
    critical, cert = clarke.is_critical(params, data)
    assert critical
    assert cert.verify()

    weights = { int(u.entries[0, -1]): t for u, t in zip(cert.cells, cert.theta) }
    assert weights[1] == pytest.approx(2.0 / 3.0)
    assert weights[-1] == pytest.approx(1.0 / 3.0)


def test_default_threshold():
    G = np.array([[3.0, 4.0], [0.0, 1.0], [0.0, 2.0]])
    assert clarke.default_eps_crit(G) == pytest.approx(3e-6)

    cert = clarke.certify(['a', 'b', 'c'], G, eps_crit=0.5)
    assert cert.eps_crit == 0.5
    assert cert.critical is False
