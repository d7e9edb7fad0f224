# hingecells - cell structure of hinge-loss ReLU networks
# Copyright (C) 2024  hingecells contributors
#
# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU General Public License as published by
# the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.
#
# This program is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU General Public License for more details.
#
# You should have received a copy of the GNU General Public License
# along with this program.  If not, see <https://www.gnu.org/licenses/>.

"""
Clarke subdifferential as the convex hull of adjacent-cell gradients, and
criticality through the minimum-norm point of that hull.
"""

import dataclasses
import logging
import typing

import numpy as np
import scipy.optimize

from . import cells
from . import multilinear
from .core import LabeledDataset, Params
from .errors import NonConvergence


logger = logging.getLogger(__name__)

# Major cycle budget of the minimum-norm-point iteration
MAX_CYCLES = 10_000


class MinNormPoint(typing.NamedTuple):
    theta: np.ndarray
    point: np.ndarray
    norm: float


@dataclasses.dataclass(frozen=True, eq=False)
class CriticalityCertificate:
    """
    Convex weights over adjacent-cell gradients and the resulting residual.

    Defines:
    * `cells` - cell keys, one per generator (`CellId`, or a tuple of them
      for product cells)
    * `generators` - `(m, P)` gradient matrix, row j belongs to `cells[j]`
    * `theta` - simplex weights
    * `residual` - `theta @ generators`
    * `residual_norm` - Euclidean norm of the residual
    * `eps_crit` - threshold the certificate was judged with
    """

    cells: typing.List[typing.Any]
    generators: np.ndarray
    theta: np.ndarray
    residual: np.ndarray
    residual_norm: float
    eps_crit: float

    @property
    def critical(self) -> bool:
        return self.residual_norm <= self.eps_crit

    def verify(self, tol: float = 1e-12) -> bool:
        """Recheck simplex membership and the residual combination"""

        if np.any(self.theta < 0) or abs(self.theta.sum() - 1.0) > tol:
            return False
        recombined = self.theta @ self.generators
        return bool(np.max(np.abs(recombined - self.residual), initial=0.0) <= tol * max(1.0, np.abs(self.generators).max()))


def _affine_minimizer(C: np.ndarray) -> np.ndarray:
    # weights of the min-norm point of the affine hull of the rows of C
    k = C.shape[0]
    M = np.zeros((k + 1, k + 1))
    M[0, 1:] = 1.0
    M[1:, 0] = 1.0
    M[1:, 1:] = C @ C.T
    rhs = np.zeros(k + 1)
    rhs[0] = 1.0
    return scipy.optimize.lsq_linear(M, rhs, lsq_solver='exact').x[1:]


def min_norm_point(generators, tol: float = 1e-12, max_cycles: int = MAX_CYCLES, history: typing.Optional[list] = None) -> MinNormPoint:
    """
    Shortest vector in the convex hull of finitely many generators.

    Wolfe's active-set method: major cycles add the generator minimizing
    the linear model, minor cycles project onto the affine hull of the
    current corral and retreat along the segment whenever a weight turns
    non-positive. Stops once the optimality gap `|x|^2 - min_j <g_j, x>`
    falls below `tol` (relative to the largest squared generator norm).

    Arguments:
    * `generators` - `(m, P)` array, `m >= 1`
    * `tol` - relative gap tolerance
    * `max_cycles` - major cycle budget; `NonConvergence` beyond it
    * `history` - optional list that receives the norm after every major cycle
    """

    G = np.atleast_2d(np.asarray(generators, dtype=np.float64))
    if G.shape[0] < 1:
        raise ValueError('need at least one generator')

    scale = max(1.0, float((G ** 2).sum(axis=1).max()))
    start = int(np.argmin((G ** 2).sum(axis=1)))
    corral = [start]
    weights = np.array([1.0])
    x = G[start].copy()
    if history is not None:
        history.append(float(np.linalg.norm(x)))

    cycles = 0
    while True:
        products = G @ x
        j = int(np.argmin(products))
        if x @ x - products[j] <= tol * scale or j in corral:
            break

        cycles += 1
        if cycles > max_cycles:
            theta = np.zeros(G.shape[0])
            theta[corral] = weights
            raise NonConvergence(max_cycles, theta, x, float(np.linalg.norm(x)))

        saved = (list(corral), weights.copy(), x.copy())
        corral.append(j)
        weights = np.append(weights, 0.0)

        while True:
            alpha = _affine_minimizer(G[corral])
            if np.all(alpha > 0):
                weights = alpha
                break

            # Retreat towards the affine minimizer until a weight hits zero
            negative = alpha <= 0
            step = np.min(weights[negative] / (weights[negative] - alpha[negative]))
            weights = step * alpha + (1.0 - step) * weights

            keep = weights > 1e-15
            if keep.all():
                keep[np.flatnonzero(negative)[np.argmin(weights[negative])]] = False
            corral = [ c for c, k in zip(corral, keep) if k ]
            weights = weights[keep]

        x = G[corral].T @ weights

        # No strict decrease: keep the previous corral and stop
        if np.linalg.norm(x) >= np.linalg.norm(saved[2]):
            corral, weights, x = saved
            break
        if history is not None:
            history.append(float(np.linalg.norm(x)))

    theta = np.zeros(G.shape[0])
    theta[corral] = weights / weights.sum()
    point = theta @ G
    logger.debug('min-norm point after %d major cycles: norm %g', cycles, np.linalg.norm(point))
    return MinNormPoint(theta, point, float(np.linalg.norm(point)))


def clarke_generators(params: Params, data: LabeledDataset, tau: float = cells.DEFAULT_TAU, max_zeros: int = 20, rng: typing.Optional[np.random.Generator] = None) -> typing.List[typing.Tuple[cells.CellId, np.ndarray]]:
    """
    One gradient per incident cell, each the cell gradient under that
    cell's frozen pattern evaluated at `params`.
    """

    out = []
    for u in cells.incidence_cells(params, data, tau, max_zeros, rng):
        frozen = multilinear.frozen_from_cell(u, params.shape)
        out.append((u, multilinear.cell_gradient(params, frozen, data).vector()))
    return out


def default_eps_crit(generators: np.ndarray) -> float:
    """`1e-6 * (1 + median generator norm)`"""

    return 1e-6 * (1.0 + float(np.median(np.linalg.norm(generators, axis=1))))


def certify(keys: typing.List[typing.Any], generators: np.ndarray, eps_crit: typing.Optional[float] = None, tol: float = 1e-12) -> CriticalityCertificate:
    """Build a certificate from explicit generators of any objective"""

    generators = np.atleast_2d(np.asarray(generators, dtype=np.float64))
    if eps_crit is None:
        eps_crit = default_eps_crit(generators)

    theta, point, norm = min_norm_point(generators, tol)
    return CriticalityCertificate(list(keys), generators, theta, point, norm, float(eps_crit))


def is_critical(params: Params, data: LabeledDataset, eps_crit: typing.Optional[float] = None, tau: float = cells.DEFAULT_TAU, max_zeros: int = 20, rng: typing.Optional[np.random.Generator] = None) -> typing.Tuple[bool, CriticalityCertificate]:
    """
    Clarke criticality: the hull of incident-cell gradients comes within
    `eps_crit` of the origin.
    """

    pairs = clarke_generators(params, data, tau, max_zeros, rng)
    cert = certify([ u for u, _ in pairs ], np.array([ g for _, g in pairs ]), eps_crit)
    logger.info('criticality: %d generators, residual %g (eps %g)', len(pairs), cert.residual_norm, cert.eps_crit)
    return cert.critical, cert
