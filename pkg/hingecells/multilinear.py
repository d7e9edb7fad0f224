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
Loss restricted to a single cell.

Inside a cell every rectifier acts as a fixed diagonal matrix, so the loss
is a sum of multilinear forms in the parameter blocks. This module evaluates
that frozen composition, differentiates it by reverse accumulation and
tests cells for flatness.
"""

import dataclasses
import logging
import typing

import numpy as np

from . import core
from .core import LabeledDataset, Mode, NetworkShape, Params
from .errors import SamplingFailed, ShapeError, UnsupportedConfiguration


logger = logging.getLogger(__name__)

# Gradient and loss-spread threshold of the sampled flatness tests
FLAT_TOL = 1e-9


@dataclasses.dataclass(frozen=True, eq=False)
class FrozenActivation:
    """
    Diagonal coefficients fixing the linear structure of one cell.

    Defines:
    * `lambdas` - per hidden layer an `(N, d_l)` array with values in {alpha, 1}
    * `eps` - `(N, R_out)` loss-layer indicators in {0, 1}
    * `alpha` - leak slope the lambdas were derived with
    """

    lambdas: typing.List[np.ndarray]
    eps: np.ndarray
    alpha: float

    @property
    def L(self) -> int:
        return len(self.lambdas)

    @property
    def N(self) -> int:
        return self.eps.shape[0]


def split_entries(entries: np.ndarray, shape: NetworkShape) -> typing.List[np.ndarray]:
    """Cut `(N, D)` signature entries into per-layer blocks, loss layer last"""

    entries = np.asarray(entries)
    if entries.ndim != 2 or entries.shape[1] != shape.D:
        raise ShapeError(f'expected (N, { shape.D }) signature entries, got { entries.shape }')

    bounds = np.cumsum((0,) + shape.dims[1:])
    return [ entries[:, bounds[l]:bounds[l + 1]] for l in range(len(bounds) - 1) ]


def frozen_from_signs(entries: np.ndarray, shape: NetworkShape) -> FrozenActivation:
    """
    Map signs to diagonal coefficients: +1 gives slope 1 and indicator 1,
    anything else gives slope alpha and indicator 0.
    """

    blocks = split_entries(entries, shape)
    lambdas = [ np.where(block > 0, 1.0, shape.alpha) for block in blocks[:-1] ]
    eps = np.where(blocks[-1] > 0, 1.0, 0.0)
    return FrozenActivation(lambdas, eps, shape.alpha)


def frozen_from_cell(u, shape: NetworkShape) -> FrozenActivation:
    """
    Frozen activation of a cell identifier.

    Arguments:
    * `u` - `CellId` (anything with an `entries` array free of zeros)
    * `shape` - network shape the cell belongs to
    """

    entries = np.asarray(u.entries)
    if np.any(entries == 0):
        raise ValueError('cell identifiers carry no zero entries')
    return frozen_from_signs(entries, shape)


def _check(params: Params, frozen: FrozenActivation, data: LabeledDataset) -> None:
    params.shape.check(data)
    if frozen.L != params.shape.L or frozen.N != data.N or frozen.eps.shape[1] != data.R:
        raise ShapeError('frozen activation does not match params and data')


def frozen_forward(params: Params, frozen: FrozenActivation, points: np.ndarray) -> typing.Tuple[typing.List[np.ndarray], np.ndarray]:
    """
    Forward pass with every rectifier replaced by its frozen slope.
    """

    features = [np.asarray(points, dtype=np.float64)]
    for w, b, lam in zip(params.W, params.b, frozen.lambdas):
        features.append(lam * (features[-1] @ w.T + b))

    return features, features[-1] @ params.V.T + params.c


def cell_loss(params: Params, frozen: FrozenActivation, data: LabeledDataset) -> float:
    """
    Loss of the cell's polynomial extension at `params`. Agrees with
    `core.total_loss` whenever `params` lies in the cell.
    """

    _check(params, frozen, data)
    _, outputs = frozen_forward(params, frozen, data.points)
    args = core.loss_arguments(outputs, data)

    if data.mode is Mode.BINARY:
        return float(data.weights @ (frozen.eps[:, 0] * args[:, 0]))
    return float(data.weights @ ((frozen.eps * args).sum(axis=1) - 1.0))


def _output_seed(frozen: FrozenActivation, data: LabeledDataset) -> np.ndarray:
    # derivative of the cell loss with respect to the outputs
    if data.mode is Mode.BINARY:
        return (-data.weights * frozen.eps[:, 0] * data.targets)[:, None]

    rows = np.arange(data.N)
    seed = data.weights[:, None] * frozen.eps
    seed[rows, data.classes] = 0.0
    seed[rows, data.classes] = -seed.sum(axis=1)
    return seed


def _backward(params: Params, lambdas: typing.List[np.ndarray], features: typing.List[np.ndarray], start: int, upstream: np.ndarray) -> Params:
    """
    Reverse accumulation through the frozen linear graph.

    Arguments:
    * `start` - layer the seed lives on; `L + 1` means the seed is a
      derivative with respect to the outputs, `1..L` a derivative with
      respect to that layer's pre-activations
    * `upstream` - the seed, `(n, d_start)` or `(n, R)`
    """

    shape = params.shape
    L = shape.L
    grad_W = [ np.zeros_like(w) for w in params.W ]
    grad_b = [ np.zeros_like(b) for b in params.b ]
    grad_V = np.zeros_like(params.V)
    grad_c = np.zeros_like(params.c)

    if start == L + 1:
        grad_V = upstream.T @ features[L]
        if shape.output_bias:
            grad_c = upstream.sum(axis=0)
        carry = upstream @ params.V
        top = L
    else:
        carry = None
        top = start

    for l in range(top, 0, -1):
        dz = upstream if (l == start and carry is None) else carry * lambdas[l - 1]
        grad_W[l - 1] = dz.T @ features[l - 1]
        grad_b[l - 1] = dz.sum(axis=0)
        carry = dz @ params.W[l - 1]

    return Params(shape, grad_W, grad_b, grad_V, grad_c)


def cell_gradient(params: Params, frozen: FrozenActivation, data: LabeledDataset) -> Params:
    """
    Exact gradient of `cell_loss` over all parameter blocks. The output bias
    block stays zero when it is not a free parameter.
    """

    _check(params, frozen, data)
    features, _ = frozen_forward(params, frozen, data.points)
    return _backward(params, frozen.lambdas, features, params.shape.L + 1, _output_seed(frozen, data))


def preactivation_jacobian(params: Params, frozen: FrozenActivation, data: LabeledDataset, coords: typing.Sequence[typing.Tuple[int, int, int]]) -> np.ndarray:
    """
    Linearized functionals of selected pre-activations under a frozen pattern.

    Arguments:
    * `coords` - `(i, layer, k)` triples; `i` and `k` are 0-based, `layer`
      runs 1..L+1 with `L + 1` the loss layer

    Returns a `(len(coords), P)` matrix over the parameter vector.
    """

    _check(params, frozen, data)
    L = params.shape.L
    features, _ = frozen_forward(params, frozen, data.points)
    rows = []

    for i, layer, k in coords:
        point_features = [ f[i:i + 1] for f in features ]
        point_lambdas = [ lam[i:i + 1] for lam in frozen.lambdas ]

        if layer == L + 1:
            seed = np.zeros((1, data.R))
            if data.mode is Mode.BINARY:
                seed[0, 0] = -data.targets[i]
            else:
                seed[0, k] += 1.0
                seed[0, data.classes[i]] -= 1.0
        elif 1 <= layer <= L:
            seed = np.zeros((1, params.shape.dims[layer]))
            seed[0, k] = 1.0
        else:
            raise ShapeError(f'layer { layer } outside 1..{ L + 1 }')

        rows.append(_backward(params, point_lambdas, point_features, layer, seed).vector())

    return np.array(rows).reshape(len(rows), params.shape.size)


@dataclasses.dataclass(frozen=True)
class DecompositionL1:
    """
    Coefficients of the one-hidden-layer binary cell loss

        delta - sum_k v_k (<a_k, w_k> + alpha_k b_k) - gamma c

    Defines:
    * `a` - `(K, d)` array, row k is `a_k`
    * `alpha` - `(K,)` bias coefficients
    * `gamma` - output bias coefficient
    * `delta` - constant term
    """

    a: np.ndarray
    alpha: np.ndarray
    gamma: float
    delta: float

    def evaluate(self, params: Params) -> float:
        v = params.V[0]
        inner = np.einsum('kd,kd->k', self.a, params.W[0]) + self.alpha * params.b[0]
        return float(self.delta - v @ inner - self.gamma * params.c[0])

    def gradient(self, params: Params) -> Params:
        v = params.V[0]
        inner = np.einsum('kd,kd->k', self.a, params.W[0]) + self.alpha * params.b[0]
        grad_c = np.array([-self.gamma]) if params.shape.output_bias else np.zeros(1)
        return Params(params.shape, [-v[:, None] * self.a], [-v * self.alpha], -inner[None, :], grad_c)


def decomposition_l1(data: LabeledDataset, frozen: FrozenActivation) -> DecompositionL1:
    if data.mode is not Mode.BINARY or frozen.L != 1:
        raise UnsupportedConfiguration('explicit decomposition needs binary data and one hidden layer')

    signed = data.weights * data.targets * frozen.eps[:, 0]
    weighted = signed[:, None] * frozen.lambdas[0]

    return DecompositionL1(
        a=weighted.T @ data.points,
        alpha=weighted.sum(axis=0),
        gamma=float(signed.sum()),
        delta=float(data.weights @ frozen.eps[:, 0]),
    )


def hessian(params: Params, frozen: FrozenActivation, data: LabeledDataset, h: float = 1e-5) -> np.ndarray:
    """
    Hessian of the cell loss by central differences of the exact gradient,
    symmetrized.
    """

    base = params.vector()
    mask = core.free_mask(params.shape)
    P = base.shape[0]
    H = np.zeros((P, P))

    for j in np.flatnonzero(mask):
        step = np.zeros(P)
        step[j] = h
        plus = cell_gradient(params.replace(base + step), frozen, data).vector()
        minus = cell_gradient(params.replace(base - step), frozen, data).vector()
        H[:, j] = (plus - minus) / (2.0 * h)

    return 0.5 * (H + H.T)


def flat_cell_test_l1(coeffs: DecompositionL1, tol: float = 1e-12, output_bias: bool = True) -> bool:
    """
    True iff every non-constant form of the one-hidden-layer decomposition
    vanishes. With a pinned output bias the `gamma` term is constant.
    """

    if np.any(np.linalg.norm(coeffs.a, axis=1) > tol) or np.any(np.abs(coeffs.alpha) > tol):
        return False
    return not (output_bias and abs(coeffs.gamma) > tol)


def _sample_ball(rng: np.random.Generator, mask: np.ndarray, radius: float) -> np.ndarray:
    direction = rng.standard_normal(mask.shape[0]) * mask
    norm = np.linalg.norm(direction)
    if norm == 0:
        return direction
    return direction / norm * radius * rng.uniform() ** (1.0 / max(int(mask.sum()), 1))


def flat_cell_test_sampled(u, member: Params, data: LabeledDataset, m: int = 16, tau: float = 1e-9, rng: typing.Optional[np.random.Generator] = None, radius: typing.Optional[float] = None) -> bool:
    """
    Decide flatness of a cell from `m` members found by rejection sampling.

    Arguments:
    * `u` - cell identifier
    * `member` - a parameter point known to lie in `u`
    * `m` - number of in-cell samples to collect
    * `radius` - initial ball radius, `0.1 * (1 + |member|)` by default

    The ball shrinks by half after each batch where failures outnumber hits.
    Raises `SamplingFailed` when fewer than `m` members turn up within
    `100 * m` attempts.
    """

    from .cells import cell_of

    rng = rng if rng is not None else np.random.default_rng(0)
    shape = member.shape
    frozen = frozen_from_cell(u, shape)
    base = member.vector()
    mask = core.free_mask(shape)
    radius = radius if radius is not None else 0.1 * (1.0 + np.linalg.norm(base))

    samples = []
    attempts = 0
    while len(samples) < m and attempts < 100 * m:
        hits = 0
        for _ in range(m):
            attempts += 1
            candidate = member.replace(base + _sample_ball(rng, mask, radius))
            if cell_of(candidate, data, tau) == u:
                samples.append(candidate)
                hits += 1
            if len(samples) >= m or attempts >= 100 * m:
                break
        if 2 * hits < m:
            radius *= 0.5

    if len(samples) < m:
        raise SamplingFailed(len(samples), m, attempts)

    losses = [ cell_loss(p, frozen, data) for p in samples ]
    grads = [ np.max(np.abs(cell_gradient(p, frozen, data).vector())) for p in samples ]
    logger.debug('flatness sampling: %d members in %d attempts, final radius %g', m, attempts, radius)

    return max(grads) <= FLAT_TOL and (max(losses) - min(losses)) <= FLAT_TOL


def flat_cell_test_frozen(params: Params, frozen: FrozenActivation, data: LabeledDataset, m: int = 8, rng: typing.Optional[np.random.Generator] = None) -> bool:
    """
    Flatness through the polynomial extension: the cell loss is a polynomial
    in the parameters, constant on the open cell iff its gradient vanishes
    identically, which shows at random points anywhere in parameter space.
    """

    rng = rng if rng is not None else np.random.default_rng(0)
    base = params.vector()
    mask = core.free_mask(params.shape)
    scale = 1.0 + np.linalg.norm(base)

    points = [params] + [ params.replace(base + mask * rng.standard_normal(base.shape[0]) * scale) for _ in range(m) ]
    return all(np.max(np.abs(cell_gradient(p, frozen, data).vector())) <= FLAT_TOL for p in points)


def _equality_residuals(onehot: np.ndarray, weights: np.ndarray, points: np.ndarray, eps: np.ndarray, lambdas: np.ndarray, weight_sums: bool) -> np.ndarray:
    eps = np.asarray(eps, dtype=np.float64)
    if eps.ndim == 2:
        eps = eps[None]
    lambdas = np.broadcast_to(np.asarray(lambdas, dtype=np.float64), eps.shape[:2])

    wrong = 1.0 - onehot
    eps_point = (eps * wrong[None]).sum(axis=2)
    worst = np.zeros(eps.shape[0])

    for r in range(onehot.shape[1]):
        diff = eps_point * onehot[None, :, r] - eps[:, :, r] * wrong[None, :, r]
        scaled = diff * lambdas * weights[None]
        worst = np.maximum(worst, np.abs(scaled @ points).max(axis=1))
        worst = np.maximum(worst, np.abs(scaled.sum(axis=1)))
        if weight_sums:
            worst = np.maximum(worst, np.abs((diff * weights[None]).sum(axis=1)))

    return worst


def weirdcond_residuals(onehot: np.ndarray, weights: np.ndarray, points: np.ndarray, eps: np.ndarray, lambdas: np.ndarray) -> np.ndarray:
    """
    Largest violation of the flat-cell equality system, batched.

    Arguments:
    * `onehot` - `(N, R)` one-hot targets
    * `eps` - `(B, N, R)` loss indicators
    * `lambdas` - `(B, N)` or `(N,)` path slopes

    For every class r the system compares, with `eps_i` the sum of the
    point's wrong-class indicators, points of class r against the rest:
    the `mu * lambda * x` sums, the `mu * lambda` sums and the `mu` sums.
    Returns a `(B,)` array of maximal absolute residuals.
    """

    return _equality_residuals(onehot, weights, points, eps, lambdas, weight_sums=True)


def rare_residuals(onehot: np.ndarray, weights: np.ndarray, points: np.ndarray, eps: np.ndarray, lambdas: np.ndarray) -> np.ndarray:
    """
    Largest violation of the rare-data system, batched. Same layout as
    `weirdcond_residuals` but only the `mu * lambda * x` and `mu * lambda`
    sums have to balance.
    """

    return _equality_residuals(onehot, weights, points, eps, lambdas, weight_sums=False)


def _indicator_arrays(data: LabeledDataset, eps_indicators, lambdas) -> typing.Tuple[np.ndarray, np.ndarray, np.ndarray]:
    onehot = data.onehot()
    eps = np.asarray(eps_indicators, dtype=np.float64)
    lambdas = np.asarray(lambdas, dtype=np.float64).reshape(-1)
    if eps.shape != onehot.shape or lambdas.shape != (data.N,):
        raise ShapeError(f'expected indicators {onehot.shape} and {data.N} lambdas')
    return onehot, eps, lambdas


def weirdcond_check(data: LabeledDataset, eps_indicators, lambdas, tol: float = 1e-10) -> bool:
    """
    True iff the indicator/slope assignment satisfies the flat-cell equality
    system for every class within `tol`.
    """

    onehot, eps, lambdas = _indicator_arrays(data, eps_indicators, lambdas)
    return bool(weirdcond_residuals(onehot, data.weights, data.points, eps, lambdas)[0] <= tol)


def rare_check(data: LabeledDataset, eps_indicators, lambdas, tol: float = 1e-10) -> bool:
    """
    True iff the assignment makes the data rare: the `mu * lambda * x` and
    `mu * lambda` sums balance for every class within `tol`.
    """

    onehot, eps, lambdas = _indicator_arrays(data, eps_indicators, lambdas)
    return bool(rare_residuals(onehot, data.weights, data.points, eps, lambdas)[0] <= tol)
