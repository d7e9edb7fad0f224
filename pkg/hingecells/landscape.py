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
Landscape predicates: separability, data genericity, minimum
classification, blind-side and global-optimality checks, and descent
probes along explicit perturbation directions.
"""

import dataclasses
import enum
import itertools
import logging
import typing

import numpy as np
import scipy.optimize

from . import cells
from . import clarke
from . import core
from . import multilinear
from .clarke import CriticalityCertificate
from .core import LabeledDataset, Mode, Params
from .errors import BudgetExceeded, NotSeparable, PreconditionError, SolverError, UnsupportedConfiguration


logger = logging.getLogger(__name__)

# Enumeration budget of the genericity oracle
GENERICITY_BUDGET = 2 ** 24

# Residual accepted when solving the rare-data system
WITNESS_TOL = 1e-10

# Zero-loss threshold standing in for "global minimum" on separable data
GLOBAL_LOSS_TOL = 1e-6

# Magnitudes treated as zero for weights and losses
ZERO_TOL = 1e-9

# Step lengths at which descent probes are evaluated
PROBE_STEPS = (1e-4, 1e-5, 1e-6)


@dataclasses.dataclass(frozen=True)
class SeparatingHyperplane:
    """
    Unit normal `q`, offset `beta` and margin `margin` with
    `y (<q, x> + beta) >= margin` for every point.
    """

    q: np.ndarray
    beta: float
    margin: float


class GenericityKind(enum.Enum):
    GENERIC = 'Generic'
    RARE = 'Rare'


@dataclasses.dataclass(frozen=True)
class GenericityVerdict:
    """
    Outcome of the genericity oracle.

    Defines:
    * `kind` - `GenericityKind.GENERIC` or `GenericityKind.RARE`
    * `lambdas` - witness slopes per point (rare data only)
    * `eps` - witness `(N, R)` loss indicators (rare data only)
    """

    kind: GenericityKind
    lambdas: typing.Optional[np.ndarray] = None
    eps: typing.Optional[np.ndarray] = None

    @property
    def eps_point(self) -> typing.Optional[np.ndarray]:
        return None if self.eps is None else self.eps.sum(axis=1)


class MinimumKind(enum.Enum):
    FLAT_TYPE_I = 'FlatTypeI'
    SHARP_TYPE_II = 'SharpTypeII'
    NOT_MINIMUM = 'NotMinimum'
    INCONCLUSIVE = 'Inconclusive'


@dataclasses.dataclass(frozen=True, eq=False)
class MinimumClassification:
    """
    Defines:
    * `kind` - classification
    * `loss` - total loss at the point
    * `certificate` - criticality certificate the decision started from
    * `flat_cells` - incident cells found flat
    * `evidence` - how the decision was reached (descent found, on the
      non-smooth set, ...)
    """

    kind: MinimumKind
    loss: float
    certificate: CriticalityCertificate
    flat_cells: typing.List[cells.CellId]
    evidence: typing.Dict[str, typing.Any]


@dataclasses.dataclass(frozen=True)
class Verdict:
    """
    Result of a theorem check. `violations` lists offending indices, the
    meaning depends on the check.
    """

    name: str
    passed: bool
    details: typing.Dict[str, typing.Any] = dataclasses.field(default_factory=dict)
    violations: typing.List[typing.Any] = dataclasses.field(default_factory=list)


def separability(data: LabeledDataset) -> SeparatingHyperplane:
    """
    Margin-maximizing hyperplane from the linear program

        max m  s.t.  y (<q, x> + beta) >= m,  |q|_inf <= 1

    rescaled to a unit Euclidean normal. Raises `NotSeparable` when the
    best margin is not above 1e-9.
    """

    if data.mode is not Mode.BINARY:
        raise UnsupportedConfiguration('separability needs binary labels')

    X, y = data.points, data.targets
    N, d = X.shape
    # offsets beyond the data's l1 radius never improve the margin
    offset_bound = 1.0 + float(np.abs(X).sum(axis=1).max())

    objective = np.zeros(d + 2)
    objective[-1] = -1.0
    A_ub = np.hstack([-y[:, None] * X, -y[:, None], np.ones((N, 1))])
    bounds = [(-1.0, 1.0)] * d + [(-offset_bound, offset_bound), (None, None)]

    res = scipy.optimize.linprog(objective, A_ub=A_ub, b_ub=np.zeros(N), bounds=bounds, method='highs')
    if res.status != 0:
        raise SolverError('separability LP', res.status, res.message)

    q, beta, margin = res.x[:d], float(res.x[d]), float(res.x[d + 1])
    if margin <= ZERO_TOL:
        raise NotSeparable(margin)

    norm = float(np.linalg.norm(q))
    if norm <= ZERO_TOL:
        # all labels agree: any direction with a far enough offset separates
        q = np.zeros(d)
        q[0] = 1.0
        beta = float(y[0]) * (1.0 + float(np.abs(X[:, 0]).max()))
        margin = float(np.min(y * (X @ q + beta)))
        return SeparatingHyperplane(q, beta, margin)

    return SeparatingHyperplane(q / norm, beta / norm, margin / norm)


def _is_separable(data: LabeledDataset) -> typing.Optional[SeparatingHyperplane]:
    try:
        return separability(data)
    except NotSeparable:
        return None


def genericity(data: LabeledDataset, alpha: float, L_depth: int, budget: int = GENERICITY_BUDGET) -> GenericityVerdict:
    """
    Exhaustive search for a non-zero solution of the rare-data equalities
    (balanced `mu * lambda * x` and `mu * lambda` sums) with slopes in
    {1, alpha, ..., alpha^L} and indicators in {0, 1}.

    Arguments:
    * `alpha` - leak slope
    * `L_depth` - number of hidden layers
    * `budget` - upper bound on `(L+1)^N * 2^(N R)`; `BudgetExceeded` above

    Only wrong-class indicators enter the system, so only those are
    enumerated; the true-class indicators stay zero in the witness.
    """

    onehot = data.onehot()
    N, R = onehot.shape
    size = (L_depth + 1) ** N * 2 ** (N * R)
    if size > budget:
        raise BudgetExceeded(size, budget)

    slopes = sorted({ float(alpha) ** p for p in range(L_depth + 1) }, reverse=True)
    rows, cols = np.nonzero(onehot == 0)
    free = rows.shape[0]
    logger.info('genericity: %d slope patterns x %d indicator patterns', len(slopes) ** N, 2 ** free - 1)

    chunk = 1 << 16
    for lambdas in itertools.product(slopes, repeat=N):
        lambdas = np.array(lambdas)
        for start in range(1, 2 ** free, chunk):
            codes = np.arange(start, min(start + chunk, 2 ** free))
            bits = ((codes[:, None] >> np.arange(free)[None, :]) & 1).astype(np.float64)
            eps = np.zeros((codes.shape[0], N, R))
            eps[:, rows, cols] = bits

            residual = multilinear.rare_residuals(onehot, data.weights, data.points, eps, lambdas)
            hits = np.flatnonzero(residual <= WITNESS_TOL)
            if hits.size:
                witness = eps[hits[0]]
                if not multilinear.rare_check(data, witness, lambdas, WITNESS_TOL):
                    raise AssertionError('witness failed re-verification')
                return GenericityVerdict(GenericityKind.RARE, lambdas, witness)

    return GenericityVerdict(GenericityKind.GENERIC)


def _require_binary_l1(params: Params, data: LabeledDataset) -> None:
    if data.mode is not Mode.BINARY:
        raise PreconditionError('mode', 'binary data required')
    if params.shape.L != 1:
        raise PreconditionError('depth', 'one hidden layer required')


def _require_separable(data: LabeledDataset) -> SeparatingHyperplane:
    hyperplane = _is_separable(data)
    if hyperplane is None:
        raise PreconditionError('not_separable', 'data are not linearly separable')
    return hyperplane


def _require_critical(cert: CriticalityCertificate) -> None:
    if not cert.critical:
        raise PreconditionError('not_critical', f'residual { cert.residual_norm!r} above { cert.eps_crit!r}')


def rho_coefficients(cert: CriticalityCertificate, data: LabeledDataset, shape: core.NetworkShape) -> np.ndarray:
    """
    `(N, K)` matrix `rho_ik = sum_u theta_u mu_i eps_i^u lambda_ik^u` over
    the certificate's cells.
    """

    if data.mode is not Mode.BINARY or shape.L != 1:
        raise UnsupportedConfiguration('rho coefficients need binary data and one hidden layer')

    rho = np.zeros((data.N, shape.dims[1]))
    for theta, u in zip(cert.theta, cert.cells):
        if theta == 0:
            continue
        frozen = multilinear.frozen_from_cell(u, shape)
        rho += theta * (data.weights * frozen.eps[:, 0])[:, None] * frozen.lambdas[0]
    return rho


def thm4_check(params: Params, data: LabeledDataset, cert: CriticalityCertificate, alpha: typing.Optional[float] = None) -> Verdict:
    """
    Leaky one-hidden-layer network on separable data: a critical point has
    `v = 0` or zero loss.
    """

    alpha = params.alpha if alpha is None else alpha
    if alpha <= 0:
        raise PreconditionError('alpha', 'leak slope must be positive')
    _require_binary_l1(params, data)
    _require_separable(data)
    _require_critical(cert)

    v_norm = float(np.linalg.norm(params.V))
    loss = core.total_loss(params, data)
    return Verdict('thm4', v_norm <= ZERO_TOL or loss <= GLOBAL_LOSS_TOL, {'v_norm': v_norm, 'loss': loss})


def thm6_check(params: Params, data: LabeledDataset, cert: CriticalityCertificate, tau: float = cells.DEFAULT_TAU) -> Verdict:
    """
    ReLU one-hidden-layer network on separable data: at a critical point an
    unsolved point lies on the blind side of every neuron with non-zero
    output weight. Violations are `(i, k)` pairs.
    """

    if params.alpha != 0:
        raise PreconditionError('alpha', 'plain ReLU (alpha = 0) required')
    _require_binary_l1(params, data)
    _require_separable(data)
    _require_critical(cert)

    losses = core.per_point_losses(params, data)
    pre = data.points @ params.W[0].T + params.b[0]
    v = params.V[0]

    unsolved = np.flatnonzero(losses > ZERO_TOL)
    violations = [ (int(i), int(k)) for i in unsolved for k in range(v.shape[0]) if abs(v[k]) > ZERO_TOL and pre[i, k] > tau ]
    return Verdict('thm6', not violations, {'unsolved': unsolved.tolist(), 'loss': core.total_loss(params, data)}, violations)


def thm5_check(params: Params, data: LabeledDataset, classification: MinimumClassification) -> Verdict:
    """
    Leaky one-hidden-layer network, separable data, equally weighted
    classes: every local minimum has zero loss. Points not classified as a
    minimum pass vacuously.
    """

    if params.alpha <= 0:
        raise PreconditionError('alpha', 'leak slope must be positive')
    _require_binary_l1(params, data)
    _require_separable(data)

    positive = float(data.weights[data.targets > 0].sum())
    negative = float(data.weights[data.targets < 0].sum())
    if abs(positive - negative) > 1e-12:
        raise PreconditionError('unbalanced', f'class weights { positive!r} and { negative!r} differ')

    loss = classification.loss
    if classification.kind not in (MinimumKind.FLAT_TYPE_I, MinimumKind.SHARP_TYPE_II):
        return Verdict('thm5', True, {'loss': loss, 'vacuous': True})
    return Verdict('thm5', loss <= GLOBAL_LOSS_TOL, {'loss': loss, 'vacuous': False})


def zero_loss_type_check(classification: MinimumClassification) -> Verdict:
    """A local minimum with zero loss is flat"""

    if classification.loss > ZERO_TOL or classification.kind not in (MinimumKind.FLAT_TYPE_I, MinimumKind.SHARP_TYPE_II):
        return Verdict('zero_loss_type', True, {'vacuous': True})
    return Verdict('zero_loss_type', classification.kind is MinimumKind.FLAT_TYPE_I, {'kind': classification.kind.value})


@dataclasses.dataclass(frozen=True, eq=False)
class ProbeResult:
    """
    Defines:
    * `which` - probe number 1, 2 or 3
    * `k` - neuron the perturbation acts on
    * `direction` - perturbation direction in parameter layout
    * `predicted` - guaranteed decrease per step length
    * `observed` - measured decrease `L(w) - L(w + t d)` per step length
    """

    which: int
    k: int
    direction: Params
    predicted: typing.Dict[float, float]
    observed: typing.Dict[float, float]

    def holds(self, factor: float = 1.0, slack: float = 1e-13) -> bool:
        return all(self.observed[t] >= factor * self.predicted[t] - slack for t in self.predicted)


def descent_probe(params: Params, data: LabeledDataset, hyperplane: SeparatingHyperplane, which: int, k: int = 0, steps: typing.Sequence[float] = PROBE_STEPS) -> ProbeResult:
    """
    Evaluate one of three explicit perturbations of neuron `k`.

    Arguments:
    * `which` - `1`: tilt `w_k` along `sign(v_k) q`; `2`: grow `v_k` from
      zero; `3`: grow `v_k` from zero while tilting `w_k` along `q`
    * `hyperplane` - separating hyperplane supplying `q`, `beta`, `m`
    * `steps` - step lengths to evaluate

    The cell entered along the ray is read off the signature at the
    shortest step, with remaining zeros resolved to the inactive side,
    which only lowers the predicted decrease.
    """

    _require_binary_l1(params, data)
    shape = params.shape
    K = shape.dims[1]
    if not 0 <= k < K:
        raise PreconditionError('neuron', f'neuron { k } outside 0..{ K - 1 }')

    v = params.V[0]
    v_zero = float(np.max(np.abs(v))) <= ZERO_TOL
    if which in (2, 3) and not v_zero:
        raise PreconditionError('v_nonzero', f'probe { which } needs v = 0')
    if which == 2 and shape.output_bias and abs(abs(params.c[0]) - 1.0) <= ZERO_TOL:
        raise PreconditionError('c_boundary', 'probe 2 needs c outside {-1, +1}')
    if which not in (1, 2, 3):
        raise PreconditionError('probe', f'unknown probe { which }')

    direction = Params.zeros(shape)
    q, beta, m = hyperplane.q, hyperplane.beta, hyperplane.margin
    if which == 1:
        s = float(np.sign(v[k]))
        direction.W[0][k] = s * q
        direction.b[0][k] = s * beta
    if which in (2, 3):
        direction.V[0, k] = 1.0
    if which == 3:
        direction.W[0][k] = q
        direction.b[0][k] = beta

    base = params.vector()
    step = direction.vector()
    entered = cells.signature(params.replace(base + min(steps) * step), data).entries
    frozen = multilinear.frozen_from_signs(entered, shape)
    coeffs = multilinear.decomposition_l1(data, frozen)

    active = float(data.weights @ (frozen.eps[:, 0] * frozen.lambdas[0][:, k]))
    linear = float(coeffs.a[k] @ params.W[0][k] + coeffs.alpha[k] * params.b[0][k])

    loss = core.total_loss(params, data)
    predicted = {}
    observed = {}
    for t in steps:
        if which == 1:
            predicted[t] = t * abs(v[k]) * m * active
        elif which == 2:
            predicted[t] = t * linear
        else:
            predicted[t] = t * linear + t * t * m * active
        observed[t] = loss - core.total_loss(params.replace(base + t * step), data)

    return ProbeResult(which, k, direction, predicted, observed)


def _random_descent(params: Params, data: LabeledDataset, loss_fn, samples: int, radii: typing.Sequence[float], rng: np.random.Generator) -> typing.Optional[typing.Dict[str, typing.Any]]:
    base = params.vector()
    mask = core.free_mask(params.shape)
    free = max(int(mask.sum()), 1)
    loss = loss_fn(params)
    per_radius = max(samples // len(radii), 1)

    for radius in radii:
        for _ in range(per_radius):
            step = rng.standard_normal(base.shape[0]) * mask
            step *= radius * rng.uniform() ** (1.0 / free) / max(np.linalg.norm(step), 1e-300)
            decrease = loss - loss_fn(params.replace(base + step))
            if decrease > ZERO_TOL:
                return {'descent': 'random', 'radius': radius, 'decrease': decrease}
    return None


def _probe_descent(params: Params, data: LabeledDataset) -> typing.Optional[typing.Dict[str, typing.Any]]:
    if data.mode is not Mode.BINARY or params.shape.L != 1:
        return None
    hyperplane = _is_separable(data)
    if hyperplane is None:
        return None

    v = params.V[0]
    v_zero = float(np.max(np.abs(v))) <= ZERO_TOL
    c_ok = not (params.shape.output_bias and abs(abs(params.c[0]) - 1.0) <= ZERO_TOL)

    for k in range(v.shape[0]):
        probes = [1] if abs(v[k]) > ZERO_TOL else []
        if v_zero:
            probes = ([2] if c_ok else []) + [3]
        for which in probes:
            result = descent_probe(params, data, hyperplane, which, k)
            best = max(result.observed.values())
            if best > ZERO_TOL:
                return {'descent': f'probe{ which }', 'neuron': k, 'decrease': best}
    return None


def _flat_cells(params: Params, data: LabeledDataset, cert: CriticalityCertificate, rng: np.random.Generator) -> typing.List[cells.CellId]:
    flat = []
    for u in cert.cells:
        frozen = multilinear.frozen_from_cell(u, params.shape)
        if data.mode is Mode.BINARY and params.shape.L == 1:
            is_flat = multilinear.flat_cell_test_l1(multilinear.decomposition_l1(data, frozen), output_bias=params.shape.output_bias)
        else:
            is_flat = multilinear.flat_cell_test_frozen(params, frozen, data, rng=rng)
        if is_flat:
            flat.append(u)
    return flat


def classify_minimum(params: Params, data: LabeledDataset, tau: float = cells.DEFAULT_TAU, max_zeros: int = 20, samples: int = 1000, radii: typing.Sequence[float] = (1e-3, 1e-5), eps_crit: typing.Optional[float] = None, rng: typing.Optional[np.random.Generator] = None) -> MinimumClassification:
    """
    Classify a parameter point as a flat (type I) or sharp (type II) local
    minimum.

    A non-critical point is not a minimum. At a critical point the
    explicit descent probes (binary, one hidden layer, separable data) and
    a local random search over `samples` points at the given radii look
    for a strict decrease above 1e-9. Without one, the point is flat when
    an incident cell is flat, sharp when it lies on the non-smooth set with
    positive loss, and inconclusive otherwise.
    """

    rng = rng if rng is not None else np.random.default_rng(0)
    critical, cert = clarke.is_critical(params, data, eps_crit, tau, max_zeros, rng)
    loss = core.total_loss(params, data)

    if not critical:
        return MinimumClassification(MinimumKind.NOT_MINIMUM, loss, cert, [], {'descent': 'not_critical', 'residual': cert.residual_norm})

    flat = _flat_cells(params, data, cert, rng)
    descent = _probe_descent(params, data) or _random_descent(params, data, lambda p: core.total_loss(p, data), samples, radii, rng)
    if descent is not None:
        return MinimumClassification(MinimumKind.NOT_MINIMUM, loss, cert, flat, descent)

    smooth = cells.signature(params, data, tau).is_smooth
    evidence = {'smooth': smooth, 'incident_cells': len(cert.cells)}
    if flat:
        kind = MinimumKind.FLAT_TYPE_I
    elif not smooth and loss > ZERO_TOL:
        kind = MinimumKind.SHARP_TYPE_II
    else:
        kind = MinimumKind.INCONCLUSIVE

    logger.info('classified point with loss %g as %s', loss, kind.value)
    return MinimumClassification(kind, loss, cert, flat, evidence)


def convex_hinge_optimum(data: LabeledDataset, fit_bias: bool = True) -> float:
    """
    Optimal value of the convex weighted hinge problem over a linear
    classifier `(w, c)`, solved exactly as a linear program in
    `(w, c, slack)`.
    """

    if data.mode is not Mode.BINARY:
        raise UnsupportedConfiguration('convex hinge oracle needs binary labels')

    X, y, mu = data.points, data.targets, data.weights
    N, d = X.shape
    objective = np.concatenate([np.zeros(d + 1), mu])
    # slack_i >= 1 - y_i (<w, x_i> + c)
    A_ub = np.hstack([-y[:, None] * X, -y[:, None], -np.eye(N)])
    bounds = [(None, None)] * d + [(None, None) if fit_bias else (0.0, 0.0)] + [(0.0, None)] * N

    res = scipy.optimize.linprog(objective, A_ub=A_ub, b_ub=-np.ones(N), bounds=bounds, method='highs')
    if res.status != 0:
        raise SolverError('convex hinge LP', res.status, res.message)
    return float(res.fun)


def end_to_end_weights(params: Params) -> np.ndarray:
    """`(W^L ... W^1)^T v` for a binary network"""

    product = np.eye(params.shape.d)
    for w in params.W:
        product = w @ product
    return product.T @ params.V[0]


def deep_linear_check(params: Params, data: LabeledDataset, cert: CriticalityCertificate, samples: int = 1000, radii: typing.Sequence[float] = (1e-3, 1e-5), rng: typing.Optional[np.random.Generator] = None) -> Verdict:
    """
    Linear network (alpha = 1): a critical point with non-zero end-to-end
    weights attains the optimum of the convex hinge problem. With zero
    end-to-end weights the claim covers local minima only, so a local
    random search that finds descent makes the check vacuous.
    """

    if params.alpha != 1:
        raise PreconditionError('alpha', 'linear network (alpha = 1) required')
    if data.mode is not Mode.BINARY:
        raise PreconditionError('mode', 'binary data required')
    _require_critical(cert)

    vbar = end_to_end_weights(params)
    loss = core.total_loss(params, data)
    optimum = convex_hinge_optimum(data, fit_bias=params.shape.L > 0 or params.shape.output_bias)
    details = {'vbar_norm': float(np.linalg.norm(vbar)), 'loss': loss, 'optimum': optimum, 'gap': loss - optimum}

    if np.linalg.norm(vbar) <= ZERO_TOL:
        rng = rng if rng is not None else np.random.default_rng(0)
        descent = _random_descent(params, data, lambda p: core.total_loss(p, data), samples, radii, rng)
        if descent is not None:
            details.update(vacuous=True, descent=descent)
            return Verdict('deep_linear', True, details)

    return Verdict('deep_linear', loss - optimum <= 1e-5, details)
