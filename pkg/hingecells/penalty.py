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
Exact-penalty objective for multiclass networks.

Every class r owns a replica of the hidden parameters and its own output
head, so its one-versus-all criterion is a binary network problem on its
own. A quadratic penalty on the spread of the replicas couples the classes.
"""

import dataclasses
import itertools
import logging
import typing

import numpy as np

from . import cells
from . import clarke
from . import core
from . import landscape
from . import multilinear
from .clarke import CriticalityCertificate
from .core import LabeledDataset, Mode, NetworkShape, Params
from .errors import IncidenceOverflow, NotSeparable, PreconditionError, ShapeError, UnsupportedConfiguration
from .landscape import Verdict


logger = logging.getLogger(__name__)

# Largest product incidence set enumerated for the penalty objective
PRODUCT_CAP = 4096

# Replica spread accepted as equal, relative to 1 + |mean|
REPLICA_TOL = 1e-5

# Per-class residual accepted at the averaged parameters
CLASS_RESIDUAL_TOL = 1e-5


@dataclasses.dataclass(eq=False)
class ReplicatedParams:
    """
    Per-class copies of the hidden parameters plus per-class heads.

    Defines:
    * `shape` - multiclass network shape, `R = shape.R` replicas
    * `W` - `W[r][l]` hidden weights of replica `r`, layer `l + 1`
    * `b` - `b[r][l]` hidden biases of replica `r`
    * `V` - `(R, d_L)` output weights, row `r` is the head of class `r + 1`
    * `c` - `(R,)` output biases
    * `gamma` - penalty strength, positive
    """

    shape: NetworkShape
    W: typing.List[typing.List[np.ndarray]]
    b: typing.List[typing.List[np.ndarray]]
    V: np.ndarray
    c: np.ndarray
    gamma: float = 1.0

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError(f'gamma must be positive, got { self.gamma!r}')
        if self.shape.R < 2:
            raise ShapeError('replicated parameters need at least two classes')
        if len(self.W) != self.shape.R or len(self.b) != self.shape.R:
            raise ShapeError(f'expected { self.shape.R } replicas, got { len(self.W) }')

        self.V = np.array(self.V, dtype=np.float64).reshape(self.shape.R, self.shape.dims[-2])
        self.c = np.array(self.c, dtype=np.float64).reshape(self.shape.R)
        self.gamma = float(self.gamma)

        # validates every replica against the per-class layout
        parts = [ self.class_params(r) for r in range(1, self.R + 1) ]
        self.W = [ p.W for p in parts ]
        self.b = [ p.b for p in parts ]

    @property
    def R(self) -> int:
        return self.shape.R

    @property
    def class_shape(self) -> NetworkShape:
        return NetworkShape(self.shape.dims[:-1] + (1,), self.shape.alpha, self.shape.output_bias)

    def class_params(self, r: int) -> Params:
        """Binary network of class `r` (1-based): replica `r` with head `(v_r, c_r)`"""

        if not 1 <= r <= self.R:
            raise ShapeError(f'class index { r } outside 1..{ self.R }')
        return Params(self.class_shape, self.W[r - 1], self.b[r - 1], self.V[r - 1:r], self.c[r - 1:r])

    def vector(self) -> np.ndarray:
        return np.concatenate([ self.class_params(r).vector() for r in range(1, self.R + 1) ])

    def free_mask(self) -> np.ndarray:
        return np.tile(core.free_mask(self.class_shape), self.R)

    @classmethod
    def from_vector(cls, shape: NetworkShape, vector, gamma: float = 1.0) -> 'ReplicatedParams':
        class_shape = NetworkShape(shape.dims[:-1] + (1,), shape.alpha, shape.output_bias)
        vector = np.asarray(vector, dtype=np.float64)
        if vector.shape != (shape.R * class_shape.size,):
            raise ShapeError(f'expected { shape.R * class_shape.size } replicated parameters, got { vector.shape }')

        parts = [ Params.from_vector(class_shape, chunk) for chunk in np.split(vector, shape.R) ]
        return cls(shape, [ p.W for p in parts ], [ p.b for p in parts ], np.vstack([ p.V for p in parts ]), np.concatenate([ p.c for p in parts ]), gamma)

    @classmethod
    def from_params(cls, params: Params, gamma: float = 1.0) -> 'ReplicatedParams':
        """Replicate the hidden parameters of a shared multiclass network"""

        R = params.shape.R
        return cls(params.shape, [ [ w.copy() for w in params.W ] for _ in range(R) ], [ [ v.copy() for v in params.b ] for _ in range(R) ], params.V.copy(), params.c.copy(), gamma)

    @classmethod
    def uniform(cls, shape: NetworkShape, rng: np.random.Generator, scale: float = 1.0, gamma: float = 1.0) -> 'ReplicatedParams':
        class_shape = NetworkShape(shape.dims[:-1] + (1,), shape.alpha, shape.output_bias)
        vector = rng.uniform(-scale, scale, size=shape.R * class_shape.size)
        vector[~np.tile(core.free_mask(class_shape), shape.R)] = 0.0
        return cls.from_vector(shape, vector, gamma)

    def replace(self, vector) -> 'ReplicatedParams':
        return ReplicatedParams.from_vector(self.shape, vector, self.gamma)

    def mean_params(self) -> Params:
        """Shared network with the replica means as hidden parameters"""

        W = [ np.mean([ rep[l] for rep in self.W ], axis=0) for l in range(self.shape.L) ]
        b = [ np.mean([ rep[l] for rep in self.b ], axis=0) for l in range(self.shape.L) ]
        return Params(self.shape, W, b, self.V.copy(), self.c.copy())

    def hidden_vectors(self) -> np.ndarray:
        """`(R, H)` matrix, row r is the flattened hidden part of replica r"""

        rows = []
        for Ws, bs in zip(self.W, self.b):
            rows.append(np.concatenate([ block.ravel() for w, v in zip(Ws, bs) for block in (w, v) ] or [np.zeros(0)]))
        return np.array(rows)

    @property
    def alpha(self) -> float:
        return self.shape.alpha


def class_dataset(data: LabeledDataset, r: int, class_weights=None) -> LabeledDataset:
    """
    Binary dataset of the one-versus-all criterion of class `r` (1-based):
    labels +1 on class `r` and -1 elsewhere, weights `mu^(i,r)`.
    """

    if data.mode is not Mode.MULTICLASS:
        raise UnsupportedConfiguration('class datasets need multiclass data')
    if not 1 <= r <= data.R:
        raise ShapeError(f'class index { r } outside 1..{ data.R }')

    weights = data.weights if class_weights is None else np.asarray(class_weights, dtype=np.float64)[:, r - 1]
    labels = 2.0 * data.targets[:, r - 1] - 1.0
    return LabeledDataset(data.points, labels, weights, Mode.BINARY, strict_weights=False)


def penalty_R(reps: ReplicatedParams) -> float:
    """`R/(R-1) * sum_r |omega^(r) - mean|^2` over all hidden blocks"""

    H = reps.hidden_vectors()
    R = H.shape[0]
    return float(R / (R - 1) * ((H - H.mean(axis=0)) ** 2).sum())


def penalty_gradient(reps: ReplicatedParams) -> np.ndarray:
    """
    Gradient of `gamma * penalty_R` in the replicated vector layout. The
    hidden block of replica r is `2 gamma (omega^(r) - mean of the others)`;
    heads get zero.
    """

    R = reps.R
    H = reps.hidden_vectors()
    deviation = 2.0 * reps.gamma * R / (R - 1) * (H - H.mean(axis=0))

    size = reps.class_shape.size
    out = np.zeros(R * size)
    for r in range(R):
        out[r * size:r * size + H.shape[1]] = deviation[r]
    return out


def class_losses(reps: ReplicatedParams, data: LabeledDataset, class_weights=None) -> np.ndarray:
    _check(reps, data)
    return np.array([ core.total_loss(reps.class_params(r), class_dataset(data, r, class_weights)) for r in range(1, reps.R + 1) ])


def E_gamma(reps: ReplicatedParams, data: LabeledDataset, class_weights=None) -> float:
    """Per-class one-versus-all losses plus `gamma * penalty_R`"""

    return float(class_losses(reps, data, class_weights).sum() + reps.gamma * penalty_R(reps))


def _check(reps: ReplicatedParams, data: LabeledDataset) -> None:
    if data.mode is not Mode.MULTICLASS:
        raise UnsupportedConfiguration('penalty objective needs multiclass data')
    reps.shape.check(data)


def subgrad_E(reps: ReplicatedParams, data: LabeledDataset, tau: float = cells.DEFAULT_TAU, max_zeros: int = 20, cap: int = PRODUCT_CAP, rng: typing.Optional[np.random.Generator] = None, class_weights=None) -> typing.List[typing.Tuple[typing.Tuple[cells.CellId, ...], np.ndarray]]:
    """
    Clarke generators of the penalty objective.

    Incident cells are products of per-class incident cells; each
    generator stacks the per-class cell gradients and adds the smooth
    penalty gradient. Raises `IncidenceOverflow` above `cap` products.
    """

    _check(reps, data)
    rng = rng if rng is not None else np.random.default_rng(0)
    per_class = []
    for r in range(1, reps.R + 1):
        params = reps.class_params(r)
        binary = class_dataset(data, r, class_weights)
        incident = cells.incidence_cells(params, binary, tau, max_zeros, rng)
        per_class.append([ (u, multilinear.cell_gradient(params, multilinear.frozen_from_cell(u, params.shape), binary).vector()) for u in incident ])

    size = int(np.prod([ len(options) for options in per_class ]))
    if size > cap:
        raise IncidenceOverflow(size, cap)

    smooth = penalty_gradient(reps)
    out = []
    for combo in itertools.product(*per_class):
        key = tuple(u for u, _ in combo)
        out.append((key, np.concatenate([ g for _, g in combo ]) + smooth))
    logger.debug('penalty objective: %d product cells', len(out))
    return out


def is_critical_E(reps: ReplicatedParams, data: LabeledDataset, eps_crit: typing.Optional[float] = None, tau: float = cells.DEFAULT_TAU, max_zeros: int = 20, rng: typing.Optional[np.random.Generator] = None, class_weights=None) -> typing.Tuple[bool, CriticalityCertificate]:
    pairs = subgrad_E(reps, data, tau, max_zeros, rng=rng, class_weights=class_weights)
    cert = clarke.certify([ k for k, _ in pairs ], np.array([ g for _, g in pairs ]), eps_crit)
    logger.info('penalty criticality: %d generators, residual %g (eps %g)', len(pairs), cert.residual_norm, cert.eps_crit)
    return cert.critical, cert


def replica_deviation(reps: ReplicatedParams) -> typing.Tuple[float, float]:
    """
    Largest per-layer, per-replica distance to the replica mean and the
    tolerance `1e-5 (1 + |mean|)` it is judged against.
    """

    worst = 0.0
    for l in range(reps.shape.L):
        w_mean = np.mean([ rep[l] for rep in reps.W ], axis=0)
        b_mean = np.mean([ rep[l] for rep in reps.b ], axis=0)
        for r in range(reps.R):
            worst = max(worst, float(np.linalg.norm(reps.W[r][l] - w_mean) + np.linalg.norm(reps.b[r][l] - b_mean)))

    H = reps.hidden_vectors()
    return worst, REPLICA_TOL * (1.0 + float(np.linalg.norm(H.mean(axis=0))))


def thm7_check(reps: ReplicatedParams, data: LabeledDataset, cert: CriticalityCertificate, class_tol: float = CLASS_RESIDUAL_TOL, tau: float = cells.DEFAULT_TAU, max_zeros: int = 20, rng: typing.Optional[np.random.Generator] = None, class_weights=None) -> Verdict:
    """
    At a critical point of the penalty objective the replicas agree, and
    the averaged network is critical for every per-class criterion.
    Violations name the failing part: `'replicas'` or a class index.
    """

    _check(reps, data)
    if not cert.critical:
        raise PreconditionError('not_critical', f'residual { cert.residual_norm!r} above { cert.eps_crit!r}')

    deviation, tol_rep = replica_deviation(reps)
    violations = [] if deviation <= tol_rep else ['replicas']

    shared = ReplicatedParams.from_params(reps.mean_params(), reps.gamma)
    residuals = []
    for r in range(1, reps.R + 1):
        _, class_cert = clarke.is_critical(shared.class_params(r), class_dataset(data, r, class_weights), class_tol, tau, max_zeros, rng)
        residuals.append(class_cert.residual_norm)
        if class_cert.residual_norm > class_tol:
            violations.append(r)

    details = {'deviation': deviation, 'tol_rep': tol_rep, 'class_residuals': residuals}
    return Verdict('thm7', not violations, details, violations)


def _one_vs_rest_separable(data: LabeledDataset) -> bool:
    for r in range(1, data.R + 1):
        try:
            landscape.separability(class_dataset(data, r))
        except NotSeparable:
            return False
    return True


def _require_penalty_point(reps: ReplicatedParams, data: LabeledDataset, cert: CriticalityCertificate) -> None:
    _check(reps, data)
    if reps.shape.L != 1:
        raise PreconditionError('depth', 'one hidden layer required')
    if not _one_vs_rest_separable(data):
        raise PreconditionError('not_separable', 'some class is not linearly separable from the rest')
    if not cert.critical:
        raise PreconditionError('not_critical', f'residual { cert.residual_norm!r} above { cert.eps_crit!r}')


def multiclass_alpha0_check(reps: ReplicatedParams, data: LabeledDataset, cert: CriticalityCertificate, class_weights=None) -> Verdict:
    """
    ReLU network at a critical point of the penalty objective: every point
    with positive loss in class r is ignored by every neuron of head r.
    Violations are `(i, r, k)` triples, `r` 1-based.
    """

    if reps.alpha != 0:
        raise PreconditionError('alpha', 'plain ReLU (alpha = 0) required')
    _require_penalty_point(reps, data, cert)

    violations = []
    for r in range(1, reps.R + 1):
        params = reps.class_params(r)
        losses = core.per_point_losses(params, class_dataset(data, r, class_weights))
        active = np.maximum(data.points @ params.W[0].T + params.b[0], 0.0)
        contribution = np.abs(params.V[0])[None, :] * active
        for i in np.flatnonzero(losses > landscape.ZERO_TOL):
            violations.extend((int(i), r, int(k)) for k in np.flatnonzero(contribution[i] > landscape.ZERO_TOL))

    return Verdict('multiclass_alpha0', not violations, {'loss': float(class_losses(reps, data, class_weights).sum())}, violations)


def multiclass_leaky_check(reps: ReplicatedParams, data: LabeledDataset, cert: CriticalityCertificate, class_weights=None) -> Verdict:
    """
    Leaky network (0 < alpha < 1) at a critical point of the penalty
    objective with every head non-zero: the one-versus-all loss vanishes.
    """

    if not 0 < reps.alpha < 1:
        raise PreconditionError('alpha', 'leak slope must lie strictly between 0 and 1')
    _require_penalty_point(reps, data, cert)

    loss = float(class_losses(reps, data, class_weights).sum())
    heads = np.linalg.norm(reps.V, axis=1)
    if np.any(heads <= landscape.ZERO_TOL):
        return Verdict('multiclass_leaky', True, {'loss': loss, 'vacuous': True})
    return Verdict('multiclass_leaky', loss <= landscape.GLOBAL_LOSS_TOL, {'loss': loss, 'vacuous': False})
