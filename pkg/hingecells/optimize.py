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
Full-batch subgradient descent that records which cell every iterate
lives in.
"""

import collections
import dataclasses
import enum
import hashlib
import logging
import typing

import numpy as np

from . import cells
from . import clarke
from . import core
from . import multilinear
from . import penalty
from .clarke import CriticalityCertificate
from .core import LabeledDataset, Mode, NetworkShape, Params
from .errors import Divergence, TooManyZeros, UnsupportedConfiguration
from .penalty import ReplicatedParams
from .service import TaskService


logger = logging.getLogger(__name__)

# Loss above which a run is aborted
DIVERGENCE_GUARD = 1e6

# Default criticality threshold of early stopping
DEFAULT_EPS_CRIT = 1e-6


class ObjectiveSpec:
    """
    Specification of a training objective.

    Defines:
    * `mode` - dataset mode the objective accepts
    * `replicated` - iterates are `ReplicatedParams` instead of `Params`
    * `description` - one-line summary for help output
    """

    def __init__(self, mode: Mode, replicated: bool, description: str):
        self.mode = mode
        self.replicated = replicated
        self.description = description


class Objective(enum.Enum):
    """
    Training objectives: the binary hinge loss, the plain multiclass hinge
    loss and the replicated exact-penalty objective.
    """

    binary = ObjectiveSpec(
        mode=Mode.BINARY,
        replicated=False,
        description='weighted binary hinge loss'
    )

    multiclass = ObjectiveSpec(
        mode=Mode.MULTICLASS,
        replicated=False,
        description='weighted multiclass hinge loss (baseline)'
    )

    penalty = ObjectiveSpec(
        mode=Mode.MULTICLASS,
        replicated=True,
        description='one-versus-all losses over per-class replicas plus replica penalty'
    )

    @classmethod
    def names(cls) -> typing.List[str]:
        """List available keys from Enum"""
        return [ e.name for e in cls ]

    def __new__(cls, *args, **kwds):
        value = len(cls.__members__) + 1
        obj = object.__new__(cls)
        obj._value_ = value
        return obj

    def __init__(self, spec: ObjectiveSpec):
        self.spec = spec


class ScheduleSpec:
    """
    Step size rule `dt_j = eta * decay(j)` for the 0-based step index `j`.
    """

    def __init__(self, decay: typing.Callable[[int], float]):
        self.decay = decay


class Schedule(enum.Enum):
    constant = ScheduleSpec(
        decay=lambda j: 1.0
    )

    inv_sqrt = ScheduleSpec(
        decay=lambda j: 1.0 / np.sqrt(j + 1.0)
    )

    @classmethod
    def names(cls) -> typing.List[str]:
        """List available keys from Enum"""
        return [ e.name for e in cls ]

    def __new__(cls, *args, **kwds):
        value = len(cls.__members__) + 1
        obj = object.__new__(cls)
        obj._value_ = value
        return obj

    def __init__(self, spec: ScheduleSpec):
        self.spec = spec

    def step(self, eta: float, j: int) -> float:
        return float(eta * self.spec.decay(j))


def _resolved_entries(params: Params, data: LabeledDataset, tau: float) -> np.ndarray:
    # zero entries go to the active side
    entries = cells.signature(params, data, tau).entries
    return np.where(entries == 0, 1, entries).astype(np.int8)


class _Problem:
    """Loss, step generator and certificate of one objective on one dataset"""

    def __init__(self, objective: Objective, data: LabeledDataset, tau: float, max_zeros: int, class_weights=None):
        if data.mode is not objective.spec.mode:
            raise UnsupportedConfiguration(f'objective { objective.name } needs { objective.spec.mode.value } data')
        if class_weights is not None and not objective.spec.replicated:
            raise UnsupportedConfiguration('per-class weights apply to the penalty objective only')

        self.objective = objective
        self.data = data
        self.tau = tau
        self.max_zeros = max_zeros
        self.class_weights = class_weights
        if objective.spec.replicated:
            self.datasets = [ penalty.class_dataset(data, r, class_weights) for r in range(1, data.R + 1) ]

    def loss(self, x) -> float:
        if self.objective.spec.replicated:
            return penalty.E_gamma(x, self.data, self.class_weights)
        return core.total_loss(x, self.data)

    def step(self, x) -> typing.Tuple[str, np.ndarray]:
        """Hash of the selected cell and its gradient"""

        if not self.objective.spec.replicated:
            entries = _resolved_entries(x, self.data, self.tau)
            frozen = multilinear.frozen_from_signs(entries, x.shape)
            return f'{ cells.cell_hash(entries):016x}', multilinear.cell_gradient(x, frozen, self.data).vector()

        blocks = []
        grads = []
        for r, binary in enumerate(self.datasets, start=1):
            params = x.class_params(r)
            entries = _resolved_entries(params, binary, self.tau)
            blocks.append(entries)
            grads.append(multilinear.cell_gradient(params, multilinear.frozen_from_signs(entries, params.shape), binary).vector())
        key = cells.cell_hash(np.hstack(blocks))
        return f'{ key:016x}', np.concatenate(grads) + penalty.penalty_gradient(x)

    def certify(self, x, eps_crit: float, rng: np.random.Generator) -> CriticalityCertificate:
        if self.objective.spec.replicated:
            return penalty.is_critical_E(x, self.data, eps_crit, self.tau, self.max_zeros, rng, self.class_weights)[1]
        return clarke.is_critical(x, self.data, eps_crit, self.tau, self.max_zeros, rng)[1]

    def mask(self, x) -> np.ndarray:
        if self.objective.spec.replicated:
            return x.free_mask()
        return core.free_mask(x.shape)


@dataclasses.dataclass(eq=False)
class Trajectory:
    """
    Record of one descent run.

    Defines:
    * `objective` - objective the run minimized
    * `seed` - seed of the run's random stream
    * `losses` - loss before every step, then the final loss
    * `steps` - step sizes
    * `cells` - hash of the cell each step's generator came from
    * `iterates` - parameter vectors every `thin` steps (empty when not thinned)
    * `final` - last iterate
    * `certificate` - criticality certificate at the last iterate, if computed
    * `stopped_early` - the run ended on a passed criticality check
    """

    objective: Objective
    seed: typing.Any
    losses: typing.List[float] = dataclasses.field(default_factory=list)
    steps: typing.List[float] = dataclasses.field(default_factory=list)
    cells: typing.List[str] = dataclasses.field(default_factory=list)
    iterates: typing.List[np.ndarray] = dataclasses.field(default_factory=list)
    final: typing.Any = None
    certificate: typing.Optional[CriticalityCertificate] = None
    stopped_early: bool = False

    @property
    def final_loss(self) -> float:
        return self.losses[-1]

    @property
    def occupancy(self) -> typing.Counter[str]:
        return collections.Counter(self.cells)

    def occupancy_fractions(self) -> typing.Dict[str, float]:
        """Share of recorded steps spent in each cell"""

        total = len(self.cells)
        if total == 0:
            return {}
        return { key: count / total for key, count in self.occupancy.items() }

    def digest(self) -> str:
        """Content hash over losses, steps, visited cells and the final iterate"""

        h = hashlib.blake2b(digest_size=16)
        h.update(np.asarray(self.losses, dtype='<f8').tobytes())
        h.update(np.asarray(self.steps, dtype='<f8').tobytes())
        h.update(','.join(self.cells).encode())
        h.update(np.asarray(self.final.vector(), dtype='<f8').tobytes())
        return h.hexdigest()


def occupancy_combination(trajectory: Trajectory, generators) -> typing.Tuple[np.ndarray, np.ndarray]:
    """
    Occupancy-weighted combination of cell gradients.

    Arguments:
    * `generators` - `(key, gradient)` pairs, keys being `CellId`s or cell
      hashes as recorded in `trajectory.cells`

    Returns the weights (renormalized over the given cells, zero where the
    run never visited) and the combined vector.
    """

    fractions = trajectory.occupancy_fractions()
    keys = [ key.hex if isinstance(key, cells.CellId) else str(key) for key, _ in generators ]
    G = np.array([ g for _, g in generators ], dtype=np.float64)

    weights = np.array([ fractions.get(key, 0.0) for key in keys ])
    if weights.sum() > 0:
        weights = weights / weights.sum()
    return weights, weights @ G


def subgradient_descent(objective: Objective, data: LabeledDataset, init, schedule: Schedule = Schedule.inv_sqrt, eta: float = 0.5, max_iters: int = 10_000, seed=0, eps_crit: float = DEFAULT_EPS_CRIT, check_every: int = 100, thin: int = 0, tau: float = cells.DEFAULT_TAU, max_zeros: int = 20, class_weights=None) -> Trajectory:
    """
    Run `x_{j+1} = x_j - dt_j g_j` for at most `max_iters` steps.

    `g_j` is the gradient of the cell the iterate lies in; on the
    non-smooth set the zero signature entries are resolved to +1 to pick
    the cell. Every `check_every` steps the min-norm residual of the
    incident-cell gradients is computed and the run stops once it is at
    most `eps_crit`. Checks that meet too many zero entries are skipped.
    Raises `Divergence` once the loss exceeds 1e6.

    Arguments:
    * `init` - `Params` (binary, multiclass) or `ReplicatedParams` (penalty)
    * `seed` - seed of the random stream used by criticality checks
    * `thin` - keep every `thin`-th iterate in the trajectory, none when 0
    """

    problem = _Problem(objective, data, tau, max_zeros, class_weights)
    if objective.spec.replicated != isinstance(init, ReplicatedParams):
        raise UnsupportedConfiguration(f'objective { objective.name } got initial parameters of type { type(init).__name__ }')

    rng = np.random.default_rng(seed)
    traj = Trajectory(objective, seed)
    x = init
    vector = init.vector()
    mask = problem.mask(init)

    for j in range(max_iters):
        loss = problem.loss(x)
        if not loss <= DIVERGENCE_GUARD:
            raise Divergence(j, loss)

        key, g = problem.step(x)
        g = g * mask
        check = j % check_every == 0 or not np.any(g)
        if check:
            try:
                cert = problem.certify(x, eps_crit, rng)
                logger.debug('step %d: loss %g, residual %g', j, loss, cert.residual_norm)
                if cert.critical:
                    traj.certificate = cert
                    traj.stopped_early = True
                    break
            except TooManyZeros as e:
                logger.info('step %d: criticality check skipped, %s', j, e)
        if not np.any(g):
            logger.warning('step %d: zero step generator at a non-critical point, stopping', j)
            break

        dt = schedule.step(eta, j)
        traj.losses.append(loss)
        traj.steps.append(dt)
        traj.cells.append(key)
        if thin and j % thin == 0:
            traj.iterates.append(vector.copy())

        vector = vector - dt * g
        x = init.replace(vector)

    traj.final = x
    traj.losses.append(problem.loss(x))
    if traj.certificate is None:
        try:
            traj.certificate = problem.certify(x, eps_crit, rng)
        except TooManyZeros as e:
            logger.info('final criticality check skipped, %s', e)

    logger.info('%s run seed %s: %d steps, final loss %g%s', objective.name, seed, len(traj.steps), traj.final_loss, ' (critical)' if traj.stopped_early else '')
    return traj


def initial_point(objective: Objective, shape: NetworkShape, rng: np.random.Generator, init_scale: float = 1.0, gamma: float = 1.0):
    if objective.spec.replicated:
        return ReplicatedParams.uniform(shape, rng, init_scale, gamma)
    return Params.uniform(shape, rng, init_scale)


def multi_start(objective: Objective, data: LabeledDataset, shape: NetworkShape, n_starts: int, init_scale: float = 1.0, seed: int = 0, gamma: float = 1.0, workers: int = 1, **kwargs) -> typing.List[Trajectory]:
    """
    Independent runs from `n_starts` initial points drawn uniformly from
    `[-init_scale, init_scale]`, start `k` seeded with `(seed, k)`.
    Returns the trajectories sorted by final loss (ties keep start order).

    Remaining keyword arguments go to `subgradient_descent`.
    """

    if n_starts < 1:
        raise ValueError('n_starts must be at least 1')

    service = TaskService(workers)
    for k in range(n_starts):
        def run(k=k):
            rng = np.random.default_rng((seed, k))
            init = initial_point(objective, shape, rng, init_scale, gamma)
            return subgradient_descent(objective, data, init, seed=(seed, k), **kwargs)
        service.add_task_handler(run)

    logger.info('multi-start: %d runs of %s', n_starts, objective.name)
    return sorted(service.run(), key=lambda t: t.final_loss)
