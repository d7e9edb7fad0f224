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
Activation signatures, cell identifiers and incidence sets.

The signature of a parameter point records the sign of every hidden
pre-activation and every loss-layer argument for every data point. Points
sharing an all-nonzero signature form an open cell; points with a zero
entry lie on the non-smooth set between cells.
"""

import dataclasses
import hashlib
import itertools
import logging
import typing

import numpy as np
import scipy.optimize

from . import core
from . import multilinear
from .core import LabeledDataset, NetworkShape, Params
from .errors import SolverError, TooManyZeros


logger = logging.getLogger(__name__)

# Dead-band half-width on pre-activations
DEFAULT_TAU = 1e-9

# Linearized functionals shorter than this are reported as degenerate
DEGENERATE_NORM = 1e-12

# Optimal LP slack needed to accept a completion
SLACK_TOL = 1e-12


@dataclasses.dataclass(frozen=True, eq=False)
class Signature:
    """
    Ternary activation pattern, `(N, D)` entries in {-1, 0, +1}. Columns are
    grouped by layer: `d_1` hidden entries, ..., `d_L` hidden entries, then
    the `R_out` loss-layer entries.
    """

    entries: np.ndarray
    shape: NetworkShape

    def zeros(self) -> typing.List[typing.Tuple[int, int, int]]:
        """Coordinates `(i, layer, k)` of zero entries, layer counted from 1"""

        return zeros_coords(self.shape, zip(*np.nonzero(self.entries == 0)))

    @property
    def zero_count(self) -> int:
        return int(np.count_nonzero(self.entries == 0))

    @property
    def is_smooth(self) -> bool:
        return self.zero_count == 0


class CellId:
    """
    Identifier of an open cell: `(N, D)` signs in {-1, +1} with a stable
    64-bit content hash.

    The hash is blake2b with an 8-byte digest over the point and neuron
    counts followed by the sign bits packed row-major in (point, layer,
    neuron) order, so it is reproducible across runs and platforms.
    """

    __slots__ = ('entries', 'key')

    def __init__(self, entries):
        entries = np.asarray(entries, dtype=np.int8)
        if entries.ndim != 2:
            raise ValueError('cell entries must be an (N, D) array')
        if np.any((entries != 1) & (entries != -1)):
            raise ValueError('cell entries must be -1 or +1')

        entries.setflags(write=False)
        self.entries = entries
        self.key = cell_hash(entries)

    @property
    def hex(self) -> str:
        return f'{ self.key:016x}'

    def __hash__(self) -> int:
        return hash(self.key)

    def __eq__(self, other) -> bool:
        if not isinstance(other, CellId):
            return NotImplemented
        return self.key == other.key and np.array_equal(self.entries, other.entries)

    def __repr__(self) -> str:
        return f'CellId({ self.hex })'


def cell_hash(entries: np.ndarray) -> int:
    entries = np.asarray(entries)
    header = np.array(entries.shape, dtype='<u8').tobytes()
    bits = np.packbits((entries > 0).astype(np.uint8).ravel()).tobytes()
    return int.from_bytes(hashlib.blake2b(header + bits, digest_size=8).digest(), 'little')


@dataclasses.dataclass(frozen=True)
class BoundaryReport:
    """
    Returned by `cell_of` for points on the non-smooth set.

    Defines:
    * `signature` - the full ternary signature
    * `zeros` - `(i, layer, k)` coordinates of the zero entries
    * `degenerate` - zero entries whose linearized functional is shorter
      than 1e-12, where first-order incidence analysis may miss cells
    """

    signature: Signature
    zeros: typing.List[typing.Tuple[int, int, int]]
    degenerate: typing.List[typing.Tuple[int, int, int]]


def preactivations(params: Params, data: LabeledDataset) -> np.ndarray:
    """
    `(N, D)` matrix whose signs form the signature: hidden pre-activations
    layer by layer, then the loss-layer arguments.
    """

    params.shape.check(data)
    columns = []
    x = data.points
    for w, b in zip(params.W, params.b):
        z = x @ w.T + b
        columns.append(z)
        x = core.leaky_relu(z, params.alpha)

    outputs = x @ params.V.T + params.c
    columns.append(core.loss_arguments(outputs, data))
    return np.hstack(columns)


def signature(params: Params, data: LabeledDataset, tau: float = DEFAULT_TAU) -> Signature:
    if tau < 0:
        raise ValueError('tau must be non-negative')

    values = preactivations(params, data)
    entries = np.where(np.abs(values) <= tau, 0, np.sign(values)).astype(np.int8)
    return Signature(entries, params.shape)


def _degenerate(params: Params, data: LabeledDataset, sig: Signature, zeros) -> typing.List[typing.Tuple[int, int, int]]:
    frozen = multilinear.frozen_from_signs(np.where(sig.entries == 0, 1, sig.entries), params.shape)
    jac = multilinear.preactivation_jacobian(params, frozen, data, zeros)
    norms = np.linalg.norm(jac, axis=1)
    return [ coord for coord, n in zip(zeros, norms) if n < DEGENERATE_NORM ]


def cell_of(params: Params, data: LabeledDataset, tau: float = DEFAULT_TAU) -> typing.Union[CellId, BoundaryReport]:
    """
    Cell identifier of a smooth point, or a `BoundaryReport` naming the zero
    entries of a non-smooth one.
    """

    sig = signature(params, data, tau)
    if sig.is_smooth:
        return CellId(sig.entries)

    zeros = sig.zeros()
    degenerate = _degenerate(params, data, sig, zeros)
    if degenerate:
        logger.warning('%d zero entries have degenerate linearizations: %s', len(degenerate), degenerate)
    return BoundaryReport(sig, zeros, degenerate)


def safe_radius(params: Params, data: LabeledDataset, tau: float = DEFAULT_TAU) -> float:
    """
    Radius around a smooth point inside which the cell cannot change:
    the smallest pre-activation magnitude over twice the Lipschitz bound.
    """

    values = np.abs(preactivations(params, data))
    smallest = float(values[values > tau].min()) if np.any(values > tau) else 0.0
    bound = core.lipschitz_bound(params, data, 1.0).preactivation
    if bound <= 0:
        return 1.0
    return min(1.0, smallest / (2.0 * bound))


def _completion_slack(params: Params, data: LabeledDataset, base_entries: np.ndarray, zeros, signs) -> float:
    entries = base_entries.copy()
    for (i, col), s in zip(zeros, signs):
        entries[i, col] = s
    frozen = multilinear.frozen_from_signs(entries, params.shape)

    jac = multilinear.preactivation_jacobian(params, frozen, data, zeros_coords(params.shape, zeros))
    rows = np.asarray(signs, dtype=np.float64)[:, None] * jac
    norms = np.linalg.norm(rows, axis=1)
    if np.any(norms < DEGENERATE_NORM):
        return 0.0
    rows = rows / norms[:, None]

    # variables (d_omega, t): maximize t subject to rows @ d_omega >= t
    P = rows.shape[1]
    mask = core.free_mask(params.shape)
    objective = np.zeros(P + 1)
    objective[-1] = -1.0
    A_ub = np.hstack([-rows, np.ones((rows.shape[0], 1))])
    bounds = [ (-1.0, 1.0) if free else (0.0, 0.0) for free in mask ] + [(None, 1.0)]

    res = scipy.optimize.linprog(objective, A_ub=A_ub, b_ub=np.zeros(rows.shape[0]), bounds=bounds, method='highs')
    if res.status != 0:
        raise SolverError('incidence LP', res.status, res.message)
    return float(-res.fun)


def zeros_coords(shape: NetworkShape, zeros) -> typing.List[typing.Tuple[int, int, int]]:
    """Translate `(i, column)` zero positions into `(i, layer, k)` coordinates"""

    bounds = np.cumsum((0,) + shape.dims[1:])
    out = []
    for i, col in zeros:
        layer = int(np.searchsorted(bounds, col, side='right'))
        out.append((int(i), layer, int(col - bounds[layer - 1])))
    return out


def _probe_completions(params: Params, data: LabeledDataset, sig: Signature, zeros, tau: float, rng: np.random.Generator, probes: int, radius: float) -> typing.Set[typing.Tuple[int, ...]]:
    base = params.vector()
    mask = core.free_mask(params.shape)
    rows = np.array([ i for i, _ in zeros ])
    cols = np.array([ col for _, col in zeros ])
    fixed = sig.entries != 0
    found = set()

    for _ in range(probes):
        step = rng.standard_normal(base.shape[0]) * mask
        step *= radius / max(np.linalg.norm(step), 1e-300)
        probed = signature(params.replace(base + step), data, tau).entries
        if np.any(probed == 0) or not np.array_equal(probed[fixed], sig.entries[fixed]):
            continue
        found.add(tuple(int(s) for s in probed[rows, cols]))

    return found


def incidence_cells(params: Params, data: LabeledDataset, tau: float = DEFAULT_TAU, max_zeros: int = 20, rng: typing.Optional[np.random.Generator] = None, probes: int = 64, probe_radius: typing.Optional[float] = None) -> typing.List[CellId]:
    """
    Cells whose closure contains `params`, in enumeration order.

    Every sign completion of the zero entries is tested with a linear
    program over perturbation directions: each completed sign must hold
    strictly for the linearized pre-activation, with a shared slack that is
    maximized under a unit box on the direction. Completions with no
    positive slack get a second chance through `probes` random
    perturbations of radius `probe_radius`.
    """

    sig = signature(params, data, tau)
    if sig.is_smooth:
        return [CellId(sig.entries)]

    zeros = [ (int(i), int(col)) for i, col in zip(*np.nonzero(sig.entries == 0)) ]
    z = len(zeros)
    if z > max_zeros:
        raise TooManyZeros(z, max_zeros)
    if z > 12:
        logger.warning('enumerating %d sign completions', 2 ** z)

    rng = rng if rng is not None else np.random.default_rng(0)
    if probe_radius is None:
        probe_radius = 1e-6 * (1.0 + np.linalg.norm(params.vector()))

    cells = []
    probed = None
    for signs in itertools.product((-1, 1), repeat=z):
        slack = _completion_slack(params, data, sig.entries, zeros, signs)
        logger.debug('completion %s slack %g', signs, slack)

        if slack <= SLACK_TOL:
            if probed is None:
                probed = _probe_completions(params, data, sig, zeros, tau, rng, probes, probe_radius)
            if signs not in probed:
                continue
            logger.warning('completion %s accepted by random probes only', signs)

        entries = sig.entries.copy()
        for (i, col), s in zip(zeros, signs):
            entries[i, col] = s
        cells.append(CellId(entries))

    return cells


def incidence_set(params: Params, data: LabeledDataset, tau: float = DEFAULT_TAU, max_zeros: int = 20, rng: typing.Optional[np.random.Generator] = None) -> typing.Set[CellId]:
    return set(incidence_cells(params, data, tau, max_zeros, rng))
