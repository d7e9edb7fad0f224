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
Network forward pass, hinge criteria and the weighted total loss.
"""

import dataclasses
import enum
import logging
import typing

import numpy as np

from .errors import DatasetError, ParamsError, ShapeError, UnsupportedConfiguration


logger = logging.getLogger(__name__)

# Tolerance of the sum-to-one check on dataset weights
WEIGHT_SUM_TOL = 1e-12


class Mode(enum.Enum):
    """
    Loss family of a dataset. Binary mode uses the scalar hinge with labels
    in {-1, +1}; multiclass mode uses one-hot targets and the multiclass
    hinge. The two are never converted into each other silently.
    """

    BINARY = 'binary'
    MULTICLASS = 'multiclass'

    @classmethod
    def names(cls) -> typing.List[str]:
        """List available values from Enum"""
        return [ e.value for e in cls ]


@dataclasses.dataclass(frozen=True, eq=False)
class LabeledDataset:
    """
    Weighted labeled points.

    Defines:
    * `points` - `(N, d)` array of inputs
    * `targets` - `(N,)` labels in {-1, +1} (binary) or `(N, R)` one-hot rows
    * `weights` - `(N,)` positive weights summing to one
    * `mode` - `Mode.BINARY` or `Mode.MULTICLASS`
    * `strict_weights` - when false the sum-to-one check is skipped, which
      per-class weight families need
    """

    points: np.ndarray
    targets: np.ndarray
    weights: np.ndarray
    mode: Mode
    strict_weights: bool = True

    def __post_init__(self):
        points = np.array(self.points, dtype=np.float64)
        if points.ndim == 1:
            points = points[:, None]
        if points.ndim != 2 or points.shape[0] < 1 or points.shape[1] < 1:
            raise ShapeError(f'points must be a non-empty (N, d) array, got shape { points.shape }')
        N = points.shape[0]

        weights = np.array(self.weights, dtype=np.float64).reshape(-1)
        if weights.shape != (N,):
            raise ShapeError(f'expected { N } weights, got { weights.shape[0] }')
        if not np.all(np.isfinite(weights)) or np.any(weights <= 0):
            raise DatasetError('weights must be finite and strictly positive')
        if self.strict_weights and abs(weights.sum() - 1.0) > WEIGHT_SUM_TOL:
            raise DatasetError(f'weights sum to { weights.sum()!r}, expected 1')
        if not np.all(np.isfinite(points)):
            raise DatasetError('points must be finite')

        mode = Mode(self.mode)
        targets = np.array(self.targets, dtype=np.float64)
        if mode is Mode.BINARY:
            targets = targets.reshape(-1)
            if targets.shape != (N,):
                raise ShapeError(f'expected { N } binary labels, got { targets.shape[0] }')
            if not np.all(np.isin(targets, (-1.0, 1.0))):
                raise DatasetError('binary labels must be -1 or +1')
        else:
            if targets.ndim != 2 or targets.shape[0] != N or targets.shape[1] < 2:
                raise ShapeError(f'expected ({ N }, R>=2) one-hot targets, got { targets.shape }')
            if not np.all(np.isin(targets, (0.0, 1.0))) or not np.all(targets.sum(axis=1) == 1.0):
                raise DatasetError('every one-hot target needs exactly one entry equal to 1')

        object.__setattr__(self, 'points', points)
        object.__setattr__(self, 'weights', weights)
        object.__setattr__(self, 'targets', targets)
        object.__setattr__(self, 'mode', mode)

    @classmethod
    def from_labels(cls, points, labels, weights=None, mode: typing.Optional[Mode] = None, classes: typing.Optional[int] = None, normalize: bool = True) -> 'LabeledDataset':
        """
        Build a dataset from plain labels.

        Arguments:
        * `points` - `(N, d)` inputs
        * `labels` - binary labels in {-1, +1} or integer classes 1..R
        * `weights` - positive weights, uniform `1/N` when omitted
        * `mode` - forced mode; inferred when omitted (binary iff the labels
          are a subset of {-1, +1} containing -1)
        * `classes` - number of classes R in multiclass mode, defaults to the
          largest label
        * `normalize` - rescale weights to sum to one
        """

        labels = np.asarray(labels).reshape(-1)
        N = labels.shape[0]

        if weights is None:
            weights = np.full(N, 1.0 / max(N, 1))
        weights = np.array(weights, dtype=np.float64).reshape(-1)
        if normalize and weights.size and weights.sum() > 0:
            weights = weights / weights.sum()

        if mode is None:
            values = set(np.unique(labels).tolist())
            mode = Mode.BINARY if (values <= {-1, 1} and -1 in values) else Mode.MULTICLASS
        mode = Mode(mode)

        if mode is Mode.BINARY:
            return cls(points, labels.astype(np.float64), weights, mode)

        if not np.all(labels == np.round(labels)) or np.any(labels < 1):
            raise DatasetError('multiclass labels must be integers 1..R')
        classes = int(classes if classes is not None else labels.max())
        if labels.max() > classes:
            raise DatasetError(f'label { int(labels.max()) } exceeds class count { classes }')
        targets = np.zeros((N, classes))
        targets[np.arange(N), labels.astype(int) - 1] = 1.0
        return cls(points, targets, weights, mode)

    @property
    def N(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    @property
    def R(self) -> int:
        """Output dimension of a matching network: 1 in binary mode"""
        return 1 if self.mode is Mode.BINARY else self.targets.shape[1]

    @property
    def classes(self) -> np.ndarray:
        """0-based class index per point (multiclass mode)"""
        if self.mode is Mode.BINARY:
            return (self.targets < 0).astype(int)
        return np.argmax(self.targets, axis=1)

    def onehot(self) -> np.ndarray:
        """
        One-hot view of the targets. Binary labels map +1 to class 1 and -1
        to class 2. This is a view for the genericity conditions only; the
        loss of a binary dataset never goes through it.
        """

        if self.mode is Mode.MULTICLASS:
            return self.targets.copy()
        out = np.zeros((self.N, 2))
        out[np.arange(self.N), self.classes] = 1.0
        return out

    def with_weights(self, weights, strict: bool = True) -> 'LabeledDataset':
        return LabeledDataset(self.points, self.targets, weights, self.mode, strict_weights=strict)


@dataclasses.dataclass(frozen=True)
class NetworkShape:
    """
    Layer widths `d_0..d_{L+1}` and leak slope of a dense network.

    Defines:
    * `dims` - `(d_0, d_1, ..., d_L, R)`; `d_0` is the input dimension
    * `alpha` - leak slope in [0, 1]
    * `output_bias` - when false the output bias is pinned to zero and is
      not a free parameter
    """

    dims: typing.Tuple[int, ...]
    alpha: float = 0.0
    output_bias: bool = True

    def __post_init__(self):
        dims = tuple(int(v) for v in self.dims)
        if len(dims) < 2 or any(v < 1 for v in dims):
            raise ShapeError(f'dims need at least input and output widths, all >= 1, got { dims }')
        alpha = float(self.alpha)
        if not 0.0 <= alpha <= 1.0:
            raise ShapeError(f'alpha must lie in [0, 1], got { alpha!r}')
        object.__setattr__(self, 'dims', dims)
        object.__setattr__(self, 'alpha', alpha)
        object.__setattr__(self, 'output_bias', bool(self.output_bias))

    @classmethod
    def build(cls, d: int, hidden: typing.Sequence[int], R: int = 1, alpha: float = 0.0, output_bias: bool = True) -> 'NetworkShape':
        return cls((d, *hidden, R), alpha, output_bias)

    @property
    def L(self) -> int:
        return len(self.dims) - 2

    @property
    def d(self) -> int:
        return self.dims[0]

    @property
    def R(self) -> int:
        return self.dims[-1]

    @property
    def D(self) -> int:
        """Total neuron count d_1 + ... + d_{L+1}"""
        return sum(self.dims[1:])

    def layout(self) -> typing.List[typing.Tuple[str, typing.Tuple[int, ...]]]:
        """Parameter blocks in vector order: W1, b1, ..., WL, bL, V, c"""

        blocks = []
        for l in range(1, self.L + 1):
            blocks.append((f'W{ l }', (self.dims[l], self.dims[l - 1])))
            blocks.append((f'b{ l }', (self.dims[l],)))
        blocks.append(('V', (self.R, self.dims[-2])))
        blocks.append(('c', (self.R,)))
        return blocks

    @property
    def size(self) -> int:
        return int(sum(np.prod(shape) for _, shape in self.layout()))

    def check(self, data: LabeledDataset) -> None:
        if self.d != data.d:
            raise ShapeError(f'network expects inputs of dimension { self.d }, data has { data.d }')
        if self.R != data.R:
            raise ShapeError(f'network has { self.R } outputs, { data.mode.value } data needs { data.R }')


@dataclasses.dataclass(eq=False)
class Params:
    """
    All network parameters `(W^1..W^L, b^1..b^L, V, c)`. The same container
    holds gradients, which share the parameter layout.
    """

    shape: NetworkShape
    W: typing.List[np.ndarray]
    b: typing.List[np.ndarray]
    V: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        shape = self.shape
        if len(self.W) != shape.L or len(self.b) != shape.L:
            raise ShapeError(f'expected { shape.L } hidden layers, got { len(self.W) } weights and { len(self.b) } biases')

        self.W = [ np.array(w, dtype=np.float64) for w in self.W ]
        self.b = [ np.array(v, dtype=np.float64).reshape(-1) for v in self.b ]
        self.V = np.array(self.V, dtype=np.float64)
        self.c = np.array(self.c, dtype=np.float64).reshape(-1)
        if self.V.ndim == 1:
            self.V = self.V[None, :]

        for (name, expected), block in zip(shape.layout(), self.blocks()):
            if block.shape != expected:
                raise ShapeError(f'{ name } has shape { block.shape }, expected { expected }')
            if not np.all(np.isfinite(block)):
                raise ParamsError(f'{ name } has non-finite entries')

    def blocks(self) -> typing.List[np.ndarray]:
        out = []
        for w, b in zip(self.W, self.b):
            out.append(w)
            out.append(b)
        out.append(self.V)
        out.append(self.c)
        return out

    def vector(self) -> np.ndarray:
        return np.concatenate([ block.ravel() for block in self.blocks() ])

    @classmethod
    def from_vector(cls, shape: NetworkShape, vector) -> 'Params':
        vector = np.asarray(vector, dtype=np.float64)
        if vector.shape != (shape.size,):
            raise ShapeError(f'expected a vector of { shape.size } parameters, got { vector.shape }')

        blocks = []
        offset = 0
        for _, block_shape in shape.layout():
            n = int(np.prod(block_shape))
            blocks.append(vector[offset:offset + n].reshape(block_shape).copy())
            offset += n

        return cls(shape, blocks[0:-2:2], blocks[1:-2:2], blocks[-2], blocks[-1])

    @classmethod
    def zeros(cls, shape: NetworkShape) -> 'Params':
        return cls.from_vector(shape, np.zeros(shape.size))

    @classmethod
    def uniform(cls, shape: NetworkShape, rng: np.random.Generator, scale: float = 1.0) -> 'Params':
        """
        Draw every free entry uniformly from `[-scale, scale]`.
        """

        vector = rng.uniform(-scale, scale, size=shape.size)
        vector[~free_mask(shape)] = 0.0
        return cls.from_vector(shape, vector)

    def copy(self) -> 'Params':
        return Params.from_vector(self.shape, self.vector())

    def replace(self, vector) -> 'Params':
        return Params.from_vector(self.shape, vector)

    @property
    def alpha(self) -> float:
        return self.shape.alpha


def free_mask(shape: NetworkShape) -> np.ndarray:
    """
    Boolean mask over the parameter vector marking free coordinates. The
    output bias is fixed when `shape.output_bias` is false.
    """

    mask = np.ones(shape.size, dtype=bool)
    if not shape.output_bias:
        mask[-shape.R:] = False
    return mask


def leaky_relu(x, alpha: float):
    """
    Leaky rectifier `alpha * min(x, 0) + max(x, 0)`, elementwise on arrays.
    """

    return alpha * np.minimum(x, 0.0) + np.maximum(x, 0.0)


def forward(params: Params, x) -> typing.Tuple[typing.List[np.ndarray], np.ndarray]:
    """
    Evaluate the network at a single input.

    Returns the per-layer features `[x^0, ..., x^L]` and the output vector.
    """

    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.shape[0] != params.shape.d:
        raise ShapeError(f'input has dimension { x.shape[0] }, network expects { params.shape.d }')

    features = [x]
    for w, b in zip(params.W, params.b):
        features.append(leaky_relu(w @ features[-1] + b, params.alpha))

    return features, params.V @ features[-1] + params.c


def forward_batch(params: Params, points: np.ndarray) -> typing.Tuple[typing.List[np.ndarray], np.ndarray]:
    """
    Batched forward pass. Features are `(N, d_l)` arrays, outputs `(N, R)`.
    """

    X = np.asarray(points, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != params.shape.d:
        raise ShapeError(f'points of shape { X.shape } do not match input dimension { params.shape.d }')

    features = [X]
    for w, b in zip(params.W, params.b):
        features.append(leaky_relu(features[-1] @ w.T + b, params.alpha))

    return features, features[-1] @ params.V.T + params.c


def hinge_binary(y_hat: float, y: float) -> float:
    return max(0.0, 1.0 - y * y_hat)


def hinge_multi(y_hat, r0: int) -> float:
    """
    Multiclass hinge as a sum over wrong classes. `r0` is the true class,
    1-based.
    """

    y_hat = np.asarray(y_hat, dtype=np.float64).reshape(-1)
    R = y_hat.shape[0]
    if not 1 <= r0 <= R:
        raise ShapeError(f'class index { r0 } outside 1..{ R }')

    margins = 1.0 + y_hat - y_hat[r0 - 1]
    margins[r0 - 1] = 0.0
    return float(np.maximum(margins, 0.0).sum())


def hinge_multi_vector(y_hat, y_onehot) -> float:
    """
    Matrix form of the multiclass hinge, `-1 + <1, relu((Id - 1 y^T) y_hat + 1)>`.
    """

    y_hat = np.asarray(y_hat, dtype=np.float64).reshape(-1)
    y_onehot = np.asarray(y_onehot, dtype=np.float64).reshape(-1)
    R = y_hat.shape[0]
    if y_onehot.shape[0] != R:
        raise ShapeError(f'one-hot target of length { y_onehot.shape[0] } for { R } outputs')

    T = np.eye(R) - np.outer(np.ones(R), y_onehot)
    return float(-1.0 + np.maximum(T @ y_hat + 1.0, 0.0).sum())


def loss_arguments(outputs: np.ndarray, data: LabeledDataset) -> np.ndarray:
    """
    Arguments of the outer rectifier per point, `(N, R_out)`: `1 - y y_hat`
    in binary mode and `y_hat_r - y_hat_true + 1` per class otherwise (the
    true-class column is identically 1).
    """

    if data.mode is Mode.BINARY:
        return 1.0 - data.targets[:, None] * outputs[:, :1]

    true = outputs[np.arange(data.N), data.classes]
    return outputs - true[:, None] + 1.0


def per_point_losses(params: Params, data: LabeledDataset) -> np.ndarray:
    """Unweighted hinge loss of every point"""

    params.shape.check(data)
    _, outputs = forward_batch(params, data.points)
    hinge = np.maximum(loss_arguments(outputs, data), 0.0)

    if data.mode is Mode.BINARY:
        return hinge[:, 0]
    return hinge.sum(axis=1) - 1.0


def total_loss(params: Params, data: LabeledDataset) -> float:
    return float(data.weights @ per_point_losses(params, data))


def _class_weights(data: LabeledDataset, class_weights) -> np.ndarray:
    if class_weights is None:
        return np.repeat(data.weights[:, None], data.R, axis=1)

    class_weights = np.asarray(class_weights, dtype=np.float64)
    if class_weights.shape != (data.N, data.R):
        raise ShapeError(f'class weights must have shape { (data.N, data.R) }, got { class_weights.shape }')
    return class_weights


def ova_terms(params: Params, data: LabeledDataset, class_weights=None) -> np.ndarray:
    """
    Weighted one-versus-all terms `mu^(i,r) relu(1 - y^(i,r) y_hat_r)` as an
    `(N, R)` array, with `y^(i,r) = +1` on the true class and `-1` elsewhere.
    """

    if data.mode is not Mode.MULTICLASS:
        raise UnsupportedConfiguration('one-versus-all criterion needs multiclass data')
    params.shape.check(data)

    mu = _class_weights(data, class_weights)
    _, outputs = forward_batch(params, data.points)
    signs = 2.0 * data.targets - 1.0
    return mu * np.maximum(1.0 - signs * outputs, 0.0)


def ova_loss(params: Params, data: LabeledDataset, class_weights=None) -> float:
    return float(ova_terms(params, data, class_weights).sum())


def per_class_loss(params: Params, data: LabeledDataset, r: int, class_weights=None) -> float:
    """
    Binary hinge criterion of class `r` (1-based) against all others, over
    the shared last-layer features.
    """

    if not 1 <= r <= data.R:
        raise ShapeError(f'class index { r } outside 1..{ data.R }')
    return float(ova_terms(params, data, class_weights)[:, r - 1].sum())


@dataclasses.dataclass(frozen=True)
class LipschitzBound:
    """
    Per-unit bounds valid inside a parameter ball of the given radius.

    Defines:
    * `radius` - ball radius in the Euclidean parameter norm
    * `preactivation` - bound on the change of any pre-activation or loss
      argument per unit of parameter displacement
    * `loss` - same bound for the total loss
    """

    radius: float
    preactivation: float
    loss: float


def lipschitz_bound(params: Params, data: LabeledDataset, radius: float = 1.0) -> LipschitzBound:
    """
    A-priori Lipschitz constants from weight spectral norms and data norms.

    Every quantity below is a polynomial in `radius` with non-negative
    coefficients and no constant term, so dividing by `radius` gives a valid
    constant for any displacement of norm at most `radius`.
    """

    params.shape.check(data)
    rho = float(radius)
    if rho <= 0:
        raise ValueError('radius must be positive')

    # bound on perturbed feature norms and on their displacement, per point
    feature = np.linalg.norm(data.points, axis=1)
    moved = np.zeros(data.N)
    worst = 0.0

    for w, b in zip(params.W, params.b):
        w_norm = np.linalg.norm(w, 2)
        change = rho * feature + w_norm * moved + rho
        worst = max(worst, float(change.max()))
        feature = (w_norm + rho) * feature + np.linalg.norm(b) + rho
        moved = change

    out_change = rho * feature + np.linalg.norm(params.V, 2) * moved + rho

    if data.mode is Mode.BINARY:
        arg_change = out_change
        loss_change = float(data.weights @ arg_change)
    else:
        arg_change = 2.0 * out_change
        loss_change = float(data.weights @ arg_change) * (data.R - 1)
    worst = max(worst, float(arg_change.max()))

    return LipschitzBound(rho, worst / rho, loss_change / rho)
