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
Files: datasets (CSV or JSON), parameter archives (JSON), training
configuration (JSON with dotted overrides), reports and scan grids.

Floats are written with Python's shortest round-trip representation, so
archives reload to bitwise-equal values.
"""

import copy
import csv
import dataclasses
import enum
import hashlib
import json
import logging
import pathlib
import typing

from datetime import datetime

import numpy as np

from dateutil import tz

from .core import LabeledDataset, Mode, NetworkShape, Params
from .errors import DatasetError, FormatError, HingeCellsError
from .optimize import Objective, Schedule
from .penalty import ReplicatedParams


logger = logging.getLogger(__name__)

PARAMS_FORMAT = 'hingecells.params'
REPLICATED_FORMAT = 'hingecells.replicated'
REPORT_FORMAT = 'hingecells.report'

SCAN_COLUMNS = ('t1', 't2', 'loss', 'cell_hash', 'zero_count')


def to_jsonable(value):
    """Convert numpy values, enums and dataclasses into plain JSON values"""

    if isinstance(value, dict):
        return { str(k): to_jsonable(v) for k, v in value.items() }
    if isinstance(value, (list, tuple)):
        return [ to_jsonable(v) for v in value ]
    if isinstance(value, np.ndarray):
        return to_jsonable(value.tolist())
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, enum.Enum):
        return value.value if isinstance(value.value, str) else value.name
    if dataclasses.is_dataclass(value) and not isinstance(value, type):
        return to_jsonable(dataclasses.asdict(value))
    return value


def canonical_json(value) -> str:
    return json.dumps(to_jsonable(value), sort_keys=True, separators=(',', ':'))


def _read_json(path) -> typing.Any:
    try:
        with open(path, 'r', encoding='utf-8') as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise FormatError(path, e.msg, line=e.lineno) from e


def _write_json(path, payload) -> None:
    pathlib.Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(to_jsonable(payload), f, indent=2, sort_keys=True)
        f.write('\n')


# Datasets

def _parse_float(path, text: str, line: int, field: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise FormatError(path, f'not a number: { text!r}', line, field) from None
    if not np.isfinite(value):
        raise FormatError(path, f'non-finite value { text!r}', line, field)
    return value


def load_dataset_csv(path) -> LabeledDataset:
    """
    CSV with header `x1,...,xd,label[,weight]`. Labels are -1/+1 (binary)
    or classes 1..R (multiclass); the mode is binary iff the labels form a
    subset of {-1, +1} containing -1. Weights default to uniform and are
    rescaled to sum to one.
    """

    with open(path, 'r', encoding='utf-8', newline='') as f:
        rows = list(csv.reader(f))

    rows = [ (n, row) for n, row in enumerate(rows, start=1) if row and any(cell.strip() for cell in row) ]
    if not rows:
        raise FormatError(path, 'empty dataset file')

    header_line, header = rows[0]
    header = [ name.strip() for name in header ]
    features = [ name for name in header if name.startswith('x') ]
    if features != [ f'x{ j }' for j in range(1, len(features) + 1) ] or not features:
        raise FormatError(path, 'header needs feature columns x1..xd', header_line)
    if 'label' not in header:
        raise FormatError(path, 'header has no label column', header_line, 'label')
    unknown = set(header) - set(features) - {'label', 'weight'}
    if unknown:
        raise FormatError(path, f'unknown columns { sorted(unknown) }', header_line)

    points, labels, weights = [], [], []
    has_weight = 'weight' in header
    for n, row in rows[1:]:
        if len(row) != len(header):
            raise FormatError(path, f'expected { len(header) } fields, got { len(row) }', n)
        record = dict(zip(header, (cell.strip() for cell in row)))
        points.append([ _parse_float(path, record[name], n, name) for name in features ])

        label = _parse_float(path, record['label'], n, 'label')
        if label != round(label):
            raise FormatError(path, f'label { record["label"]!r} is not an integer', n, 'label')
        labels.append(int(label))

        if has_weight:
            weight = _parse_float(path, record['weight'], n, 'weight')
            if weight <= 0:
                raise FormatError(path, 'weights must be positive', n, 'weight')
            weights.append(weight)

    if not points:
        raise FormatError(path, 'dataset has no rows')

    try:
        return LabeledDataset.from_labels(np.array(points), np.array(labels), np.array(weights) if has_weight else None)
    except (DatasetError, ValueError) as e:
        raise FormatError(path, str(e)) from e


def load_dataset_json(path) -> LabeledDataset:
    """
    JSON object with `mode`, `points`, `labels`, optional `weights` (taken
    as given, no rescaling) and optional `classes`.
    """

    payload = _read_json(path)
    if not isinstance(payload, dict):
        raise FormatError(path, 'dataset must be a JSON object')
    for key in ('mode', 'points', 'labels'):
        if key not in payload:
            raise FormatError(path, 'missing key', field=key)
    if payload['mode'] not in Mode.names():
        raise FormatError(path, f'mode must be one of { Mode.names() }', field='mode')

    try:
        return LabeledDataset.from_labels(np.array(payload['points'], dtype=np.float64), np.array(payload['labels']), payload.get('weights'), Mode(payload['mode']), payload.get('classes'), normalize='weights' not in payload)
    except (HingeCellsError, ValueError, TypeError) as e:
        raise FormatError(path, str(e)) from e


def load_dataset(path) -> LabeledDataset:
    if str(path).endswith('.json'):
        return load_dataset_json(path)
    return load_dataset_csv(path)


def dataset_labels(data: LabeledDataset) -> np.ndarray:
    if data.mode is Mode.BINARY:
        return data.targets.astype(int)
    return data.classes + 1


def save_dataset(data: LabeledDataset, path) -> None:
    if str(path).endswith('.json'):
        payload = {'mode': data.mode.value, 'points': data.points, 'labels': dataset_labels(data), 'weights': data.weights}
        if data.mode is Mode.MULTICLASS:
            payload['classes'] = data.R
        _write_json(path, payload)
        return

    pathlib.Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f)
        writer.writerow([ f'x{ j }' for j in range(1, data.d + 1) ] + ['label', 'weight'])
        for x, label, weight in zip(data.points, dataset_labels(data), data.weights):
            writer.writerow([ repr(float(v)) for v in x ] + [int(label), repr(float(weight))])


# Parameters

def shape_to_dict(shape: NetworkShape) -> dict:
    return {'dims': list(shape.dims), 'alpha': shape.alpha, 'output_bias': shape.output_bias}


def params_to_dict(params: typing.Union[Params, ReplicatedParams]) -> dict:
    if isinstance(params, ReplicatedParams):
        return {
            'format': REPLICATED_FORMAT,
            'shape': shape_to_dict(params.shape),
            'gamma': params.gamma,
            'replicas': [ {'W': W, 'b': b} for W, b in zip(params.W, params.b) ],
            'V': params.V,
            'c': params.c,
        }

    return {
        'format': PARAMS_FORMAT,
        'shape': shape_to_dict(params.shape),
        'W': params.W,
        'b': params.b,
        'V': params.V,
        'c': params.c,
    }


def params_from_dict(payload: dict, path='<params>') -> typing.Union[Params, ReplicatedParams]:
    if not isinstance(payload, dict):
        raise FormatError(path, 'params must be a JSON object')

    kind = payload.get('format', PARAMS_FORMAT)
    try:
        spec = payload['shape']
        shape = NetworkShape(tuple(spec['dims']), spec.get('alpha', 0.0), spec.get('output_bias', True))
        if kind == REPLICATED_FORMAT:
            replicas = payload['replicas']
            return ReplicatedParams(shape, [ rep['W'] for rep in replicas ], [ rep['b'] for rep in replicas ], payload['V'], payload['c'], payload.get('gamma', 1.0))
        if kind != PARAMS_FORMAT:
            raise FormatError(path, f'unknown params format { kind!r}', field='format')
        return Params(shape, payload['W'], payload['b'], payload['V'], payload['c'])
    except KeyError as e:
        raise FormatError(path, 'missing key', field=str(e.args[0])) from e
    except (HingeCellsError, ValueError, TypeError) as e:
        if isinstance(e, FormatError):
            raise
        raise FormatError(path, str(e)) from e


def load_params(path) -> typing.Union[Params, ReplicatedParams]:
    return params_from_dict(_read_json(path), path)


def save_params(params: typing.Union[Params, ReplicatedParams], path) -> None:
    _write_json(path, params_to_dict(params))


# Training configuration

@dataclasses.dataclass
class TrainConfig:
    """
    Training run configuration.

    Defines:
    * `mode` - objective name, one of `Objective.names()`
    * `alpha` - leak slope
    * `hidden` - hidden layer widths
    * `output_bias` - whether the output bias is trained
    * `schedule` - `{"kind": "constant" | "inv_sqrt", "eta": float}`
    * `max_iters` - step budget per run
    * `seed` - base seed, start k uses `(seed, k)`
    * `starts` - number of independent runs
    * `init_scale` - half-width of the uniform initialization box
    * `gamma` - penalty strength (penalty mode)
    * `eps_crit` - early-stop criticality threshold
    * `check_every` - steps between criticality checks
    * `thin` - keep every `thin`-th iterate, none when 0
    * `workers` - worker threads for independent runs
    """

    mode: str = 'binary'
    alpha: float = 0.0
    hidden: typing.List[int] = dataclasses.field(default_factory=lambda: [2])
    output_bias: bool = True
    schedule: typing.Dict[str, typing.Any] = dataclasses.field(default_factory=lambda: {'kind': 'inv_sqrt', 'eta': 0.5})
    max_iters: int = 10_000
    seed: int = 0
    starts: int = 1
    init_scale: float = 1.0
    gamma: float = 1.0
    eps_crit: float = 1e-6
    check_every: int = 100
    thin: int = 0
    workers: int = 1

    @classmethod
    def from_dict(cls, payload: dict, path='<config>') -> 'TrainConfig':
        if not isinstance(payload, dict):
            raise FormatError(path, 'config must be a JSON object')

        known = { field.name for field in dataclasses.fields(cls) }
        for key in payload:
            if key not in known:
                raise FormatError(path, 'unknown config key', field=key)

        config = cls(**copy.deepcopy(payload))
        config.validate(path)
        return config

    def validate(self, path='<config>') -> None:
        if self.mode not in Objective.names():
            raise FormatError(path, f'mode must be one of { Objective.names() }', field='mode')
        if not isinstance(self.schedule, dict) or set(self.schedule) - {'kind', 'eta'}:
            raise FormatError(path, 'schedule takes the keys kind and eta', field='schedule')
        if self.schedule.get('kind', 'inv_sqrt') not in Schedule.names():
            raise FormatError(path, f'schedule kind must be one of { Schedule.names() }', field='schedule.kind')
        if not isinstance(self.hidden, list) or not all(isinstance(k, int) and k >= 1 for k in self.hidden):
            raise FormatError(path, 'hidden must be a list of positive widths', field='hidden')
        if not 0.0 <= float(self.alpha) <= 1.0:
            raise FormatError(path, 'alpha must lie in [0, 1]', field='alpha')
        for key in ('max_iters', 'starts', 'check_every', 'workers'):
            if not isinstance(getattr(self, key), int) or getattr(self, key) < 1:
                raise FormatError(path, 'must be a positive integer', field=key)
        for key in ('init_scale', 'gamma', 'eps_crit'):
            if not float(getattr(self, key)) > 0:
                raise FormatError(path, 'must be positive', field=key)

    @property
    def objective(self) -> Objective:
        return Objective[self.mode]

    @property
    def schedule_kind(self) -> Schedule:
        return Schedule[self.schedule.get('kind', 'inv_sqrt')]

    @property
    def eta(self) -> float:
        return float(self.schedule.get('eta', 0.5))

    def shape(self, data: LabeledDataset) -> NetworkShape:
        return NetworkShape.build(data.d, self.hidden, data.R, self.alpha, self.output_bias)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def parse_override(text: str) -> typing.Tuple[str, typing.Any]:
    """`key.sub=value`; the value is parsed as JSON, falling back to a string"""

    if '=' not in text:
        raise FormatError('--set', f'expected key=value, got { text!r}')
    key, raw = text.split('=', 1)
    key = key.strip()
    if not key:
        raise FormatError('--set', f'empty key in { text!r}')
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key, value


def apply_overrides(payload: dict, overrides: typing.Sequence[str]) -> dict:
    payload = copy.deepcopy(payload)
    for text in overrides:
        key, value = parse_override(text)
        target = payload
        parts = key.split('.')
        for part in parts[:-1]:
            if part not in target:
                target[part] = dict(TrainConfig().to_dict().get(part, {})) if target is payload else {}
            target = target[part]
            if not isinstance(target, dict):
                raise FormatError('--set', f'{ part } is not a section', field=key)
        target[parts[-1]] = value
    return payload


def load_config(path=None, overrides: typing.Sequence[str] = ()) -> TrainConfig:
    """
    Read a JSON training configuration. Missing keys keep their defaults;
    `overrides` are `key=value` strings applied on top.
    """

    payload = _read_json(path) if path is not None else {}
    if not isinstance(payload, dict):
        raise FormatError(path, 'config must be a JSON object')
    return TrainConfig.from_dict(apply_overrides(payload, overrides), path or '<config>')


# Reports

class Report:
    """
    Result of one command: metadata, results, warnings and a digest over
    everything except the creation timestamp.
    """

    def __init__(self, command: str, seed: typing.Any = None, config: typing.Optional[dict] = None):
        from . import __version__

        self.command = command
        self.seed = seed
        self.config = config or {}
        self.results: typing.Dict[str, typing.Any] = {}
        self.warnings: typing.List[str] = []
        self.inputs: typing.Dict[str, str] = {}
        self.versions = {'hingecells': __version__, 'numpy': np.__version__}
        self.created = datetime.now(tz.tzlocal()).isoformat()

    def warn(self, message: str) -> None:
        logger.warning(message)
        self.warnings.append(message)

    def body(self) -> dict:
        return to_jsonable({
            'format': REPORT_FORMAT,
            'command': self.command,
            'seed': self.seed,
            'config': self.config,
            'config_digest': hashlib.blake2b(canonical_json(self.config).encode(), digest_size=16).hexdigest(),
            'inputs': self.inputs,
            'results': self.results,
            'warnings': self.warnings,
            'versions': self.versions,
        })

    def digest(self) -> str:
        return report_digest(self.body())

    def to_dict(self) -> dict:
        payload = self.body()
        payload['created'] = self.created
        payload['digest'] = report_digest(payload)
        return payload

    def save(self, path) -> None:
        _write_json(path, self.to_dict())


def report_digest(payload: dict) -> str:
    """blake2b-128 of the canonical JSON of a report without `created` and `digest`"""

    body = { k: v for k, v in payload.items() if k not in ('created', 'digest') }
    return hashlib.blake2b(canonical_json(body).encode(), digest_size=16).hexdigest()


def load_report(path) -> dict:
    payload = _read_json(path)
    if not isinstance(payload, dict) or payload.get('format') != REPORT_FORMAT:
        raise FormatError(path, 'not a report file', field='format')
    return payload


# Scan grids

def write_scan(path, rows: typing.Iterable[typing.Sequence[typing.Any]]) -> None:
    """Grid CSV with columns t1, t2, loss, cell_hash, zero_count"""

    pathlib.Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(SCAN_COLUMNS)
        for t1, t2, loss, cell, zeros in rows:
            writer.writerow([repr(float(t1)), repr(float(t2)), repr(float(loss)), cell, int(zeros)])


def read_scan(path) -> typing.List[dict]:
    with open(path, 'r', encoding='utf-8', newline='') as f:
        reader = csv.DictReader(f)
        if tuple(reader.fieldnames or ()) != SCAN_COLUMNS:
            raise FormatError(path, f'expected columns { SCAN_COLUMNS }', 1)
        return [ {'t1': float(r['t1']), 't2': float(r['t2']), 'loss': float(r['loss']), 'cell_hash': r['cell_hash'], 'zero_count': int(r['zero_count'])} for r in reader ]
