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

import logging
import re
import typing


logger = logging.getLogger('hingecells')

EXIT_OK = 0
EXIT_VERDICT = 1
EXIT_INPUT = 2
EXIT_BUDGET = 3


def configure_logging(verbose: int, log_file: typing.Optional[str] = None):
    import sys

    level = [logging.WARNING, logging.INFO, logging.DEBUG][min(verbose, 2)]
    fmt = logging.Formatter('%(asctime)s %(levelname)s %(name)s: %(message)s')

    handlers = [logging.StreamHandler(sys.stderr)]
    if log_file is not None:
        handlers.append(logging.FileHandler(log_file, encoding='utf-8'))

    root = logging.getLogger('hingecells')
    root.setLevel(level)
    for handler in list(root.handlers):
        root.removeHandler(handler)
        handler.close()
    for handler in handlers:
        handler.setFormatter(fmt)
        root.addHandler(handler)


def verdict_to_dict(verdict) -> dict:
    return {'name': verdict.name, 'passed': verdict.passed, 'details': verdict.details, 'violations': verdict.violations}


def _run_check(verdicts: dict, name: str, check: typing.Callable[[], typing.Any]):
    from .errors import HingeCellsError, PreconditionError

    try:
        verdicts[name] = verdict_to_dict(check())
    except PreconditionError as e:
        verdicts[name] = {'name': name, 'skipped': e.reason}
    except HingeCellsError as e:
        verdicts[name] = {'name': name, 'error': str(e)}


def analyze_point(params, data, tau: float, max_zeros: int, seed, samples: int = 1000) -> dict:
    """
    Loss, signature summary, criticality, classification and every
    applicable theorem verdict at one parameter point.
    """

    import numpy as np

    from . import cells, core, landscape, penalty
    from .core import Mode

    rng = np.random.default_rng(seed)
    results = {}
    verdicts = {}

    if isinstance(params, penalty.ReplicatedParams):
        results['loss'] = penalty.E_gamma(params, data)
        results['class_losses'] = penalty.class_losses(params, data)
        results['penalty'] = penalty.penalty_R(params)
        critical, cert = penalty.is_critical_E(params, data, None, tau, max_zeros, rng)
        results['residual'] = cert.residual_norm
        results['eps_crit'] = cert.eps_crit
        results['critical'] = critical

        _run_check(verdicts, 'thm7', lambda: penalty.thm7_check(params, data, cert, tau=tau, max_zeros=max_zeros, rng=rng))
        if params.alpha == 0:
            _run_check(verdicts, 'multiclass_alpha0', lambda: penalty.multiclass_alpha0_check(params, data, cert))
        elif params.alpha < 1:
            _run_check(verdicts, 'multiclass_leaky', lambda: penalty.multiclass_leaky_check(params, data, cert))
        results['verdicts'] = verdicts
        return results

    results['loss'] = core.total_loss(params, data)
    sig = cells.signature(params, data, tau)
    results['zero_count'] = sig.zero_count
    where = cells.cell_of(params, data, tau)
    if isinstance(where, cells.CellId):
        results['cell_hash'] = where.hex
    else:
        results['cell_hash'] = None
        results['zeros'] = where.zeros
        results['degenerate'] = where.degenerate

    classification = landscape.classify_minimum(params, data, tau, max_zeros, samples, rng=rng)
    cert = classification.certificate
    results['residual'] = cert.residual_norm
    results['eps_crit'] = cert.eps_crit
    results['critical'] = cert.critical
    results['incident_cells'] = [ u.hex for u in cert.cells ]
    results['classification'] = classification.kind.value
    results['flat_cells'] = [ u.hex for u in classification.flat_cells ]
    results['evidence'] = classification.evidence

    _run_check(verdicts, 'zero_loss_type', lambda: landscape.zero_loss_type_check(classification))
    if data.mode is Mode.BINARY:
        alpha = params.alpha
        if params.shape.L == 1 and 0 < alpha:
            _run_check(verdicts, 'thm4', lambda: landscape.thm4_check(params, data, cert))
            _run_check(verdicts, 'thm5', lambda: landscape.thm5_check(params, data, classification))
        if params.shape.L == 1 and alpha == 0:
            _run_check(verdicts, 'thm6', lambda: landscape.thm6_check(params, data, cert, tau))
        if alpha == 1:
            _run_check(verdicts, 'deep_linear', lambda: landscape.deep_linear_check(params, data, cert, samples, rng=rng))

    results['verdicts'] = verdicts
    return results


def failed_verdicts(results: dict) -> typing.List[str]:
    return [ name for name, v in results.get('verdicts', {}).items() if v.get('passed') is False ]


def cmd_analyze(args):
    from . import formats

    data = formats.load_dataset(args.dataset)
    params = formats.load_params(args.params)

    report = formats.Report('analyze', args.seed, {'tau': args.tau, 'max_zeros': args.max_zeros, 'samples': args.samples})
    report.inputs = {'dataset': args.dataset, 'params': args.params}
    report.results = analyze_point(params, data, args.tau, args.max_zeros, args.seed, args.samples)

    failed = failed_verdicts(report.results)
    for name in failed:
        report.warn(f'verdict { name } failed')
    return report, failed


def cmd_train(args):
    import os

    from . import formats, optimize

    data = formats.load_dataset(args.dataset)
    config = formats.load_config(args.config, args.set or ())
    if args.seed is not None and not any(s.startswith('seed=') for s in (args.set or ())):
        config.seed = args.seed

    shape = config.shape(data)
    runs = optimize.multi_start(
        config.objective,
        data,
        shape,
        config.starts,
        init_scale=config.init_scale,
        seed=config.seed,
        gamma=config.gamma,
        workers=config.workers,
        schedule=config.schedule_kind,
        eta=config.eta,
        max_iters=config.max_iters,
        eps_crit=config.eps_crit,
        check_every=config.check_every,
        thin=config.thin,
    )

    out = args.out or '.'
    report = formats.Report('train', config.seed, config.to_dict())
    report.inputs = {'dataset': args.dataset}

    failed = []
    entries = []
    for k, traj in enumerate(runs):
        path = os.path.join(out, f'run_{ k }.json')
        formats.save_params(traj.final, path)
        results = analyze_point(traj.final, data, args.tau, args.max_zeros, traj.seed, args.samples)
        entries.append({
            'params_file': path,
            'seed': list(traj.seed),
            'steps': len(traj.steps),
            'final_loss': traj.final_loss,
            'stopped_early': traj.stopped_early,
            'trajectory_digest': traj.digest(),
            'occupancy': traj.occupancy_fractions(),
            'analysis': results,
        })
        failed.extend(f'run_{ k }.{ name }' for name in failed_verdicts(results))

    formats.save_params(runs[0].final, os.path.join(out, 'best.json'))
    report.results = {'runs': entries, 'best_loss': runs[0].final_loss, 'settings': {'tau': args.tau, 'max_zeros': args.max_zeros, 'samples': args.samples}}
    for name in failed:
        report.warn(f'verdict { name } failed')
    return report, failed


def parse_axis(shape, text: str) -> int:
    """
    Parameter coordinate from a vector index (`7`) or a block entry
    (`W1[0,1]`, `b1[0]`, `V[0,1]`, `c[0]`).
    """

    import numpy as np

    from .errors import FormatError

    text = text.strip()
    if text.isdigit():
        index = int(text)
        if index >= shape.size:
            raise FormatError('--axes', f'index { index } outside 0..{ shape.size - 1 }')
        return index

    match = re.fullmatch(r'(\w+)\[(\d+)(?:,\s*(\d+))?\]', text)
    if match is None:
        raise FormatError('--axes', f'cannot parse coordinate { text!r}')

    offset = 0
    for name, block in shape.layout():
        if name == match.group(1):
            position = tuple(int(g) for g in match.groups()[1:] if g is not None)
            if len(position) != len(block) or any(p >= n for p, n in zip(position, block)):
                raise FormatError('--axes', f'{ text } does not address an entry of { name } with shape { block }')
            return offset + int(np.ravel_multi_index(position, block))
        offset += int(np.prod(block))

    raise FormatError('--axes', f'unknown parameter block { match.group(1)!r}')


def scan_rows(params, data, axes: typing.Tuple[int, int], lo: float, hi: float, n: int, tau: float, workers: int = 1):
    """
    Loss, cell hash and zero count over the affine slice
    `params + t1 e_a + t2 e_b`, `t1, t2` on an `n x n` grid over `[lo, hi]`.
    Boundary points get the cell hash `-`.
    """

    import numpy as np

    from . import cells, core
    from .service import TaskService

    base = params.vector()
    grid = np.linspace(lo, hi, n)

    def row(t1):
        out = []
        for t2 in grid:
            vector = base.copy()
            vector[axes[0]] += t1
            vector[axes[1]] += t2
            point = params.replace(vector)
            where = cells.cell_of(point, data, tau)
            sig_zeros = 0 if isinstance(where, cells.CellId) else len(where.zeros)
            out.append((t1, t2, core.total_loss(point, data), where.hex if isinstance(where, cells.CellId) else '-', sig_zeros))
        return out

    service = TaskService(workers)
    for t1 in grid:
        service.add_task_handler(lambda t1=t1: row(t1))
    return [ r for rows in service.run() for r in rows ]


def cmd_scan(args):
    import os

    from . import formats
    from .errors import FormatError
    from .penalty import ReplicatedParams

    data = formats.load_dataset(args.dataset)
    params = formats.load_params(args.params)
    if isinstance(params, ReplicatedParams):
        raise FormatError(args.params, 'scans take shared network parameters')

    axes = (parse_axis(params.shape, args.axes[0]), parse_axis(params.shape, args.axes[1]))
    if axes[0] == axes[1]:
        raise FormatError('--axes', 'the two axes must differ')
    if args.grid < 2:
        raise FormatError('--grid', 'grid needs at least 2 points per axis')

    rows = scan_rows(params, data, axes, args.range[0], args.range[1], args.grid, args.tau, args.workers)
    path = os.path.join(args.out or '.', 'scan.csv')
    formats.write_scan(path, rows)

    report = formats.Report('scan', args.seed, {'axes': list(args.axes), 'range': list(args.range), 'grid': args.grid, 'tau': args.tau})
    report.inputs = {'dataset': args.dataset, 'params': args.params}
    report.results = {
        'grid_file': path,
        'cells': sorted({ r[3] for r in rows if r[3] != '-' }),
        'boundary_points': sum(1 for r in rows if r[3] == '-'),
    }
    return report, []


def cmd_gencheck(args):
    from . import formats, landscape

    data = formats.load_dataset(args.dataset)
    verdict = landscape.genericity(data, args.alpha, args.depth)

    report = formats.Report('gencheck', args.seed, {'alpha': args.alpha, 'depth': args.depth})
    report.inputs = {'dataset': args.dataset}
    report.results = {'kind': verdict.kind.value}
    if verdict.kind is landscape.GenericityKind.RARE:
        report.results['witness'] = {'lambdas': verdict.lambdas, 'eps': verdict.eps, 'eps_point': verdict.eps_point}
    return report, []


def _compare(stored, fresh, tol: float, path: str, out: typing.List[str]):
    import math

    if isinstance(stored, dict) and isinstance(fresh, dict):
        for key in sorted(set(stored) | set(fresh)):
            if key not in stored or key not in fresh:
                out.append(f'{ path }.{ key }: missing')
            else:
                _compare(stored[key], fresh[key], tol, f'{ path }.{ key }', out)
    elif isinstance(stored, list) and isinstance(fresh, list):
        if len(stored) != len(fresh):
            out.append(f'{ path }: length { len(stored) } != { len(fresh) }')
        for k, (a, b) in enumerate(zip(stored, fresh)):
            _compare(a, b, tol, f'{ path }[{ k }]', out)
    elif isinstance(stored, float) or isinstance(fresh, float):
        if not isinstance(stored, (int, float)) or not isinstance(fresh, (int, float)) or not math.isclose(stored, fresh, rel_tol=tol, abs_tol=tol):
            out.append(f'{ path }: { stored!r} != { fresh!r}')
    elif stored != fresh:
        out.append(f'{ path }: { stored!r} != { fresh!r}')


def cmd_verify(args):
    """
    Reload the inputs of a stored report, recompute its results and its
    digest, and list every mismatch.
    """

    import types

    from . import formats

    stored = formats.load_report(args.report)
    mismatches = []
    if formats.report_digest(stored) != stored.get('digest'):
        mismatches.append('digest')

    command = stored['command']
    config = stored.get('config', {})
    inputs = stored.get('inputs', {})
    seed = stored.get('seed')
    data = formats.load_dataset(inputs['dataset'])

    if command == 'analyze':
        params = formats.load_params(inputs['params'])
        fresh = formats.to_jsonable(analyze_point(params, data, config['tau'], config['max_zeros'], seed, config['samples']))
        _compare(stored['results'], fresh, args.tol, 'results', mismatches)
    elif command == 'train':
        settings = stored['results']['settings']
        for k, run in enumerate(stored['results']['runs']):
            params = formats.load_params(run['params_file'])
            fresh = formats.to_jsonable(analyze_point(params, data, settings['tau'], settings['max_zeros'], tuple(run['seed']), settings['samples']))
            _compare(run['analysis'], fresh, args.tol, f'runs[{ k }].analysis', mismatches)
    elif command == 'gencheck':
        fresh, _ = cmd_gencheck(types.SimpleNamespace(dataset=inputs['dataset'], alpha=config['alpha'], depth=config['depth'], seed=seed))
        _compare(stored['results'], formats.to_jsonable(fresh.results), args.tol, 'results', mismatches)
    elif command == 'scan':
        params = formats.load_params(inputs['params'])
        axes = (parse_axis(params.shape, config['axes'][0]), parse_axis(params.shape, config['axes'][1]))
        rows = scan_rows(params, data, axes, config['range'][0], config['range'][1], config['grid'], config['tau'])
        grid = formats.read_scan(stored['results']['grid_file'])
        fresh = [ {'t1': float(a), 't2': float(b), 'loss': float(l), 'cell_hash': h, 'zero_count': int(z)} for a, b, l, h, z in rows ]
        _compare(grid, fresh, args.tol, 'grid', mismatches)

    report = formats.Report('verify', seed, {'tol': args.tol})
    report.inputs = {'report': args.report}
    report.results = {'verified_command': command, 'mismatches': mismatches}
    for m in mismatches:
        report.warn(f'mismatch: { m }')
    return report, mismatches


def main():
    import argparse
    import json
    import os
    import sys

    from . import errors, formats

    parser = argparse.ArgumentParser(description='Cell structure, criticality and minimum analysis of hinge-loss ReLU networks')
    parser.add_argument(
        '--seed',
        help='Seed of every random draw (default 0; train uses the config seed unless given)',
        type=int,
        default=None
    )
    parser.add_argument(
        '--tol',
        help='Relative tolerance used when comparing recomputed values',
        type=float,
        default=1e-9
    )
    parser.add_argument(
        '--strict',
        help='Exit with status 1 when a theorem verdict fails',
        action='store_true'
    )
    parser.add_argument(
        '--out',
        help='Output directory for reports, archived params and grids',
        type=str
    )
    parser.add_argument(
        '-v', '--verbose',
        help='Increase log verbosity (repeatable)',
        action='count',
        default=0
    )
    parser.add_argument(
        '--log',
        help='Also append log records to this file',
        type=str
    )
    parser.add_argument(
        '--tau',
        help='Dead band of signature entries',
        type=float,
        default=1e-9
    )
    parser.add_argument(
        '--max-zeros',
        help='Largest number of zero signature entries enumerated exactly',
        type=int,
        default=20
    )
    parser.add_argument(
        '--samples',
        help='Random perturbations tried when searching for descent',
        type=int,
        default=1000
    )

    commands = parser.add_subparsers(dest='command', required=True)

    analyze = commands.add_parser('analyze', help='Analyze one parameter point')
    analyze.add_argument('dataset', help='Dataset file (CSV or JSON)', type=str)
    analyze.add_argument('params', help='Params JSON file', type=str)

    train = commands.add_parser('train', help='Multi-start subgradient training')
    train.add_argument('dataset', help='Dataset file (CSV or JSON)', type=str)
    train.add_argument('config', help='Training config JSON file', type=str, nargs='?')
    train.add_argument(
        '--set',
        help='Override a config key, e.g. schedule.eta=0.1 (repeatable)',
        action='append',
        metavar='KEY=VALUE'
    )

    scan = commands.add_parser('scan', help='Loss and cell map over a 2D parameter slice')
    scan.add_argument('dataset', help='Dataset file (CSV or JSON)', type=str)
    scan.add_argument('params', help='Params JSON file', type=str)
    scan.add_argument(
        '--axes',
        help='Two parameter coordinates, e.g. W1[0,0] V[0,1] or vector indices',
        nargs=2,
        required=True
    )
    scan.add_argument(
        '--range',
        help='Offset range applied along both axes',
        nargs=2,
        type=float,
        default=[-1.0, 1.0],
        metavar=('LO', 'HI')
    )
    scan.add_argument('--grid', help='Grid points per axis', type=int, default=41)
    scan.add_argument('--workers', help='Worker threads', type=int, default=1)

    gencheck = commands.add_parser('gencheck', help='Decide whether a dataset is generic or rare')
    gencheck.add_argument('dataset', help='Dataset file (CSV or JSON)', type=str)
    gencheck.add_argument('--alpha', help='Leak slope', type=float, required=True)
    gencheck.add_argument('--depth', help='Number of hidden layers', type=int, required=True)

    verify = commands.add_parser('verify', help='Recompute the results of a stored report')
    verify.add_argument('report', help='Report JSON file', type=str)

    args = parser.parse_args()
    configure_logging(args.verbose, args.log)

    handlers = {
        'analyze': cmd_analyze,
        'train': cmd_train,
        'scan': cmd_scan,
        'gencheck': cmd_gencheck,
        'verify': cmd_verify,
    }

    if args.command != 'train' and args.seed is None:
        args.seed = 0

    try:
        report, failed = handlers[args.command](args)
    except errors.BudgetExceeded as e:
        print(f'hingecells: { e }', file=sys.stderr)
        sys.exit(EXIT_BUDGET)
    except (errors.FormatError, errors.ShapeError, errors.DatasetError, errors.ParamsError, OSError) as e:
        print(f'hingecells: { e }', file=sys.stderr)
        sys.exit(EXIT_INPUT)
    except errors.HingeCellsError as e:
        print(f'hingecells: { type(e).__name__ }: { e }', file=sys.stderr)
        sys.exit(EXIT_INPUT)

    if args.out:
        report.save(os.path.join(args.out, f'{ args.command }.json'))
    else:
        print(json.dumps(report.to_dict(), indent=2, sort_keys=True))

    if failed and (args.strict or args.command == 'verify'):
        sys.exit(EXIT_VERDICT)
    sys.exit(EXIT_OK)


if __name__ == '__main__':
    main()
