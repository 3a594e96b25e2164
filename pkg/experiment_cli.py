"""
Scenario runner: `run <config>...`, `compare <a> <b>` and `list-scenarios`.

Scenario files are KEY=value text (dotenv syntax). See FORMATS.md for the keys.
"""

import argparse
import glob
import logging
import os
import sys
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from dotenv import dotenv_values
from joblib import Parallel, delayed

from capacity import CapacityQuery, certificate_min_length
from config import Config
from errors import ConfigError, HyperfillError
from metric_core import MetricSpace, Region, build_space
from path_solver import SolverSettings
from pipelines import PIPELINES, FillingCache, PipelineResult, run_pipeline
from reports import compare_reports, detail_document, read_json, write_csv, write_json

logger = logging.getLogger(__name__)

SPACE_KEYS = ('SPACE', 'GRID_N', 'CARPET_DEPTH', 'WIDTH', 'HEIGHT', 'SNOWFLAKE')
SOLVER_KEYS = {'INNER_TOL': float, 'OUTER_TOL': float, 'GAP_TOL': float, 'MAX_CONSTRAINTS': int,
               'MAX_ROUNDS': int, 'INNER_MAX_ITER': int,
               'PATHS_PER_ROUND': int, 'POLISH_PASSES': int, 'TRACE': str}
PARAM_KEYS = {'ALPHA': float, 'EPSILON': float, 'LIFT_K': float, 'LIFT_P': float, 'GRIDS': str,
              'REFERENCE': float, 'RELATIVE_TOL': float, 'RATIO_SPREAD': float,
              'SCALE_SPREAD': float, 'FAMILY': str, 'CURVES': int, 'CURVE_FILE': str,
              'SAMPLE_MESH': float, 'GENS': int, 'STABLE_TOL': float, 'GROWTH': float}
SCENARIO_KEYS = {'NAME', 'PIPELINE', 'S', 'DEPTHS', 'P', 'A', 'B', 'QUERIES', 'MODE', 'SEED', 'OUT',
                 *SPACE_KEYS, *SOLVER_KEYS, *PARAM_KEYS}
REQUIRED_KEYS = ('PIPELINE',)

QueryList = List[Tuple[Region, Region, str]]


@dataclass
class Scenario:
    name: str
    pipeline: str
    space_spec: Dict[str, str]
    s: float = 2.0
    depths: List[int] = field(default_factory=lambda: [4, 5])
    p_grid: List[float] = field(default_factory=lambda: [2.0])
    queries: QueryList = field(default_factory=list)
    mode: str = 'continuum'
    seed: int = 0
    out: str = ''
    settings: SolverSettings = field(default_factory=SolverSettings)
    params: Dict[str, str] = field(default_factory=dict)

    def space(self) -> MetricSpace:
        return build_space(self.space_spec)

    def param(self, key: str, cast=str, default=None):
        raw = self.params.get(key)
        if raw is None or raw == '':
            return default
        try:
            return cast(raw)
        except ValueError:
            raise ConfigError(f"Scenario {self.name}: {key}={raw!r} is not a valid {cast.__name__}")

    def output_paths(self) -> Tuple[str, str]:
        folder = self.out or os.path.join(Config.REPORT_FOLDER, self.name)
        return os.path.join(folder, f"{self.name}.csv"), os.path.join(folder, f"{self.name}.json")


def _parse_list(text: str, cast, key: str) -> list:
    try:
        values = [cast(v) for v in text.split(',') if v.strip()]
    except ValueError:
        raise ConfigError(f"{key}={text!r} is not a comma-separated list of {cast.__name__}")
    if not values:
        raise ConfigError(f"{key} is empty")
    return values


def _parse_queries(values: Dict[str, str]) -> QueryList:
    try:
        if values.get('QUERIES'):
            queries = []
            for k, item in enumerate(values['QUERIES'].split(';')):
                a, _, b = item.partition('|')
                if not b:
                    raise ConfigError(f"QUERIES entry {item!r} needs the form A|B")
                queries.append((Region.parse(a), Region.parse(b), f"q{k}"))
            return queries
        A = Region.parse(values['A']) if values.get('A') else Region.strip(0.0, 0.25)
        B = Region.parse(values['B']) if values.get('B') else Region.strip(0.75, 1.0)
        return [(A, B, '')]
    except HyperfillError as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(str(e))


def scenario_from_values(values: Dict[str, Optional[str]], name: str = 'scenario') -> Scenario:
    values = {k.upper(): (v or '').strip() for k, v in values.items()}
    unknown = sorted(set(values) - SCENARIO_KEYS)
    if unknown:
        raise ConfigError(f"Unknown scenario keys: {', '.join(unknown)}")
    missing = [k for k in REQUIRED_KEYS if not values.get(k)]
    if missing:
        raise ConfigError(f"Missing scenario keys: {', '.join(missing)}")
    pipeline = values['PIPELINE']
    if pipeline not in PIPELINES:
        raise ConfigError(f"Unknown pipeline '{pipeline}'; expected one of {', '.join(PIPELINES)}")

    depths = _parse_list(values['DEPTHS'], int, 'DEPTHS') if values.get('DEPTHS') else [4, 5]
    if depths != sorted(depths) or len(set(depths)) != len(depths):
        raise ConfigError(f"DEPTHS must be strictly ascending, got {depths}")
    mode = values.get('MODE') or 'continuum'
    if mode not in ('open', 'continuum'):
        raise ConfigError(f"MODE must be open or continuum, got {mode!r}")

    overrides = {}
    for key, cast in SOLVER_KEYS.items():
        if values.get(key):
            try:
                overrides[key.lower() if key != 'TRACE' else 'trace_path'] = cast(values[key])
            except ValueError:
                raise ConfigError(f"{key}={values[key]!r} is not a valid {cast.__name__}")
    params = {k: values[k] for k in PARAM_KEYS if values.get(k)}
    for key, raw in params.items():
        try:
            PARAM_KEYS[key](raw)
        except ValueError:
            raise ConfigError(f"{key}={raw!r} is not a valid {PARAM_KEYS[key].__name__}")

    try:
        s = float(values['S']) if values.get('S') else Config.FILLING_S
        seed = int(values['SEED']) if values.get('SEED') else 0
    except ValueError as e:
        raise ConfigError(f"Bad scenario value: {e}")
    return Scenario(
        name=values.get('NAME') or name,
        pipeline=pipeline,
        space_spec={k: values[k] for k in SPACE_KEYS if values.get(k)},
        s=s,
        depths=depths,
        p_grid=_parse_list(values['P'], float, 'P') if values.get('P') else [2.0],
        queries=_parse_queries(values),
        mode=mode,
        seed=seed,
        out=values.get('OUT', ''),
        settings=SolverSettings().with_overrides(**overrides),
        params=params,
    )


def load_scenario(path: str) -> Scenario:
    if not os.path.exists(path):
        candidate = os.path.join(Config.SCENARIO_FOLDER, f"{path}.cfg")
        if not os.path.exists(candidate):
            raise ConfigError(f"Scenario file '{path}' not found")
        path = candidate
    name = os.path.splitext(os.path.basename(path))[0]
    return scenario_from_values(dotenv_values(path), name)


def reverify_certificates(sc: Scenario, json_path: str, cache: FillingCache) -> List[str]:
    """Reload the detail file and re-run the oracle on every wcap certificate of the scenario space"""
    detail = read_json(json_path)
    space = sc.space()
    failures = []
    for entry in detail['reports']:
        if entry['kind'] != 'wcap' or entry['space'] != space.name or entry['certificate'] is None:
            continue
        for A, B, label in sc.queries:
            q = CapacityQuery(A, B, entry['mode'], entry['p'], label=label)
            if q.name() != entry['query']:
                continue
            f = cache.builder(space, sc.s, sc.depths)(int(entry['depth']))
            length = certificate_min_length(f, q, np.asarray(entry['certificate']))
            if length < 1.0 - sc.settings.outer_tol:
                failures.append(f"{q.name()} depth={entry['depth']} p={entry['p']}: length {length:.6g}")
    return failures


def run_scenario(sc: Scenario, cache: Optional[FillingCache] = None) -> int:
    """Run one scenario; returns the exit status. Reports are written only for completed runs."""
    cache = cache or FillingCache()
    try:
        result: PipelineResult = run_pipeline(sc, cache)
    except HyperfillError as e:
        logger.error(f"Scenario {sc.name} ({sc.pipeline}) failed: {type(e).__name__}: {e}")
        return 2
    csv_path, json_path = sc.output_paths()
    write_csv(result.reports, csv_path, scenario=sc.name)
    write_json(detail_document(sc.name, result.reports, result.checks, result.constants), json_path)
    failures = reverify_certificates(sc, json_path, cache)
    for failure in failures:
        logger.error(f"Scenario {sc.name}: reloaded certificate fails its oracle: {failure}")
    failed = [name for name, ok in result.checks.items() if not ok]
    for name in failed:
        logger.error(f"Scenario {sc.name}: check failed: {name}")
    logger.info(f"Scenario {sc.name}: {len(result.checks) - len(failed)}/{len(result.checks)} checks passed, "
                f"reports in {os.path.dirname(csv_path)}")
    return 1 if failed or failures else 0


def _apply_overrides(sc: Scenario, args: argparse.Namespace) -> Scenario:
    changes = {}
    if args.depth:
        depths = _parse_list(args.depth, int, '--depth')
        if depths != sorted(depths):
            raise ConfigError(f"--depth must be ascending, got {depths}")
        changes['depths'] = depths
    if args.p:
        changes['p_grid'] = _parse_list(args.p, float, '--p')
    if args.seed is not None:
        changes['seed'] = args.seed
    if args.out:
        changes['out'] = os.path.join(args.out, sc.name)
    return replace(sc, **changes)


def _run(args: argparse.Namespace) -> int:
    try:
        scenarios = [_apply_overrides(load_scenario(path), args) for path in args.configs]
    except HyperfillError as e:
        logger.error(f"Bad scenario configuration: {e}")
        return 2
    cache = FillingCache(enabled=not args.no_cache)
    statuses = Parallel(n_jobs=args.jobs, prefer='threads')(
        delayed(run_scenario)(sc, cache) for sc in scenarios)
    return max(statuses) if statuses else 0


def _compare(args: argparse.Namespace) -> int:
    try:
        diff = compare_reports(args.a, args.b, keys=args.keys.split(','), slack=args.slack)
    except (HyperfillError, KeyError) as e:
        logger.error(f"Cannot compare {args.a} and {args.b}: {e}")
        return 2
    if not diff.table.empty:
        print(diff.table.to_string(index=False))
    print(f"{len(diff.flagged)} of {len(diff.table)} rows outside slack {diff.slack:g}; "
          f"stabilized={diff.stabilized}")
    return 0


def _list_scenarios(args: argparse.Namespace) -> int:
    for path in sorted(glob.glob(os.path.join(args.folder, '*.cfg'))):
        values = dotenv_values(path)
        name = os.path.splitext(os.path.basename(path))[0]
        print(f"{name:28s} {values.get('PIPELINE', '?'):14s} {values.get('SPACE', 'square')}")
    return 0


def _parse_args(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(
        prog='hyperfill',
        description='Weak capacities, covering capacities and modulus on hyperbolic fillings.',
    )
    parser.add_argument('--verbose', '-v', action='store_true', help='debug logging')
    commands = parser.add_subparsers(dest='command', required=True)

    run = commands.add_parser('run', help='run one or more scenario files')
    run.add_argument('configs', nargs='+', help='scenario file or preset name')
    run.add_argument('--depth', help='comma-separated depth list overriding DEPTHS')
    run.add_argument('--p', help='comma-separated exponent list overriding P')
    run.add_argument('--seed', type=int)
    run.add_argument('--out', help='report folder')
    run.add_argument('--jobs', type=int, default=Config.N_JOBS, help='scenarios run in parallel')
    run.add_argument('--no-cache', action='store_true', help='do not read or write cached fillings')
    run.set_defaults(handler=_run)

    compare = commands.add_parser('compare', help='ratio table between two CSV reports')
    compare.add_argument('a')
    compare.add_argument('b')
    compare.add_argument('--keys', default='weak_value')
    compare.add_argument('--slack', type=float, default=1.5)
    compare.set_defaults(handler=_compare)

    listing = commands.add_parser('list-scenarios', help='list scenario presets')
    listing.add_argument('--folder', default=Config.SCENARIO_FOLDER)
    listing.set_defaults(handler=_list_scenarios)
    return parser.parse_args(argv)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else Config.LOG_LEVEL,
                        format='%(asctime)s %(levelname)s %(name)s: %(message)s')
    return args.handler(args)


if __name__ == '__main__':
    sys.exit(main())
