"""
Capacity reports: one CSV summary row per (depth, p, query) plus a JSON
detail file with certificates and measured constants.
"""

import json
import logging
import math
import os
from dataclasses import dataclass, field
from datetime import datetime
from typing import Dict, Iterable, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from config import Config
from errors import SchemaMismatchError

logger = logging.getLogger(__name__)

CSV_COLUMNS = ['scenario', 'kind', 'query', 'space', 's', 'depth', 'p', 'mode',
               'lp_value', 'weak_value', 'witness_value', 'lower_bound', 'status']
MATCH_COLUMNS = ('kind', 'query', 'p', 'mode')


def _header() -> str:
    return f"# hyperfill-report schema={Config.REPORT_SCHEMA_VERSION}"


@dataclass
class CapacityReport:
    kind: str
    space: str
    s: float
    depth: int
    p: float
    mode: str = '-'
    lp_value: float = math.nan
    weak_value: float = math.nan
    witness_value: float = math.nan
    lower_bound: float = math.nan
    status: str = 'optimal'
    query: str = ''
    certificate: Optional[np.ndarray] = field(default=None, repr=False)
    constraints_used: int = 0
    iterations: int = 0
    extras: Dict = field(default_factory=dict)
    trace: List[Dict] = field(default_factory=list)
    constraints: List = field(default_factory=list, repr=False)

    def to_row(self, scenario: str = '') -> Dict:
        return {'scenario': scenario, 'kind': self.kind, 'query': self.query, 'space': self.space,
                's': self.s, 'depth': self.depth, 'p': self.p, 'mode': self.mode,
                'lp_value': self.lp_value, 'weak_value': self.weak_value,
                'witness_value': self.witness_value, 'lower_bound': self.lower_bound,
                'status': self.status}

    def to_dict(self) -> Dict:
        data = self.to_row()
        data.pop('scenario')
        data.update({
            'certificate': None if self.certificate is None else np.asarray(self.certificate).tolist(),
            'constraints_used': self.constraints_used,
            'iterations': self.iterations,
            'extras': self.extras,
            'trace': self.trace,
        })
        return data


def _to_builtin(obj):
    """json.dump fallback for numpy scalars and arrays"""
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"Object of type {type(obj).__name__} is not JSON serializable")


def reports_frame(reports: Iterable[CapacityReport], scenario: str = '') -> pd.DataFrame:
    return pd.DataFrame([r.to_row(scenario) for r in reports], columns=CSV_COLUMNS)


def write_csv(reports: Iterable[CapacityReport], path: str, scenario: str = '') -> str:
    frame = reports_frame(reports, scenario)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, 'w', newline='') as fh:
        fh.write(_header() + '\n')
        frame.to_csv(fh, index=False, float_format='%.10g', lineterminator='\n')
    return path


def read_csv(path: str) -> pd.DataFrame:
    with open(path) as fh:
        header = fh.readline().strip()
    if header != _header():
        raise SchemaMismatchError(f"{path} has header '{header}', expected '{_header()}'")
    return pd.read_csv(path, skiprows=1)


def write_json(detail: Dict, path: str) -> str:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    payload = {'schema': Config.REPORT_SCHEMA_VERSION, **detail}
    with open(path, 'w') as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=_to_builtin)
    return path


def read_json(path: str) -> Dict:
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get('schema') != Config.REPORT_SCHEMA_VERSION:
        raise SchemaMismatchError(f"{path} has schema {payload.get('schema')}")
    return payload


def detail_document(scenario: str, reports: Sequence[CapacityReport], checks: Dict,
                    constants: Dict) -> Dict:
    return {
        'scenario': scenario,
        'created_at': datetime.now().isoformat(timespec='seconds'),
        'reports': [r.to_dict() for r in reports],
        'checks': checks,
        'constants': constants,
    }


@dataclass
class ReportDiff:
    table: pd.DataFrame
    flagged: pd.DataFrame
    slack: float

    @property
    def stabilized(self) -> bool:
        return self.flagged.empty and not self.table.empty


def _ratio(a, b):
    if a == b:
        return 1.0
    if a == 0 or not np.isfinite(a) or not np.isfinite(b):
        return math.nan if a != a or b != b else math.inf
    return b / a


def compare_reports(a: Union[str, pd.DataFrame], b: Union[str, pd.DataFrame],
                    keys: Sequence[str] = ('weak_value',), slack: float = 1.5,
                    match: Sequence[str] = MATCH_COLUMNS) -> ReportDiff:
    """
    Per-key ratios b / a between matching rows of two reports.

    Rows match on `match` plus their order within each match group, so a
    depth-4 report lines up with a depth-5 report of the same queries.
    Ratios outside [1/slack, slack] are flagged.
    """
    left = read_csv(a) if isinstance(a, str) else a.copy()
    right = read_csv(b) if isinstance(b, str) else b.copy()
    match = list(match)
    for frame in (left, right):
        frame['_rank'] = frame.groupby(match, dropna=False).cumcount()
    merged = left.merge(right, on=match + ['_rank'], suffixes=('_a', '_b'))
    rows = []
    for _, row in merged.iterrows():
        entry = {col: row[col] for col in match}
        entry['depth_a'], entry['depth_b'] = row['depth_a'], row['depth_b']
        for key in keys:
            ratio = _ratio(float(row[f"{key}_a"]), float(row[f"{key}_b"]))
            entry[f"{key}_a"], entry[f"{key}_b"] = row[f"{key}_a"], row[f"{key}_b"]
            entry[f"{key}_ratio"] = ratio
            entry[f"{key}_flag"] = bool(not (1.0 / slack <= ratio <= slack)) if ratio == ratio else False
        rows.append(entry)
    table = pd.DataFrame(rows)
    if table.empty:
        return ReportDiff(table, table, slack)
    flag_cols = [f"{key}_flag" for key in keys]
    flagged = table[table[flag_cols].any(axis=1)]
    for _, row in table.iterrows():
        logger.info(f"{row['kind']} {row['query']} p={row['p']}: depth {row['depth_a']} -> {row['depth_b']}, "
                    + ', '.join(f"{key} ratio {row[f'{key}_ratio']:.4g}" for key in keys))
    return ReportDiff(table, flagged, slack)
