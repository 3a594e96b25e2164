"""
Weak and strong l^p norms of finitely supported nonnegative functions.
"""

import logging
from dataclasses import dataclass, asdict
from typing import Dict, Iterable, Optional, Tuple

import numpy as np

from config import Config
from errors import InvalidArgumentError, InvalidRelationError, PreconditionViolation

logger = logging.getLogger(__name__)


def _values(f) -> np.ndarray:
    values = np.abs(np.asarray(f, dtype=float).ravel())
    if not np.all(np.isfinite(values)):
        raise InvalidArgumentError("Norm arguments must be finite")
    return values


def _check_p(p: float):
    if p < 1:
        raise InvalidArgumentError(f"Exponent must be >= 1, got {p}")


def weak_lp_norm(f, p: float, measure=None) -> float:
    """
    max_k k^(1/p) a_k over the values sorted in decreasing order.

    With a measure the rank k becomes the mass of the k largest entries.
    """
    _check_p(p)
    values = _values(f)
    if values.size == 0:
        return 0.0
    order = np.argsort(-values, kind='stable')
    ordered = values[order]
    if measure is None:
        ranks = np.arange(1, ordered.size + 1, dtype=float)
    else:
        ranks = np.cumsum(np.asarray(measure, dtype=float).ravel()[order])
    return float(np.max(ranks ** (1.0 / p) * ordered))


def weak_lp_power(f, p: float, measure=None) -> float:
    """||f||_{p,inf}^p, the quantity capacities are stated in"""
    return weak_lp_norm(f, p, measure) ** p


def lp_norm(f, p: float, measure=None) -> float:
    _check_p(p)
    values = _values(f)
    if values.size == 0:
        return 0.0
    if measure is None:
        return float(np.linalg.norm(values, ord=p))
    return float(np.sum(np.asarray(measure, dtype=float).ravel() * values ** p) ** (1.0 / p))


def lp_power(f, p: float, measure=None) -> float:
    return lp_norm(f, p, measure) ** p


def weak_lp_norm_normable(f, p: float) -> float:
    """
    The normable equivalent sup_k k^(1/p - 1) * (a_1 + ... + a_k).

    It satisfies ||f||_{p,inf} <= |||f||| <= p/(p-1) ||f||_{p,inf} for p > 1
    and is subadditive, which is what makes bounded-multiplicity sums
    comparable in the weak norm.
    """
    _check_p(p)
    values = _values(f)
    if values.size == 0:
        return 0.0
    ordered = np.sort(values)[::-1]
    ranks = np.arange(1, ordered.size + 1, dtype=float)
    return float(np.max(ranks ** (1.0 / p - 1.0) * np.cumsum(ordered)))


def weak_lp_by_levels(f, p: float, levels: Optional[np.ndarray] = None) -> float:
    """
    Definitional infimum evaluated on a lambda grid: the smallest C with
    #{f > lambda} <= C^p / lambda^p for every grid lambda.

    Slow; only meant as a cross-check of the sorted formula.
    """
    _check_p(p)
    values = _values(f)
    if values.size == 0 or values.max() == 0:
        return 0.0
    if levels is None:
        # the supremum is approached just below each distinct value
        distinct = np.unique(values[values > 0])
        levels = np.concatenate([distinct * (1 - 1e-13), distinct])
    best = 0.0
    for lam in np.asarray(levels, dtype=float):
        if lam <= 0:
            continue
        count = np.count_nonzero(values > lam)
        best = max(best, lam * count ** (1.0 / p))
    return float(best)


def transfer_ceiling(p: float, multiplicity: int) -> float:
    """C(p, N) = N p / (p - 1) unless overridden in the configuration"""
    if Config.TRANSFER_CEILING:
        return float(Config.TRANSFER_CEILING)
    return multiplicity * p / (p - 1.0)


@dataclass
class TransferReport:
    multiplicity: int
    ratio: float
    ceiling: float
    passed: bool
    s_norm: float
    t_norm: float

    def to_dict(self) -> Dict:
        return asdict(self)


def relation_multiplicity(relation: np.ndarray) -> int:
    """Largest row or column count of an index-pair relation"""
    relation = np.asarray(relation, dtype=int).reshape(-1, 2)
    if len(relation) == 0:
        return 0
    relation = np.unique(relation, axis=0)
    rows = np.bincount(relation[:, 0]).max()
    cols = np.bincount(relation[:, 1]).max()
    return int(max(rows, cols))


def check_bounded_multiplicity_transfer(s, t, relation: Iterable[Tuple[int, int]], p: float,
                                        max_multiplicity: Optional[int] = None,
                                        ceiling: Optional[float] = None,
                                        tol: float = 1e-9) -> TransferReport:
    """
    Check ||s||_{p,inf} <= C(p, N) ||t||_{p,inf} for s_h <= sum_{(h, k) in relation} t_k.

    Raises InvalidRelationError when some row or column holds more than
    max_multiplicity pairs and PreconditionViolation when the domination
    condition fails.
    """
    if p <= 1:
        raise InvalidArgumentError(f"Transfer check needs p > 1, got {p}")
    s, t = _values(s), _values(t)
    pairs = np.asarray(list(relation) if not isinstance(relation, np.ndarray) else relation,
                       dtype=int).reshape(-1, 2)
    if len(pairs) and (pairs[:, 0].max() >= s.size or pairs[:, 1].max() >= t.size or pairs.min() < 0):
        raise InvalidRelationError("Relation references indices outside the functions")
    multiplicity = relation_multiplicity(pairs)
    if max_multiplicity is not None and multiplicity > max_multiplicity:
        raise InvalidRelationError(
            f"Relation multiplicity {multiplicity} exceeds the allowed {max_multiplicity}")

    pairs = np.unique(pairs, axis=0) if len(pairs) else pairs
    dominating = np.zeros(s.size)
    if len(pairs):
        np.add.at(dominating, pairs[:, 0], t[pairs[:, 1]])
    excess = s - dominating
    if np.any(excess > tol * np.maximum(1.0, dominating)):
        h = int(np.argmax(excess))
        raise PreconditionViolation(
            f"s[{h}] = {s[h]:.6g} exceeds the related sum {dominating[h]:.6g}")

    s_norm, t_norm = weak_lp_norm(s, p), weak_lp_norm(t, p)
    ratio = 0.0 if s_norm == 0 else (np.inf if t_norm == 0 else s_norm / t_norm)
    bound = ceiling if ceiling is not None else transfer_ceiling(p, max(multiplicity, 1))
    report = TransferReport(multiplicity=multiplicity, ratio=float(ratio), ceiling=float(bound),
                            passed=bool(ratio <= bound * (1 + tol)), s_norm=s_norm, t_norm=t_norm)
    logger.debug(f"Multiplicity transfer N={multiplicity}: ratio {report.ratio:.4g} vs ceiling {bound:.4g}")
    return report
