"""
Verification pipelines run by scenarios. Each returns the capacity reports
for the CSV summary, named pass/fail checks and the measured constants for
the JSON detail file.
"""

import logging
import math
import os
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Callable, Dict, List, Optional, Sequence

import joblib
import numpy as np

from boundary_modulus import (admissibility_scale, density_min_length, edge_to_vertex_sum,
                              lift_to_tau, lift_to_vertex_tau, modulus, project_to_un,
                              vertex_sum_transfer)
from capacity import (CapacityQuery, certificate_min_length, positivity_certificate, qw_scan,
                      vertex_certificate_min_length, wcap_upper)
from config import Config
from covering_capacity import (CrossingFamily, SampledCurve, back_and_forth, default_covers,
                               Cover, family_oracle, is_admissible_covering, level_covers,
                               load_curves, random_polylines, sigma_n_projection, tau_epsilon,
                               wccap_upper)
from errors import InvalidArgumentError
from filling import Filling, build_filling, filling_key
from metric_core import MetricSpace, build_space
from qs_maps import qi_extension, qi_sandwich, snowflake_map, transport_edge_function, \
    transport_vertex_function
from reports import CapacityReport
from weak_norm import weak_lp_power

if TYPE_CHECKING:
    from experiment_cli import Scenario

logger = logging.getLogger(__name__)


@dataclass
class PipelineResult:
    reports: List[CapacityReport] = field(default_factory=list)
    checks: Dict[str, bool] = field(default_factory=dict)
    constants: Dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.checks.values())


class FillingCache:
    """Fillings on disk via joblib, keyed by (space hash, s, depth)"""

    def __init__(self, folder: Optional[str] = None, enabled: bool = True):
        self.folder = folder or Config.CACHE_FOLDER
        self.enabled = enabled
        self._memory: Dict[str, Filling] = {}

    def get(self, space: MetricSpace, s: float, depth: int) -> Filling:
        key = filling_key(space, s, depth)
        if key in self._memory:
            return self._memory[key]
        path = os.path.join(self.folder, f"filling_{key}.joblib")
        if self.enabled and os.path.exists(path):
            filling = joblib.load(path)
            logger.debug(f"Loaded cached filling {path}")
        else:
            filling = build_filling(space, s, depth)
            if self.enabled:
                os.makedirs(self.folder, exist_ok=True)
                joblib.dump(filling, path)
        self._memory[key] = filling
        return filling

    def builder(self, space: MetricSpace, s: float, depths: Sequence[int]) -> Callable[[int], Filling]:
        """Build once at the deepest level and truncate; nested nets make this exact"""
        deepest = max(depths)

        def build(depth: int) -> Filling:
            full = self.get(space, s, deepest)
            return full if depth == deepest else full.truncated(depth)
        return build


def _spread(values: Sequence[float]) -> float:
    values = [v for v in values if v == v]
    if not values:
        return math.nan
    lo, hi = min(values), max(values)
    return hi / lo if lo > 0 else math.inf


def _admissible(length: float, tol: float) -> bool:
    return bool(length >= 1.0 - tol)


# ---- capacities ----------------------------------------------------------

def run_wcap(sc: 'Scenario', cache: FillingCache) -> PipelineResult:
    space = sc.space()
    build = cache.builder(space, sc.s, sc.depths)
    result = PipelineResult()
    for depth in sc.depths:
        f = build(depth)
        for A, B, label in sc.queries:
            for p in sc.p_grid:
                q = CapacityQuery(A, B, sc.mode, p, label=label)
                report = wcap_upper(f, q, sc.settings)
                length = certificate_min_length(f, q, report.certificate)
                result.reports.append(report)
                result.checks[f"admissible {q.name()} depth={depth} p={p:g}"] = _admissible(
                    length, sc.settings.outer_tol)
    return result


def _curve_family(sc: 'Scenario', space: MetricSpace):
    kind = sc.param('FAMILY', str, 'curves')
    if kind == 'crossing':
        A, B, label = sc.queries[0]
        return CrossingFamily(A, B, label)
    mesh = sc.param('SAMPLE_MESH', float, 0.01)
    path = sc.param('CURVE_FILE', str, '')
    if path:
        return load_curves(path, space, mesh)
    return random_polylines(space, sc.param('CURVES', int, 5), mesh, seed=sc.seed)


def run_wccap(sc: 'Scenario', cache: FillingCache) -> PipelineResult:
    space = sc.space()
    build = cache.builder(space, sc.s, sc.depths)
    family = _curve_family(sc, space)
    result = PipelineResult()
    for depth in sc.depths:
        f = build(depth)
        for p in sc.p_grid:
            report = wccap_upper(f, family, p, sc.settings)
            result.reports.append(report)
            result.checks[f"wccap admissible depth={depth} p={p:g}"] = bool(report.extras['admissible'])
            result.constants[f"family disagreement depth={depth} p={p:g}"] = report.extras['family_disagreement']
    return result


def _modulus_spaces(sc: 'Scenario') -> List[MetricSpace]:
    grids = sc.param('GRIDS', str, '')
    if not grids:
        return [sc.space()]
    spaces = []
    for n in grids.split(','):
        spec = dict(sc.space_spec, GRID_N=n.strip())
        spaces.append(build_space(spec))
    return spaces


def run_modulus(sc: 'Scenario', cache: FillingCache) -> PipelineResult:
    result = PipelineResult()
    reference = sc.param('REFERENCE', float, None)
    for A, B, label in sc.queries:
        for p in sc.p_grid:
            values = []
            for space in _modulus_spaces(sc):
                report = modulus(space, A, B, p, sc.settings)
                result.reports.append(report)
                values.append(report.lp_value)
                result.checks[f"density admissible {space.name} p={p:g}"] = _admissible(
                    report.extras['min_length'], sc.settings.outer_tol)
            result.constants[f"modulus {label or 'query'} p={p:g}"] = values
            if reference is not None:
                errors = [abs(v - reference) for v in values]
                tol = sc.param('RELATIVE_TOL', float, 0.1)
                result.checks[f"finest grid within {tol:g} of {reference:g}"] = errors[-1] <= tol * reference
                result.checks["converges toward the reference"] = all(
                    b <= a + 1e-3 * reference for a, b in zip(errors[:-1], errors[1:]))
    return result


# ---- capacity / modulus comparability -------------------------------------

def run_transfer_boundary(sc: 'Scenario', cache: FillingCache) -> PipelineResult:
    """wcap certificate -> vertex sums -> 2 u_n, checked by the modulus oracle"""
    space = sc.space()
    build = cache.builder(space, sc.s, sc.depths)
    q_exp = space.q_exponent
    tol = sc.settings.outer_tol
    result = PipelineResult()
    for A, B, label in sc.queries:
        ratios, passing = [], []
        for depth in sc.depths:
            f = build(depth)
            q = CapacityQuery(A, B, sc.mode, q_exp, label=label)
            report = wcap_upper(f, q, sc.settings)
            tau = report.certificate
            transfer = vertex_sum_transfer(tau, f, q_exp)
            fv = edge_to_vertex_sum(tau, f)
            vertex_length = vertex_certificate_min_length(f, q, fv)
            u = project_to_un(fv, f, depth)
            length = density_min_length(space, u.scaled(2.0), A, B)
            ratio = u.power(space, q_exp) / weak_lp_power(tau, q_exp)
            ratios.append(ratio)
            if _admissible(length, tol):
                passing.append(depth)
            report.witness_value = u.power(space, q_exp)
            report.extras.update({'u_n_min_length': length, 'un_ratio': ratio,
                                  'vertex_min_length': vertex_length,
                                  'vertex_transfer': transfer.to_dict()})
            result.reports.append(report)
            result.checks[f"2u_n admissible {q.name()} n={depth}"] = _admissible(length, tol)
            result.checks[f"vertex-sum transfer {q.name()} n={depth}"] = transfer.passed
            result.checks[f"vertex sums admissible on vertex paths {q.name()} n={depth}"] = \
                _admissible(vertex_length, tol)
        spread_limit = sc.param('RATIO_SPREAD', float, 5.0)
        result.constants[f"u_n ratios {label}"] = ratios
        result.constants[f"smallest passing n {label}"] = min(passing) if passing else None
        result.checks[f"u_n ratio spread <= {spread_limit:g} {label}"] = _spread(ratios) <= spread_limit
    return result


def run_transfer_lift(sc: 'Scenario', cache: FillingCache) -> PipelineResult:
    """modulus certificate -> averaged lift, scaled to wcap admissibility"""
    space = sc.space()
    build = cache.builder(space, sc.s, sc.depths)
    q_exp = space.q_exponent
    K = sc.param('LIFT_K', float, Config.LIFT_K)
    lift_p = sc.param('LIFT_P', float, Config.LIFT_P_FACTOR * q_exp)
    tol = sc.settings.outer_tol
    result = PipelineResult()
    for A, B, label in sc.queries:
        mod = modulus(space, A, B, q_exp, sc.settings)
        result.reports.append(mod)
        rho_power = mod.lp_value
        scales, ratios = [], []
        for depth in sc.depths:
            f = build(depth)
            q = CapacityQuery(A, B, sc.mode, q_exp, label=label)
            tau = lift_to_tau(mod.certificate, f, lift_p, K)
            c = admissibility_scale(certificate_min_length(f, q, tau))
            scaled_length = certificate_min_length(f, q, c * tau)
            ratio = weak_lp_power(tau, q_exp) / rho_power
            scales.append(c)
            ratios.append(ratio)
            result.reports.append(CapacityReport(
                kind='lift', space=space.name, s=f.s, depth=depth, p=q_exp, mode=sc.mode,
                weak_value=weak_lp_power(c * tau, q_exp), witness_value=rho_power,
                query=q.name(), certificate=c * tau,
                extras={'scale': c, 'norm_ratio': ratio, 'K': K, 'lift_p': lift_p}))
            result.checks[f"scaled lift admissible {q.name()} depth={depth}"] = _admissible(scaled_length, tol)
        result.constants[f"lift scales {label}"] = scales
        result.constants[f"lift norm ratios {label}"] = ratios
        result.checks[f"lift scale spread <= 2 {label}"] = _spread(scales) <= sc.param('SCALE_SPREAD', float, 2.0)
        result.checks[f"lift norm ratio spread <= 5 {label}"] = _spread(ratios) <= sc.param('RATIO_SPREAD', float, 5.0)
    return result


def run_transfer_covering(sc: 'Scenario', cache: FillingCache) -> PipelineResult:
    """wccap of a crossing family against the modulus, both certificate chains"""
    space = sc.space()
    build = cache.builder(space, sc.s, sc.depths)
    K = sc.param('LIFT_K', float, Config.LIFT_K)
    tol = sc.settings.outer_tol
    result = PipelineResult()
    for A, B, label in sc.queries:
        family = CrossingFamily(A, B, label)
        for p in sc.p_grid:
            mod = modulus(space, A, B, p, sc.settings)
            result.reports.append(mod)
            lift_p = sc.param('LIFT_P', float, Config.LIFT_P_FACTOR * p)
            ratios = []
            for depth in sc.depths:
                f = build(depth)
                report = wccap_upper(f, family, p, sc.settings)
                sigma = sigma_n_projection(report.certificate, f, depth)
                sigma_length = density_min_length(space, sigma, A, B)

                levels, bands = default_covers(f)
                oracle = family_oracle(f, family, levels + bands)
                tau = lift_to_vertex_tau(mod.certificate, f, lift_p, K)
                c = admissibility_scale(oracle.min_length(tau))
                lifted_length = oracle.min_length(c * tau)

                ratio = report.weak_value / mod.lp_value
                ratios.append(ratio)
                report.witness_value = weak_lp_power(c * tau, p)
                report.extras.update({'sigma_min_length': sigma_length, 'lift_scale': c,
                                      'wccap_over_modulus': ratio})
                result.reports.append(report)
                result.checks[f"sigma_n admissible {family.name()} n={depth} p={p:g}"] = _admissible(sigma_length, tol)
                result.checks[f"lifted vertex certificate admissible {family.name()} depth={depth} p={p:g}"] = \
                    _admissible(lifted_length, tol)
            limit = sc.param('RATIO_SPREAD', float, 5.0)
            result.constants[f"wccap/modulus {family.name()} p={p:g}"] = ratios
            result.checks[f"wccap/modulus spread <= {limit:g} p={p:g}"] = _spread(ratios) <= limit
    return result


# ---- quasisymmetric invariance ------------------------------------------

def _snowflake_pair(sc: 'Scenario', cache: FillingCache, depth: int):
    space = sc.space()
    target, phi = snowflake_map(space, sc.param('ALPHA', float, 0.7))
    X = cache.builder(space, sc.s, sc.depths)(depth)
    Y = cache.builder(target, sc.s, sc.depths)(depth)
    F = qi_extension(phi, X, Y, seed=sc.seed)
    G = qi_extension(phi.inverse(), Y, X, seed=sc.seed)
    return X, Y, F, G


def run_qs_capacity(sc: 'Scenario', cache: FillingCache) -> PipelineResult:
    """wcap certificates transported along the induced quasi-isometry"""
    tol = sc.settings.outer_tol
    result = PipelineResult()
    by_depth: Dict[int, List[float]] = {}
    for depth in sc.depths:
        X, Y, F, G = _snowflake_pair(sc, cache, depth)
        result.constants[f"qi constants depth={depth}"] = {**G.constants(), 'sandwich': qi_sandwich(F, G)}
        for A, B, label in sc.queries:
            for p in sc.p_grid:
                q = CapacityQuery(A, B, sc.mode, p, label=label)
                before = wcap_upper(X, q, sc.settings)
                after = wcap_upper(Y, q, sc.settings)
                sigma = transport_edge_function(before.certificate, G)
                length = certificate_min_length(Y, q, sigma)
                moved = weak_lp_power(sigma, p) / before.weak_value
                by_depth.setdefault(depth, []).append(after.weak_value / before.weak_value)
                result.reports.extend([before, after, CapacityReport(
                    kind='transport', space=Y.space.name, s=Y.s, depth=depth, p=p, mode=sc.mode,
                    weak_value=weak_lp_power(sigma, p), witness_value=before.weak_value,
                    query=q.name(), certificate=sigma, extras={'norm_ratio': moved, 'min_length': length})])
                result.checks[f"transported certificate admissible {q.name()} depth={depth} p={p:g}"] = \
                    _admissible(length, tol)
    _invariance_checks(sc, result, by_depth)
    return result


def _invariance_checks(sc: 'Scenario', result: PipelineResult, by_depth: Dict[int, List[float]]):
    limit = sc.param('RATIO_SPREAD', float, 20.0)
    for depth, ratios in by_depth.items():
        result.constants[f"value ratios depth={depth}"] = ratios
        result.checks[f"value ratio spread <= {limit:g} depth={depth}"] = _spread(ratios) <= limit
    depths = sorted(by_depth)
    for a, b in zip(depths[:-1], depths[1:]):
        drift = [y / x for x, y in zip(by_depth[a], by_depth[b]) if x > 0]
        result.checks[f"value ratios stable within 2 from depth {a} to {b}"] = all(0.5 <= d <= 2.0 for d in drift)


def _remeasured(curve: SampledCurve, space: MetricSpace) -> SampledCurve:
    """The same samples with arclength measured in another metric"""
    steps = space.to_metric(np.linalg.norm(np.diff(curve.coords, axis=0), axis=1))
    mesh = float(steps.max()) if len(steps) else curve.mesh
    return SampledCurve(curve.coords, np.concatenate([[0.0], np.cumsum(steps)]), mesh, curve.name)


def run_qs_covering(sc: 'Scenario', cache: FillingCache) -> PipelineResult:
    """wccap certificates pulled back along the induced quasi-isometry"""
    tol = sc.settings.outer_tol
    result = PipelineResult()
    by_depth: Dict[int, List[float]] = {}
    space = sc.space()
    curves = random_polylines(space, sc.param('CURVES', int, 5), sc.param('SAMPLE_MESH', float, 0.005),
                              seed=sc.seed)
    for depth in sc.depths:
        X, Y, F, G = _snowflake_pair(sc, cache, depth)
        images = [_remeasured(c, Y.space) for c in curves]
        y_levels, y_bands = default_covers(Y)
        y_covers = y_levels + y_bands
        # the pushed-forward covers G(S') of X, so every image projection has a preimage
        x_covers = [Cover(np.unique(G.vertex_map[c.vertices]), f"G({c.label})") for c in y_covers]
        for p in sc.p_grid:
            before = wccap_upper(X, curves, p, sc.settings, covers=x_covers, margin=0.0)
            after = wccap_upper(Y, images, p, sc.settings)
            sigma = transport_vertex_function(before.certificate, G)
            ok = [is_admissible_covering(Y, sigma, c, y_levels, tol)
                  and is_admissible_covering(Y, sigma, c, y_bands, tol) for c in images]
            by_depth.setdefault(depth, []).append(after.weak_value / before.weak_value)
            result.reports.extend([before, after, CapacityReport(
                kind='transport', space=Y.space.name, s=Y.s, depth=depth, p=p,
                weak_value=weak_lp_power(sigma, p), witness_value=before.weak_value,
                query=f"{len(curves)} curves", certificate=sigma,
                extras={'norm_ratio': weak_lp_power(sigma, p) / before.weak_value,
                        'curves_admissible': ok})])
            result.checks[f"pulled-back certificate admissible depth={depth} p={p:g}"] = all(ok)
    _invariance_checks(sc, result, by_depth)
    return result


# ---- explicit bounds -----------------------------------------------------

def run_positivity(sc: 'Scenario', cache: FillingCache) -> PipelineResult:
    space = sc.space()
    depth = max(sc.depths)
    f = cache.builder(space, sc.s, sc.depths)(depth)
    gens = sc.param('GENS', int, 1)
    result = PipelineResult()
    for A, B, label in sc.queries:
        for p in sc.p_grid:
            q = CapacityQuery(A, B, sc.mode, p, label=label)
            certificate = positivity_certificate(f, q, gens)
            report = wcap_upper(f, q, sc.settings)
            report.lower_bound = certificate['lower_bound']
            report.extras.update({'offset': certificate['offset'], 'L': certificate['L'],
                                  'offset_source': certificate['offset_source'],
                                  'regularity_offset': certificate['regularity_offset'],
                                  'smallest_offset': certificate['smallest_offset'],
                                  'structure_problems': certificate['problems']})
            result.reports.append(report)
            result.checks[f"binary structures sound {q.name()}"] = not certificate['problems']
            result.checks[f"wcap >= positivity bound {q.name()} p={p:g}"] = \
                report.weak_value >= certificate['lower_bound']
    return result


def run_qw_scan(sc: 'Scenario', cache: FillingCache) -> PipelineResult:
    space = sc.space()
    build = cache.builder(space, sc.s, sc.depths)
    result = PipelineResult()
    q_exp = space.q_exponent
    for A, B, label in sc.queries:
        q = CapacityQuery(A, B, sc.mode, sc.p_grid[0], label=label)
        table = qw_scan(build, space, sc.p_grid, sc.depths, q, sc.settings)
        for row in table.itertuples(index=False):
            result.reports.append(CapacityReport(
                kind='qw-scan', space=space.name, s=sc.s, depth=int(row.depth), p=float(row.p),
                mode=sc.mode, lp_value=row.wcap_lp, weak_value=row.wcap_weak,
                witness_value=row.witness_weak, status=row.status, query=q.name()))
            result.checks[f"witness admissible {q.name()} depth={row.depth}"] = bool(row.witness_admissible)
        for p, group in table.groupby('p'):
            if p > q_exp:
                last = group['witness_weak_ratio'].iloc[-1]
                result.checks[f"witness depth-stable p={p:g}"] = abs(last - 1.0) <= sc.param('STABLE_TOL', float, 0.2)
            elif p < q_exp:
                growth = group['wcap_weak_ratio'].iloc[1:]
                result.checks[f"wcap grows with depth p={p:g}"] = bool((growth >= sc.param('GROWTH', float, 1.2)).all())
        result.constants[f"qw table {label}"] = table.to_dict(orient='list')
    return result


def run_tau_eps(sc: 'Scenario', cache: FillingCache) -> PipelineResult:
    """tau_eps admissibility on long back-and-forth curves"""
    space = sc.space()
    build = cache.builder(space, sc.s, sc.depths)
    epsilon = sc.param('EPSILON', float, 0.05)
    mesh = sc.param('SAMPLE_MESH', float, 0.01)
    count = sc.param('CURVES', int, 5)
    q_exp = space.q_exponent
    rng = np.random.default_rng(sc.seed)
    result = PipelineResult()
    for depth in sc.depths:
        f = build(depth)
        covers = level_covers(f, [depth - 1, depth])
        span = max(0.3, 2.0 * f.radius_at(depth - 1))
        length = 4.0 / epsilon + 2.0
        curves = []
        while len(curves) < count:
            a, b = rng.choice(len(space), size=2, replace=False)
            if space.dist(a, b) >= span:
                curves.append(back_and_forth(space, space.coords[a], space.coords[b], length, mesh))
        tau = tau_epsilon(f, epsilon)
        ok = [is_admissible_covering(f, tau, c, covers) for c in curves]
        drop = weak_lp_power(tau, q_exp) / weak_lp_power(tau_epsilon(f, epsilon / 10.0), q_exp)
        result.reports.append(CapacityReport(
            kind='tau-eps', space=space.name, s=f.s, depth=depth, p=q_exp,
            weak_value=weak_lp_power(tau, q_exp), query=f"eps={epsilon:g}", certificate=tau,
            extras={'curves_admissible': ok, 'norm_drop': drop,
                    'curve_lengths': [c.total_length for c in curves]}))
        result.checks[f"tau_eps admissible on long curves depth={depth}"] = all(ok)
        result.checks[f"weak norm drops >= 10x depth={depth}"] = drop >= 10.0
    return result


PIPELINES: Dict[str, Callable[['Scenario', FillingCache], PipelineResult]] = {
    'wcap': run_wcap,
    'wccap': run_wccap,
    'modulus': run_modulus,
    'transfer-1.1': run_transfer_boundary,
    'transfer-1.3': run_transfer_lift,
    'transfer-1.5': run_transfer_covering,
    'qs-1.4': run_qs_capacity,
    'qs-1.6': run_qs_covering,
    'positivity': run_positivity,
    'qw-scan': run_qw_scan,
    'tau-eps': run_tau_eps,
}


def run_pipeline(sc: 'Scenario', cache: Optional[FillingCache] = None) -> PipelineResult:
    if sc.pipeline not in PIPELINES:
        raise InvalidArgumentError(f"Unknown pipeline '{sc.pipeline}'")
    logger.info(f"Scenario {sc.name}: pipeline {sc.pipeline}, depths {sc.depths}, p {sc.p_grid}")
    return PIPELINES[sc.pipeline](sc, cache or FillingCache())
