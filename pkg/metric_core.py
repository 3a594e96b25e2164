"""
Finite metric measure spaces and the separated nets the filling consumes.

A MetricSpace is a point cloud with Euclidean generating coordinates and a
metric of the form d(x, y) = scale * |x - y|^power. Snowflaking only changes
(scale, power), so every ball query can still be answered by a KDTree built on
the generating coordinates.
"""

import hashlib
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import ConvexHull, QhullError
from scipy.spatial.distance import cdist, pdist
from sklearn.neighbors import KDTree

from config import Config
from errors import InvalidArgumentError, ResolutionError

logger = logging.getLogger(__name__)

POINT_FILE_VERSION = 1


@dataclass(frozen=True, eq=False)
class MetricSpace:
    """Finite approximation of a compact Ahlfors-regular metric measure space"""

    coords: np.ndarray
    q_exponent: float
    weights: np.ndarray
    scale: float = 1.0
    power: float = 1.0
    name: str = 'space'
    grid_mesh: Optional[float] = None

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=float)
        if coords.ndim == 1:
            coords = coords[:, None]
        weights = np.asarray(self.weights, dtype=float)
        if len(coords) == 0:
            raise InvalidArgumentError("A metric space needs at least one point")
        if weights.shape != (len(coords),):
            raise InvalidArgumentError(
                f"Expected {len(coords)} weights, got shape {weights.shape}")
        if np.any(weights < 0) or weights.sum() <= 0:
            raise InvalidArgumentError("Weights must be nonnegative with positive total mass")
        if self.q_exponent <= 0:
            raise InvalidArgumentError(f"Regularity exponent must be positive, got {self.q_exponent}")
        if self.scale <= 0 or not (0 < self.power <= 1):
            raise InvalidArgumentError(
                f"Invalid metric parameters scale={self.scale}, power={self.power}")
        coords.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, 'coords', coords)
        object.__setattr__(self, 'weights', weights)

    def __len__(self):
        return len(self.coords)

    @property
    def dim(self) -> int:
        return self.coords.shape[1]

    @property
    def total_mass(self) -> float:
        return float(self.weights.sum())

    # ---- metric ----------------------------------------------------------

    def to_metric(self, euclidean):
        return self.scale * np.power(euclidean, self.power)

    def to_euclidean(self, r):
        return np.power(np.maximum(r, 0.0) / self.scale, 1.0 / self.power)

    def query_radius(self, r: float) -> float:
        """Euclidean radius answering the closed metric ball of radius r"""
        return float(self.to_euclidean(r * (1.0 + 1e-12) + Config.BALL_SLACK))

    def dist(self, i: int, j: int) -> float:
        return float(self.to_metric(np.linalg.norm(self.coords[i] - self.coords[j])))

    def distances_from(self, i: int, idx=None) -> np.ndarray:
        targets = self.coords if idx is None else self.coords[np.asarray(idx)]
        return self.to_metric(np.linalg.norm(targets - self.coords[i], axis=1))

    def pairwise(self, idx_a=None, idx_b=None) -> np.ndarray:
        a = self.coords if idx_a is None else self.coords[np.asarray(idx_a)]
        b = a if idx_b is None and idx_a is not None else (
            self.coords if idx_b is None else self.coords[np.asarray(idx_b)])
        return self.to_metric(cdist(a, b))

    def dist_coords(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Metric distances between arbitrary coordinate arrays (rows)"""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        y = np.atleast_2d(np.asarray(y, dtype=float))
        return self.to_metric(cdist(x, y))

    @cached_property
    def tree(self) -> KDTree:
        return KDTree(self.coords)

    def ball(self, center, r: float) -> np.ndarray:
        """Indices of space points in the closed ball B(center, r), sorted"""
        point = self.coords[center] if np.isscalar(center) else np.asarray(center, dtype=float)
        found = self.tree.query_radius(point.reshape(1, -1), r=self.query_radius(r))[0]
        return np.sort(found)

    def balls(self, centers: np.ndarray, r) -> List[np.ndarray]:
        """Closed balls around several space points; r may be a scalar or per-center array"""
        centers = np.asarray(centers, dtype=int)
        if len(centers) == 0:
            return []
        radii = np.broadcast_to(np.asarray(r, dtype=float), centers.shape)
        euclid = np.array([self.query_radius(x) for x in radii])
        found = self.tree.query_radius(self.coords[centers], r=euclid)
        return [np.sort(ix) for ix in found]

    @cached_property
    def diameter(self) -> float:
        return float(self.to_metric(euclidean_diameter(self.coords)))

    @cached_property
    def mesh(self) -> float:
        """Generating mesh: the smallest nearest-neighbor distance"""
        if self.grid_mesh is not None:
            return float(self.grid_mesh)
        if len(self) < 2:
            return 0.0
        dist, _ = self.tree.query(self.coords, k=2)
        return float(self.to_metric(dist[:, 1].min()))

    def cell_volumes(self) -> np.ndarray:
        """Per-point share of the Q-dimensional volume, mesh^Q per cell on uniform nets"""
        return self.weights / self.total_mass * len(self) * self.mesh ** self.q_exponent

    def content_hash(self) -> str:
        digest = hashlib.sha256()
        digest.update(np.ascontiguousarray(self.coords).tobytes())
        digest.update(np.ascontiguousarray(self.weights).tobytes())
        digest.update(repr((self.scale, self.power, self.q_exponent)).encode())
        return digest.hexdigest()[:16]

    def snowflaked(self, alpha: float) -> 'MetricSpace':
        """(Z, d^alpha) rescaled back to diameter 1/2, with exponent Q/alpha"""
        if not (0 < alpha < 1):
            raise InvalidArgumentError(f"Snowflake exponent must lie in (0, 1), got {alpha}")
        power = self.power * alpha
        ediam = euclidean_diameter(self.coords)
        scale = 0.5 / ediam ** power
        mesh = None
        if self.grid_mesh is not None:
            # generating mesh in the new metric, via its Euclidean length
            mesh = scale * float(self.to_euclidean(self.grid_mesh)) ** power
        return MetricSpace(self.coords, self.q_exponent / alpha, self.weights,
                           scale=scale, power=power,
                           name=f"{self.name}^{alpha:g}", grid_mesh=mesh)

    # ---- persistence -----------------------------------------------------

    def save(self, path: str) -> str:
        np.savez(path, version=POINT_FILE_VERSION, coords=self.coords, weights=self.weights,
                 params=np.array([self.q_exponent, self.scale, self.power,
                                  np.nan if self.grid_mesh is None else self.grid_mesh]),
                 name=np.array(self.name))
        return path

    @classmethod
    def load(cls, path: str) -> 'MetricSpace':
        with np.load(path) as data:
            version = int(data['version'])
            if version != POINT_FILE_VERSION:
                raise InvalidArgumentError(f"Unsupported point file version {version}")
            q, scale, power, mesh = data['params'].tolist()
            return cls(data['coords'], q, data['weights'], scale=scale, power=power,
                       name=str(data['name']), grid_mesh=None if math.isnan(mesh) else mesh)


@dataclass(frozen=True)
class SeparatedNet:
    level: int
    separation: float
    members: np.ndarray = field(repr=False)

    def __len__(self):
        return len(self.members)


def euclidean_diameter(coords: np.ndarray, hull_above: int = 1500) -> float:
    if len(coords) < 2:
        return 0.0
    if coords.shape[1] == 1:
        return float(coords.max() - coords.min())
    points = coords
    if len(coords) > hull_above:
        try:
            points = coords[ConvexHull(coords).vertices]
        except QhullError:
            points = coords
    if len(points) > 4000:
        # chunked farthest-pair search
        best = 0.0
        for start in range(0, len(points), 2000):
            best = max(best, float(cdist(points[start:start + 2000], points).max()))
        return best
    return float(pdist(points).max())


def _rescaled(coords, q_exponent, name, grid_step=None) -> MetricSpace:
    """Rescale Euclidean coordinates so the diameter is exactly 1/2"""
    coords = np.asarray(coords, dtype=float)
    scale = 0.5 / euclidean_diameter(coords)
    weights = np.full(len(coords), 1.0 / len(coords))
    mesh = None if grid_step is None else scale * grid_step
    return MetricSpace(coords, q_exponent, weights, scale=scale, power=1.0,
                       name=name, grid_mesh=mesh)


def from_points(coords, q_exponent: float, weights=None, rescale: bool = True,
                name: str = 'points') -> MetricSpace:
    """Space from raw coordinates; rescaled to diameter 1/2 unless told otherwise"""
    coords = np.asarray(coords, dtype=float)
    if coords.ndim == 1:
        coords = coords[:, None]
    if weights is None:
        weights = np.full(len(coords), 1.0 / len(coords))
    scale = 0.5 / euclidean_diameter(coords) if rescale and len(coords) > 1 else 1.0
    return MetricSpace(coords, q_exponent, weights, scale=scale, name=name)


def build_square(grid_n: int) -> MetricSpace:
    """Uniform grid_n x grid_n grid on the unit square, row-major order"""
    if not isinstance(grid_n, (int, np.integer)) or grid_n < 2:
        raise InvalidArgumentError(f"grid_n must be an integer >= 2, got {grid_n}")
    ticks = np.linspace(0.0, 1.0, grid_n)
    ys, xs = np.meshgrid(ticks, ticks, indexing='ij')
    coords = np.column_stack([xs.ravel(), ys.ravel()])
    return _rescaled(coords, 2.0, f"square{grid_n}", grid_step=1.0 / (grid_n - 1))


def build_rectangle(grid_n: int, width: float = 2.0, height: float = 1.0) -> MetricSpace:
    """Grid on a width x height rectangle with grid_n points across the height"""
    if not isinstance(grid_n, (int, np.integer)) or grid_n < 2:
        raise InvalidArgumentError(f"grid_n must be an integer >= 2, got {grid_n}")
    if width <= 0 or height <= 0:
        raise InvalidArgumentError(f"Rectangle sides must be positive, got {width} x {height}")
    step = height / (grid_n - 1)
    nx = int(round(width / step)) + 1
    ys, xs = np.meshgrid(np.arange(grid_n) * step, np.arange(nx) * step, indexing='ij')
    coords = np.column_stack([xs.ravel(), ys.ravel()])
    return _rescaled(coords, 2.0, f"rect{width:g}x{height:g}n{grid_n}", grid_step=step)


def build_carpet(depth: int) -> MetricSpace:
    """Centers of the retained level-`depth` subsquares of the Sierpinski carpet"""
    if not isinstance(depth, (int, np.integer)) or not (1 <= depth <= Config.CARPET_MAX_DEPTH):
        raise InvalidArgumentError(
            f"Carpet depth must be an integer in [1, {Config.CARPET_MAX_DEPTH}], got {depth}")
    offsets = np.array([(i, j) for j in range(3) for i in range(3) if (i, j) != (1, 1)], dtype=float)
    points = np.zeros((1, 2))
    for k in range(1, depth + 1):
        width = 3.0 ** (-k)
        points = (points[:, None, :] + offsets[None, :, :] * width).reshape(-1, 2)
    points += 0.5 * 3.0 ** (-depth)
    return _rescaled(points, math.log(8) / math.log(3), f"carpet{depth}",
                     grid_step=3.0 ** (-depth))


def build_interval(n_points: int) -> MetricSpace:
    """Evenly spaced points on a segment, an Ahlfors 1-regular space"""
    if not isinstance(n_points, (int, np.integer)) or n_points < 2:
        raise InvalidArgumentError(f"n_points must be an integer >= 2, got {n_points}")
    coords = np.linspace(0.0, 1.0, n_points)[:, None]
    return _rescaled(coords, 1.0, f"interval{n_points}", grid_step=1.0 / (n_points - 1))


def build_space(spec: Dict[str, str]) -> MetricSpace:
    """Space from a key-value description (SPACE, GRID_N, CARPET_DEPTH, WIDTH, HEIGHT, SNOWFLAKE)"""
    shape = spec.get('SPACE', 'square').strip().lower()
    try:
        if shape == 'square':
            space = build_square(int(spec.get('GRID_N', 20)))
        elif shape == 'rectangle':
            space = build_rectangle(int(spec.get('GRID_N', 20)), float(spec.get('WIDTH', 2.0)),
                                    float(spec.get('HEIGHT', 1.0)))
        elif shape == 'carpet':
            space = build_carpet(int(spec.get('CARPET_DEPTH', 3)))
        elif shape == 'interval':
            space = build_interval(int(spec.get('GRID_N', 200)))
        else:
            raise InvalidArgumentError(f"Unknown space shape '{shape}'")
    except (TypeError, ValueError) as e:
        if isinstance(e, InvalidArgumentError):
            raise
        raise InvalidArgumentError(f"Bad space description {spec}: {e}")
    alpha = spec.get('SNOWFLAKE')
    if alpha not in (None, '', '1', '1.0'):
        space = space.snowflaked(float(alpha))
    return space


def seeded_order(n: int, seeds: Sequence[int] = ()) -> np.ndarray:
    """Deterministic sweep order: seeds first, then every other point by index"""
    seeds = np.asarray(seeds, dtype=int)
    rest = np.setdiff1d(np.arange(n), seeds, assume_unique=False)
    return np.concatenate([seeds, rest]).astype(int)


def maximal_separated_net(space: MetricSpace, delta: float, order=None, level: int = 0) -> SeparatedNet:
    """
    Greedy sweep: a point joins iff it is at distance >= delta from every member.

    The net is maximal relative to the points listed in `order` (all points by
    default). Distances within a relative 1e-9 of delta count as separated.
    """
    if delta <= 0:
        raise InvalidArgumentError(f"Separation must be positive, got {delta}")
    order = np.arange(len(space)) if order is None else np.asarray(order, dtype=int)
    blocked = np.zeros(len(space), dtype=bool)
    r_block = float(space.to_euclidean(delta * (1.0 - 1e-9) - Config.BALL_SLACK))
    members = []
    for idx in order.tolist():
        if blocked[idx]:
            continue
        members.append(idx)
        near = space.tree.query_radius(space.coords[idx:idx + 1], r=r_block)[0]
        blocked[near] = True
    return SeparatedNet(level=level, separation=delta, members=np.array(members, dtype=int))


def regularity_constants(space: MetricSpace, n_radii: int = 12,
                         max_centers: int = 256) -> Tuple[float, float]:
    """Empirical (c_Q, C_Q): min/max of mu(B(z, r)) / r^Q above the resolution floor"""
    floor = 3.0 * space.mesh
    if len(space) < 2 or floor >= space.diameter:
        raise ResolutionError(
            f"No valid radii between the floor {floor:.3g} and the diameter {space.diameter:.3g}")
    radii = np.geomspace(floor, space.diameter, n_radii)
    centers = np.unique(np.linspace(0, len(space) - 1, min(len(space), max_centers)).astype(int))
    ratios = []
    for r in radii:
        found = space.tree.query_radius(space.coords[centers], r=space.query_radius(r))
        masses = np.array([space.weights[ix].sum() for ix in found])
        ratios.append(masses / r ** space.q_exponent)
    ratios = np.concatenate(ratios)
    c_q, big_c_q = float(ratios.min()), float(ratios.max())
    logger.debug(f"Regularity constants for {space.name}: c={c_q:.4g}, C={big_c_q:.4g}")
    return c_q, big_c_q


def neighbor_links(space: MetricSpace, radius: Optional[float] = None) -> Tuple[np.ndarray, np.ndarray]:
    """All point pairs i < j within `radius` (default 2x mesh) and their lengths"""
    radius = 2.0 * space.mesh if radius is None else radius
    found = space.tree.query_radius(space.coords, r=space.query_radius(radius))
    counts = np.array([len(ix) for ix in found])
    rows = np.repeat(np.arange(len(space)), counts)
    cols = np.concatenate(found) if len(found) else np.zeros(0, dtype=int)
    keep = rows < cols
    links = np.column_stack([rows[keep], cols[keep]]).astype(int)
    order = np.lexsort((links[:, 1], links[:, 0]))
    links = links[order]
    lengths = space.to_metric(np.linalg.norm(space.coords[links[:, 0]] - space.coords[links[:, 1]], axis=1))
    return links, lengths


# ---- boundary set descriptors -------------------------------------------

@dataclass(frozen=True)
class Region:
    """
    Boundary set descriptor evaluated as a point-membership mask.

    kind='box' uses bounds (x0, x1, y0, y1, ...) in coordinates normalized to
    the bounding box of the space; kind='points' lists point ids; kind='all'
    is the whole space; kind='not' is the complement of `inner`.
    """

    kind: str = 'all'
    bounds: Tuple[float, ...] = ()
    indices: Tuple[int, ...] = ()
    inner: Optional['Region'] = None

    def mask(self, space: MetricSpace) -> np.ndarray:
        if self.kind == 'not':
            return ~self.inner.mask(space)
        if self.kind == 'all':
            return np.ones(len(space), dtype=bool)
        if self.kind == 'points':
            mask = np.zeros(len(space), dtype=bool)
            mask[np.asarray(self.indices, dtype=int)] = True
            return mask
        if self.kind == 'box':
            lo = space.coords.min(axis=0)
            extent = space.coords.max(axis=0) - lo
            extent[extent == 0] = 1.0
            normalized = (space.coords - lo) / extent
            mask = np.ones(len(space), dtype=bool)
            for axis in range(min(space.dim, len(self.bounds) // 2)):
                a, b = self.bounds[2 * axis], self.bounds[2 * axis + 1]
                column = normalized[:, axis]
                mask &= (column >= a - 1e-9) & (column <= b + 1e-9)
            return mask
        raise InvalidArgumentError(f"Unknown region kind '{self.kind}'")

    def describe(self) -> str:
        if self.kind == 'not':
            return 'not:' + self.inner.describe()
        if self.kind == 'box':
            return 'box:' + ','.join(f"{b:g}" for b in self.bounds)
        if self.kind == 'points':
            return 'points:' + ','.join(str(i) for i in self.indices)
        return self.kind

    @classmethod
    def parse(cls, text: str) -> 'Region':
        """Parse 'all', 'box:x0,x1[,y0,y1]', 'points:i,j,...' or 'not:<region>'"""
        text = text.strip()
        kind, _, rest = text.partition(':')
        kind = kind.strip().lower()
        if kind == 'not':
            return cls.parse(rest).complement()
        try:
            if kind == 'all':
                return cls('all')
            if kind == 'box':
                bounds = tuple(float(v) for v in rest.split(','))
                if len(bounds) % 2 or not bounds:
                    raise ValueError("box needs pairs of bounds")
                return cls('box', bounds=bounds)
            if kind == 'points':
                return cls('points', indices=tuple(int(v) for v in rest.split(',')))
        except ValueError as e:
            raise InvalidArgumentError(f"Cannot parse region '{text}': {e}")
        raise InvalidArgumentError(f"Unknown region kind in '{text}'")

    def complement(self) -> 'Region':
        if self.kind == 'not':
            return self.inner
        return Region('not', inner=self)

    @classmethod
    def strip(cls, lo: float, hi: float) -> 'Region':
        """Vertical strip lo <= x <= hi over the full height"""
        return cls('box', bounds=(lo, hi, 0.0, 1.0))


def set_distance(space: MetricSpace, mask_a: np.ndarray, mask_b: np.ndarray) -> float:
    idx_a, idx_b = np.flatnonzero(mask_a), np.flatnonzero(mask_b)
    if len(idx_a) == 0 or len(idx_b) == 0:
        raise InvalidArgumentError("Set distance needs two nonempty sets")
    tree = KDTree(space.coords[idx_b])
    dist, _ = tree.query(space.coords[idx_a], k=1)
    return float(space.to_metric(dist.min()))


def is_continuum(space: MetricSpace, mask: np.ndarray, link_radius: Optional[float] = None) -> bool:
    """More than one point and connected under the neighbor links"""
    idx = np.flatnonzero(mask)
    if len(idx) < 2:
        return False
    links, _ = neighbor_links(space, link_radius)
    inside = mask[links[:, 0]] & mask[links[:, 1]]
    local = np.full(len(space), -1)
    local[idx] = np.arange(len(idx))
    sub = links[inside]
    graph = coo_matrix((np.ones(len(sub)), (local[sub[:, 0]], local[sub[:, 1]])),
                       shape=(len(idx), len(idx)))
    n_components, _ = connected_components(graph, directed=False)
    return n_components == 1


def sample_triples(n: int, count: int, seed: int = 0) -> np.ndarray:
    """Random index triples for sampled metric checks"""
    rng = np.random.default_rng(seed)
    return rng.integers(0, n, size=(count, 3))


def triangle_violations(space: MetricSpace, triples: np.ndarray, tol: float = 1e-12) -> int:
    a, b, c = triples[:, 0], triples[:, 1], triples[:, 2]
    dab = space.to_metric(np.linalg.norm(space.coords[a] - space.coords[b], axis=1))
    dbc = space.to_metric(np.linalg.norm(space.coords[b] - space.coords[c], axis=1))
    dac = space.to_metric(np.linalg.norm(space.coords[a] - space.coords[c], axis=1))
    return int(np.sum(dac > dab + dbc + tol))
