"""Point-cloud quality metrics: Chamfer distance, F-score, clutter point ratio.

Nearest neighbours come from a uniform spatial hash grid.  Distances are
computed as ``sqrt(dx*dx + dy*dy + dz*dz)`` in that order so results are
bit-identical to a plain double loop.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import asdict, dataclass

import numpy as np

from .errors import UndefinedMetricError

DEFAULT_ZETA = 0.5
DEFAULT_TAU = 0.5


class SpatialHashGrid:
    """Exact nearest-neighbour index over a fixed point set."""

    def __init__(self, points, cell: float):
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        if not cell > 0:
            raise ValueError("cell size must be positive")
        self.points = pts
        self.cell = float(cell)
        self._buckets: dict[tuple[int, int, int], list[int]] = defaultdict(list)
        keys = np.floor(pts / self.cell).astype(np.int64)
        for i, key in enumerate(map(tuple, keys.tolist())):
            self._buckets[key].append(i)
        self._buckets = {k: np.array(v, dtype=np.int64) for k, v in self._buckets.items()}
        self._bucket_keys = np.array(list(self._buckets), dtype=np.int64).reshape(-1, 3)
        self._bucket_members = list(self._buckets.values())

    def _key(self, q) -> np.ndarray:
        return np.floor(np.asarray(q, dtype=float) / self.cell).astype(np.int64)

    def _distances(self, q, idx) -> np.ndarray:
        d = self.points[idx] - q
        return np.sqrt(d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1] + d[:, 2] * d[:, 2])

    def _rings(self, q):
        """Occupied buckets grouped by Chebyshev ring distance from ``q``'s cell."""
        ring = np.abs(self._bucket_keys - self._key(q)).max(axis=1)
        order = np.argsort(ring, kind="stable")
        return ring[order], order

    def nearest_distance(self, q) -> float:
        """Distance from ``q`` to its nearest indexed point.

        Occupied cells are visited ring by ring; after ring ``k`` every point
        closer than ``k * cell`` has been seen, so the search stops once the
        best distance is within that radius.
        """
        if not len(self.points):
            return math.inf
        q = np.asarray(q, dtype=float)
        rings, order = self._rings(q)
        best = math.inf
        i, n = 0, len(order)
        while i < n:
            k = rings[i]
            j = int(np.searchsorted(rings, k, side="right"))
            idx = np.concatenate([self._bucket_members[b] for b in order[i:j]])
            best = min(best, float(self._distances(q, idx).min()))
            if best <= k * self.cell:
                break
            i = j
        return best

    def any_within(self, q, radius: float) -> bool:
        """True when some indexed point lies at distance ``<= radius``."""
        if not len(self.points):
            return False
        q = np.asarray(q, dtype=float)
        rings, order = self._rings(q)
        reach = max(1, math.ceil(radius / self.cell))
        near = order[: int(np.searchsorted(rings, reach, side="right"))]
        if not len(near):
            return False
        idx = np.concatenate([self._bucket_members[b] for b in near])
        return bool(np.any(self._distances(q, idx) <= radius))


def _cloud(P, name: str) -> np.ndarray:
    pts = np.asarray(P, dtype=float).reshape(-1, 3)
    if pts.shape[0] == 0:
        raise UndefinedMetricError(f"point cloud {name} is empty")
    return pts


def nearest_distances(P, Q, cell: float | None = None) -> np.ndarray:
    """Distance from every point of ``P`` to its nearest neighbour in ``Q``."""
    P = np.asarray(P, dtype=float).reshape(-1, 3)
    Q = np.asarray(Q, dtype=float).reshape(-1, 3)
    grid = SpatialHashGrid(Q, cell or max(DEFAULT_TAU, DEFAULT_ZETA))
    return np.array([grid.nearest_distance(p) for p in P])


def _fraction_within(P, Q, radius: float) -> int:
    grid = SpatialHashGrid(Q, radius)
    return sum(grid.any_within(p, radius) for p in P)


def chamfer_distance(P, Q) -> float:
    """Symmetric mean of unsquared nearest-neighbour distances."""
    P = _cloud(P, "P")
    Q = _cloud(Q, "Q")
    fwd = math.fsum(nearest_distances(P, Q)) / len(P)
    bwd = math.fsum(nearest_distances(Q, P)) / len(Q)
    return fwd + bwd


def f_score(P, Q, tau: float = DEFAULT_TAU) -> tuple[float, float, float]:
    """Returns ``(f, precision, recall)``; a match means distance ``<= tau``."""
    if not tau > 0:
        raise ValueError("tau must be positive")
    P = _cloud(P, "P")
    Q = _cloud(Q, "Q")
    precision = _fraction_within(P, Q, tau) / len(P)
    recall = _fraction_within(Q, P, tau) / len(Q)
    if precision + recall == 0:
        return 0.0, precision, recall
    return 2 * precision * recall / (precision + recall), precision, recall


def cpr(P, Q, zeta: float = DEFAULT_ZETA) -> float:
    """Fraction of ``P`` farther than ``zeta`` from every point of ``Q``.

    An empty ``Q`` makes every point clutter, so the ratio is 1.
    """
    P = _cloud(P, "P")
    Q = np.asarray(Q, dtype=float).reshape(-1, 3)
    if Q.shape[0] == 0:
        return 1.0
    return (len(P) - _fraction_within(P, Q, zeta)) / len(P)


@dataclass(frozen=True)
class MetricReport:
    chamfer: float
    f_score: float
    precision: float
    recall: float
    cpr: float
    tau: float
    zeta: float
    empty_reference: bool = False

    def as_dict(self) -> dict:
        return asdict(self)


def evaluate(P, Q, tau: float = DEFAULT_TAU, zeta: float = DEFAULT_ZETA) -> MetricReport:
    P = _cloud(P, "P")
    Q = np.asarray(Q, dtype=float).reshape(-1, 3)
    if Q.shape[0] == 0:
        return MetricReport(math.inf, 0.0, 0.0, 0.0, 1.0, tau, zeta, empty_reference=True)
    f, prec, rec = f_score(P, Q, tau)
    return MetricReport(chamfer_distance(P, Q), f, prec, rec, cpr(P, Q, zeta), tau, zeta)
