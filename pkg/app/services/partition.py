"""Histogram density estimator, equal-measure partition and transport map."""
import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from app.core.config import settings
from app.core.errors import DomainError, InputError, PartitionError
from app.services.geometry import DataCloud, Domain, GridIndex, as_point, as_points, distances

logger = logging.getLogger(__name__)

BISECTION_STEPS = 42


def _grid_segments(domain: Domain, origin: np.ndarray, side: np.ndarray, shape: Tuple[int, ...], subgrid: int):
    """
    Quadrature segments for every grid box, exact along the first axis.

    Each box gets subgrid**(N-1) midpoint lines parallel to axis 0; every
    line contributes the (up to two) intervals where it meets the domain,
    clipped to the box. Returns flat arrays (box id, lo, hi, weight,
    prefix points).
    """
    dim = domain.dim
    total = int(np.prod(shape))
    multi = np.stack(np.unravel_index(np.arange(total), shape), axis=1)
    box_lo = origin + multi * side
    if dim == 1:
        offsets = np.zeros((1, 0))
        weight = 1.0
    else:
        frac = (np.arange(subgrid) + 0.5) / subgrid
        grids = np.meshgrid(*([frac] * (dim - 1)), indexing="ij")
        offsets = np.stack([g.ravel() for g in grids], axis=1)
        weight = float(np.prod(side[1:])) / len(offsets)

    boxes, los, his, weights, prefixes = [], [], [], [], []
    step = max(1, 2_000_000 // max(1, len(offsets)))
    for start in range(0, total, step):
        ids = np.arange(start, min(start + step, total))
        prefix = np.repeat(box_lo[ids], len(offsets), axis=0)
        if dim > 1:
            prefix[:, 1:] += np.tile(offsets, (len(ids), 1)) * side[1:]
        owner = np.repeat(ids, len(offsets))
        lo, hi = domain.chords(prefix, axis=0)
        a0 = box_lo[owner, 0][:, None]
        b0 = a0 + side[0]
        lo = np.maximum(lo, a0)
        hi = np.minimum(hi, b0)
        keep = hi > lo
        rows, slots = np.nonzero(keep)
        boxes.append(owner[rows])
        los.append(lo[rows, slots])
        his.append(hi[rows, slots])
        prefixes.append(prefix[rows])
    box = np.concatenate(boxes)
    return (
        box,
        np.concatenate(los),
        np.concatenate(his),
        np.full(len(box), weight),
        np.concatenate(prefixes) if prefixes else np.zeros((0, dim)),
    )


@dataclass(eq=False)
class HistogramDensity:
    """Piecewise-constant density estimate phi_delta on grid cells clipped to the domain."""

    cloud: DataCloud
    delta: float
    origin: np.ndarray
    side: np.ndarray
    grid_shape: Tuple[int, ...]
    box_cell: np.ndarray
    measure: np.ndarray
    count: np.ndarray
    phi: np.ndarray
    sup_error: float
    merged: int
    seg_ptr: np.ndarray
    seg_lo: np.ndarray
    seg_hi: np.ndarray
    seg_weight: np.ndarray
    cell_center: np.ndarray

    @property
    def n_cells(self) -> int:
        return len(self.measure)

    def box_of(self, points: np.ndarray) -> np.ndarray:
        keys = np.floor((points - self.origin) / self.side).astype(np.int64)
        keys = np.clip(keys, 0, np.array(self.grid_shape) - 1)
        return np.ravel_multi_index(tuple(keys.T), self.grid_shape)

    def cell_of(self, x) -> np.ndarray:
        """Histogram cell id for each point; -1 for points in no cell."""
        pts = as_points(x, self.cloud.dim)
        return self.box_cell[self.box_of(pts)]

    def evaluate(self, x) -> np.ndarray:
        """phi_delta at arbitrary points (zero outside the domain)."""
        pts = as_points(x, self.cloud.dim)
        cell = self.cell_of(pts)
        values = np.where(cell >= 0, self.phi[np.maximum(cell, 0)], 0.0)
        return np.where(self.cloud.domain.contains(pts), values, 0.0)

    def axis_range(self, cells: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Extent of each cell along the first axis."""
        lo = np.minimum.reduceat(self.seg_lo, self.seg_ptr[cells])
        hi = np.maximum.reduceat(self.seg_hi, self.seg_ptr[cells])
        return lo, hi

    def cumulative(self, cells: np.ndarray, t: np.ndarray) -> np.ndarray:
        """Lebesgue measure of {y in cell : y_1 < t} for each (cell, t) pair."""
        starts = self.seg_ptr[cells]
        counts = self.seg_ptr[cells + 1] - starts
        rows = np.repeat(np.arange(len(cells)), counts)
        offsets = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
        idx = np.repeat(starts, counts) + offsets
        length = np.clip(t[rows] - self.seg_lo[idx], 0.0, self.seg_hi[idx] - self.seg_lo[idx])
        return np.bincount(rows, weights=self.seg_weight[idx] * length, minlength=len(cells))

    def total_mass(self) -> float:
        return float(np.sum(self.phi * self.measure))

    def rows(self) -> List[Dict]:
        return [
            {"cell_id": c, "count": int(self.count[c]), "measure": float(self.measure[c]), "phi_delta": float(self.phi[c])}
            for c in range(self.n_cells)
        ]


def build_histogram(cloud: DataCloud, delta: float, side_factor: Optional[float] = None) -> HistogramDensity:
    """
    Histogram density estimator on a grid of side c*delta clipped to the domain.

    Cells whose clipped measure falls below a fraction of delta**N are merged
    into their largest face neighbor.
    """
    if delta <= 0:
        raise InputError("Histogram scale delta must be positive")
    domain = cloud.domain
    dim = domain.dim
    factor = side_factor or settings.histogram_side_factor or 1.0 / math.sqrt(dim)
    lo, hi = domain.bounding_box()
    shape = tuple(int(s) for s in np.maximum(1, np.ceil((hi - lo) / (factor * delta) - 1e-9)))
    side = (hi - lo) / np.array(shape)
    total = int(np.prod(shape))

    seg_box, seg_lo, seg_hi, seg_w, seg_prefix = _grid_segments(domain, lo, side, shape, settings.cell_subgrid_points)
    box_measure = np.bincount(seg_box, weights=seg_w * (seg_hi - seg_lo), minlength=total)

    keys = np.clip(np.floor((cloud.points - lo) / side).astype(np.int64), 0, np.array(shape) - 1)
    point_box = np.ravel_multi_index(tuple(keys.T), shape)
    box_count = np.bincount(point_box, minlength=total)

    active = (box_measure > 0) | (box_count > 0)
    if not np.any(box_measure > 0):
        raise PartitionError("The domain meets no grid cell")

    threshold = settings.tiny_cell_fraction * delta ** dim
    target = np.arange(total)
    tiny = np.flatnonzero(active & (box_measure < threshold))
    for b in tiny:
        multi = np.array(np.unravel_index(b, shape))
        best = None
        for axis in range(dim):
            for step in (-1, 1):
                nb = multi.copy()
                nb[axis] += step
                if nb[axis] < 0 or nb[axis] >= shape[axis]:
                    continue
                nid = int(np.ravel_multi_index(tuple(nb), shape))
                if not active[nid] or box_measure[nid] <= 0:
                    continue
                rank = (box_measure[nid], -nid)
                if rank > (box_measure[b], -b) and (best is None or rank > best[0]):
                    best = (rank, nid)
        if best is not None:
            target[b] = best[1]
        elif box_measure[b] <= 0:
            # resident in a box the quadrature sees as empty
            positive = np.flatnonzero(box_measure > 0)
            centers = lo + (np.stack(np.unravel_index(positive, shape), axis=1) + 0.5) * side
            target[b] = positive[int(np.argmin(distances(centers, lo + (multi + 0.5) * side)))]
    while True:
        nxt = target[target]
        if np.array_equal(nxt, target):
            break
        target = nxt
    merged = int(np.sum(active & (target != np.arange(total))))
    if merged:
        logger.info(f"Merged {merged} tiny clipped cells into neighbors")

    roots = np.flatnonzero(active & (target == np.arange(total)))
    root_cell = np.full(total, -1, dtype=np.int64)
    root_cell[roots] = np.arange(len(roots))
    box_cell = np.full(total, -1, dtype=np.int64)
    box_cell[active] = root_cell[target[active]]

    n_cells = len(roots)
    measure = np.bincount(box_cell[active], weights=box_measure[active], minlength=n_cells)
    count = np.bincount(box_cell[point_box], minlength=n_cells)
    with np.errstate(divide="ignore", invalid="ignore"):
        phi = np.where(measure > 0, count / (cloud.n * measure), 0.0)

    seg_cell = box_cell[seg_box]
    keep = seg_cell >= 0
    order = np.argsort(seg_cell[keep], kind="stable")
    seg_cell = seg_cell[keep][order]
    seg_lo, seg_hi, seg_w = seg_lo[keep][order], seg_hi[keep][order], seg_w[keep][order]
    seg_prefix = seg_prefix[keep][order]
    seg_ptr = np.concatenate([[0], np.cumsum(np.bincount(seg_cell, minlength=n_cells))]).astype(np.int64)

    probe = seg_prefix.copy()
    probe[:, 0] = 0.5 * (seg_lo + seg_hi)
    sup_error = float(np.max(np.abs(phi[seg_cell] - cloud.density.evaluate(probe)))) if len(probe) else 0.0

    box_multi = np.stack(np.unravel_index(np.arange(total), shape), axis=1)
    box_center = lo + (box_multi + 0.5) * side
    center_sum = np.zeros((n_cells, dim))
    np.add.at(center_sum, box_cell[active], box_center[active])
    members = np.bincount(box_cell[active], minlength=n_cells)
    cell_center = center_sum / members[:, None]

    logger.info(
        f"Histogram: {n_cells} cells of side {side.min():.4g}, {int(np.sum(count == 0))} empty, "
        f"sup|phi_delta - phi| = {sup_error:.4g}"
    )
    return HistogramDensity(
        cloud=cloud,
        delta=float(delta),
        origin=lo,
        side=side,
        grid_shape=shape,
        box_cell=box_cell,
        measure=measure,
        count=count,
        phi=phi,
        sup_error=sup_error,
        merged=merged,
        seg_ptr=seg_ptr,
        seg_lo=seg_lo,
        seg_hi=seg_hi,
        seg_weight=seg_w,
        cell_center=cell_center,
    )


@dataclass(eq=False)
class TransportMap:
    """Partition {U_i} of the domain into slabs and the projection x -> Z_i."""

    cloud: DataCloud
    histogram: HistogramDensity
    delta: float
    exponent_a: float
    lam: float
    c0: float
    event_flag: bool
    empty_cells: int
    merged_cells: int
    fragment_cell: np.ndarray
    fragment_lo: np.ndarray
    fragment_hi: np.ndarray
    fragment_owner: np.ndarray
    fragment_mass: np.ndarray
    cell_fragment_ptr: np.ndarray
    _keys: np.ndarray
    _stride: float
    _exact: Dict[bytes, int]

    @property
    def owner_mass(self) -> np.ndarray:
        """mu_epsilon(U_i) for every vertex."""
        return np.bincount(self.fragment_owner, weights=self.fragment_mass, minlength=self.cloud.n)

    @property
    def probability_exponent(self) -> float:
        """Raw exponent n * delta**N * lambda**2 of the partition event bound."""
        return self.cloud.n * self.delta ** self.cloud.dim * self.lam ** 2

    def lookup(self, x) -> np.ndarray:
        """Vertex index T(x) for each point; every point must lie in the domain."""
        pts = as_points(x, self.cloud.dim)
        inside = self.cloud.domain.contains(pts)
        if not np.all(inside):
            bad = pts[np.flatnonzero(~inside)[0]]
            raise DomainError(f"Point {bad.tolist()} is outside the domain")
        return self._lookup_inside(pts)

    def _lookup_inside(self, pts: np.ndarray) -> np.ndarray:
        result = np.full(len(pts), -1, dtype=np.int64)
        cell = self.histogram.cell_of(pts)
        ok = cell >= 0
        if np.any(ok):
            c = cell[ok]
            q = (pts[ok, 0] - self.histogram.origin[0]) + c * self._stride
            pos = np.searchsorted(self._keys, q, side="right") - 1
            pos = np.clip(pos, self.cell_fragment_ptr[c], self.cell_fragment_ptr[c + 1] - 1)
            result[ok] = self.fragment_owner[pos]
        if not np.all(ok):
            # slivers the cell quadrature did not resolve
            result[~ok] = self.cloud.index.nearest(pts[~ok])
        for row, point in enumerate(pts):
            hit = self._exact.get(point.tobytes())
            if hit is not None:
                result[row] = hit
        return result

    def partition_dump(self) -> Dict:
        cells = [
            {
                "owner": int(self.fragment_owner[f]),
                "parent_cell": int(self.fragment_cell[f]),
                "slab_lo": float(self.fragment_lo[f]),
                "slab_hi": float(self.fragment_hi[f]),
                "mass": float(self.fragment_mass[f]),
            }
            for f in range(len(self.fragment_owner))
        ]
        return {
            "delta": self.delta,
            "event_flag": bool(self.event_flag),
            "empty_cells": self.empty_cells,
            "merged_cells": self.merged_cells,
            "cells": cells,
        }


def _split_points(hist: HistogramDensity, cells: np.ndarray, targets: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Bisection for t with cumulative(cell, t) = target."""
    a, b = lo.copy(), hi.copy()
    for _ in range(BISECTION_STEPS):
        mid = 0.5 * (a + b)
        below = hist.cumulative(cells, mid) < targets
        a = np.where(below, mid, a)
        b = np.where(below, b, mid)
    return 0.5 * (a + b)


def build_transport(
    cloud: DataCloud,
    delta: float,
    exponent_a: float = 0.5,
    c0: Optional[float] = None,
    fallback: bool = True,
    histogram: Optional[HistogramDensity] = None,
) -> TransportMap:
    """
    Equal-measure split of every histogram cell into slabs along the first axis.

    Residents of a cell are ordered by first coordinate (ties by index) and
    receive the slabs in that order. Empty cells go to the nearest resident
    of the nearest nonempty cell when fallback is enabled.
    """
    if exponent_a < 0:
        raise InputError("Exponent a must be nonnegative")
    hist = histogram or build_histogram(cloud, delta)
    c0 = settings.partition_c0 if c0 is None else c0
    lam = delta ** ((2.0 + exponent_a) / (3.0 + exponent_a))
    n = cloud.n

    point_cell = hist.cell_of(cloud.points)
    order = np.lexsort((np.arange(n), cloud.points[:, 0], point_cell))
    sorted_cell = point_cell[order]
    first_of_cell = np.searchsorted(sorted_cell, np.arange(hist.n_cells), side="left")
    rank = np.arange(n) - first_of_cell[sorted_cell]
    per_cell = hist.count[sorted_cell]

    cell_lo, cell_hi = hist.axis_range(np.arange(hist.n_cells))
    targets_lo = hist.measure[sorted_cell] * rank / per_cell
    targets_hi = hist.measure[sorted_cell] * (rank + 1) / per_cell
    slab_lo = np.where(rank == 0, cell_lo[sorted_cell],
                       _split_points(hist, sorted_cell, targets_lo, cell_lo[sorted_cell], cell_hi[sorted_cell]))
    slab_hi = np.where(rank + 1 == per_cell, cell_hi[sorted_cell],
                       _split_points(hist, sorted_cell, targets_hi, cell_lo[sorted_cell], cell_hi[sorted_cell]))
    slab_mass = hist.phi[sorted_cell] * (
        hist.cumulative(sorted_cell, slab_hi) - hist.cumulative(sorted_cell, slab_lo)
    )

    empty = np.flatnonzero(hist.count == 0)
    frag_cell = [sorted_cell]
    frag_lo, frag_hi, frag_owner, frag_mass = [slab_lo], [slab_hi], [order], [slab_mass]
    if len(empty):
        if not fallback:
            raise PartitionError(f"{len(empty)} histogram cells hold no data point")
        logger.warning(f"{len(empty)} empty histogram cells attached to nearest residents; event flag cleared")
        nonempty = np.flatnonzero(hist.count > 0)
        centers = hist.cell_center[nonempty]
        index = GridIndex(centers, float(np.max(hist.side)))
        host = nonempty[index.nearest(hist.cell_center[empty])]
        owners = []
        for e, h in zip(empty, host):
            residents = order[first_of_cell[h]:first_of_cell[h] + hist.count[h]]
            d = distances(cloud.points[residents], hist.cell_center[e])
            owners.append(residents[int(np.argmin(d))])
        frag_cell.append(empty)
        frag_lo.append(cell_lo[empty])
        frag_hi.append(cell_hi[empty])
        frag_owner.append(np.array(owners, dtype=np.int64))
        frag_mass.append(np.zeros(len(empty)))

    fragment_cell = np.concatenate(frag_cell)
    fragment_lo = np.concatenate(frag_lo)
    arrange = np.lexsort((fragment_lo, fragment_cell))
    fragment_cell = fragment_cell[arrange]
    fragment_lo = fragment_lo[arrange]
    fragment_hi = np.concatenate(frag_hi)[arrange]
    fragment_owner = np.concatenate(frag_owner)[arrange]
    fragment_mass = np.concatenate(frag_mass)[arrange]
    cell_fragment_ptr = np.concatenate(
        [[0], np.cumsum(np.bincount(fragment_cell, minlength=hist.n_cells))]
    ).astype(np.int64)

    lo, hi = cloud.domain.bounding_box()
    stride = float(hi[0] - lo[0]) + 1.0
    keys = (fragment_lo - hist.origin[0]) + fragment_cell * stride

    event_flag = bool(len(empty) == 0 and hist.sup_error <= c0 * (lam + delta))
    if not event_flag:
        logger.warning(
            f"Partition event does not hold: empty={len(empty)}, "
            f"sup error {hist.sup_error:.4g} vs bound {c0 * (lam + delta):.4g}"
        )

    exact = {cloud.points[i].tobytes(): i for i in range(n)}
    logger.info(f"Transport map built with {len(fragment_owner)} fragments, delta={delta:.4g}")
    return TransportMap(
        cloud=cloud,
        histogram=hist,
        delta=float(delta),
        exponent_a=float(exponent_a),
        lam=float(lam),
        c0=float(c0),
        event_flag=event_flag,
        empty_cells=int(len(empty)),
        merged_cells=int(hist.merged),
        fragment_cell=fragment_cell,
        fragment_lo=fragment_lo,
        fragment_hi=fragment_hi,
        fragment_owner=fragment_owner,
        fragment_mass=fragment_mass,
        cell_fragment_ptr=cell_fragment_ptr,
        _keys=keys,
        _stride=stride,
        _exact=exact,
    )


def transport(tmap: TransportMap, x) -> int:
    """T(x) for a single point x in the domain."""
    point = as_point(x, tmap.cloud.dim)
    return int(tmap.lookup(point.reshape(1, -1))[0])


class Extension:
    """Piecewise-constant extension u∘T of a graph function to the domain."""

    def __init__(self, tmap: TransportMap, values: np.ndarray):
        self.tmap = tmap
        self.values = np.asarray(values, dtype=float)
        self.dim = tmap.cloud.dim

    def __call__(self, x) -> np.ndarray:
        pts = as_points(x, self.dim)
        idx = np.empty(len(pts), dtype=np.int64)
        inside = self.tmap.cloud.domain.contains(pts)
        if np.any(inside):
            idx[inside] = self.tmap._lookup_inside(pts[inside])
        if not np.all(inside):
            # outside the domain the extension keeps its boundary-strip values
            idx[~inside] = self.tmap.cloud.index.nearest(pts[~inside])
        return self.values[idx]

    def candidate_points(self, center: np.ndarray, radius: float) -> np.ndarray:
        """Cloud points within the ball; the extension's extrema sit on their cells."""
        cloud = self.tmap.cloud
        return cloud.points[cloud.index.query(center, radius)]

    def integrate(self) -> float:
        """Integral of the extension against phi_delta."""
        return float(np.sum(self.values[self.tmap.fragment_owner] * self.tmap.fragment_mass))


def extend(tmap: TransportMap, u) -> Extension:
    """Extension of a graph function (array of vertex values) through the transport map."""
    values = np.asarray(getattr(u, "values", u), dtype=float)
    if values.shape != (tmap.cloud.n,):
        raise InputError(f"Graph function has {values.shape} values, cloud has {tmap.cloud.n} vertices")
    return Extension(tmap, values)
