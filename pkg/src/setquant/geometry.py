"""Axis-aligned boxes, delta-covers and the distance predicates built on them.

Everything here is plain Euclidean geometry under the sup norm: boxes with
signed distances, regular center lattices whose closed infinity-norm balls
cover a box, and the bookkeeping needed to shrink such a cover in place
(refinement keeps every old center at its old ordinal so external structures
indexed by ordinal survive a resolution change).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "BoxRegion",
    "Cell",
    "DeltaCover",
    "signed_distance",
    "build_cover",
    "cover_distance",
    "nearest_center",
    "refine_cover",
    "boundary_band",
    "BandPredicate",
    "volume_estimate",
    "save_cover_csv",
    "load_cover_csv",
]


@dataclass(frozen=True)
class BoxRegion:
    """Axis-aligned box given by per-dimension lower/upper bounds."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        if lo.ndim != 1 or hi.shape != lo.shape:
            raise ValueError("bounds must be 1-d arrays of equal length")
        if not np.all(lo < hi):
            raise ValueError("each lower bound must be strictly below its upper bound")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    @property
    def widths(self) -> np.ndarray:
        return self.upper - self.lower

    @property
    def volume(self) -> float:
        return float(np.prod(self.widths))

    def contains(self, point, tol: float = 0.0) -> bool:
        p = np.asarray(point, dtype=float)
        return bool(np.all(p >= self.lower - tol) and np.all(p <= self.upper + tol))

    def clip(self, point) -> np.ndarray:
        return np.minimum(np.maximum(np.asarray(point, dtype=float), self.lower), self.upper)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(self.lower, self.upper)


@dataclass(frozen=True)
class Cell:
    """One cover cell: a center plus the half-width of its infinity-norm ball."""

    center: np.ndarray
    radius: float

    def box(self) -> BoxRegion:
        c = np.asarray(self.center, dtype=float)
        return BoxRegion(c - self.radius, c + self.radius)


def signed_distance(point, box: BoxRegion) -> float:
    """Sup-norm signed distance from ``point`` to the boundary of ``box``.

    Negative strictly inside, zero on the boundary, positive outside.  For an
    outside point this is the usual infinity-norm distance to the box; for an
    inside point it is minus the distance to the nearest facet.
    """
    p = np.asarray(point, dtype=float)
    below = box.lower - p
    above = p - box.upper
    outside = np.maximum(np.maximum(below, above), 0.0)
    if np.any(outside > 0.0):
        return float(outside.max())
    # inside: distance to the closest facet along any axis
    slack = np.minimum(p - box.lower, box.upper - p)
    return float(-slack.min())


def _axis_centers(lo: float, hi: float, delta: float) -> list[float]:
    """Lattice of 1-d centers with pitch ``2*delta`` whose balls cover [lo, hi]."""
    width = hi - lo
    if width < 2.0 * delta:
        return [0.5 * (lo + hi)]
    out = []
    c = lo + delta
    while c <= hi - delta + 1e-12:
        out.append(c)
        c += 2.0 * delta
    # the trailing partial cell gets a center clamped inward so its ball
    # still reaches the upper bound without the lattice overshooting it
    if out[-1] < hi - delta - 1e-12:
        out.append(hi - delta)
    return out


class DeltaCover:
    """A finite set of centers whose closed ``radius``-balls cover a region.

    Centers are held in append-only ordinal order with an activity mask;
    deactivation never renumbers, so reach graphs and replay buffers that
    store ordinals stay valid across pruning and refinement.
    """

    def __init__(self, centers, radius: float, domain: BoxRegion, active=None):
        arr = np.asarray(centers, dtype=float)
        if arr.ndim == 1:
            arr = arr.reshape(-1, 1)
        if arr.ndim != 2:
            raise ValueError("centers must be an (m, n) array")
        self._centers = [tuple(row) for row in arr]
        self.radius = float(radius)
        self.domain = domain
        if active is None:
            self.active = np.ones(len(self._centers), dtype=bool)
        else:
            self.active = np.asarray(active, dtype=bool).copy()
        self._array = arr.copy() if arr.size else arr.reshape(0, domain.dim)
        self._seen = {self._key(c): i for i, c in enumerate(self._centers)}

    @staticmethod
    def _key(pt) -> tuple:
        return tuple(round(float(x), 10) for x in pt)

    # -- basic accessors -------------------------------------------------

    def __len__(self) -> int:
        return len(self._centers)

    @property
    def dim(self) -> int:
        return self.domain.dim

    @property
    def centers(self) -> np.ndarray:
        """All centers ever added, ordinal order, shape (m, n)."""
        return self._array

    def active_indices(self) -> np.ndarray:
        return np.flatnonzero(self.active)

    def active_centers(self) -> np.ndarray:
        return self._array[self.active]

    def n_active(self) -> int:
        return int(self.active.sum())

    def cell(self, ordinal: int) -> Cell:
        return Cell(self._array[ordinal], self.radius)

    # -- mutation ---------------------------------------------------------

    def append(self, point) -> int:
        """Add a new active center; returns its ordinal (existing ordinal if duplicate).

        A duplicate of a deactivated center reactivates it — that is exactly
        the hole-refilling move the discovery rule relies on.
        """
        pt = tuple(float(x) for x in np.asarray(point, dtype=float))
        key = self._key(pt)
        if key in self._seen:
            i = self._seen[key]
            self.active[i] = True
            return i
        self._centers.append(pt)
        self._seen[key] = len(self._centers) - 1
        self._array = np.vstack([self._array, np.asarray(pt)]) if self._array.size else np.asarray([pt])
        self.active = np.append(self.active, True)
        return len(self._centers) - 1

    def deactivate(self, ordinals) -> None:
        self.active[np.asarray(ordinals, dtype=int)] = False

    # -- queries ----------------------------------------------------------

    def distances(self, point) -> np.ndarray:
        """Sup-norm distances from ``point`` to every center (active or not)."""
        p = np.asarray(point, dtype=float)
        return np.abs(self._array - p).max(axis=1)

    def batch_distances(self, points) -> np.ndarray:
        """Min sup-norm distance from each row of ``points`` to the active centers."""
        act = self.active_centers()
        if act.shape[0] == 0:
            raise ValueError("cover has no active centers")
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return np.abs(pts[:, None, :] - act[None, :, :]).max(axis=2).min(axis=1)


def build_cover(region: BoxRegion, delta: float) -> DeltaCover:
    """Regular lattice cover of ``region`` with cell half-width ``delta``.

    Pitch is ``2*delta`` starting at ``lower + delta``; a trailing partial row
    per axis is clamped inward to ``upper - delta``.  An axis narrower than one
    full cell gets a single midpoint center (its ball may overhang the region;
    volume accounting clips the overhang).
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    axes = [_axis_centers(region.lower[i], region.upper[i], delta) for i in range(region.dim)]
    grids = np.meshgrid(*axes, indexing="ij")
    centers = np.stack([g.ravel() for g in grids], axis=-1)
    return DeltaCover(centers, delta, region)


def nearest_center(cover: DeltaCover, point) -> tuple[int, float]:
    """(ordinal, distance) of the nearest active center; ties pick the lowest ordinal.

    Raises ``ValueError`` on an empty active set rather than returning an
    infinite distance, so callers cannot mistake emptiness for remoteness.
    """
    idx = cover.active_indices()
    if idx.size == 0:
        raise ValueError("cover has no active centers")
    d = np.abs(cover.centers[idx] - np.asarray(point, dtype=float)).max(axis=1)
    k = int(np.argmin(d))  # argmin returns the first minimum: lowest ordinal
    return int(idx[k]), float(d[k])


def cover_distance(cover: DeltaCover, point) -> float:
    """Sup-norm distance from ``point`` to the nearest active center."""
    return nearest_center(cover, point)[1]


def refine_cover(cover: DeltaCover, gamma: float, excluded=None, margin: float = 0.0) -> DeltaCover:
    """Shrink a cover's resolution by ``gamma``, preserving old ordinals.

    Every old center keeps its ordinal and activity flag.  Each *active* cell
    is re-covered by a child lattice at radius ``gamma * radius`` (clipped to
    the domain); children within ``margin`` of any point in ``excluded`` are
    dropped, as are exact duplicates of existing centers.
    """
    if not (0.0 < gamma < 1.0):
        raise ValueError("gamma must lie in (0, 1)")
    new_radius = gamma * cover.radius
    old = cover.centers
    out = DeltaCover(old.copy(), new_radius, cover.domain, active=cover.active)
    excl = None
    if excluded is not None:
        excl = np.atleast_2d(np.asarray(excluded, dtype=float))
        if excl.size == 0:
            excl = None
    for i in cover.active_indices():
        cell_box = cover.cell(int(i)).box()
        lo = np.maximum(cell_box.lower, cover.domain.lower)
        hi = np.minimum(cell_box.upper, cover.domain.upper)
        child = build_cover(BoxRegion(lo, hi), new_radius)
        for pt in child.centers:
            if excl is not None:
                if np.abs(excl - pt).max(axis=1).min() <= margin:
                    continue
            key = DeltaCover._key(pt)
            if key in out._seen:
                continue
            out.append(pt)
    return out


class BandPredicate:
    """Membership test for the inner boundary band of a box.

    Accepts points at most ``sigma_bar`` inside the boundary (and on it);
    rejects strictly deeper interior points and everything outside.
    """

    def __init__(self, box: BoxRegion, sigma_bar: float):
        self.box = box
        self.sigma_bar = float(sigma_bar)

    def __call__(self, point) -> bool:
        d = signed_distance(point, self.box)
        return -self.sigma_bar <= d <= 0.0


def boundary_band(box: BoxRegion, sigma_bar: float) -> BandPredicate:
    if sigma_bar < 0:
        raise ValueError("sigma_bar must be non-negative")
    return BandPredicate(box, sigma_bar)


def _union_volume(lo: np.ndarray, hi: np.ndarray) -> float:
    """Exact volume of a union of axis-aligned boxes (coordinate sweep)."""
    if lo.shape[0] == 0:
        return 0.0
    if lo.shape[1] == 1:
        order = np.argsort(lo[:, 0], kind="stable")
        total = 0.0
        cur_lo = cur_hi = None
        for i in order:
            a, b = float(lo[i, 0]), float(hi[i, 0])
            if cur_hi is None or a > cur_hi:
                if cur_hi is not None:
                    total += cur_hi - cur_lo
                cur_lo, cur_hi = a, b
            elif b > cur_hi:
                cur_hi = b
        total += cur_hi - cur_lo
        return total
    xs = np.unique(np.concatenate([lo[:, 0], hi[:, 0]]))
    total = 0.0
    for x0, x1 in zip(xs[:-1], xs[1:]):
        sel = (lo[:, 0] < x1) & (hi[:, 0] > x0)
        if np.any(sel):
            total += (x1 - x0) * _union_volume(lo[sel, 1:], hi[sel, 1:])
    return float(total)


def volume_estimate(cover: DeltaCover) -> float:
    """Volume of the union of the active cells, clipped to the cover's domain.

    Union, not sum: refinement keeps the previous generation of centers, whose
    shrunken balls overlap their own children, and discovered off-lattice
    centers overlap the lattice — double counting would report more volume
    than the domain even holds.
    """
    idx = cover.active_indices()
    if idx.size == 0:
        return 0.0
    lo = np.maximum(cover.centers[idx] - cover.radius, cover.domain.lower)
    hi = np.minimum(cover.centers[idx] + cover.radius, cover.domain.upper)
    keep = np.all(hi > lo, axis=1)
    return _union_volume(lo[keep], hi[keep])


# -- serialization ---------------------------------------------------------


def _fmt(x: float) -> str:
    """Fixed-point decimal with 9 significant digits (no exponent for sane ranges)."""
    s = f"{x:.9g}"
    if "e" in s or "E" in s:
        s = f"{x:.12f}".rstrip("0").rstrip(".")
    return s


def save_cover_csv(cover: DeltaCover, path, flags=None) -> None:
    """Write a cover as CSV: header ``dim,delta``, its values, then one row per center.

    ``flags`` (optional, aligned with ordinals) appends a 0/1 column per row;
    used by the ground-truth artifacts to mark membership.
    """
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["dim", "delta"])
        w.writerow([cover.dim, _fmt(cover.radius)])
        for i, row in enumerate(cover.centers):
            rec = [_fmt(v) for v in row]
            if flags is not None:
                rec.append(str(int(flags[i])))
            w.writerow(rec)


def load_cover_csv(path, domain: BoxRegion | None = None):
    """Read a cover CSV back; returns (DeltaCover, flags-or-None).

    When the rows carry a trailing flag column the flags come back as a bool
    array and double as the active mask.
    """
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        if [h.strip() for h in header] != ["dim", "delta"]:
            raise ValueError(f"unexpected cover header: {header!r}")
        dim_s, delta_s = next(r)
        dim, delta = int(dim_s), float(delta_s)
        rows, flags = [], []
        has_flags = None
        for rec in r:
            if not rec:
                continue
            if has_flags is None:
                has_flags = len(rec) == dim + 1
            vals = [float(v) for v in rec[:dim]]
            rows.append(vals)
            if has_flags:
                flags.append(bool(int(rec[dim])))
    arr = np.asarray(rows, dtype=float)
    if domain is None:
        lo = arr.min(axis=0) - delta
        hi = arr.max(axis=0) + delta
        domain = BoxRegion(lo, hi)
    mask = np.asarray(flags, dtype=bool) if has_flags else None
    cover = DeltaCover(arr, delta, domain, active=mask if mask is not None else None)
    return cover, mask


def compare_grids(a: DeltaCover, b: DeltaCover, tol: float = 1e-9) -> bool:
    """True when two covers share the same lattice (same centers, same radius)."""
    if abs(a.radius - b.radius) > tol or len(a) != len(b):
        return False
    return bool(np.all(np.abs(a.centers - b.centers) <= tol))
