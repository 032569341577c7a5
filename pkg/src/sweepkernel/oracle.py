"""Brute-force verification: dense-time voxelization of the swept volume.

The voxel grid is the independent witness for everything the analytic
pipeline produces: a cell is occupied iff its center lies in the solid posed
at some sampled time.  Candidate envelope points are then classified as
Interior / NearBoundary / Exterior by distance to the occupied/empty
interface, and boundary samples are audited against the ingress/egress/
grazing necessary condition.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ResourceError
from .funnel import SweptScene
from .shape import Classification

log = logging.getLogger("sweepkernel")

MAX_CELLS = 2**28


@dataclass
class VoxelSweptVolume:
    origin: np.ndarray          # corner of the grid (cell centers start +h/2)
    spacing: float
    dims: tuple[int, int, int]
    occupancy: np.ndarray       # bool (nx, ny, nz)
    n_t: int
    _interface_dist: np.ndarray | None = None   # cell-center distance to interface

    @property
    def diagonal(self) -> float:
        return float(self.spacing * np.sqrt(3.0))

    def cell_centers_axis(self, k: int) -> np.ndarray:
        return self.origin[k] + (np.arange(self.dims[k]) + 0.5) * self.spacing

    def occupied_volume(self) -> float:
        return float(self.occupancy.sum()) * self.spacing**3

    def interface_distance_field(self) -> np.ndarray:
        """Distance (world units) from each cell center to the nearest
        interface cell center; interface = occupied cells facing empty plus
        empty cells facing occupied."""
        if self._interface_dist is None:
            from scipy.ndimage import binary_dilation, distance_transform_edt

            occ = self.occupancy
            neigh = binary_dilation(occ)
            inner = ~binary_dilation(~occ)
            interface = (occ & ~inner) | (~occ & neigh)
            dist = distance_transform_edt(~interface, sampling=self.spacing)
            self._interface_dist = dist
        return self._interface_dist

    def point_index(self, x) -> tuple[int, int, int]:
        x = np.asarray(x, dtype=float)
        idx = np.floor((x - self.origin) / self.spacing).astype(int)
        if np.any(idx < 0) or np.any(idx >= np.array(self.dims)):
            raise DomainError(f"point {x} outside the voxel grid")
        return tuple(int(i) for i in idx)

    def classify(self, x) -> Classification:
        """Interior / NearBoundary / Exterior against the voxelized volume."""
        i, j, k = self.point_index(x)
        dist = self.interface_distance_field()[i, j, k]
        if dist <= self.diagonal:
            return Classification.ON_BOUNDARY
        return Classification.INSIDE if self.occupancy[i, j, k] else Classification.OUTSIDE

    def boundary_cell_centers(self) -> np.ndarray:
        from scipy.ndimage import binary_dilation

        occ = self.occupancy
        inner = ~binary_dilation(~occ)
        shell = occ & ~inner
        idx = np.argwhere(shell)
        return self.origin + (idx + 0.5) * self.spacing


def classify_point(volume: VoxelSweptVolume, x) -> Classification:
    return volume.classify(x)


def sweep_bounds(scene: SweptScene, n_t: int = 64, margin_cells: int = 2,
                 resolution: int = 64):
    """Axis-aligned bounds of the union of posed bounding balls."""
    times = scene.motion.times(max(n_t, 2))
    A, b = scene.motion.evaluate(times)
    r = scene.solid.bounding_radius()
    lo = np.min(b, axis=0) - r
    hi = np.max(b, axis=0) + r
    span = float(np.max(hi - lo))
    h = span / resolution
    lo = lo - margin_cells * h
    hi = hi + margin_cells * h
    return lo, hi


def voxelize(scene: SweptScene, resolution: int = 128, n_t: int = 64) -> VoxelSweptVolume:
    """Occupancy grid of the swept volume: cell centers inside (or on) the
    posed solid at any of n_t sampled times."""
    if resolution < 16:
        raise DomainError("resolution must be at least 16")
    if n_t < 1:
        raise DomainError("n_t must be at least 1")
    lo, hi = sweep_bounds(scene, max(n_t, 8), resolution=resolution)
    span = float(np.max(hi - lo))
    h = span / resolution
    dims = tuple(int(np.ceil((hi[k] - lo[k]) / h)) for k in range(3))
    if np.prod(dims) > MAX_CELLS:
        raise ResourceError(f"voxel grid {dims} exceeds the {MAX_CELLS}-cell cap")
    xs = lo[0] + (np.arange(dims[0]) + 0.5) * h
    ys = lo[1] + (np.arange(dims[1]) + 0.5) * h
    zs = lo[2] + (np.arange(dims[2]) + 0.5) * h
    occ = np.zeros(dims, dtype=bool)
    times = scene.motion.times(n_t) if n_t > 1 else np.array([scene.motion.interval[0]])
    r_bound = scene.solid.bounding_radius()
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    for t in times:
        A, b = scene.motion.evaluate(float(t))
        # restrict to the slab of cells the posed solid can reach
        sel = [np.nonzero(np.abs(c - b[k]) <= r_bound + h)[0] for k, c in enumerate((xs, ys, zs))]
        if any(len(s) == 0 for s in sel):
            continue
        gx, gy, gz = np.meshgrid(xs[sel[0]], ys[sel[1]], zs[sel[2]], indexing="ij")
        pts = np.stack([gx, gy, gz], axis=-1)
        body = np.einsum("ji,...j->...i", A, pts - b)
        inside = scene.solid.membership_measure(body) <= 0.0
        occ[np.ix_(sel[0], sel[1], sel[2])] |= inside
    return VoxelSweptVolume(origin=np.asarray(lo, float), spacing=h, dims=dims,
                            occupancy=occ, n_t=int(n_t))


# -- ingress / egress / grazing audit ----------------------------------------


@dataclass
class EndcapAuditReport:
    n_samples: int
    n_grazing: int
    n_ingress: int
    n_egress: int
    n_failed: int
    worst_margin: float
    failures: list[tuple[np.ndarray, float]]

    @property
    def passed(self) -> bool:
        return self.n_failed == 0


def _matched_time(scene: SweptScene, y: np.ndarray, times: np.ndarray,
                  measures: np.ndarray) -> float:
    """Time minimizing the distance from y to the posed solid (grid argmin
    polished by golden-section)."""
    from scipy.optimize import minimize_scalar

    i = int(np.argmin(measures))
    lo = times[max(i - 1, 0)]
    hi = times[min(i + 1, len(times) - 1)]
    if hi - lo < 1e-14:
        return float(times[i])
    res = minimize_scalar(
        lambda s: float(scene.solid.membership_measure(
            scene.motion.inverse_point(y, float(s)))),
        bounds=(float(lo), float(hi)), method="bounded",
        options={"xatol": 1e-12},
    )
    return float(res.x)


def endcap_ingress_egress_check(scene: SweptScene, samples: int = 1500,
                                volume: VoxelSweptVolume | None = None,
                                n_t: int = 256, margin: float = 1e-3,
                                rng=None) -> EndcapAuditReport:
    """Audit voxel-boundary samples against the three envelope cases:
    grazing g = 0 at an interior matched time, ingress g <= 0 at t0, egress
    g >= 0 at t1, each with the stated g-margin."""
    if volume is None:
        volume = voxelize(scene, resolution=96, n_t=max(n_t // 2, 48))
    pts = volume.boundary_cell_centers()
    rng = np.random.default_rng(0 if rng is None else rng)
    if len(pts) > samples:
        pts = pts[rng.choice(len(pts), samples, replace=False)]
    t0, t1 = scene.motion.interval
    times = scene.motion.times(n_t)
    A = scene.motion.rot(times)
    b = scene.motion.trans(times)
    n_g = n_i = n_e = n_f = 0
    worst = 0.0
    failures = []
    for y in pts:
        ybar = np.einsum("tji,tj->ti", A, y[None, :] - b)
        measures = scene.solid.membership_measure(ybar)
        t_star = _matched_time(scene, y, times, measures)
        body = scene.motion.inverse_point(y, t_star)
        face, u, v = scene.solid.project(body)
        g_val = float(scene.f(face, u, v, t_star))
        interior = t0 + 1e-9 < t_star < t1 - 1e-9
        if interior:
            # polish the grazing condition: g has a sign change near the
            # matched time when the point is on the lateral envelope
            g_lo = None
            for dt in (1e-4, 1e-3, 1e-2):
                ta, tb = max(t_star - dt, t0), min(t_star + dt, t1)
                fa = _g_at(scene, y, ta)
                fb = _g_at(scene, y, tb)
                if fa * fb < 0:
                    g_lo = (ta, tb, fa)
                    break
            if g_lo is not None:
                ta, tb, fa = g_lo
                for _ in range(60):
                    tm = 0.5 * (ta + tb)
                    fm = _g_at(scene, y, tm)
                    if fa * fm <= 0:
                        tb = tm
                    else:
                        ta, fa = tm, fm
                t_star = 0.5 * (ta + tb)
                g_val = _g_at(scene, y, t_star)
            ok = abs(g_val) <= margin
            n_g += ok
            worst = max(worst, abs(g_val)) if not ok else worst
        elif t_star <= t0 + 1e-9:
            ok = g_val <= margin
            n_i += ok
            worst = max(worst, g_val - margin) if not ok else worst
        else:
            ok = g_val >= -margin
            n_e += ok
            worst = max(worst, -g_val - margin) if not ok else worst
        if not ok:
            n_f += 1
            if len(failures) < 16:
                failures.append((y, g_val))
    return EndcapAuditReport(n_samples=len(pts), n_grazing=n_g, n_ingress=n_i,
                             n_egress=n_e, n_failed=n_f, worst_margin=float(worst),
                             failures=failures)


def _g_at(scene: SweptScene, y: np.ndarray, t: float) -> float:
    body = scene.motion.inverse_point(y, float(t))
    face, u, v = scene.solid.project(body)
    return float(scene.f(face, u, v, float(t)))
