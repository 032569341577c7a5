"""Trim-set semantics: L(p), ell, sep, trim-curve tracing and excision.

The correspondence R is realized operationally: membership of a contact
point against the solid posed at other times is evaluated through the
inverse trajectory and the solid's closed-form membership measure, so no
curve-solid intersection is ever materialized.  Trim curves are traced by
arclength continuation of the coincidence system

    sigma(u1,v1,t1) = sigma(u2,v2,t2),  f(u1,v1,t1) = 0,  f(u2,v2,t2) = 0

(five equations, six unknowns); singular curves are started from phi roots
with the time-offset-pinned Newton seed and marched away from the contact
point.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ExcisionError, SingularSeedError, TracingError
from .funnel import F_TOL, Funnel, FunnelPoint, SweptScene
from .theta import ThetaZeroCurve, theta

log = logging.getLogger("sweepkernel")

COINCIDENCE_TOL = 1e-8
INSIDE_TOL = 1e-9
TOUCH_THRESH = 1e-4      # raw minimum below this is refined as a touch candidate
TOUCH_TOL = 1e-6         # refined minimum below this counts as a hit
T_REFINE_TOL = 1e-8
TRANSVERSAL_MIN_ANGLE = 1e-3


@dataclass
class TimeSet:
    """Sampled membership profile of one funnel point over the interval."""

    point: FunnelPoint
    times: np.ndarray
    measures: np.ndarray
    intervals: list[tuple[float, float]]
    touches: list[float]

    def ell(self) -> float:
        """min gap from t to any other coincidence time; inf when none."""
        t = self.point.t
        gaps = []
        for a, b in self.intervals:
            if a - T_REFINE_TOL <= t <= b + T_REFINE_TOL:
                gaps.append(0.0)
            else:
                gaps.append(min(abs(t - a), abs(t - b)))
        gaps.extend(abs(t - tp) for tp in self.touches)
        return min(gaps) if gaps else math.inf

    def has_interval(self) -> bool:
        return bool(self.intervals)


def _inverse_measures(scene: SweptScene, worlds: np.ndarray, times: np.ndarray
                      ) -> np.ndarray:
    """Membership measure of world points against M(t') for all times.

    Returns an array of shape (n_points, n_times); negative means inside.
    """
    A = scene.motion.rot(times)          # (nt, 3, 3)
    b = scene.motion.trans(times)        # (nt, 3)
    diffs = worlds[:, None, :] - b[None, :, :]
    ybar = np.einsum("tji,ptj->pti", A, diffs)
    return scene.solid.membership_measure(ybar)


def _measure_at(scene: SweptScene, world: np.ndarray, t: float) -> float:
    ybar = scene.motion.inverse_point(world, float(t))
    return float(scene.solid.membership_measure(ybar))


def _refine_crossing(scene, world, t_lo, t_hi, iters=60):
    """Bisect the sign change of the measure between t_lo (inside) and t_hi."""
    m_lo = _measure_at(scene, world, t_lo)
    m_hi = _measure_at(scene, world, t_hi)
    if m_lo > 0 or m_hi < 0:
        # orientation flipped
        t_lo, t_hi, m_lo, m_hi = t_hi, t_lo, m_hi, m_lo
    a, b = t_lo, t_hi
    for _ in range(iters):
        if abs(b - a) <= T_REFINE_TOL:
            break
        m = 0.5 * (a + b)
        if _measure_at(scene, world, m) < 0:
            a = m
        else:
            b = m
    return 0.5 * (a + b)


def _profile_events(scene: SweptScene, point: FunnelPoint, times: np.ndarray,
                    measures: np.ndarray):
    """Intervals (refined) and touch hits from a sampled measure profile."""
    t = point.t
    dt = times[1] - times[0]
    inside = measures < -INSIDE_TOL
    intervals = []
    i = 0
    n = len(times)
    while i < n:
        if not inside[i]:
            i += 1
            continue
        j = i
        while j + 1 < n and inside[j + 1]:
            j += 1
        a = times[i] if i == 0 else _refine_crossing(scene, point.world,
                                                     times[i], times[i - 1])
        b = times[j] if j == n - 1 else _refine_crossing(scene, point.world,
                                                         times[j], times[j + 1])
        intervals.append((float(min(a, b)), float(max(a, b))))
        i = j + 1
    touches = []
    from scipy.optimize import minimize_scalar

    for i in range(1, n - 1):
        if inside[i] or abs(times[i] - t) <= 1.5 * dt:
            continue
        if measures[i] < TOUCH_THRESH and measures[i] <= measures[i - 1] \
                and measures[i] <= measures[i + 1]:
            res = minimize_scalar(
                lambda s: _measure_at(scene, point.world, s),
                bounds=(times[i - 1], times[i + 1]), method="bounded",
                options={"xatol": 1e-10},
            )
            if res.fun <= TOUCH_TOL and abs(res.x - t) > 1.5 * dt:
                touches.append(float(res.x))
    return intervals, touches


def time_set(scene: SweptScene, point: FunnelPoint, n: int = 512) -> TimeSet:
    """Classify sigma(point) against M(t') on a uniform grid plus adaptive
    refinement of every inside/outside crossing."""
    n = max(int(n), 512)
    times = scene.motion.times(n + 1)
    measures = _inverse_measures(scene, point.world[None, :], times)[0]
    intervals, touches = _profile_events(scene, point, times, measures)
    return TimeSet(point=point, times=times, measures=measures,
                   intervals=intervals, touches=touches)


def ell(scene: SweptScene, point: FunnelPoint, n: int = 512) -> float:
    return time_set(scene, point, n).ell()


def time_sets_batch(scene: SweptScene, points: list[FunnelPoint], n: int = 512
                    ) -> list[TimeSet]:
    """Vectorized measure profiles for many funnel points at once."""
    n = max(int(n), 512)
    times = scene.motion.times(n + 1)
    worlds = np.array([p.world for p in points])
    mm = _inverse_measures(scene, worlds, times)
    out = []
    for point, measures in zip(points, mm):
        if np.all(measures >= -INSIDE_TOL) and np.min(measures) >= TOUCH_THRESH:
            out.append(TimeSet(point, times, measures, [], []))
            continue
        intervals, touches = _profile_events(scene, point, times, measures)
        out.append(TimeSet(point, times, measures, intervals, touches))
    return out


def sep_estimate(scene: SweptScene, funnel: Funnel, n: int = 512) -> float:
    """inf of ell over the sampled funnel (decomposable iff positive)."""
    pts = funnel.all_points()
    sets = time_sets_batch(scene, pts, n)
    return float(min((ts.ell() for ts in sets), default=math.inf))


# -- coincidence system ------------------------------------------------------


class _PairSystem:
    """sigma(p1) = sigma(p2), f(p1) = 0, f(p2) = 0 in (u1,v1,t1,u2,v2,t2)."""

    def __init__(self, scene: SweptScene, face1: int, face2: int):
        self.scene = scene
        self.f1 = face1
        self.f2 = face2
        self.interval = scene.motion.interval

    def residual(self, q):
        s1 = self.scene.sigma(self.f1, q[0], q[1], q[2])
        s2 = self.scene.sigma(self.f2, q[3], q[4], q[5])
        return np.concatenate([
            s1 - s2,
            [float(self.scene.f(self.f1, q[0], q[1], q[2]))],
            [float(self.scene.f(self.f2, q[3], q[4], q[5]))],
        ])

    def jacobian(self, q):
        j = np.zeros((5, 6))
        su1, sv1, st1 = self.scene.sigma_jacobian(self.f1, q[0], q[1], q[2])
        su2, sv2, st2 = self.scene.sigma_jacobian(self.f2, q[3], q[4], q[5])
        j[0:3, 0], j[0:3, 1], j[0:3, 2] = su1, sv1, st1
        j[0:3, 3], j[0:3, 4], j[0:3, 5] = -su2, -sv2, -st2
        j[3, 0:3] = [float(x) for x in self.scene.grad_f(self.f1, q[0], q[1], q[2])]
        j[4, 3:6] = [float(x) for x in self.scene.grad_f(self.f2, q[3], q[4], q[5])]
        return j

    def _wrap(self, q):
        q = q.copy()
        u1, v1 = self.scene.face(self.f1).wrap(q[0], q[1])
        u2, v2 = self.scene.face(self.f2).wrap(q[3], q[4])
        q[0], q[1], q[3], q[4] = u1, v1, u2, v2
        return q

    def in_time(self, q, slack=0.0):
        t0, t1 = self.interval
        return (t0 - slack <= q[2] <= t1 + slack) and (t0 - slack <= q[5] <= t1 + slack)

    def correct(self, q, max_iter=30, pin_dt=None):
        """Gauss-Newton (least-norm) correction; optionally pins t1 - t2."""
        q = self._wrap(np.asarray(q, dtype=float))
        for _ in range(max_iter):
            r = self.residual(q)
            if pin_dt is not None:
                r = np.append(r, (q[2] - q[5]) - pin_dt)
            ok = (np.linalg.norm(r[0:3]) <= COINCIDENCE_TOL
                  and abs(r[3]) <= F_TOL and abs(r[4]) <= F_TOL
                  and (pin_dt is None or abs(r[5]) <= 1e-12))
            if ok:
                return q
            J = self.jacobian(q)
            if pin_dt is not None:
                row = np.zeros(6)
                row[2], row[5] = 1.0, -1.0
                J = np.vstack([J, row])
            dq, *_ = np.linalg.lstsq(J, -r, rcond=None)
            nrm = np.linalg.norm(dq)
            if nrm > 0.2:
                dq *= 0.2 / nrm
            q = self._wrap(q + dq)
        return None

    def tangent(self, q):
        J = self.jacobian(q)
        _, _, vt = np.linalg.svd(J)
        return vt[-1]

    def transversal_angle(self, q):
        """Angle between the two posed tangent planes at the meeting point."""
        n1 = self.scene.world_normal(self.f1, q[0], q[1], q[2])
        n2 = self.scene.world_normal(self.f2, q[3], q[4], q[5])
        c = float(np.clip(abs(np.dot(n1, n2)), 0.0, 1.0))
        return float(np.arccos(c))


@dataclass
class TrimCurve:
    """Pair of p-trim polylines plus their common world polyline."""

    kind: str                    # "Elementary" | "Singular"
    face1: int
    face2: int
    params1: np.ndarray          # (n, 3)
    params2: np.ndarray          # (n, 3)
    world: np.ndarray            # (n, 3)
    residuals: np.ndarray        # (n,) coincidence residual
    closed: bool
    min_gap: float               # min |t1 - t2| over nodes
    min_angle: float             # min transversal angle over nodes
    touched_roots: list[int] = field(default_factory=list)
    gaps_reported: list[tuple[np.ndarray, np.ndarray]] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def n_nodes(self):
        return len(self.world)


def _march_pair(sys: _PairSystem, q0: np.ndarray, direction: np.ndarray,
                h0=2e-3, h_min=1e-4, h_max=2e-2, max_nodes=6000,
                stop_on_collapse=False, collapse_tol=2e-4):
    """Continuation from q0 along the coincidence curve, one direction."""
    nodes = [q0]
    tau = sys.tangent(q0)
    if float(tau @ direction) < 0:
        tau = -tau
    h = h0
    arclen = 0.0
    while len(nodes) < max_nodes:
        q = nodes[-1]
        stepped = None
        while h >= h_min:
            qp = q + h * tau
            if not sys.in_time(qp):
                qc = _clip_pair_time(sys, q, qp)
                if qc is not None:
                    nodes.append(qc)
                return nodes, "boundary"
            qc = sys.correct(qp)
            if qc is not None and np.linalg.norm(qc - q) <= 4 * h:
                stepped = qc
                break
            h *= 0.5
        if stepped is None:
            return nodes, "stalled"
        if stop_on_collapse and abs(stepped[2] - stepped[5]) < collapse_tol:
            nodes.append(stepped)
            return nodes, "collapsed"
        if arclen > 6 * h_max:
            seg = stepped - q
            rel = nodes[0] - q
            L2 = float(seg @ seg)
            lam = float(np.clip(rel @ seg / max(L2, 1e-30), 0.0, 1.0))
            if np.linalg.norm(rel - lam * seg) < 0.75 * math.sqrt(L2) + 1e-9:
                return nodes, "closed"
        arclen += float(np.linalg.norm(stepped - q))
        nodes.append(stepped)
        tnew = sys.tangent(stepped)
        if float(tnew @ tau) < 0:
            tnew = -tnew
        tau = tnew
        h = min(h * 1.3, h_max)
    raise TracingError("trim-curve continuation exhausted its node budget")


def _clip_pair_time(sys: _PairSystem, q_in, q_out):
    """Pin whichever of t1, t2 crossed the interval border; solve the rest."""
    t0, t1 = sys.interval
    for axis in (2, 5):
        for bound in (t0, t1):
            if (q_in[axis] - bound) * (q_out[axis] - bound) < 0:
                lam = (bound - q_in[axis]) / (q_out[axis] - q_in[axis])
                q = q_in + lam * (q_out - q_in)
                q[axis] = bound
                free = [k for k in range(6) if k != axis]
                for _ in range(30):
                    r = sys.residual(q)
                    if (np.linalg.norm(r[:3]) <= COINCIDENCE_TOL
                            and abs(r[3]) <= F_TOL and abs(r[4]) <= F_TOL):
                        return q
                    J = sys.jacobian(q)[:, free]
                    dq, *_ = np.linalg.lstsq(J, -r, rcond=None)
                    for k, i in enumerate(free):
                        q[i] += dq[k]
                return None
    return None


def _pair_distance(a: np.ndarray, b: np.ndarray) -> float:
    direct = np.linalg.norm(a - b)
    swapped = np.linalg.norm(a - np.concatenate([b[3:6], b[0:3]]))
    return float(min(direct, swapped))


def _near_existing(q: np.ndarray, curves: list[TrimCurve], tol=5e-2) -> bool:
    for c in curves:
        nodes = np.hstack([c.params1, c.params2])
        d = np.min([_pair_distance(q, node) for node in nodes])
        if d < tol:
            return True
    return False


def _build_curve(scene: SweptScene, sys: _PairSystem, nodes: list[np.ndarray],
                 kind: str, closed: bool) -> TrimCurve:
    arr = np.array(nodes)
    world = scene.sigma(sys.f1, arr[:, 0], arr[:, 1], arr[:, 2])
    w2 = scene.sigma(sys.f2, arr[:, 3], arr[:, 4], arr[:, 5])
    residuals = np.linalg.norm(world - w2, axis=-1)
    gaps = np.abs(arr[:, 2] - arr[:, 5])
    angles = np.array([sys.transversal_angle(q) for q in arr])
    warnings = []
    if kind == "Elementary" and np.min(angles) < TRANSVERSAL_MIN_ANGLE:
        warnings.append(
            f"non-transversal meeting (angle {np.min(angles):.2e} rad): "
            "flagged for singular handling"
        )
    return TrimCurve(kind=kind, face1=sys.f1, face2=sys.f2,
                     params1=arr[:, 0:3], params2=arr[:, 3:6], world=world,
                     residuals=residuals, closed=closed,
                     min_gap=float(np.min(gaps)), min_angle=float(np.min(angles)),
                     warnings=warnings)


def elementary_trim_curves(scene: SweptScene, funnel: Funnel,
                           time_sets: list[TimeSet] | None = None,
                           n: int = 512) -> list[TrimCurve]:
    """Trace elementary trim curves seeded from sampled membership events.

    Every funnel sample whose profile shows an inside interval (or a touch)
    away from its own time proposes a coincidence seed at the crossing; the
    coincidence system is corrected and marched to a full curve.  Duplicate
    seeds landing on an already-traced curve are skipped; marching failures
    are reported as curve gaps with their bracketing nodes.
    """
    pts = funnel.all_points()
    if time_sets is None:
        time_sets = time_sets_batch(scene, pts, n)
    curves: list[TrimCurve] = []
    for ts in time_sets:
        p = ts.point
        events = []
        for a, b in ts.intervals:
            for tv in (a, b):
                if abs(tv - p.t) > 1e-6:
                    events.append(tv)
        events.extend(tp for tp in ts.touches if abs(tp - p.t) > 1e-6)
        for t2 in events:
            ybar = scene.motion.inverse_point(p.world, t2)
            try:
                face2, u2, v2 = scene.solid.project(ybar)
            except Exception:
                continue
            q0 = np.array([p.u, p.v, p.t, u2, v2, t2])
            sys = _PairSystem(scene, p.face, face2)
            qc = sys.correct(q0)
            if qc is None or abs(qc[2] - qc[5]) < 1e-6:
                continue
            if not sys.in_time(qc, slack=1e-12):
                continue
            if _near_existing(qc, curves):
                continue
            try:
                fwd, st_f = _march_pair(sys, qc, direction=np.ones(6))
                if st_f == "closed":
                    nodes, closed = fwd, True
                else:
                    bwd, st_b = _march_pair(sys, qc, direction=-np.ones(6))
                    nodes = list(reversed(bwd[1:])) + fwd
                    closed = False
                    if "stalled" in (st_f, st_b):
                        log.warning("trim marching stalled; curve reported with gap")
            except TracingError as exc:
                log.warning("trim marching failed: %s", exc)
                continue
            curves.append(_build_curve(scene, sys, nodes, "Elementary", closed))
    return curves


def triple_points(curves: list[TrimCurve], tol: float = 1e-3) -> list[np.ndarray]:
    """World locations where distinct trim curves come within ``tol``
    (three-patch meets); reported, not resolved."""
    hits = []
    for i in range(len(curves)):
        for j in range(i + 1, len(curves)):
            wi, wj = curves[i].world, curves[j].world
            d = np.linalg.norm(wi[:, None, :] - wj[None, :, :], axis=-1)
            k = np.unravel_index(np.argmin(d), d.shape)
            if d[k] < tol:
                hits.append(0.5 * (wi[k[0]] + wj[k[1]]))
    return hits


def singular_trim_curves(scene: SweptScene, funnel: Funnel,
                         zero_curves: list[ThetaZeroCurve]) -> list[TrimCurve]:
    """Start a trim curve at each phi root and march it away from the contact.

    Seeding follows the time-offset-pinned Newton: symmetric steps +-h along
    the theta-zero tangent give a trial pair whose t-gap is held fixed while
    Newton restores coincidence; the resulting nondegenerate pair seeds the
    ordinary continuation.
    """
    curves: list[TrimCurve] = []
    roots = [(ci, root) for ci, zc in enumerate(zero_curves) for root in zc.roots]
    for ridx, (ci, root) in enumerate(roots):
        zc = zero_curves[ci]
        if any(ridx in c.touched_roots for c in curves):
            continue
        i_near = int(np.argmin(np.linalg.norm(zc.params - root.params, axis=1)))
        w = zc.tangents[i_near]
        face = zc.face
        sys = _PairSystem(scene, face, face)
        seed_pair = None
        for h in (1e-3, 3e-3, 1e-2):
            qa = root.params + h * w
            qb = root.params - h * w
            q0 = np.concatenate([qa, qb])
            pin = float(qa[2] - qb[2])
            if abs(pin) < 1e-10:
                continue
            qc = sys.correct(q0, pin_dt=pin, max_iter=60)
            if qc is not None and np.linalg.norm(qc[0:3] - qc[3:6]) > h / 2:
                seed_pair = qc
                break
        if seed_pair is None:
            raise SingularSeedError(
                f"could not seed a singular trim curve at phi root {root.params}"
            )
        halves = []
        statuses = []
        for sgn in (+1.0, -1.0):
            dirv = np.zeros(6)
            dirv[2], dirv[5] = sgn, -sgn   # grow |t1 - t2|
            try:
                nodes, status = _march_pair(
                    sys, seed_pair, direction=dirv, h0=1e-3,
                    stop_on_collapse=True,
                )
            except TracingError as exc:
                log.warning("singular marching failed: %s", exc)
                nodes, status = [seed_pair], "stalled"
            halves.append(nodes)
            statuses.append(status)
        # assemble through the degenerate contact node
        root_node = np.concatenate([root.params, root.params])
        nodes = list(reversed(halves[1])) + [root_node] + halves[0]
        closed = statuses[0] == statuses[1] == "collapsed"
        curve = _build_curve(scene, sys, nodes, "Singular", closed)
        curve.touched_roots.append(ridx)
        # a collapsed far end touched another root: match it
        for sgn_idx, status in enumerate(statuses):
            if status != "collapsed":
                continue
            end = halves[sgn_idx][-1]
            mid = 0.5 * (end[0:3] + end[3:6])
            for rj, (cj, other) in enumerate(roots):
                if rj == ridx:
                    continue
                if np.linalg.norm(other.params - mid) < 5e-2:
                    if rj not in curve.touched_roots:
                        curve.touched_roots.append(rj)
        curves.append(curve)
    return curves


# -- excision ------------------------------------------------------------------


@dataclass
class TrimmedEnvelope:
    funnel: Funnel
    trim_curves: list[TrimCurve]
    excised: dict[tuple[int, int], np.ndarray]   # (slice_idx, curve_pos) -> mask
    cap_left: list[np.ndarray]                   # f(u,v,t0) = 0 polylines (chart)
    cap_right: list[np.ndarray]
    warnings: list[str] = field(default_factory=list)

    def masks_for_component(self, comp: int):
        out = []
        for si, sl in enumerate(self.funnel.slices):
            for ci, c in enumerate(sl):
                if c.component == comp:
                    out.append(self.excised[(si, ci)])
        return out

    def counts(self):
        total = sum(int(m.size) for m in self.excised.values())
        cut = sum(int(m.sum()) for m in self.excised.values())
        return cut, total

    def retained_points(self) -> list[FunnelPoint]:
        pts = []
        for (si, ci), mask in sorted(self.excised.items()):
            curve = self.funnel.slices[si][ci]
            pts.extend(p for p, m in zip(curve.points, mask) if not m)
        return pts

    def excised_points(self) -> list[FunnelPoint]:
        pts = []
        for (si, ci), mask in sorted(self.excised.items()):
            curve = self.funnel.slices[si][ci]
            pts.extend(p for p, m in zip(curve.points, mask) if m)
        return pts


def excise(scene: SweptScene, funnel: Funnel, trim_curves: list[TrimCurve],
           time_sets: list[TimeSet] | None = None, n: int = 512,
           theta_eps: float = 1e-6) -> TrimmedEnvelope:
    """Mark funnel samples inside p-trim regions and return the remainder.

    Seeds are theta < 0 samples plus samples whose membership profile shows
    an inside interval; one smoothing pass fills isolated unmarked nodes
    surrounded by marked neighbors.  Nodes lying on a traced trim curve are
    never marked (the trim set is open).
    """
    pts = funnel.all_points()
    if time_sets is None:
        time_sets = time_sets_batch(scene, pts, n)
    profile = {id(p): ts for p, ts in zip(pts, time_sets)}

    curve_nodes = None
    if trim_curves:
        curve_nodes = np.vstack([np.vstack([c.params1, c.params2]) for c in trim_curves])

    excised: dict[tuple[int, int], np.ndarray] = {}
    for si, sl in enumerate(funnel.slices):
        for ci, curve in enumerate(sl):
            mask = np.zeros(len(curve.points), dtype=bool)
            for k, p in enumerate(curve.points):
                ts = profile[id(p)]
                if ts.has_interval() or theta(p) < -theta_eps:
                    mask[k] = True
            excised[(si, ci)] = mask

    # openness: never mark nodes sitting on a trim curve
    if curve_nodes is not None:
        for (si, ci), mask in excised.items():
            curve = funnel.slices[si][ci]
            params = np.array([[p.u, p.v, p.t] for p in curve.points])
            d = np.min(np.linalg.norm(params[:, None, :] - curve_nodes[None, :, :],
                                      axis=-1), axis=1)
            mask[d < 1e-6] = False

    # one neighbor-smoothing pass on each slice polyline
    for (si, ci), mask in excised.items():
        closed = funnel.slices[si][ci].closed
        m = mask.copy()
        nn = len(m)
        for k in range(nn):
            if m[k]:
                continue
            left = mask[(k - 1) % nn] if (closed or k > 0) else False
            right = mask[(k + 1) % nn] if (closed or k + 1 < nn) else False
            if left and right:
                m[k] = True
        mask[:] = m

    cut, total = 0, 0
    for m in excised.values():
        cut += int(m.sum())
        total += int(m.size)
    warnings = []
    if trim_curves and cut == 0:
        warnings.append("trim curves exist but no funnel sample was excised")
    if cut == total and total > 0:
        raise ExcisionError("every funnel sample was excised; no envelope remains")

    cap_left, cap_right = [], []
    if len(funnel.slices) >= 1 and funnel.slices[0]:
        cap_left = [c.param_nodes() for c in funnel.slices[0]]
    if len(funnel.slices) >= 1 and funnel.slices[-1]:
        cap_right = [c.param_nodes() for c in funnel.slices[-1]]
    return TrimmedEnvelope(funnel=funnel, trim_curves=trim_curves, excised=excised,
                           cap_left=cap_left, cap_right=cap_right, warnings=warnings)


# -- singular-contact diagnostics (criterion hooks) ---------------------------


def singular_contact_metrics(curve: TrimCurve, zero_curve: ThetaZeroCurve,
                             root) -> dict:
    """Tangency of a singular trim curve against F0 at a phi root.

    Returns the contact angle (limit of secant directions, linearly
    extrapolated to zero arclength) and the exponent of a log-log fit of
    distance-from-F0 versus arclength (2.0 for quadratic contact).
    """
    p0 = root.params
    # nodes of branch 1 ordered by distance from the root
    d1 = np.linalg.norm(curve.params1 - p0, axis=1)
    order = np.argsort(d1)
    # drop the degenerate node itself
    order = [i for i in order if d1[i] > 1e-9]
    w = None
    i_near = int(np.argmin(np.linalg.norm(zero_curve.params - p0, axis=1)))
    w = zero_curve.tangents[i_near]

    take = order[:6]
    if len(take) < 3:
        return {"angle": math.nan, "exponent": math.nan}
    angles, ss = [], []
    for i in take:
        sec = curve.params1[i] - p0
        s = np.linalg.norm(sec)
        sec = sec / s
        c = abs(float(sec @ w))
        angles.append(math.acos(min(1.0, c)))
        ss.append(s)
    # secant angle ~ angle_at_root + C s: extrapolate s -> 0
    A = np.vstack([np.ones(len(ss)), ss]).T
    coef, *_ = np.linalg.lstsq(A, np.array(angles), rcond=None)
    angle0 = abs(float(coef[0]))

    # distance from F0 versus arclength along the trim curve
    dists, arcs = [], []
    zp = zero_curve.params
    for i in order:
        q = curve.params1[i]
        dz = np.linalg.norm(zp - q, axis=1)
        j = int(np.argmin(dz))
        # local segment refinement
        best = dz[j]
        for j2 in (j - 1, j + 1):
            if 0 <= j2 < len(zp):
                a, b = zp[j], zp[j2]
                ab = b - a
                lam = float(np.clip((q - a) @ ab / max(ab @ ab, 1e-30), 0, 1))
                best = min(best, float(np.linalg.norm(q - (a + lam * ab))))
        arcs.append(d1[i])
        dists.append(best)
    arcs = np.array(arcs)
    dists = np.array(dists)
    keep = (dists > 1e-12) & (arcs > 1e-6) & (arcs < 0.5)
    if keep.sum() < 3:
        return {"angle": angle0, "exponent": math.nan}
    slope, _ = np.polyfit(np.log(arcs[keep]), np.log(dists[keep]), 1)
    return {"angle": angle0, "exponent": float(slope)}
