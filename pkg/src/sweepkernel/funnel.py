"""The tangency function f, the sweep map, and funnel tracing.

f(u,v,t) = <A(t) N-hat(u,v), V(u,v,t)> vanishes exactly where the velocity of
a boundary point is tangent to the posed surface; its zero set in (u,v,t) is
the funnel, the natural parameter space of the lateral envelope.  This module
evaluates f and its analytic gradient, traces curves of contact per time
slice with a predictor-corrector, samples the whole funnel on a time grid
with component bookkeeping, classifies end caps, and restricts f to smooth
edges and marked vertices.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    DegeneracyError,
    DegenerateSliceError,
    DomainError,
    NotOnFunnelError,
    TracingError,
)
from .motion import RigidMotion
from .shape import Classification, EdgeCurve, ParametricSurface, Solid

log = logging.getLogger("sweepkernel")

F_TOL = 1e-9            # on-funnel residual |f|
GRAD_MIN = 1e-7         # non-degeneracy floor for ||grad f||
SLICE_GRAD_MIN = 1e-8   # degeneracy floor for ||(f_u, f_v)|| along a slice
STEP_MIN, STEP_MAX = 1e-4, 5e-2
NEWTON_MAX = 30
SEED_GRID = 64


def _dot(a, b):
    return np.einsum("...i,...i->...", a, b)


def _mv(m, v):
    return np.einsum("...ij,...j->...i", m, v)


@dataclass
class FunnelPoint:
    """A point (u,v,t) on the funnel with cached differential data."""

    face: int
    u: float
    v: float
    t: float
    f: float
    f_u: float
    f_v: float
    f_t: float
    world: np.ndarray
    normal: np.ndarray
    velocity: np.ndarray
    sigma_u: np.ndarray
    sigma_v: np.ndarray
    sigma_t: np.ndarray

    @property
    def grad(self) -> np.ndarray:
        return np.array([self.f_u, self.f_v, self.f_t])

    @property
    def params(self) -> np.ndarray:
        return np.array([self.u, self.v, self.t])


@dataclass
class ContactCurve:
    """Traced curve of contact at a fixed time (one funnel slice component)."""

    t: float
    face: int
    points: list[FunnelPoint]
    closed: bool
    component: int = -1

    def world_nodes(self) -> np.ndarray:
        return np.array([p.world for p in self.points])

    def param_nodes(self) -> np.ndarray:
        return np.array([[p.u, p.v] for p in self.points])


@dataclass
class Funnel:
    """Contact curves on a time grid with component connectivity."""

    scene: "SweptScene"
    times: np.ndarray
    slices: list[list[ContactCurve]]
    components: dict[int, list[tuple[int, ContactCurve]]]
    warnings: list[str] = field(default_factory=list)

    def all_points(self) -> list[FunnelPoint]:
        return [p for sl in self.slices for c in sl for p in c.points]

    def component_ids(self) -> list[int]:
        return sorted(self.components)

    def component_grid(self, comp: int):
        """(times, node matrix) for a component present on every slice with a
        fixed node count; None when the component is not grid-compatible."""
        entries = self.components[comp]
        if len(entries) != len(self.times):
            return None
        counts = {len(c.points) for _, c in entries}
        if len(counts) != 1:
            return None
        nodes = [c.points for _, c in sorted(entries, key=lambda e: e[0])]
        return self.times, nodes


class SweptScene:
    """A solid, a rigid motion, and the faces of the boundary that sweep.

    Motion matrices at repeated scalar times are memoized: slice tracing and
    membership profiling hammer the same t values.
    """

    def __init__(self, solid: Solid, motion: RigidMotion, faces: Sequence[int] | None = None,
                 name: str = "scene"):
        self.solid = solid
        self.motion = motion
        self.faces = list(range(len(solid.faces))) if faces is None else list(faces)
        self.name = name
        self._mcache: dict[float, tuple] = {}

    # -- sweep map and tangency function --------------------------------

    def face(self, idx: int) -> ParametricSurface:
        return self.solid.faces[idx]

    def motion_jet(self, t: float):
        """(A, b, A', b', A'', b'') at a scalar time, memoized."""
        key = float(t)
        hit = self._mcache.get(key)
        if hit is None:
            hit = self.motion.derivatives(key)
            if len(self._mcache) > 16384:
                self._mcache.clear()
            self._mcache[key] = hit
        return hit

    def sigma(self, face, u, v, t):
        if np.ndim(t) == 0:
            A, b, *_ = self.motion_jet(t)
            return self.face(face).point(u, v) @ A.T + b
        A, b = self.motion.evaluate(t)
        s = self.face(face).point(u, v)
        return _mv(A, s) + b

    def world_normal(self, face, u, v, t):
        if np.ndim(t) == 0:
            A, *_ = self.motion_jet(t)
            return self.face(face).unit_normal(u, v) @ A.T
        A, _ = self.motion.evaluate(t)
        return _mv(A, self.face(face).unit_normal(u, v))

    def velocity(self, face, u, v, t):
        if np.ndim(t) == 0:
            _, _, Ad, bd, _, _ = self.motion_jet(t)
            return self.face(face).point(u, v) @ Ad.T + bd
        return self.motion.velocity(self.face(face).point(u, v), t)

    def f(self, face, u, v, t):
        """Tangency residual; broadcasts over u, v, t."""
        if np.ndim(t) == 0:
            A, _, Ad, bd, _, _ = self.motion_jet(t)
            surf = self.face(face)
            s = surf.point(u, v)
            n = surf.unit_normal(u, v)
            return _dot(n @ A.T, s @ Ad.T + bd)
        u, v, t = np.broadcast_arrays(
            np.asarray(u, float), np.asarray(v, float), np.asarray(t, float)
        )
        A, _, Ad, bd, _, _ = self.motion.derivatives(t)
        surf = self.face(face)
        s = surf.point(u, v)
        n = surf.unit_normal(u, v)
        vel = _mv(Ad, s) + bd
        return _dot(_mv(A, n), vel)

    def f_slice(self, face, uu, vv, t):
        """f over a (u,v) grid at one time (single motion evaluation)."""
        return self.f(face, uu, vv, float(t))

    def grad_f(self, face, u, v, t):
        """Analytic (f_u, f_v, f_t) via the chain rule and the Gauss map."""
        if np.ndim(t) == 0:
            A, _, Ad, bd, Add, bdd = self.motion_jet(t)
            surf = self.face(face)
            s = surf.point(u, v)
            su, sv = surf.partials(u, v)
            n = surf.unit_normal(u, v)
            nu, nv = surf.normal_derivatives(u, v)
            vel = s @ Ad.T + bd
            An = n @ A.T
            f_u = _dot(nu @ A.T, vel) + _dot(An, su @ Ad.T)
            f_v = _dot(nv @ A.T, vel) + _dot(An, sv @ Ad.T)
            f_t = _dot(n @ Ad.T, vel) + _dot(An, s @ Add.T + bdd)
            return f_u, f_v, f_t
        u, v, t = np.broadcast_arrays(
            np.asarray(u, float), np.asarray(v, float), np.asarray(t, float)
        )
        A, _, Ad, bd, Add, bdd = self.motion.derivatives(t)
        surf = self.face(face)
        s = surf.point(u, v)
        su, sv = surf.partials(u, v)
        n = surf.unit_normal(u, v)
        nu, nv = surf.normal_derivatives(u, v)
        vel = _mv(Ad, s) + bd
        An = _mv(A, n)
        f_u = _dot(_mv(A, nu), vel) + _dot(An, _mv(Ad, su))
        f_v = _dot(_mv(A, nv), vel) + _dot(An, _mv(Ad, sv))
        f_t = _dot(_mv(Ad, n), vel) + _dot(An, _mv(Add, s) + bdd)
        return f_u, f_v, f_t

    def sigma_jacobian(self, face, u, v, t):
        """Columns (sigma_u, sigma_v, sigma_t) of the sweep-map Jacobian."""
        if np.ndim(t) == 0:
            A, _, Ad, bd, _, _ = self.motion_jet(t)
            surf = self.face(face)
            s = surf.point(u, v)
            su, sv = surf.partials(u, v)
            return su @ A.T, sv @ A.T, s @ Ad.T + bd
        A, _, Ad, bd, _, _ = self.motion.derivatives(np.asarray(t, float))
        surf = self.face(face)
        s = surf.point(u, v)
        su, sv = surf.partials(u, v)
        return _mv(A, su), _mv(A, sv), _mv(Ad, s) + bd

    def sigma_tt(self, face, u, v, t):
        if np.ndim(t) == 0:
            _, _, _, _, Add, bdd = self.motion_jet(t)
            return self.face(face).point(u, v) @ Add.T + bdd
        _, _, _, _, Add, bdd = self.motion.derivatives(np.asarray(t, float))
        return _mv(Add, self.face(face).point(u, v)) + bdd

    def jacobian_det(self, face, u, v, t):
        su, sv, st = self.sigma_jacobian(face, u, v, t)
        return _dot(np.cross(su, sv, axis=-1), st)

    # -- funnel points ----------------------------------------------------

    def funnel_point(self, face, u, v, t, require_on=True) -> FunnelPoint:
        u, v = self.face(face).wrap(float(u), float(v))
        t = float(t)
        A, b, Ad, bd, Add, bdd = self.motion_jet(t)
        surf = self.face(face)
        s = surf.point(u, v)
        su, sv = surf.partials(u, v)
        n = surf.unit_normal(u, v)
        nu, nv = surf.normal_derivatives(u, v)
        vel = Ad @ s + bd
        An = A @ n
        fval = float(An @ vel)
        fu = float((A @ nu) @ vel + An @ (Ad @ su))
        fv = float((A @ nv) @ vel + An @ (Ad @ sv))
        ft = float((Ad @ n) @ vel + An @ (Add @ s + bdd))
        if require_on:
            if abs(fval) > F_TOL:
                raise NotOnFunnelError(f"|f| = {abs(fval):.3e} exceeds {F_TOL} at "
                                       f"({u:.6f}, {v:.6f}, {t:.6f})")
            if math.sqrt(fu * fu + fv * fv + ft * ft) < GRAD_MIN:
                raise DegeneracyError(f"||grad f|| below {GRAD_MIN} at "
                                      f"({u:.6f}, {v:.6f}, {t:.6f})")
        return FunnelPoint(
            face=face, u=float(u), v=float(v), t=t, f=fval, f_u=fu, f_v=fv, f_t=ft,
            world=A @ s + b, normal=An, velocity=vel.copy(),
            sigma_u=A @ su, sigma_v=A @ sv, sigma_t=vel,
        )

    def fd_grad_residual(self, face, u, v, t, step=1e-6) -> float:
        fu, fv, ft = self.grad_f(face, u, v, t)
        g_fd = [
            (self.f(face, u + step, v, t) - self.f(face, u - step, v, t)) / (2 * step),
            (self.f(face, u, v + step, t) - self.f(face, u, v - step, t)) / (2 * step),
            (self.f(face, u, v, t + step) - self.f(face, u, v, t - step)) / (2 * step),
        ]
        return float(max(abs(fu - g_fd[0]), abs(fv - g_fd[1]), abs(ft - g_fd[2])))


def g(scene: SweptScene, x, t) -> float:
    """g(x, t) for a body boundary point x: locates x on the boundary chart
    first (DomainError if it is not on the boundary within 1e-7)."""
    x = np.asarray(x, dtype=float)
    m = float(scene.solid.membership_measure(x))
    if abs(m) > 1e-7:
        raise DomainError(f"point is not on the solid boundary (measure {m:.3e})")
    face, u, v = scene.solid.project(x)
    return float(scene.f(face, u, v, t))


# -- generic 2-D implicit-curve tracer ------------------------------------


class _Implicit2D:
    """Predictor-corrector tracer for F(a, b) = 0 in a rectangle."""

    def __init__(self, func, grad, domain, periodic, f_tol=F_TOL,
                 grad_min=SLICE_GRAD_MIN, max_nodes=20000, func_grid=None):
        self.func = func
        self.grad = grad
        self.domain = domain
        self.periodic = periodic
        self.f_tol = f_tol
        self.grad_min = grad_min
        self.max_nodes = max_nodes
        self.func_grid = func_grid

    def _wrap(self, q):
        a, b = q
        (a0, a1), (b0, b1) = self.domain
        if self.periodic[0]:
            a = (a - a0) % (a1 - a0) + a0
        if self.periodic[1]:
            b = (b - b0) % (b1 - b0) + b0
        return np.array([a, b])

    def _delta(self, q1, q2):
        d = q1 - q2
        for k in range(2):
            if self.periodic[k]:
                span = self.domain[k][1] - self.domain[k][0]
                d[k] = (d[k] + span / 2) % span - span / 2
        return d

    def _inside(self, q, slack=0.0):
        for k in range(2):
            if not self.periodic[k]:
                lo, hi = self.domain[k]
                if q[k] < lo - slack or q[k] > hi + slack:
                    return False
        return True

    def correct(self, q):
        """Newton along the gradient onto F = 0; returns corrected q or None."""
        q = self._wrap(np.asarray(q, dtype=float))
        for _ in range(NEWTON_MAX):
            val = self.func(q)
            ga, gb = self.grad(q)
            g2 = ga * ga + gb * gb
            if g2 < self.grad_min**2:
                raise DegenerateSliceError(
                    f"||(F_a, F_b)|| = {math.sqrt(g2):.3e} below {self.grad_min}"
                )
            step = -val / g2
            dq = np.array([ga * step, gb * step])
            q = self._wrap(q + dq)
            if abs(val) <= self.f_tol and np.linalg.norm(dq) <= 1e-12:
                return q
        if abs(self.func(q)) <= self.f_tol:
            return q
        return None

    def tangent(self, q):
        ga, gb = self.grad(q)
        t = np.array([-gb, ga])
        n = np.linalg.norm(t)
        if n < self.grad_min:
            raise DegenerateSliceError("tangent undefined: in-slice gradient vanished")
        return t / n

    def _near_start(self, q_prev, q_new, start, arclen, h0):
        """True when the latest segment passes next to the start point."""
        if arclen < 6 * h0:
            return False
        seg = self._delta(q_new, q_prev)
        rel = self._delta(start, q_prev)
        L2 = float(seg @ seg)
        if L2 <= 0:
            return False
        lam = float(np.clip(rel @ seg / L2, 0.0, 1.0))
        gap = np.linalg.norm(rel - lam * seg)
        return gap < 0.75 * math.sqrt(L2) + 1e-9

    def _march(self, q0, direction):
        """March one direction; returns (nodes, 'closed'|'boundary'|'open')."""
        nodes = [q0]
        tau = self.tangent(q0) * direction
        h = 1e-2
        arclen = 0.0
        while len(nodes) < self.max_nodes:
            q = nodes[-1]
            stepped = None
            while h >= STEP_MIN:
                qp = q + h * tau
                if not self._inside(qp):
                    qc = self._clip_to_boundary(q, qp)
                    if qc is not None:
                        nodes.append(qc)
                        return nodes, "boundary"
                    h *= 0.5
                    continue
                qc = self.correct(qp)
                if qc is not None and np.linalg.norm(self._delta(qc, q)) <= 3 * h:
                    stepped = qc
                    break
                h *= 0.5
            if stepped is None:
                return nodes, "open"
            if self._near_start(q, stepped, nodes[0], arclen, STEP_MAX):
                return nodes, "closed"
            arclen += float(np.linalg.norm(self._delta(stepped, q)))
            nodes.append(stepped)
            tau_new = self.tangent(stepped)
            if float(tau_new @ tau) < 0:
                tau_new = -tau_new
            tau = tau_new
            h = min(h * 1.4, STEP_MAX)
        raise TracingError("node budget exhausted while tracing an implicit curve")

    def _clip_to_boundary(self, q_in, q_out):
        """Land exactly on the violated rectangle edge, correcting along it."""
        for k in range(2):
            if self.periodic[k]:
                continue
            lo, hi = self.domain[k]
            for bound in (lo, hi):
                if (q_in[k] - bound) * (q_out[k] - bound) < 0 or q_out[k] == bound:
                    lam = (bound - q_in[k]) / (q_out[k] - q_in[k])
                    q = q_in + lam * (q_out - q_in)
                    q[k] = bound
                    # 1-D Newton along the free coordinate
                    free = 1 - k
                    for _ in range(NEWTON_MAX):
                        val = self.func(q)
                        gr = self.grad(q)[free]
                        if abs(gr) < self.grad_min:
                            return None
                        q[free] -= val / gr
                        if abs(val) <= self.f_tol:
                            return self._wrap(q)
                    return None
        return None

    def trace(self, seed):
        q0 = self.correct(np.asarray(seed, dtype=float))
        if q0 is None:
            raise TracingError(f"no curve found within the basin of seed {seed}")
        fwd, status = self._march(q0, +1.0)
        if status == "closed":
            return fwd, True
        bwd, _ = self._march(q0, -1.0)
        nodes = list(reversed(bwd[1:])) + fwd
        return nodes, False

    def seeds_from_grid(self, n=SEED_GRID):
        """Sign-change scan on an n x n grid (wrap edges included for periodic
        parameters), bisected onto the curve."""
        (a0, a1), (b0, b1) = self.domain
        aa = np.linspace(a0, a1, n, endpoint=not self.periodic[0])
        bb = np.linspace(b0, b1, n, endpoint=not self.periodic[1])
        if self.func_grid is not None:
            A, B = np.meshgrid(aa, bb, indexing="ij")
            F = np.asarray(self.func_grid(A, B), dtype=float)
        else:
            F = np.array([[self.func(np.array([a, b])) for b in bb] for a in aa])
        sgn = np.where(F >= 0, 1.0, -1.0)
        seeds = []
        cross_a = sgn[:-1, :] * sgn[1:, :] < 0
        cross_b = sgn[:, :-1] * sgn[:, 1:] < 0
        for i, j in zip(*np.nonzero(cross_a)):
            seeds.append(self._bisect((aa[i], bb[j]), (aa[i + 1], bb[j]),
                                      F[i, j], F[i + 1, j]))
        for i, j in zip(*np.nonzero(cross_b)):
            seeds.append(self._bisect((aa[i], bb[j]), (aa[i], bb[j + 1]),
                                      F[i, j], F[i, j + 1]))
        if self.periodic[0]:
            span = a1 - a0
            for j in np.nonzero(sgn[-1, :] * sgn[0, :] < 0)[0]:
                seeds.append(self._bisect((aa[-1], bb[j]), (aa[0] + span, bb[j]),
                                          F[-1, j], F[0, j]))
        if self.periodic[1]:
            span = b1 - b0
            for i in np.nonzero(sgn[:, -1] * sgn[:, 0] < 0)[0]:
                seeds.append(self._bisect((aa[i], bb[-1]), (aa[i], bb[0] + span),
                                          F[i, -1], F[i, 0]))
        return [s for s in seeds if s is not None], max(
            float(aa[1] - aa[0]), float(bb[1] - bb[0])
        )

    def _bisect(self, qa, qb, fa=None, fb=None, iters=40):
        """Bisection with optionally pinned endpoint values (the wrap edge of a
        periodic grid re-evaluates trig at a shifted coordinate whose sign can
        differ in the last ulp, so grid values are authoritative)."""
        qa = np.asarray(qa, dtype=float)
        qb = np.asarray(qb, dtype=float)
        fa = self.func(qa) if fa is None else fa
        fb = self.func(qb) if fb is None else fb
        if fa * fb > 0:
            return None
        for _ in range(iters):
            qm = 0.5 * (qa + qb)
            fm = self.func(qm)
            if fa * fm <= 0:
                qb, fb = qm, fm
            else:
                qa, fa = qm, fm
        return 0.5 * (qa + qb)


# -- contact-curve tracing ------------------------------------------------


def _slice_tracer(scene: SweptScene, face: int, t: float) -> _Implicit2D:
    surf = scene.face(face)

    def func(q):
        return float(scene.f(face, q[0], q[1], t))

    def grad(q):
        fu, fv, _ = scene.grad_f(face, q[0], q[1], t)
        return float(fu), float(fv)

    def func_grid(uu, vv):
        return scene.f_slice(face, uu, vv, t)

    return _Implicit2D(func, grad, surf.domain, surf.periodic, func_grid=func_grid)


def trace_contact_curve(scene: SweptScene, face: int, t: float, seed,
                        n_p: int | None = None) -> ContactCurve:
    """Trace the curve of contact through ``seed`` = (u, v) at time t."""
    scene.motion.check_time(t)
    tracer = _slice_tracer(scene, face, t)
    nodes, closed = tracer.trace(seed)
    if n_p:
        nodes = _resample_chart_nodes(scene, face, t, nodes, closed, n_p, tracer)
    pts = [scene.funnel_point(face, q[0], q[1], t) for q in nodes]
    return ContactCurve(t=float(t), face=face, points=pts, closed=closed)


def _resample_chart_nodes(scene, face, t, nodes, closed, n_p, tracer):
    """Resample to n_p nodes, uniform in world arclength, re-corrected."""
    surf = scene.face(face)
    arr = np.array(nodes)
    # unwrap periodic u so interpolation is monotone in the chart
    if surf.periodic[0]:
        span = surf.domain[0][1] - surf.domain[0][0]
        du = np.diff(arr[:, 0])
        du = (du + span / 2) % span - span / 2
        arr[:, 0] = arr[0, 0] + np.concatenate([[0.0], np.cumsum(du)])
    if closed:
        # close the loop in unwrapped coordinates
        end = arr[0].copy()
        if surf.periodic[0]:
            span = surf.domain[0][1] - surf.domain[0][0]
            d = (end[0] - arr[-1, 0] + span / 2) % span - span / 2
            end[0] = arr[-1, 0] + d
        arr = np.vstack([arr, end])
    world = scene.sigma(face, arr[:, 0], arr[:, 1], t)
    seg = np.linalg.norm(np.diff(world, axis=0), axis=-1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    total = s[-1]
    if total <= 0:
        raise TracingError("degenerate contact curve with zero length")
    targets = np.linspace(0.0, total, n_p + 1)[:-1] if closed else np.linspace(0.0, total, n_p)
    out = []
    for sv in targets:
        u = np.interp(sv, s, arr[:, 0])
        v = np.interp(sv, s, arr[:, 1])
        qc = tracer.correct(np.array([u, v]))
        if qc is None:
            raise TracingError("resampled node failed to re-converge onto f = 0")
        out.append(qc)
    return out


def find_slice_curves(scene: SweptScene, face: int, t: float, n_p: int,
                      seed_grid: int = SEED_GRID) -> list[ContactCurve]:
    """All contact-curve components of one face at time t (sign-grid seeded)."""
    tracer = _slice_tracer(scene, face, t)
    seeds, cell = tracer.seeds_from_grid(seed_grid)
    curves: list[ContactCurve] = []
    claimed: list[np.ndarray] = []
    for seed in seeds:
        q = tracer.correct(seed)
        if q is None:
            continue
        if any(
            np.min(np.linalg.norm(
                np.array([tracer._delta(q, node) for node in nodes]), axis=-1
            )) < 1.2 * cell
            for nodes in claimed
        ):
            continue
        nodes, closed = tracer.trace(q)
        claimed.append(np.array(nodes))
        resampled = _resample_chart_nodes(scene, face, t, nodes, closed, n_p, tracer)
        pts = [scene.funnel_point(face, qq[0], qq[1], t) for qq in resampled]
        curves.append(ContactCurve(t=float(t), face=face, points=pts, closed=closed))
    return curves


# -- funnel sampling with component bookkeeping ----------------------------


def _chart_distance(scene: SweptScene, prev: ContactCurve, cur: ContactCurve,
                    stride: int = 4) -> float:
    """min chart distance between node sets (periodic-aware); the funnel is
    continuous in (u, v, t), so adjacency lives in chart space."""
    if prev.face != cur.face:
        return math.inf
    surf = scene.face(cur.face)
    a = prev.param_nodes()[::stride]
    b = cur.param_nodes()[::stride]
    d = a[:, None, :] - b[None, :, :]
    if surf.periodic[0]:
        span = surf.domain[0][1] - surf.domain[0][0]
        d[..., 0] = (d[..., 0] + span / 2) % span - span / 2
    if surf.periodic[1]:
        span = surf.domain[1][1] - surf.domain[1][0]
        d[..., 1] = (d[..., 1] + span / 2) % span - span / 2
    return float(np.min(np.linalg.norm(d, axis=-1)))


def _median_chart_step(scene: SweptScene, curve: ContactCurve) -> float:
    surf = scene.face(curve.face)
    p = curve.param_nodes()
    if len(p) < 2:
        return 0.0
    d = np.diff(p, axis=0)
    if surf.periodic[0]:
        span = surf.domain[0][1] - surf.domain[0][0]
        d[:, 0] = (d[:, 0] + span / 2) % span - span / 2
    return float(np.median(np.linalg.norm(d, axis=-1)))


def _align_with_previous(prev: ContactCurve, cur: ContactCurve) -> ContactCurve:
    """Rotate/flip the node ordering of ``cur`` to follow ``prev``."""
    a = prev.world_nodes()
    b = cur.world_nodes()
    if len(a) != len(b):
        return cur
    n = len(b)
    if cur.closed:
        best = (np.inf, 0, False)
        for flip in (False, True):
            bb = b[::-1] if flip else b
            # distance for every cyclic shift via rolled sums
            for shift in range(n):
                d = np.linalg.norm(np.roll(bb, -shift, axis=0) - a, axis=-1).sum()
                if d < best[0]:
                    best = (d, shift, flip)
        _, shift, flip = best
        pts = cur.points[::-1] if flip else list(cur.points)
        pts = pts[shift:] + pts[:shift]
        return ContactCurve(cur.t, cur.face, pts, cur.closed, cur.component)
    d_fwd = np.linalg.norm(b - a, axis=-1).sum()
    d_rev = np.linalg.norm(b[::-1] - a, axis=-1).sum()
    if d_rev < d_fwd:
        return ContactCurve(cur.t, cur.face, cur.points[::-1], cur.closed, cur.component)
    return cur


def sample_funnel(scene: SweptScene, n_t: int, n_p: int, seed_grid: int = SEED_GRID,
                  threads: int = 1) -> Funnel:
    """Trace contact curves at n_t uniform times and link components.

    Components are matched across adjacent slices by nearest representative
    point with threshold 10x the median node step; births and deaths are
    flagged in ``warnings``, not resolved.
    """
    if n_t < 2:
        raise DomainError("n_t must be at least 2")
    if n_p < 8:
        raise DomainError("n_p must be at least 8")
    times = scene.motion.times(n_t)

    def _slice(t):
        out = []
        for face in scene.faces:
            out.extend(find_slice_curves(scene, face, float(t), n_p, seed_grid))
        return out

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            slices = list(pool.map(_slice, times))
    else:
        slices = [_slice(t) for t in times]

    warnings: list[str] = []
    components: dict[int, list[tuple[int, ContactCurve]]] = {}
    next_id = 0
    prev_curves: list[ContactCurve] = []
    for i, sl in enumerate(slices):
        if not sl:
            warnings.append(f"slice t={times[i]:.6f}: no contact curve found")
            continue
        for j, cur in enumerate(sl):
            best = None
            thresh = 10.0 * max(_median_chart_step(scene, cur), 1e-6)
            for prev in prev_curves:
                d = _chart_distance(scene, prev, cur)
                if d < thresh and (best is None or d < best[0]):
                    best = (d, prev)
            if best is None:
                cur.component = next_id
                components[next_id] = []
                next_id += 1
                if i > 0:
                    warnings.append(
                        f"component birth at t={times[i]:.6f} (id {cur.component})"
                    )
            else:
                cur.component = best[1].component
                aligned = _align_with_previous(best[1], cur)
                aligned.component = cur.component
                sl[j] = cur = aligned
            components[cur.component].append((i, cur))
        live = {c.component for c in sl}
        for prev in prev_curves:
            if prev.component not in live:
                warnings.append(
                    f"component death after t={times[max(i - 1, 0)]:.6f} (id {prev.component})"
                )
        prev_curves = sl
    for w in warnings:
        log.info(w)
    return Funnel(scene=scene, times=times, slices=slices, components=components,
                  warnings=warnings)


# -- end caps, edges, vertices ---------------------------------------------


def classify_endcap(scene: SweptScene, face: int, u, v, which: str) -> bool:
    """Membership in the left cap L (f <= 0 at t0) or right cap R (f >= 0 at t1)."""
    t0, t1 = scene.motion.interval
    if which == "left":
        return bool(scene.f(face, u, v, t0) <= 0.0)
    if which == "right":
        return bool(scene.f(face, u, v, t1) >= 0.0)
    raise DomainError(f"which must be 'left' or 'right', got {which!r}")


def edge_f(scene: SweptScene, edge: EdgeCurve, s, t):
    """Restriction f^e(s, t) = g(e(s), t) of f to a smooth edge."""
    u, v = edge.chart(s)
    return scene.f(edge.face, u, v, t)


def edge_grad(scene: SweptScene, edge: EdgeCurve, s, t):
    u, v = edge.chart(s)
    us, vs = edge.chart_dot(s)
    fu, fv, ft = scene.grad_f(edge.face, u, v, t)
    return fu * us + fv * vs, ft


def trace_edge_funnel(scene: SweptScene, edge: EdgeCurve, seed_grid: int = SEED_GRID
                      ) -> list[np.ndarray]:
    """Zero set F^e of f^e in the (s, t) rectangle, as traced polylines."""

    def func(q):
        return float(edge_f(scene, edge, q[0], q[1]))

    def grad(q):
        fs, ft = edge_grad(scene, edge, q[0], q[1])
        return float(fs), float(ft)

    def func_grid(ss, tt):
        return edge_f(scene, edge, ss, tt)

    domain = (edge.s_domain, scene.motion.interval)
    tracer = _Implicit2D(func, grad, domain, (edge.periodic, False),
                         grad_min=1e-8, func_grid=func_grid)
    seeds, cell = tracer.seeds_from_grid(seed_grid)
    # a vanishing restriction means the edge is in permanent tangency
    probe = np.max(np.abs([func(np.array([a, b]))
                           for a in np.linspace(*edge.s_domain, 16)
                           for b in np.linspace(*scene.motion.interval, 8)]))
    if probe < 1e-12:
        raise DegeneracyError("f^e vanishes identically on this edge")
    polylines: list[np.ndarray] = []
    for seed in seeds:
        q = tracer.correct(seed)
        if q is None:
            continue
        if any(
            np.min(np.linalg.norm(np.array([tracer._delta(q, n) for n in poly]),
                                  axis=-1)) < 1.2 * cell
            for poly in polylines
        ):
            continue
        nodes, closed = tracer.trace(q)
        poly = np.array(nodes)
        if closed:
            poly = np.vstack([poly, poly[:1]])
        polylines.append(poly)
    return polylines


def vertex_times(scene: SweptScene, vertex: tuple[int, float, float],
                 n: int = 2048, tol: float = 1e-10) -> list[float]:
    """Roots of f^z(t) = g(z, t) on the interval, by sign-change bisection."""
    face, u0, v0 = vertex
    t0, t1 = scene.motion.interval
    tt = np.linspace(t0, t1, n)
    vals = np.asarray(scene.f(face, u0, v0, tt), dtype=float)
    if np.max(np.abs(vals)) < 1e-12:
        raise DegeneracyError("f^z vanishes identically (general-position violation)")
    roots = []
    sgn = np.where(vals >= 0, 1.0, -1.0)
    for i in np.nonzero(sgn[:-1] * sgn[1:] < 0)[0]:
        a, b = tt[i], tt[i + 1]
        fa = vals[i]
        while b - a > tol:
            m = 0.5 * (a + b)
            fm = float(scene.f(face, u0, v0, m))
            if fa * fm <= 0:
                b = m
            else:
                a, fa = m, fm
        roots.append(0.5 * (a + b))
    for i in np.nonzero(np.abs(vals) == 0.0)[0]:
        roots.append(float(tt[i]))
    return sorted(roots)
