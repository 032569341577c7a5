"""The theta invariant on the funnel and its zero-set machinery.

theta = l f_u + m f_v - f_t, where (l, m) express the velocity in the posed
tangent basis: sigma_t = l sigma_u + m sigma_v.  Three independent evaluation
routes are provided (coefficient form, frame determinant, curvature closed
form equal to the second time derivative of the inverse-trajectory signed
distance), plus a finite-difference oracle on that signed distance.  The
zero set is traced as curves on the funnel; the oriented-angle function phi
along those curves locates singular trim points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegeneracyError, NotOnFunnelError, TracingError
from .funnel import F_TOL, Funnel, FunnelPoint, SweptScene

LM_RESIDUAL_TOL = 1e-7
PLANAR_GRAD_EPS = 1e-8
THETA_TOL = 1e-8
GRAD_THETA_MIN = 1e-7
FD_GRAD_STEP = 1e-5


@dataclass
class ThetaSample:
    point: FunnelPoint
    l: float
    m: float
    theta: float
    route: str


@dataclass
class PhiRoot:
    s: float
    params: np.ndarray
    world: np.ndarray
    phi_prime: float
    curve_index: int = -1


@dataclass
class ThetaZeroCurve:
    """Polyline on the funnel with theta = 0 at every node."""

    face: int
    params: np.ndarray          # (n, 3) chart coordinates (u, v, t)
    closed: bool
    theta: np.ndarray
    grad_theta: np.ndarray      # (n, 3), finite differences
    zbar: np.ndarray            # (n, 3) null direction (l, m, -1)
    grad_f: np.ndarray          # (n, 3)
    tangents: np.ndarray        # (n, 3) unit d(Omega)/ds
    arclength: np.ndarray       # (n,)
    phi: np.ndarray             # (n,)
    roots: list[PhiRoot] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def world(self, scene: SweptScene) -> np.ndarray:
        p = self.params
        return scene.sigma(self.face, p[:, 0], p[:, 1], p[:, 2])


@dataclass
class SweepClassification:
    verdict: str                # Decomposable | NonDecomposable | Marginal
    theta_min: float
    theta_max: float
    eps: float
    n_positive: int
    n_negative: int
    n_zero: int
    argmin: FunnelPoint | None = None
    delta: float | None = None
    warnings: list[str] = field(default_factory=list)


# -- pointwise routes -------------------------------------------------------


def lm_coefficients(point: FunnelPoint) -> tuple[float, float]:
    """Solve sigma_t = l sigma_u + m sigma_v (least squares on the funnel)."""
    su, sv, st = point.sigma_u, point.sigma_v, point.sigma_t
    g = np.array([[su @ su, su @ sv], [sv @ su, sv @ sv]])
    rhs = np.array([st @ su, st @ sv])
    l, m = np.linalg.solve(g, rhs)
    residual = np.linalg.norm(st - l * su - m * sv)
    if abs(point.f) <= F_TOL and residual > LM_RESIDUAL_TOL:
        raise NotOnFunnelError(
            f"velocity is not tangent: ||sigma_t - l sigma_u - m sigma_v|| = {residual:.3e}"
        )
    return float(l), float(m)


def theta(point: FunnelPoint) -> float:
    """Coefficient form l f_u + m f_v - f_t; falls back to -f_t where the
    in-slice gradient vanishes (the two agree there)."""
    if math.hypot(point.f_u, point.f_v) < PLANAR_GRAD_EPS:
        return -point.f_t
    l, m = lm_coefficients(point)
    return l * point.f_u + m * point.f_v - point.f_t


def theta_sample(point: FunnelPoint) -> ThetaSample:
    if math.hypot(point.f_u, point.f_v) < PLANAR_GRAD_EPS:
        l, m = lm_coefficients(point)
        return ThetaSample(point, l, m, -point.f_t, route="fallback-ft")
    l, m = lm_coefficients(point)
    return ThetaSample(point, l, m, l * point.f_u + m * point.f_v - point.f_t,
                       route="coefficient-form")


def theta_via_frames(point: FunnelPoint) -> tuple[float, np.ndarray]:
    """Frame-determinant route: express (J alpha, J beta) in (sigma_u, sigma_v)
    as D and return det(D) / (f_u^2 + f_v^2)."""
    fu, fv, ft = point.f_u, point.f_v, point.f_t
    denom = fu * fu + fv * fv
    if denom < PLANAR_GRAD_EPS**2:
        raise DegeneracyError("(f_u, f_v) ~ 0: use the -f_t fallback route")
    beta = np.array([-fv, fu, 0.0])
    alpha = np.cross(point.grad, beta)
    J = np.column_stack([point.sigma_u, point.sigma_v, point.sigma_t])
    ja, jb = J @ alpha, J @ beta
    su, sv = point.sigma_u, point.sigma_v
    g = np.array([[su @ su, su @ sv], [sv @ su, sv @ sv]])
    d = np.linalg.solve(g, np.array([[ja @ su, jb @ su], [ja @ sv, jb @ sv]]))
    return float(np.linalg.det(d) / denom), d


def theta_closed_form(scene: SweptScene, point: FunnelPoint) -> float:
    """Curvature route <-sigma_tt + 2 Adot V, N> + kappa |V|^2, with Adot the
    spatial spin A'(t) A(t)^T (the motion re-based so A(t0) = I)."""
    A = scene.motion.rot(np.asarray(point.t))
    Ad = scene.motion.rot_dot(np.asarray(point.t))
    spin = Ad @ A.T
    sig_tt = scene.sigma_tt(point.face, point.u, point.v, point.t)
    l, m = lm_coefficients(point)
    kv2 = float(scene.face(point.face).gauss_differential_quadratic(
        point.u, point.v, np.array([l, m])))
    return float((-sig_tt + 2.0 * spin @ point.velocity) @ point.normal) + kv2


def lambda_signed(scene: SweptScene, point: FunnelPoint, t: float) -> float:
    """Signed distance of the inverse trajectory of sigma(point) from the
    boundary (negative inside), via closest-point projection seeded at the
    contact parameters."""
    ybar = scene.motion.inverse_point(point.world, float(t))
    return scene.solid.signed_distance_exact(ybar, seed=(point.face, point.u, point.v))


@dataclass
class ThetaRoutes:
    coefficient: float
    frame_det: float
    closed_form: float
    fd_lambda: float

    def spread(self) -> float:
        vals = [self.coefficient, self.frame_det, self.closed_form, self.fd_lambda]
        return max(vals) - min(vals)


def theta_fd_check(scene: SweptScene, point: FunnelPoint, step: float = 1e-3) -> ThetaRoutes:
    """All theta routes at one funnel point, including the central second
    difference of lambda (the independent oracle)."""
    t0, t1 = scene.motion.interval
    tc = point.t
    h = min(step, max((t1 - t0) / 8, 1e-6))
    if tc - h < t0:
        lam0 = lambda_signed(scene, point, tc)
        lam1 = lambda_signed(scene, point, tc + h)
        lam2 = lambda_signed(scene, point, tc + 2 * h)
        fd = (lam0 - 2 * lam1 + lam2) / (h * h)
    elif tc + h > t1:
        lam0 = lambda_signed(scene, point, tc)
        lam1 = lambda_signed(scene, point, tc - h)
        lam2 = lambda_signed(scene, point, tc - 2 * h)
        fd = (lam0 - 2 * lam1 + lam2) / (h * h)
    else:
        lam_m = lambda_signed(scene, point, tc - h)
        lam_0 = lambda_signed(scene, point, tc)
        lam_p = lambda_signed(scene, point, tc + h)
        fd = (lam_p - 2 * lam_0 + lam_m) / (h * h)
    if math.hypot(point.f_u, point.f_v) < PLANAR_GRAD_EPS:
        frame = -point.f_t
    else:
        frame = theta_via_frames(point)[0]
    return ThetaRoutes(
        coefficient=theta(point),
        frame_det=frame,
        closed_form=theta_closed_form(scene, point),
        fd_lambda=float(fd),
    )


# -- the extension of theta off the funnel (for tracing) --------------------


def theta_extended(scene: SweptScene, face: int, u: float, v: float, t: float) -> float:
    """theta evaluated from raw chart data; equals theta on the funnel and
    extends it smoothly nearby (least-squares (l, m))."""
    su, sv, st = scene.sigma_jacobian(face, u, v, t)
    g = np.array([[su @ su, su @ sv], [sv @ su, sv @ sv]])
    rhs = np.array([st @ su, st @ sv])
    l, m = np.linalg.solve(g, rhs)
    fu, fv, ft = (float(x) for x in scene.grad_f(face, u, v, t))
    if math.hypot(fu, fv) < PLANAR_GRAD_EPS:
        return -ft
    return float(l * fu + m * fv - ft)


def grad_theta_fd(scene: SweptScene, face: int, q, step: float = FD_GRAD_STEP
                  ) -> np.ndarray:
    """Central finite-difference gradient of the extended theta."""
    u, v, t = (float(x) for x in q)
    t0, t1 = scene.motion.interval
    out = np.empty(3)
    for k, (du, dv, dt) in enumerate(((step, 0, 0), (0, step, 0), (0, 0, step))):
        tp, tm = t + dt, t - dt
        if tp > t1 or tm < t0:
            # shift the time stencil inside the interval
            shift = min(t1 - t, t - t0)
            tp, tm = t + shift, t - shift
            if tp - tm < 1e-12:
                tp, tm = min(t + 2 * step, t1), max(t - 2 * step, t0)
        hi = theta_extended(scene, face, u + du, v + dv, tp if dt else t)
        lo = theta_extended(scene, face, u - du, v - dv, tm if dt else t)
        denom = (tp - tm) if dt else 2 * step
        out[k] = (hi - lo) / denom
    return out


# -- theta-zero tracing ------------------------------------------------------


class _FunnelCurveTracer:
    """Predictor-corrector for the 1-D system f = 0, theta = 0 in (u, v, t)."""

    def __init__(self, scene: SweptScene, face: int):
        self.scene = scene
        self.face = face
        self.surf = scene.face(face)
        self.interval = scene.motion.interval

    def residual(self, q):
        f = float(self.scene.f(self.face, q[0], q[1], q[2]))
        th = theta_extended(self.scene, self.face, q[0], q[1], q[2])
        return np.array([f, th])

    def jacobian(self, q):
        fu, fv, ft = (float(x) for x in self.scene.grad_f(self.face, *q))
        gth = grad_theta_fd(self.scene, self.face, q)
        return np.array([[fu, fv, ft], gth])

    def _wrap(self, q):
        u, v = self.surf.wrap(q[0], q[1])
        if not self.surf.periodic[1]:
            v0, v1 = self.surf.domain[1]
            v = float(np.clip(v, v0, v1))
        t = float(np.clip(q[2], *self.interval))
        return np.array([u, v, t])

    def correct(self, q, max_iter=40):
        from .errors import RegularityError

        q = self._wrap(np.asarray(q, dtype=float))
        try:
            for _ in range(max_iter):
                r = self.residual(q)
                if abs(r[0]) <= F_TOL and abs(r[1]) <= THETA_TOL:
                    return q
                J = self.jacobian(q)
                dq, *_ = np.linalg.lstsq(J, -r, rcond=None)
                if np.linalg.norm(dq) > 0.25:
                    dq *= 0.25 / np.linalg.norm(dq)
                q = self._wrap(q + dq)
            r = self.residual(q)
        except RegularityError:
            return None
        if abs(r[0]) <= F_TOL and abs(r[1]) <= THETA_TOL:
            return q
        return None

    def tangent(self, q):
        J = self.jacobian(q)
        tau = np.cross(J[0], J[1])
        n = np.linalg.norm(tau)
        if n < 1e-12:
            raise DegeneracyError("theta-zero tangent undefined (grad f || grad theta)")
        return tau / n

    def _delta(self, a, b):
        d = a - b
        if self.surf.periodic[0]:
            span = self.surf.domain[0][1] - self.surf.domain[0][0]
            d[0] = (d[0] + span / 2) % span - span / 2
        return d

    def _near_start(self, q_prev, q_new, start, arclen, h_ref):
        if arclen < 6 * h_ref:
            return False
        seg = self._delta(q_new, q_prev)
        rel = self._delta(start, q_prev)
        L2 = float(seg @ seg)
        if L2 <= 0:
            return False
        lam = float(np.clip(rel @ seg / L2, 0.0, 1.0))
        return np.linalg.norm(rel - lam * seg) < 0.75 * math.sqrt(L2) + 1e-9

    def march(self, q0, direction, max_nodes=8000):
        t0, t1 = self.interval
        (u0, u1), (v0, v1) = self.surf.domain
        nodes = [q0]
        tau = self.tangent(q0) * direction
        h = 5e-3
        arclen = 0.0
        while len(nodes) < max_nodes:
            q = nodes[-1]
            stepped = None
            while h >= 1e-5:
                qp = q + h * tau
                out_t = qp[2] < t0 or qp[2] > t1
                out_v = (not self.surf.periodic[1]) and (qp[1] < v0 or qp[1] > v1)
                if out_t or out_v:
                    qc = self._clip(q, qp)
                    if qc is not None:
                        nodes.append(qc)
                        return nodes, "boundary"
                    h *= 0.5
                    continue
                qc = self.correct(qp, max_iter=25)
                if qc is not None and np.linalg.norm(self._delta(qc, q)) <= 3 * h:
                    stepped = qc
                    break
                h *= 0.5
            if stepped is None:
                return nodes, "open"
            if self._near_start(q, stepped, nodes[0], arclen, 2e-2):
                return nodes, "closed"
            arclen += float(np.linalg.norm(self._delta(stepped, q)))
            nodes.append(stepped)
            tnew = self.tangent(stepped)
            if float(tnew @ tau) < 0:
                tnew = -tnew
            tau = tnew
            h = min(h * 1.4, 2e-2)
        raise TracingError("theta-zero tracing exhausted its node budget")

    def _clip(self, q_in, q_out):
        """Land on the t (or v) face of the box, correcting inside that face."""
        t0, t1 = self.interval
        bounds = [(2, t0), (2, t1)]
        if not self.surf.periodic[1]:
            bounds += [(1, self.surf.domain[1][0]), (1, self.surf.domain[1][1])]
        for axis, bound in bounds:
            if (q_in[axis] - bound) * (q_out[axis] - bound) < 0 or q_out[axis] == bound:
                lam = (bound - q_in[axis]) / (q_out[axis] - q_in[axis])
                q = q_in + lam * (q_out - q_in)
                q[axis] = bound
                for _ in range(40):
                    r = self.residual(q)
                    if abs(r[0]) <= F_TOL and abs(r[1]) <= THETA_TOL:
                        return self._wrap(q)
                    J = self.jacobian(q)
                    J = np.delete(J, axis, axis=1)
                    try:
                        dq = np.linalg.solve(J, -r)
                    except np.linalg.LinAlgError:
                        return None
                    free = [k for k in range(3) if k != axis]
                    q[free[0]] += dq[0]
                    q[free[1]] += dq[1]
                return None
        return None

    def trace(self, seed):
        q0 = self.correct(seed)
        if q0 is None:
            raise TracingError(f"theta-zero seed failed to converge: {seed}")
        fwd, status = self.march(q0, +1.0)
        closed = status == "closed"
        if not closed:
            bwd, _ = self.march(q0, -1.0)
            nodes = list(reversed(bwd[1:])) + fwd
        else:
            nodes = fwd
        return np.array(nodes), closed


def _curve_data(scene: SweptScene, face: int, nodes: np.ndarray, closed: bool
                ) -> ThetaZeroCurve:
    """Attach per-node theta, gradients, z-bar, tangents, arclength and phi."""
    n = len(nodes)
    th = np.empty(n)
    gth = np.empty((n, 3))
    zbar = np.empty((n, 3))
    gf = np.empty((n, 3))
    warnings = []
    for i, q in enumerate(nodes):
        pt = scene.funnel_point(face, q[0], q[1], q[2], require_on=False)
        l, m = lm_coefficients(pt)
        th[i] = theta(pt)
        gth[i] = grad_theta_fd(scene, face, q)
        zbar[i] = (l, m, -1.0)
        gf[i] = pt.grad
        if np.linalg.norm(gth[i]) < GRAD_THETA_MIN:
            warnings.append(f"||grad theta|| = {np.linalg.norm(gth[i]):.2e} at node {i}")
    # chart-space tangents by central differences on the polyline
    diffs = np.empty((n, 3))
    surf = scene.face(face)
    span = surf.domain[0][1] - surf.domain[0][0]

    def delta(a, b):
        d = a - b
        if surf.periodic[0]:
            d[0] = (d[0] + span / 2) % span - span / 2
        return d

    seg = np.array([np.linalg.norm(delta(nodes[(i + 1) % n], nodes[i]))
                    for i in range(n - (0 if closed else 1))])
    s = np.concatenate([[0.0], np.cumsum(seg)])[:n]
    for i in range(n):
        if closed:
            nxt, prv = nodes[(i + 1) % n], nodes[(i - 1) % n]
            d = delta(nxt, prv)
        elif i == 0:
            d = delta(nodes[1], nodes[0])
        elif i == n - 1:
            d = delta(nodes[-1], nodes[-2])
        else:
            d = delta(nodes[i + 1], nodes[i - 1])
        norm = np.linalg.norm(d)
        diffs[i] = d / norm if norm > 0 else d
    phi = np.einsum("ij,ij->i", np.cross(zbar, diffs), gf)
    return ThetaZeroCurve(face=face, params=nodes, closed=closed, theta=th,
                          grad_theta=gth, zbar=zbar, grad_f=gf, tangents=diffs,
                          arclength=s, phi=phi, warnings=warnings)


def trace_theta_zero(scene: SweptScene, funnel: Funnel) -> list[ThetaZeroCurve]:
    """Trace every theta = 0 curve seeded by sign changes along funnel slices."""
    curves: list[ThetaZeroCurve] = []
    for sl in funnel.slices:
        for curve in sl:
            pts = curve.points
            th = np.array([theta(p) for p in pts])
            rng = range(len(pts)) if curve.closed else range(len(pts) - 1)
            for i in rng:
                j = (i + 1) % len(pts)
                if th[i] * th[j] >= 0:
                    continue
                lam = th[i] / (th[i] - th[j])
                du = pts[j].u - pts[i].u
                surf = scene.face(curve.face)
                if surf.periodic[0]:
                    span = surf.domain[0][1] - surf.domain[0][0]
                    du = (du + span / 2) % span - span / 2
                seed = np.array([pts[i].u + lam * du,
                                 pts[i].v + lam * (pts[j].v - pts[i].v),
                                 curve.t])
                tracer = _FunnelCurveTracer(scene, curve.face)
                q0 = tracer.correct(seed)
                if q0 is None:
                    continue
                if any(c.face == curve.face and
                       np.min(np.linalg.norm(c.params - q0, axis=1)) < 5e-2
                       for c in curves):
                    continue
                nodes, closed = tracer.trace(q0)
                curves.append(_curve_data(scene, curve.face, nodes, closed))
    for c in curves:
        locate_phi_roots(scene, c)
    return curves


# -- phi and its roots --------------------------------------------------------


def phi_at(scene: SweptScene, curve: ThetaZeroCurve, q: np.ndarray,
           reference_tangent: np.ndarray) -> float:
    """phi = <z-bar x dOmega/ds, grad f> at an on-curve point q."""
    pt = scene.funnel_point(curve.face, q[0], q[1], q[2], require_on=False)
    l, m = lm_coefficients(pt)
    tracer = _FunnelCurveTracer(scene, curve.face)
    tau = tracer.tangent(q)
    if float(tau @ reference_tangent) < 0:
        tau = -tau
    return float(np.cross(np.array([l, m, -1.0]), tau) @ pt.grad)


def locate_phi_roots(scene: SweptScene, curve: ThetaZeroCurve, s_tol: float = 1e-8
                     ) -> list[PhiRoot]:
    """Sign-change bisection of phi along the curve; phi' by secant."""
    n = len(curve.params)
    tracer = _FunnelCurveTracer(scene, curve.face)
    roots: list[PhiRoot] = []
    phi_scale = float(np.max(np.abs(curve.phi))) if n else 0.0
    if phi_scale < 1e-9:
        curve.roots = []
        curve.warnings.append(
            "phi vanishes identically along this theta-zero curve (non-generic scene); "
            "no singular trim seed available from phi"
        )
        return []
    pairs = range(n) if curve.closed else range(n - 1)
    for i in pairs:
        j = (i + 1) % n
        if not np.isfinite(curve.phi[i]) or curve.phi[i] * curve.phi[j] >= 0:
            continue
        if max(abs(curve.phi[i]), abs(curve.phi[j])) < 1e-9:
            continue
        qa, qb = curve.params[i].copy(), curve.params[j].copy()
        fa = curve.phi[i]
        ref = curve.tangents[i]
        sa = curve.arclength[i]
        sb = curve.arclength[j] if j > i else curve.arclength[-1] + np.linalg.norm(
            curve.params[j] - curve.params[i])
        while sb - sa > s_tol:
            qm = tracer.correct(0.5 * (qa + qb))
            if qm is None:
                break
            fm = phi_at(scene, curve, qm, ref)
            if fa * fm <= 0:
                qb, sb = qm, 0.5 * (sa + sb)
            else:
                qa, fa, sa = qm, fm, 0.5 * (sa + sb)
        q_root = tracer.correct(0.5 * (qa + qb))
        if q_root is None:
            continue
        # secant slope of phi w.r.t. arclength
        h = 1e-4
        q_plus = tracer.correct(q_root + h * ref)
        q_minus = tracer.correct(q_root - h * ref)
        if q_plus is None or q_minus is None:
            slope = float("nan")
        else:
            dist = np.linalg.norm(q_plus - q_minus)
            slope = (phi_at(scene, curve, q_plus, ref)
                     - phi_at(scene, curve, q_minus, ref)) / dist
        roots.append(PhiRoot(
            s=float(0.5 * (sa + sb)),
            params=q_root,
            world=np.asarray(scene.sigma(curve.face, *q_root), float),
            phi_prime=float(slope),
            curve_index=-1,
        ))
    curve.roots = roots
    if not roots:
        curve.warnings.append(
            "phi has no sign change on this theta-zero curve; if the curve bounds a "
            "theta < 0 region this is suspicious"
        )
    return roots


# -- classification -----------------------------------------------------------


def classify_sweep(funnel: Funnel, eps: float = 1e-6) -> SweepClassification:
    """Three-valued decomposability verdict from the sampled theta field."""
    pts = funnel.all_points()
    if not pts:
        raise DegeneracyError("empty funnel: nothing to classify")
    values = np.array([theta(p) for p in pts])
    tmin, tmax = float(np.min(values)), float(np.max(values))
    if tmin > eps:
        verdict = "Decomposable"
    elif tmin < -eps:
        verdict = "NonDecomposable"
    else:
        verdict = "Marginal"
    return SweepClassification(
        verdict=verdict,
        theta_min=tmin,
        theta_max=tmax,
        eps=eps,
        n_positive=int(np.sum(values > eps)),
        n_negative=int(np.sum(values < -eps)),
        n_zero=int(np.sum(np.abs(values) <= eps)),
        argmin=pts[int(np.argmin(values))],
        warnings=list(funnel.warnings),
    )
