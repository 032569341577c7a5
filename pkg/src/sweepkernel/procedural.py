"""Procedural envelope parametrization: seed surface plus NR evaluators.

A tensor-product spline gamma(p, t) = (u-bar, v-bar, t) is fitted through a
funnel component's sample grid; evaluating the envelope at (p, t) then means
solving the 2x2 system

    f(u, v, t) = 0
    <sigma(u,v,t) - sigma(gamma(p,t)), dE-bar/dp> = 0

by damped Newton-Raphson seeded at gamma(p, t).  First derivatives of the
resulting map come from differentiating the same two equations in p and t.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import RectBivariateSpline, bisplev

from .errors import DerivativeError, EvaluationError, SeedBuildError
from .funnel import Funnel, SweptScene

SEED_RESIDUAL_MAX = 1e-3
NR_MAX_ITER = 30
NR_STEP_TOL = 1e-12
NR_RES_TOL = 1e-10


@dataclass
class SeedSurface:
    """Spline seed gamma(p,t) = (u(p,t), v(p,t), t) for one funnel component."""

    component: int
    face: int
    closed: bool
    degree: tuple[int, int]
    p_nodes: np.ndarray
    t_nodes: np.ndarray
    tck_u: tuple
    tck_v: tuple
    u_period: float
    residual_max: float
    residual_rms: float

    def _eval(self, tck, p, t, dp=0, dt=0):
        return float(bisplev(float(p), float(t), tck, dx=dp, dy=dt))

    def gamma(self, p, t):
        """(u, v, t); u is reported wrapped into the chart period."""
        u = self._eval(self.tck_u, p, t)
        v = self._eval(self.tck_v, p, t)
        return u, v, float(t)

    def jet(self, p, t):
        """Values and first/second spline derivatives needed by the NR system."""
        out = {}
        for name, tck in (("u", self.tck_u), ("v", self.tck_v)):
            out[name] = self._eval(tck, p, t)
            out[name + "_p"] = self._eval(tck, p, t, 1, 0)
            out[name + "_t"] = self._eval(tck, p, t, 0, 1)
            out[name + "_pp"] = self._eval(tck, p, t, 2, 0)
            out[name + "_pt"] = self._eval(tck, p, t, 1, 1)
        return out

    def domain(self):
        return (float(self.p_nodes[0]), float(self.p_nodes[-1])), (
            float(self.t_nodes[0]), float(self.t_nodes[-1]))


def _unwrap_component_grid(scene: SweptScene, funnel: Funnel, component: int):
    """(times, U, V) matrices for the component; u unwrapped along p and t."""
    grid = funnel.component_grid(component)
    if grid is None:
        raise SeedBuildError(
            f"component {component} is not a full grid over the interval "
            "(births/deaths or inconsistent node counts)"
        )
    times, rows = grid
    face = rows[0][0].face
    surf = scene.face(face)
    span = surf.domain[0][1] - surf.domain[0][0]
    U = np.array([[p.u for p in row] for row in rows])     # (n_t, n_p)
    V = np.array([[p.v for p in row] for row in rows])
    closed = all(funnel.slices[i][0].closed or True for i in range(len(rows)))
    closed = all(c.closed for sl_i, c in funnel.components[component])
    if surf.periodic[0]:
        for i in range(U.shape[0]):
            U[i] = np.unwrap(U[i], period=span)
        # align rows so u(., t) is continuous in t
        for i in range(1, U.shape[0]):
            shift = np.round(np.mean(U[i] - U[i - 1]) / span)
            U[i] -= shift * span
    return times, U, V, face, closed, span


def build_seed(scene: SweptScene, funnel: Funnel, component: int | None = None,
               n_t: int | None = None, n_p: int | None = None,
               degree: int = 3) -> SeedSurface:
    """Least-squares cubic (by default) tensor-product fit through the
    component's (p, t) sample grid; p is normalized arclength index."""
    if component is None:
        for cid in funnel.component_ids():
            if funnel.component_grid(cid) is not None:
                component = cid
                break
        else:
            raise SeedBuildError("no grid-compatible funnel component")
    times, U, V, face, closed, span = _unwrap_component_grid(scene, funnel, component)
    nt_full, np_full = U.shape
    ti = np.arange(nt_full) if n_t is None else np.unique(
        np.linspace(0, nt_full - 1, max(int(n_t), 2)).round().astype(int))
    pi = np.arange(np_full) if n_p is None else np.unique(
        np.linspace(0, np_full - 1, max(int(n_p), 4)).round().astype(int))
    times_s = times[ti]
    U_s, V_s = U[np.ix_(ti, pi)], V[np.ix_(ti, pi)]
    p_s = pi / float(np_full) if closed else pi / float(np_full - 1)

    if closed:
        # periodic extension so the fit is accurate across the seam
        k = min(degree, 3)
        pad = max(k + 1, 3)
        p_ext = np.concatenate([p_s[-pad:] - 1.0, p_s, p_s[:pad] + 1.0])
        U_ext = np.concatenate([U_s[:, -pad:] - span, U_s, U_s[:, :pad] + span], axis=1)
        V_ext = np.concatenate([V_s[:, -pad:], V_s, V_s[:, :pad]], axis=1)
    else:
        p_ext, U_ext, V_ext = p_s, U_s, V_s

    kx = min(degree, len(p_ext) - 1)
    ky = min(degree, len(times_s) - 1)
    spl_u = RectBivariateSpline(p_ext, times_s, U_ext.T, kx=kx, ky=ky, s=0)
    spl_v = RectBivariateSpline(p_ext, times_s, V_ext.T, kx=kx, ky=ky, s=0)

    # residuals against the full source grid
    P_full = (np.arange(np_full) / float(np_full if closed else np_full - 1))
    ru = spl_u(P_full, times, grid=True).T - U
    rv = spl_v(P_full, times, grid=True).T - V
    res = np.hypot(ru, rv)
    res_max = float(np.max(res))
    res_rms = float(np.sqrt(np.mean(res**2)))
    if res_max > SEED_RESIDUAL_MAX:
        raise SeedBuildError(
            f"seed fit residual {res_max:.3e} exceeds {SEED_RESIDUAL_MAX:.0e}"
        )
    return SeedSurface(
        component=int(component), face=face, closed=closed, degree=(kx, ky),
        p_nodes=p_s, t_nodes=times_s, tck_u=spl_u.tck, tck_v=spl_v.tck,
        u_period=span if closed else 0.0,
        residual_max=res_max, residual_rms=res_rms,
    )


@dataclass
class EnvelopeEval:
    p: float
    t: float
    u: float
    v: float
    world: np.ndarray
    iterations: int
    f_residual: float
    plane_residual: float
    warning: str | None = None


@dataclass
class ProceduralEnvelope:
    scene: SweptScene
    seed: SeedSurface
    max_iter: int = NR_MAX_ITER
    step_tol: float = NR_STEP_TOL
    res_tol: float = NR_RES_TOL

    def _anchor(self, p, t):
        """Seed point, iso-t tangent of the approximate envelope, and the
        anchored world point E-bar(p, t)."""
        jet = self.seed.jet(p, t)
        face = self.seed.face
        su, sv, _ = self.scene.sigma_jacobian(face, jet["u"], jet["v"], t)
        ebar = self.scene.sigma(face, jet["u"], jet["v"], t)
        ebar_p = su * jet["u_p"] + sv * jet["v_p"]
        return jet, ebar, ebar_p

    def residuals(self, u, v, t, ebar, ebar_p):
        face = self.seed.face
        f = float(self.scene.f(face, u, v, t))
        plane = float((self.scene.sigma(face, u, v, t) - ebar) @ ebar_p)
        return f, plane


def eval_envelope(env: ProceduralEnvelope, p, t) -> EnvelopeEval:
    """Newton-Raphson on (tangency, normal-plane) seeded from the spline."""
    scene, seed = env.scene, env.seed
    face = seed.face
    (p0, p1), (tt0, tt1) = seed.domain()
    if not (tt0 - 1e-9 <= t <= tt1 + 1e-9):
        raise EvaluationError(f"t = {t} outside the seed domain [{tt0}, {tt1}]")
    jet, ebar, ebar_p = env._anchor(p, t)
    u, v = jet["u"], jet["v"]
    f, plane = env.residuals(u, v, t, ebar, ebar_p)
    it = 0
    scale = max(1.0, float(np.linalg.norm(ebar_p)))
    while it < env.max_iter:
        if abs(f) <= env.res_tol and abs(plane) / scale <= env.res_tol:
            break
        fu, fv, _ = scene.grad_f(face, u, v, t)
        su, sv, _ = scene.sigma_jacobian(face, u, v, t)
        J = np.array([[float(fu), float(fv)],
                      [float(su @ ebar_p), float(sv @ ebar_p)]])
        try:
            step = np.linalg.solve(J, -np.array([f, plane]))
        except np.linalg.LinAlgError:
            raise EvaluationError("singular NR system", last_iterate=(u, v)) from None
        lam = 1.0
        base = math.hypot(f, plane / scale)
        for _ in range(8):
            u2, v2 = u + lam * step[0], v + lam * step[1]
            f2, plane2 = env.residuals(u2, v2, t, ebar, ebar_p)
            if math.hypot(f2, plane2 / scale) < base:
                break
            lam *= 0.5
        u, v, f, plane = u2, v2, f2, plane2
        it += 1
        if abs(lam * step[0]) <= env.step_tol and abs(lam * step[1]) <= env.step_tol:
            break
    if not (abs(f) <= env.res_tol and abs(plane) / scale <= env.res_tol):
        raise EvaluationError(
            f"procedural NR did not converge at (p={p}, t={t}): |f|={abs(f):.2e}",
            last_iterate=(u, v),
        )
    warning = None
    if _plane_sign_changes(env, p, t, ebar, ebar_p) > 1:
        warning = "normal-plane equation has multiple nearby roots (assumption check)"
    return EnvelopeEval(p=float(p), t=float(t), u=float(u), v=float(v),
                        world=scene.sigma(face, u, v, t), iterations=it,
                        f_residual=abs(f), plane_residual=abs(plane),
                        warning=warning)


def _plane_sign_changes(env: ProceduralEnvelope, p, t, ebar, ebar_p,
                        span: float = 0.2, n: int = 17) -> int:
    """Sign changes of the normal-plane equation along the iso-t seed curve
    within +-span of p (the uniqueness assumption monitor)."""
    seed = env.seed
    (pa, pb), _ = seed.domain()
    if seed.closed:
        ps = p + np.linspace(-span, span, n)
    else:
        ps = np.clip(p + np.linspace(-span, span, n), pa, pb)
    vals = []
    for q in ps:
        qq = q % 1.0 if seed.closed else q
        uq, vq, _ = seed.gamma(qq, t)
        w = env.scene.sigma(seed.face, uq, vq, t)
        vals.append(float((w - ebar) @ ebar_p))
    vals = np.array(vals)
    sgn = np.where(vals >= 0, 1.0, -1.0)
    return int(np.sum(sgn[:-1] * sgn[1:] < 0))


def assumption_monitor(env: ProceduralEnvelope, n_p: int = 24, n_t: int = 8) -> list[str]:
    """Sample the uniqueness assumption across the seed domain."""
    (pa, pb), (ta, tb) = env.seed.domain()
    issues = []
    for t in np.linspace(ta, tb, n_t):
        for p in np.linspace(pa, pb, n_p, endpoint=not env.seed.closed):
            _, ebar, ebar_p = env._anchor(p, t)
            changes = _plane_sign_changes(env, p, t, ebar, ebar_p)
            if changes != 1:
                issues.append(
                    f"normal-plane roots near (p={p:.3f}, t={t:.3f}): {changes} sign changes"
                )
    return issues


@dataclass
class EnvelopeDerivatives:
    dE_dp: np.ndarray
    dE_dt: np.ndarray
    u_p: float
    v_p: float
    u_t: float
    v_t: float
    condition: float


def eval_derivatives(env: ProceduralEnvelope, p, t) -> EnvelopeDerivatives:
    """Solve the differentiated NR system for (u_p, v_p) and (u_t, v_t)."""
    scene, seed = env.scene, env.seed
    face = seed.face
    ev = eval_envelope(env, p, t)
    u, v = ev.u, ev.v
    jet, ebar, ebar_p = env._anchor(p, t)

    surf = scene.face(face)
    A, _, Ad, _, _, _ = scene.motion_jet(float(t))
    sub_u, sub_v = surf.partials(jet["u"], jet["v"])          # at the seed point
    suu, suv, svv = surf.second_partials(jet["u"], jet["v"])
    sb_u, sb_v = sub_u @ A.T, sub_v @ A.T
    sb_uu, sb_uv, sb_vv = suu @ A.T, suv @ A.T, svv @ A.T
    sb_ut, sb_vt = sub_u @ Ad.T, sub_v @ Ad.T                 # d/dt of posed partials
    _, _, ebar_t3 = scene.sigma_jacobian(face, jet["u"], jet["v"], t)

    ebar_pp = (sb_uu * jet["u_p"] ** 2 + 2 * sb_uv * jet["u_p"] * jet["v_p"]
               + sb_vv * jet["v_p"] ** 2 + sb_u * jet["u_pp"] + sb_v * jet["v_pp"])
    ebar_t = sb_u * jet["u_t"] + sb_v * jet["v_t"] + ebar_t3
    ebar_pt = ((sb_uu * jet["u_t"] + sb_uv * jet["v_t"] + sb_ut) * jet["u_p"]
               + (sb_uv * jet["u_t"] + sb_vv * jet["v_t"] + sb_vt) * jet["v_p"]
               + sb_u * jet["u_pt"] + sb_v * jet["v_pt"])

    fu, fv, ft = (float(x) for x in scene.grad_f(face, u, v, t))
    su, sv, st = scene.sigma_jacobian(face, u, v, t)
    sig = scene.sigma(face, u, v, t)
    J = np.array([[fu, fv], [float(su @ ebar_p), float(sv @ ebar_p)]])
    cond = float(np.linalg.cond(J))
    if not np.isfinite(cond) or cond > 1e12:
        raise DerivativeError(
            f"derivative system singular (cond {cond:.2e}); theta ~ 0 expected here"
        )
    rhs_p = np.array([
        0.0,
        float(ebar_p @ ebar_p) - float((sig - ebar) @ ebar_pp),
    ])
    up, vp = np.linalg.solve(J, rhs_p)
    rhs_t = np.array([
        -ft,
        -float((st - ebar_t) @ ebar_p) - float((sig - ebar) @ ebar_pt),
    ])
    ut, vt = np.linalg.solve(J, rhs_t)
    return EnvelopeDerivatives(
        dE_dp=su * up + sv * vp,
        dE_dt=su * ut + sv * vt + st,
        u_p=float(up), v_p=float(vp), u_t=float(ut), v_t=float(vt),
        condition=cond,
    )


def fd_derivative_check(env: ProceduralEnvelope, p, t, step=1e-5):
    """max |analytic - central FD| over dE/dp and dE/dt."""
    d = eval_derivatives(env, p, t)
    (pa, pb), (ta, tb) = env.seed.domain()
    hp = step if (env.seed.closed or (pa + step <= p <= pb - step)) else -step
    ep = (eval_envelope(env, p + step, t).world - eval_envelope(env, p - step, t).world) / (2 * step)
    ht = min(step, (tb - ta) / 4)
    if t - ht < ta:
        w0 = eval_envelope(env, p, t).world
        et = (-3 * w0 + 4 * eval_envelope(env, p, t + ht).world
              - eval_envelope(env, p, t + 2 * ht).world) / (2 * ht)
    elif t + ht > tb:
        w0 = eval_envelope(env, p, t).world
        et = (3 * w0 - 4 * eval_envelope(env, p, t - ht).world
              + eval_envelope(env, p, t - 2 * ht).world) / (2 * ht)
    else:
        et = (eval_envelope(env, p, t + ht).world - eval_envelope(env, p, t - ht).world) / (2 * ht)
    return float(max(np.max(np.abs(d.dE_dp - ep)), np.max(np.abs(d.dE_dt - et))))


# -- serialization -------------------------------------------------------------


def dump_seed(seed: SeedSurface) -> str:
    """Text form: degrees, knots and control nets of the two scalar splines."""
    out = [f"component {seed.component}", f"face {seed.face}",
           f"closed {int(seed.closed)}", f"degree {seed.degree[0]} {seed.degree[1]}",
           f"period {seed.u_period!r}"]
    for name, tck in (("u", seed.tck_u), ("v", seed.tck_v)):
        tx, ty, c = tck[0], tck[1], tck[2]
        out.append(f"{name}_knots_p " + " ".join(format(x, '.17g') for x in tx))
        out.append(f"{name}_knots_t " + " ".join(format(x, '.17g') for x in ty))
        out.append(f"{name}_coeffs " + " ".join(format(x, '.17g') for x in np.ravel(c)))
    return "\n".join(out) + "\n"
