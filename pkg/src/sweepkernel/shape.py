"""Regular parametric surfaces and smooth closed solids.

Surfaces expose analytic first and second partials; unit normals, their
derivatives and the shape operator (differential of the outward Gauss map)
are derived from those in closed form.  Solids add a fast signed membership
measure (negative inside, exact sign everywhere, exact distance for sphere
and capsule, first-order distance otherwise) and a closest-point projection
used by the signed-distance function of the inverse-trajectory machinery.

Everything is immutable after construction; evaluators broadcast over
numpy arrays.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, ProjectionError, RegularityError

REGULARITY_EPS = 1e-8
POLE_MARGIN = 1e-6


class Classification(enum.Enum):
    INSIDE = "Inside"
    ON_BOUNDARY = "OnBoundary"
    OUTSIDE = "Outside"


def _cross(a, b):
    return np.cross(a, b, axis=-1)


def _dot(a, b):
    return np.einsum("...i,...i->...", a, b)


class ParametricSurface:
    """Base chart: subclasses provide ``point`` and the five partials.

    ``domain`` is ((u0, u1), (v0, v1)); ``periodic`` flags each parameter
    (period = domain span).
    """

    domain: tuple[tuple[float, float], tuple[float, float]]
    periodic: tuple[bool, bool]

    def point(self, u, v) -> np.ndarray:
        raise NotImplementedError

    def partials(self, u, v) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def second_partials(self, u, v) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        raise NotImplementedError

    # -- derived quantities ------------------------------------------------

    def raw_normal(self, u, v) -> np.ndarray:
        su, sv = self.partials(u, v)
        return _cross(su, sv)

    def unit_normal(self, u, v) -> np.ndarray:
        """Outward unit normal; raises RegularityError at degenerate points."""
        w = self.raw_normal(u, v)
        n = np.linalg.norm(w, axis=-1)
        if np.any(n < REGULARITY_EPS):
            raise RegularityError(
                f"degenerate surface point: ||S_u x S_v|| = {float(np.min(n)):.3e}"
            )
        return w / n[..., None]

    def normal_derivatives(self, u, v) -> tuple[np.ndarray, np.ndarray]:
        """d/du and d/dv of the unit normal, in closed form."""
        su, sv = self.partials(u, v)
        suu, suv, svv = self.second_partials(u, v)
        w = _cross(su, sv)
        nw = np.linalg.norm(w, axis=-1)
        if np.any(nw < REGULARITY_EPS):
            raise RegularityError("degenerate surface point in normal_derivatives")
        n = w / nw[..., None]
        wu = _cross(suu, sv) + _cross(su, suv)
        wv = _cross(suv, sv) + _cross(su, svv)
        nu = (wu - n * _dot(n, wu)[..., None]) / nw[..., None]
        nv = (wv - n * _dot(n, wv)[..., None]) / nw[..., None]
        return nu, nv

    def shape_operator(self, u, v) -> np.ndarray:
        """2x2 matrix W of the Gauss-map differential in the (S_u, S_v) basis.

        [N_u N_v] = [S_u S_v] W; positive definite for a convex solid with
        outward normals.  Normal curvature along a chart direction d is
        <W d, d>_I / <d, d>_I with I the first fundamental form.
        """
        su, sv = self.partials(u, v)
        nu, nv = self.normal_derivatives(u, v)
        g = np.stack(
            [
                np.stack([_dot(su, su), _dot(su, sv)], axis=-1),
                np.stack([_dot(sv, su), _dot(sv, sv)], axis=-1),
            ],
            axis=-2,
        )
        rhs = np.stack(
            [
                np.stack([_dot(su, nu), _dot(su, nv)], axis=-1),
                np.stack([_dot(sv, nu), _dot(sv, nv)], axis=-1),
            ],
            axis=-2,
        )
        return np.linalg.solve(g, rhs)

    def first_fundamental(self, u, v) -> np.ndarray:
        su, sv = self.partials(u, v)
        return np.stack(
            [
                np.stack([_dot(su, su), _dot(su, sv)], axis=-1),
                np.stack([_dot(sv, su), _dot(sv, sv)], axis=-1),
            ],
            axis=-2,
        )

    def normal_curvature(self, u, v, direction) -> np.ndarray:
        """kappa along a chart direction (du, dv)."""
        d = np.asarray(direction, dtype=float)
        w = self.shape_operator(u, v)
        g = self.first_fundamental(u, v)
        wd = np.einsum("...ij,...j->...i", w, d)
        num = np.einsum("...i,...ij,...j->...", wd, g, d)
        den = np.einsum("...i,...ij,...j->...", d, g, d)
        return num / den

    def gauss_differential_quadratic(self, u, v, direction) -> np.ndarray:
        """<G*(X), X> for the tangent vector X with chart coordinates ``direction``
        (no normalization; this is kappa * |X|^2)."""
        d = np.asarray(direction, dtype=float)
        w = self.shape_operator(u, v)
        g = self.first_fundamental(u, v)
        wd = np.einsum("...ij,...j->...i", w, d)
        return np.einsum("...i,...ij,...j->...", wd, g, d)

    # -- domain helpers ------------------------------------------------------

    def wrap(self, u, v):
        """Fold periodic parameters back into the domain."""
        (u0, u1), (v0, v1) = self.domain
        if self.periodic[0]:
            u = (u - u0) % (u1 - u0) + u0
        if self.periodic[1]:
            v = (v - v0) % (v1 - v0) + v0
        return u, v

    def in_domain(self, u, v, slack=0.0) -> bool:
        (u0, u1), (v0, v1) = self.domain
        ok_u = self.periodic[0] or (u0 - slack <= u <= u1 + slack)
        ok_v = self.periodic[1] or (v0 - slack <= v <= v1 + slack)
        return bool(ok_u and ok_v)

    def fd_partial_residual(self, u, v, step=1e-5) -> float:
        """max |analytic - central FD| over the five partials (test hook)."""
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        su, sv = self.partials(u, v)
        suu, suv, svv = self.second_partials(u, v)
        fd_u = (self.point(u + step, v) - self.point(u - step, v)) / (2 * step)
        fd_v = (self.point(u, v + step) - self.point(u, v - step)) / (2 * step)
        fd_uu = (self.point(u + step, v) - 2 * self.point(u, v) + self.point(u - step, v)) / step**2
        fd_vv = (self.point(u, v + step) - 2 * self.point(u, v) + self.point(u, v - step)) / step**2
        fd_uv = (
            self.point(u + step, v + step)
            - self.point(u + step, v - step)
            - self.point(u - step, v + step)
            + self.point(u - step, v - step)
        ) / (4 * step**2)
        return float(
            max(
                np.max(np.abs(su - fd_u)),
                np.max(np.abs(sv - fd_v)),
                np.max(np.abs(suu - fd_uu)),
                np.max(np.abs(suv - fd_uv)),
                np.max(np.abs(svv - fd_vv)),
            )
        )


class PlanePatch(ParametricSurface):
    """Flat patch o + u e1 + v e2 (zero shape operator; test shape)."""

    def __init__(self, origin=(0, 0, 0), e1=(1, 0, 0), e2=(0, 1, 0), extent=1.0):
        self.origin = np.asarray(origin, dtype=float)
        self.e1 = np.asarray(e1, dtype=float)
        self.e2 = np.asarray(e2, dtype=float)
        self.domain = ((-extent, extent), (-extent, extent))
        self.periodic = (False, False)

    def point(self, u, v):
        u = np.asarray(u, dtype=float)[..., None]
        v = np.asarray(v, dtype=float)[..., None]
        return self.origin + u * self.e1 + v * self.e2

    def partials(self, u, v):
        shape = np.broadcast(np.asarray(u, float), np.asarray(v, float)).shape
        return (
            np.broadcast_to(self.e1, shape + (3,)).copy(),
            np.broadcast_to(self.e2, shape + (3,)).copy(),
        )

    def second_partials(self, u, v):
        shape = np.broadcast(np.asarray(u, float), np.asarray(v, float)).shape
        z = np.zeros(shape + (3,))
        return z, z.copy(), z.copy()


class SphereChart(ParametricSurface):
    """S(u,v) = center + r (cos v cos u, cos v sin u, sin v).

    The polar caps are excluded by a domain margin: the chart is regular only
    away from v = +-pi/2.
    """

    def __init__(self, radius=1.0, center=(0, 0, 0), margin=POLE_MARGIN):
        self.radius = float(radius)
        self.center = np.asarray(center, dtype=float)
        self.domain = ((-np.pi, np.pi), (-np.pi / 2 + margin, np.pi / 2 - margin))
        self.periodic = (True, False)

    def point(self, u, v):
        u, v = np.asarray(u, float), np.asarray(v, float)
        cu, su, cv, sv = np.cos(u), np.sin(u), np.cos(v), np.sin(v)
        return self.center + self.radius * np.stack(
            [cv * cu, cv * su, np.broadcast_to(sv, np.broadcast(u, v).shape)], axis=-1
        )

    def partials(self, u, v):
        u, v = np.asarray(u, float), np.asarray(v, float)
        cu, su, cv, sv = np.cos(u), np.sin(u), np.cos(v), np.sin(v)
        zero = np.zeros(np.broadcast(u, v).shape)
        s_u = self.radius * np.stack([-cv * su, cv * cu, zero], axis=-1)
        s_v = self.radius * np.stack([-sv * cu, -sv * su, cv + zero], axis=-1)
        return s_u, s_v

    def second_partials(self, u, v):
        u, v = np.asarray(u, float), np.asarray(v, float)
        cu, su, cv, sv = np.cos(u), np.sin(u), np.cos(v), np.sin(v)
        zero = np.zeros(np.broadcast(u, v).shape)
        s_uu = self.radius * np.stack([-cv * cu, -cv * su, zero], axis=-1)
        s_uv = self.radius * np.stack([sv * su, -sv * cu, zero], axis=-1)
        s_vv = self.radius * np.stack([-cv * cu, -cv * su, -sv + zero], axis=-1)
        return s_uu, s_uv, s_vv


class EllipsoidChart(ParametricSurface):
    """S(u,v) = center + (a cos v cos u, b cos v sin u, c sin v)."""

    def __init__(self, semi_axes=(1.0, 1.0, 1.0), center=(0, 0, 0), margin=POLE_MARGIN):
        self.axes = np.asarray(semi_axes, dtype=float)
        if np.any(self.axes <= 0):
            raise ConfigError("ellipsoid semi-axes must be positive")
        self.center = np.asarray(center, dtype=float)
        self.domain = ((-np.pi, np.pi), (-np.pi / 2 + margin, np.pi / 2 - margin))
        self.periodic = (True, False)

    def _trig(self, u, v):
        u, v = np.asarray(u, float), np.asarray(v, float)
        return np.cos(u), np.sin(u), np.cos(v), np.sin(v)

    def point(self, u, v):
        cu, su, cv, sv = self._trig(u, v)
        zero = np.zeros(np.broadcast(np.asarray(u, float), np.asarray(v, float)).shape)
        return self.center + np.stack(
            [self.axes[0] * cv * cu, self.axes[1] * cv * su, self.axes[2] * (sv + zero)],
            axis=-1,
        )

    def partials(self, u, v):
        cu, su, cv, sv = self._trig(u, v)
        zero = np.zeros(np.broadcast(np.asarray(u, float), np.asarray(v, float)).shape)
        a, b, c = self.axes
        s_u = np.stack([-a * cv * su, b * cv * cu, zero], axis=-1)
        s_v = np.stack([-a * sv * cu, -b * sv * su, c * (cv + zero)], axis=-1)
        return s_u, s_v

    def second_partials(self, u, v):
        cu, su, cv, sv = self._trig(u, v)
        zero = np.zeros(np.broadcast(np.asarray(u, float), np.asarray(v, float)).shape)
        a, b, c = self.axes
        s_uu = np.stack([-a * cv * cu, -b * cv * su, zero], axis=-1)
        s_uv = np.stack([a * sv * su, -b * sv * cu, zero], axis=-1)
        s_vv = np.stack([-a * cv * cu, -b * cv * su, -c * (sv + zero)], axis=-1)
        return s_uu, s_uv, s_vv


class RadialSurface(ParametricSurface):
    """Star-shaped chart S = center + R(u,v) d(u,v) with d the unit sphere
    direction (cos v cos u, cos v sin u, sin v).  Subclasses supply R and its
    partials."""

    def __init__(self, center=(0, 0, 0), margin=POLE_MARGIN):
        self.center = np.asarray(center, dtype=float)
        self.domain = ((-np.pi, np.pi), (-np.pi / 2 + margin, np.pi / 2 - margin))
        self.periodic = (True, False)

    def radius_jet(self, u, v):
        """Return (R, R_u, R_v, R_uu, R_uv, R_vv)."""
        raise NotImplementedError

    @staticmethod
    def _direction_jet(u, v):
        u, v = np.asarray(u, float), np.asarray(v, float)
        cu, su, cv, sv = np.cos(u), np.sin(u), np.cos(v), np.sin(v)
        zero = np.zeros(np.broadcast(u, v).shape)
        d = np.stack([cv * cu, cv * su, sv + zero], axis=-1)
        d_u = np.stack([-cv * su, cv * cu, zero], axis=-1)
        d_v = np.stack([-sv * cu, -sv * su, cv + zero], axis=-1)
        d_uu = np.stack([-cv * cu, -cv * su, zero], axis=-1)
        d_uv = np.stack([sv * su, -sv * cu, zero], axis=-1)
        d_vv = -d
        return d, d_u, d_v, d_uu, d_uv, d_vv

    def point(self, u, v):
        d = self._direction_jet(u, v)[0]
        r = self.radius_jet(u, v)[0]
        return self.center + np.asarray(r)[..., None] * d

    def partials(self, u, v):
        d, d_u, d_v, _, _, _ = self._direction_jet(u, v)
        r, r_u, r_v, _, _, _ = [np.asarray(x)[..., None] for x in self.radius_jet(u, v)]
        return r_u * d + r * d_u, r_v * d + r * d_v

    def second_partials(self, u, v):
        d, d_u, d_v, d_uu, d_uv, d_vv = self._direction_jet(u, v)
        r, r_u, r_v, r_uu, r_uv, r_vv = [
            np.asarray(x)[..., None] for x in self.radius_jet(u, v)
        ]
        s_uu = r_uu * d + 2 * r_u * d_u + r * d_uu
        s_uv = r_uv * d + r_u * d_v + r_v * d_u + r * d_uv
        s_vv = r_vv * d + 2 * r_v * d_v + r * d_vv
        return s_uu, s_uv, s_vv


class DumbbellChart(RadialSurface):
    """Sphere pinched at the equator: R(v) = r0 (1 - pinch cos^2 v)."""

    def __init__(self, radius=1.0, pinch=0.45, center=(0, 0, 0), margin=POLE_MARGIN):
        if not 0 <= pinch < 1:
            raise ConfigError("dumbbell pinch must be in [0, 1)")
        super().__init__(center, margin)
        self.r0 = float(radius)
        self.pinch = float(pinch)

    def radius_jet(self, u, v):
        u, v = np.asarray(u, float), np.asarray(v, float)
        shape = np.broadcast(u, v).shape
        cv = np.cos(v)
        r = self.r0 * (1.0 - self.pinch * cv * cv)
        r_v = self.r0 * self.pinch * np.sin(2 * v)
        r_vv = 2 * self.r0 * self.pinch * np.cos(2 * v)
        zero = np.zeros(shape)
        return (np.broadcast_to(r, shape).copy(), zero, np.broadcast_to(r_v, shape).copy(),
                zero.copy(), zero.copy(), np.broadcast_to(r_vv, shape).copy())


class SuperellipsoidChart(RadialSurface):
    """|x/a|^n + |y/b|^n + |z/c|^n = 1 for even n, as a star-shaped chart:
    R = P^(-1/n) with P = sum ((d_i/a_i)^n).  Smooth and regular everywhere
    for even n (used as the blended-cone surrogate)."""

    def __init__(self, semi_axes=(1.0, 1.0, 1.0), exponent=4, center=(0, 0, 0),
                 margin=POLE_MARGIN):
        n = int(exponent)
        if n < 4 or n % 2 != 0:
            raise ConfigError("superellipsoid exponent must be an even integer >= 4")
        super().__init__(center, margin)
        self.axes = np.asarray(semi_axes, dtype=float)
        self.n = n

    def radius_jet(self, u, v):
        n = self.n
        d, d_u, d_v, d_uu, d_uv, d_vv = self._direction_jet(u, v)
        q = d / self.axes
        q_u, q_v = d_u / self.axes, d_v / self.axes
        q_uu, q_uv, q_vv = d_uu / self.axes, d_uv / self.axes, d_vv / self.axes
        qn1 = q ** (n - 1)
        qn2 = q ** (n - 2)
        p = np.sum(q**n, axis=-1)
        p_u = n * np.sum(qn1 * q_u, axis=-1)
        p_v = n * np.sum(qn1 * q_v, axis=-1)
        p_uu = n * np.sum((n - 1) * qn2 * q_u * q_u + qn1 * q_uu, axis=-1)
        p_uv = n * np.sum((n - 1) * qn2 * q_u * q_v + qn1 * q_uv, axis=-1)
        p_vv = n * np.sum((n - 1) * qn2 * q_v * q_v + qn1 * q_vv, axis=-1)
        e = -1.0 / n
        r = p**e
        w1 = e * p ** (e - 1)
        w2 = e * (e - 1) * p ** (e - 2)
        r_u = w1 * p_u
        r_v = w1 * p_v
        r_uu = w2 * p_u * p_u + w1 * p_uu
        r_uv = w2 * p_u * p_v + w1 * p_uv
        r_vv = w2 * p_v * p_v + w1 * p_vv
        return r, r_u, r_v, r_uu, r_uv, r_vv


class CapsuleChart(ParametricSurface):
    """Capsule boundary as one C^1 surface of revolution about z.

    Arclength profile parameter v: straight flank for |v| <= h, quarter-circle
    caps beyond; junction circles sit at v = +-h and are registered as the
    solid's smooth edges.  Curvature jumps there, so second partials are
    one-sided at the junctions.

    The pole margin is wider than the sphere chart's: contact curves cross
    the capsule tips transversally and the azimuth coordinate degenerates
    there, so tracing stops 0.02 arclength units short of the poles.
    """

    def __init__(self, radius=1.0, half_height=0.5, margin=2e-2):
        self.r = float(radius)
        self.h = float(half_height)
        if self.r <= 0 or self.h <= 0:
            raise ConfigError("capsule radius and half_height must be positive")
        vmax = self.h + self.r * (np.pi / 2) - margin
        self.domain = ((-np.pi, np.pi), (-vmax, vmax))
        self.periodic = (True, False)

    def profile(self, v):
        """(rho, zeta) and derivatives w.r.t. v, piecewise."""
        v = np.asarray(v, dtype=float)
        r, h = self.r, self.h
        on_cap = np.abs(v) > h
        phi = (v - np.sign(v) * h) / r
        rho = np.where(on_cap, r * np.cos(phi), r)
        zeta = np.where(on_cap, np.sign(v) * h + r * np.sin(phi), v)
        rho_v = np.where(on_cap, -np.sin(phi), 0.0)
        zeta_v = np.where(on_cap, np.cos(phi), 1.0)
        rho_vv = np.where(on_cap, -np.cos(phi) / r, 0.0)
        zeta_vv = np.where(on_cap, -np.sin(phi) / r, 0.0)
        return rho, zeta, rho_v, zeta_v, rho_vv, zeta_vv

    def point(self, u, v):
        u = np.asarray(u, dtype=float)
        rho, zeta, *_ = self.profile(v)
        cu, su = np.cos(u), np.sin(u)
        shape = np.broadcast(u, np.asarray(v, float)).shape
        return np.stack(
            [rho * cu, rho * su, np.broadcast_to(zeta, shape)], axis=-1
        )

    def partials(self, u, v):
        u = np.asarray(u, dtype=float)
        rho, zeta, rho_v, zeta_v, _, _ = self.profile(v)
        cu, su = np.cos(u), np.sin(u)
        shape = np.broadcast(u, np.asarray(v, float)).shape
        zero = np.zeros(shape)
        s_u = np.stack([-rho * su, rho * cu, zero], axis=-1)
        s_v = np.stack([rho_v * cu, rho_v * su, np.broadcast_to(zeta_v, shape)], axis=-1)
        return s_u, s_v

    def second_partials(self, u, v):
        u = np.asarray(u, dtype=float)
        rho, zeta, rho_v, zeta_v, rho_vv, zeta_vv = self.profile(v)
        cu, su = np.cos(u), np.sin(u)
        shape = np.broadcast(u, np.asarray(v, float)).shape
        zero = np.zeros(shape)
        s_uu = np.stack([-rho * cu, -rho * su, zero], axis=-1)
        s_uv = np.stack([-rho_v * su, rho_v * cu, zero], axis=-1)
        s_vv = np.stack([rho_vv * cu, rho_vv * su, np.broadcast_to(zeta_vv, shape)], axis=-1)
        return s_uu, s_uv, s_vv


class ReparametrizedSurface(ParametricSurface):
    """S-bar = S o phi for a chart diffeomorphism phi with supplied jets.

    ``phi`` maps (ubar, vbar) -> (u, v); ``jac`` returns (u_ub, u_vb, v_ub,
    v_vb); ``hess`` returns (u_ubub, u_ubvb, u_vbvb, v_ubub, v_ubvb, v_vbvb).
    """

    def __init__(self, base: ParametricSurface, phi, jac, hess, domain,
                 periodic=(False, False)):
        self.base = base
        self.phi = phi
        self.jac = jac
        self.hess = hess
        self.domain = domain
        self.periodic = periodic

    def point(self, u, v):
        bu, bv = self.phi(u, v)
        return self.base.point(bu, bv)

    def partials(self, u, v):
        bu, bv = self.phi(u, v)
        su, sv = self.base.partials(bu, bv)
        u_a, u_b, v_a, v_b = [np.asarray(x)[..., None] for x in self.jac(u, v)]
        return su * u_a + sv * v_a, su * u_b + sv * v_b

    def second_partials(self, u, v):
        bu, bv = self.phi(u, v)
        su, sv = self.base.partials(bu, bv)
        suu, suv, svv = self.base.second_partials(bu, bv)
        u_a, u_b, v_a, v_b = [np.asarray(x)[..., None] for x in self.jac(u, v)]
        u_aa, u_ab, u_bb, v_aa, v_ab, v_bb = [
            np.asarray(x)[..., None] for x in self.hess(u, v)
        ]
        s_aa = suu * u_a**2 + 2 * suv * u_a * v_a + svv * v_a**2 + su * u_aa + sv * v_aa
        s_ab = (suu * u_a * u_b + suv * (u_a * v_b + u_b * v_a) + svv * v_a * v_b
                + su * u_ab + sv * v_ab)
        s_bb = suu * u_b**2 + 2 * suv * u_b * v_b + svv * v_b**2 + su * u_bb + sv * v_bb
        return s_aa, s_ab, s_bb


class SplineSurface(ParametricSurface):
    """Tensor-product B-spline face (x, y, z each a bivariate spline)."""

    def __init__(self, knots_u, knots_v, control_net, degree_u=3, degree_v=3):
        from scipy.interpolate import NdBSpline

        self.ku, self.kv = int(degree_u), int(degree_v)
        tu = np.asarray(knots_u, dtype=float)
        tv = np.asarray(knots_v, dtype=float)
        net = np.asarray(control_net, dtype=float)
        if net.ndim != 3 or net.shape[2] != 3:
            raise ConfigError("control net must have shape (nu, nv, 3)")
        if len(tu) != net.shape[0] + self.ku + 1 or len(tv) != net.shape[1] + self.kv + 1:
            raise ConfigError("knot counts must equal n_control + degree + 1")
        self._spl = NdBSpline((tu, tv), net, (self.ku, self.kv))
        self.domain = ((tu[self.ku], tu[-self.ku - 1]), (tv[self.kv], tv[-self.kv - 1]))
        self.periodic = (False, False)

    def _eval(self, u, v, du, dv):
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        pts = np.stack(np.broadcast_arrays(u, v), axis=-1)
        return self._spl(pts, nu=(du, dv))

    def point(self, u, v):
        return self._eval(u, v, 0, 0)

    def partials(self, u, v):
        return self._eval(u, v, 1, 0), self._eval(u, v, 0, 1)

    def second_partials(self, u, v):
        return self._eval(u, v, 2, 0), self._eval(u, v, 1, 1), self._eval(u, v, 0, 2)


def load_spline_surface(text: str) -> SplineSurface:
    """Parse the control-net text format: 'degree ku kv', 'knots_u ...',
    'knots_v ...', 'net nu nv', then nu*nv rows of 'x y z' (row-major in u)."""
    lines = [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    try:
        head = dict()
        idx = 0
        for key in ("degree", "knots_u", "knots_v", "net"):
            parts = lines[idx].split()
            if parts[0] != key:
                raise ConfigError(f"expected '{key}' on line {idx + 1}, got {parts[0]!r}")
            head[key] = [float(x) for x in parts[1:]]
            idx += 1
        ku, kv = (int(x) for x in head["degree"])
        nu, nv = (int(x) for x in head["net"])
        rows = lines[idx: idx + nu * nv]
        if len(rows) != nu * nv:
            raise ConfigError(f"expected {nu * nv} control rows, found {len(rows)}")
        net = np.array([[float(x) for x in r.split()] for r in rows]).reshape(nu, nv, 3)
    except (ValueError, IndexError) as exc:
        raise ConfigError(f"malformed spline surface text: {exc}") from None
    return SplineSurface(head["knots_u"], head["knots_v"], net, ku, kv)


def dump_spline_surface(surface: SplineSurface) -> str:
    tu, tv = surface._spl.t
    net = surface._spl.c
    out = [f"degree {surface.ku} {surface.kv}"]
    out.append("knots_u " + " ".join(format(x, ".17g") for x in tu))
    out.append("knots_v " + " ".join(format(x, ".17g") for x in tv))
    out.append(f"net {net.shape[0]} {net.shape[1]}")
    for i in range(net.shape[0]):
        for j in range(net.shape[1]):
            out.append(" ".join(format(x, ".17g") for x in net[i, j]))
    return "\n".join(out) + "\n"


# -- edges / solids -------------------------------------------------------


@dataclass(frozen=True)
class EdgeCurve:
    """Smooth-junction curve on a face chart: s -> (u(s), v(s))."""

    face: int
    s_domain: tuple[float, float]
    periodic: bool
    chart: Callable
    chart_dot: Callable
    name: str = "edge"


class Solid:
    """Closed solid bounded by oriented parametric faces.

    ``membership_measure`` is negative inside, positive outside and zero on
    the boundary (exact sign; distance exact or first-order by shape).
    """

    kind = "solid"

    def __init__(self):
        self.faces: list[ParametricSurface] = []
        self.edges: list[EdgeCurve] = []
        self.vertices: list[tuple[int, float, float]] = []
        self._bound = None

    # subclasses implement:
    def membership_measure(self, pts) -> np.ndarray:
        raise NotImplementedError

    def chart_seed(self, x, face=0):
        raise NotImplementedError

    def contains(self, x, tol=1e-9) -> Classification:
        m = float(self.membership_measure(np.asarray(x, dtype=float)))
        if abs(m) <= tol:
            return Classification.ON_BOUNDARY
        return Classification.INSIDE if m < 0 else Classification.OUTSIDE

    def bounding_radius(self) -> float:
        """Radius of an origin-centered ball containing the solid."""
        if self._bound is None:
            face = self.faces[0]
            (u0, u1), (v0, v1) = face.domain
            uu, vv = np.meshgrid(np.linspace(u0, u1, 64), np.linspace(v0, v1, 64))
            pts = face.point(uu, vv)
            self._bound = float(np.max(np.linalg.norm(pts, axis=-1))) * 1.001
        return self._bound

    def project(self, w, seed=None, max_iter=40):
        """Closest boundary point: returns (face, u, v).  Damped Newton on the
        stationarity equations, seeded by ``chart_seed`` unless given."""
        w = np.asarray(w, dtype=float)
        face_idx = 0 if seed is None else seed[0]
        face = self.faces[face_idx]
        if seed is None:
            u, v = self.chart_seed(w, face_idx)
        else:
            u, v = float(seed[1]), float(seed[2])
        for _ in range(max_iter):
            s = face.point(u, v)
            su, sv = face.partials(u, v)
            suu, suv, svv = face.second_partials(u, v)
            d = w - s
            g = np.array([float(np.dot(d, su)), float(np.dot(d, sv))])
            if np.linalg.norm(g) < 1e-13 * max(1.0, np.linalg.norm(w)):
                break
            j = np.array(
                [
                    [-np.dot(su, su) + np.dot(d, suu), -np.dot(su, sv) + np.dot(d, suv)],
                    [-np.dot(sv, su) + np.dot(d, suv), -np.dot(sv, sv) + np.dot(d, svv)],
                ]
            )
            try:
                step = np.linalg.solve(j, -g)
            except np.linalg.LinAlgError:
                raise ProjectionError("singular projection system") from None
            # damp: keep the residual norm decreasing
            base = np.linalg.norm(g)
            scale = 1.0
            for _ in range(8):
                uu, vv = face.wrap(u + scale * step[0], v + scale * step[1])
                s2 = face.point(uu, vv)
                d2 = w - s2
                su2, sv2 = face.partials(uu, vv)
                g2 = np.hypot(float(np.dot(d2, su2)), float(np.dot(d2, sv2)))
                if g2 < base:
                    break
                scale *= 0.5
            u, v = face.wrap(u + scale * step[0], v + scale * step[1])
        else:
            raise ProjectionError("closest-point projection did not converge")
        (u0, u1), (v0, v1) = face.domain
        if not face.periodic[1]:
            v = float(np.clip(v, v0, v1))
        return face_idx, float(u), float(v)

    def signed_distance_exact(self, w, seed=None):
        """<w - pi(w), N(pi(w))>: true signed distance via projection."""
        face_idx, u, v = self.project(w, seed)
        face = self.faces[face_idx]
        q = face.point(u, v)
        n = face.unit_normal(u, v)
        return float(np.dot(np.asarray(w, float) - q, n))


class SphereSolid(Solid):
    kind = "sphere"

    def __init__(self, radius=1.0, center=(0, 0, 0)):
        super().__init__()
        self.radius = float(radius)
        self.center = np.asarray(center, dtype=float)
        self.faces = [SphereChart(radius, center)]

    def membership_measure(self, pts):
        pts = np.asarray(pts, dtype=float)
        return np.linalg.norm(pts - self.center, axis=-1) - self.radius

    def chart_seed(self, x, face=0):
        d = np.asarray(x, dtype=float) - self.center
        rho = np.linalg.norm(d, axis=-1)
        rho = np.where(rho < 1e-12, 1.0, rho)
        u = np.arctan2(d[..., 1], d[..., 0])
        v = np.arcsin(np.clip(d[..., 2] / rho, -1.0, 1.0))
        return self._clip_v(u, v)

    def _clip_v(self, u, v):
        (v0, v1) = self.faces[0].domain[1]
        return u, np.clip(v, v0, v1)

    def project(self, w, seed=None, max_iter=40):
        u, v = self.chart_seed(np.asarray(w, float))
        return 0, float(u), float(v)


class _StarSolid(Solid):
    """Solid bounded by a single star-shaped chart (radial from center)."""

    def __init__(self, chart: RadialSurface | EllipsoidChart, center):
        super().__init__()
        self.center = np.asarray(center, dtype=float)
        self.faces = [chart]

    def chart_seed(self, x, face=0):
        raise NotImplementedError

    def membership_measure(self, pts):
        pts = np.asarray(pts, dtype=float)
        d = pts - self.center
        rho = np.linalg.norm(d, axis=-1)
        safe = np.where(rho < 1e-12, 1.0, rho)
        dirn = d / safe[..., None]
        dirn = np.where(rho[..., None] < 1e-12, np.array([0.0, 0.0, 1.0]), dirn)
        u, v = self.chart_seed(pts)
        face = self.faces[0]
        q = face.point(u, v)
        n = face.unit_normal(u, v)
        rb = np.linalg.norm(q - self.center, axis=-1)
        # first-order distance: radial gap projected on the outward normal
        return (rho - rb) * np.abs(_dot(dirn, n))


class EllipsoidSolid(_StarSolid):
    kind = "ellipsoid"

    def __init__(self, semi_axes=(1.0, 1.0, 1.0), center=(0, 0, 0)):
        super().__init__(EllipsoidChart(semi_axes, center), center)
        self.axes = np.asarray(semi_axes, dtype=float)

    def chart_seed(self, x, face=0):
        d = (np.asarray(x, dtype=float) - self.center) / self.axes
        rho = np.linalg.norm(d, axis=-1)
        rho = np.where(rho < 1e-12, 1.0, rho)
        u = np.arctan2(d[..., 1], d[..., 0])
        v = np.arcsin(np.clip(d[..., 2] / rho, -1.0, 1.0))
        (v0, v1) = self.faces[0].domain[1]
        return u, np.clip(v, v0, v1)


class _RadialStarSolid(_StarSolid):
    def chart_seed(self, x, face=0):
        d = np.asarray(x, dtype=float) - self.center
        rho = np.linalg.norm(d, axis=-1)
        rho = np.where(rho < 1e-12, 1.0, rho)
        u = np.arctan2(d[..., 1], d[..., 0])
        v = np.arcsin(np.clip(d[..., 2] / rho, -1.0, 1.0))
        (v0, v1) = self.faces[0].domain[1]
        return u, np.clip(v, v0, v1)


class DumbbellSolid(_RadialStarSolid):
    kind = "dumbbell"

    def __init__(self, radius=1.0, pinch=0.45, center=(0, 0, 0)):
        super().__init__(DumbbellChart(radius, pinch, center), center)


class SuperellipsoidSolid(_RadialStarSolid):
    kind = "superellipsoid"

    def __init__(self, semi_axes=(1.0, 1.0, 1.0), exponent=4, center=(0, 0, 0)):
        super().__init__(SuperellipsoidChart(semi_axes, exponent, center), center)


class CapsuleSolid(Solid):
    """Unit-style capsule about the z axis: cylinder of half-height h capped by
    hemispheres of radius r.  Junction circles are smooth edges."""

    kind = "capsule"

    def __init__(self, radius=1.0, half_height=0.5):
        super().__init__()
        self.r = float(radius)
        self.h = float(half_height)
        chart = CapsuleChart(radius, half_height)
        self.faces = [chart]
        for sign, name in ((1.0, "top-junction"), (-1.0, "bottom-junction")):
            vj = sign * self.h
            self.edges.append(
                EdgeCurve(
                    face=0,
                    s_domain=(-np.pi, np.pi),
                    periodic=True,
                    chart=(lambda s, vj=vj: (np.asarray(s, float), np.full_like(np.asarray(s, float), vj))),
                    chart_dot=(lambda s: (np.ones_like(np.asarray(s, float)), np.zeros_like(np.asarray(s, float)))),
                    name=name,
                )
            )

    def membership_measure(self, pts):
        pts = np.asarray(pts, dtype=float)
        dz = np.maximum(np.abs(pts[..., 2]) - self.h, 0.0)
        return np.sqrt(pts[..., 0] ** 2 + pts[..., 1] ** 2 + dz * dz) - self.r

    def chart_seed(self, x, face=0):
        x = np.asarray(x, dtype=float)
        u = np.arctan2(x[..., 1], x[..., 0])
        z = x[..., 2]
        rp = np.hypot(x[..., 0], x[..., 1])
        phi_top = np.arctan2(np.maximum(z - self.h, 0.0), rp)
        phi_bot = np.arctan2(np.minimum(z + self.h, 0.0), rp)
        v = np.where(z > self.h, self.h + self.r * phi_top,
                     np.where(z < -self.h, -self.h + self.r * phi_bot,
                              np.clip(z, -self.h, self.h)))
        (v0, v1) = self.faces[0].domain[1]
        return u, np.clip(v, v0, v1)

    def project(self, w, seed=None, max_iter=40):
        u, v = self.chart_seed(np.asarray(w, float))
        return 0, float(u), float(v)


_SOLIDS = {
    "sphere": SphereSolid,
    "ellipsoid": EllipsoidSolid,
    "capsule": CapsuleSolid,
    "dumbbell": DumbbellSolid,
    "superellipsoid": SuperellipsoidSolid,
}


def make_solid(spec: dict) -> Solid:
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ConfigError("solid spec must be a mapping with a 'kind' key")
    kind = spec["kind"]
    params = {k: v for k, v in spec.items() if k != "kind"}
    vertices = params.pop("marked_vertices", [])
    try:
        cls = _SOLIDS[kind]
    except KeyError:
        raise ConfigError(
            f"unknown solid kind {kind!r}; expected one of {sorted(_SOLIDS)}"
        ) from None
    try:
        solid = cls(**params)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for solid kind {kind!r}: {exc}") from None
    for item in vertices:
        u0, v0 = float(item[0]), float(item[1])
        solid.vertices.append((0, u0, v0))
    return solid
