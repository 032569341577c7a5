"""Rigid-motion trajectories h(t) = (A(t), b(t)) with analytic derivatives.

A trajectory is a C^2 map from a closed time interval into SO(3) x R^3.
Every family below stores closed-form matrix-valued functions (no keyframe
interpolation): the second derivatives feed the curvature invariant and must
be analytic.  All evaluators accept scalar or array ``t`` and broadcast,
returning stacks of shape (..., 3, 3) and (..., 3).

Motions are immutable after construction and safe for concurrent reads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, DomainError

_DOMAIN_SLACK = 1e-9


def _as_axis(axis) -> np.ndarray:
    a = np.asarray(axis, dtype=float)
    n = np.linalg.norm(a)
    if a.shape != (3,) or n < 1e-12:
        raise ConfigError(f"axis must be a nonzero 3-vector, got {axis!r}")
    return a / n


def skew(w: np.ndarray) -> np.ndarray:
    """Cross-product matrix K with K @ x = w x x."""
    return np.array(
        [[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]]
    )


def axis_angle_matrix(axis: np.ndarray, angle) -> np.ndarray:
    """Rodrigues rotation, batched over ``angle``."""
    angle = np.asarray(angle, dtype=float)
    K = skew(axis)
    K2 = K @ K
    s = np.sin(angle)[..., None, None]
    c = np.cos(angle)[..., None, None]
    return np.eye(3) + s * K + (1.0 - c) * K2


@dataclass(frozen=True)
class RigidMotion:
    """Trajectory h(t) = (A(t), b(t)) on a closed interval.

    The six callables each map an array of times to stacked matrices or
    vectors; construction normally goes through the family constructors
    below, which guarantee A(t) in SO(3) and analytic derivatives.
    """

    interval: tuple[float, float]
    rot: Callable[[np.ndarray], np.ndarray]
    trans: Callable[[np.ndarray], np.ndarray]
    rot_dot: Callable[[np.ndarray], np.ndarray]
    trans_dot: Callable[[np.ndarray], np.ndarray]
    rot_ddot: Callable[[np.ndarray], np.ndarray]
    trans_ddot: Callable[[np.ndarray], np.ndarray]
    description: str = "motion"

    def __post_init__(self):
        t0, t1 = self.interval
        if not (np.isfinite(t0) and np.isfinite(t1) and t0 < t1):
            raise ConfigError(f"interval must satisfy t0 < t1, got {self.interval}")

    # -- domain ---------------------------------------------------------

    def check_time(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        t0, t1 = self.interval
        if np.any(t < t0 - _DOMAIN_SLACK) or np.any(t > t1 + _DOMAIN_SLACK):
            raise DomainError(
                f"time {t!r} outside the motion interval [{t0}, {t1}]"
            )
        return t

    def times(self, n: int) -> np.ndarray:
        return np.linspace(self.interval[0], self.interval[1], n)

    # -- evaluation -----------------------------------------------------

    def evaluate(self, t):
        """Return (A(t), b(t))."""
        t = self.check_time(t)
        return self.rot(t), self.trans(t)

    def derivatives(self, t):
        """Return (A, b, A', b', A'', b'') at t, domain-checked once."""
        t = self.check_time(t)
        return (
            self.rot(t),
            self.trans(t),
            self.rot_dot(t),
            self.trans_dot(t),
            self.rot_ddot(t),
            self.trans_ddot(t),
        )

    def transform(self, x, t):
        """Pose points: A(t) x + b(t).  x is (..., 3)."""
        A, b = self.evaluate(t)
        x = np.asarray(x, dtype=float)
        return np.einsum("...ij,...j->...i", A, x) + b

    def velocity(self, x, t):
        """Velocity of the tracked point x: A'(t) x + b'(t)."""
        t = self.check_time(t)
        x = np.asarray(x, dtype=float)
        return np.einsum("...ij,...j->...i", self.rot_dot(t), x) + self.trans_dot(t)

    def inverse_point(self, x, t):
        """Inverse trajectory of a fixed space point: A^T(t) (x - b(t))."""
        t = self.check_time(t)
        x = np.asarray(x, dtype=float)
        d = x - self.trans(t)
        return np.einsum("...ji,...j->...i", self.rot(t), d)

    # -- derived motions -------------------------------------------------

    def inverse(self) -> "RigidMotion":
        """The inverse trajectory (A^T, -A^T b) with analytic derivatives."""

        def rot(t):
            return np.swapaxes(self.rot(t), -1, -2)

        def rot_dot(t):
            return np.swapaxes(self.rot_dot(t), -1, -2)

        def rot_ddot(t):
            return np.swapaxes(self.rot_ddot(t), -1, -2)

        def trans(t):
            return -np.einsum("...ji,...j->...i", self.rot(t), self.trans(t))

        def trans_dot(t):
            At = np.swapaxes(self.rot(t), -1, -2)
            Adt = np.swapaxes(self.rot_dot(t), -1, -2)
            return -(
                np.einsum("...ij,...j->...i", Adt, self.trans(t))
                + np.einsum("...ij,...j->...i", At, self.trans_dot(t))
            )

        def trans_ddot(t):
            At = np.swapaxes(self.rot(t), -1, -2)
            Adt = np.swapaxes(self.rot_dot(t), -1, -2)
            Addt = np.swapaxes(self.rot_ddot(t), -1, -2)
            return -(
                np.einsum("...ij,...j->...i", Addt, self.trans(t))
                + 2.0 * np.einsum("...ij,...j->...i", Adt, self.trans_dot(t))
                + np.einsum("...ij,...j->...i", At, self.trans_ddot(t))
            )

        return RigidMotion(
            self.interval, rot, trans, rot_dot, trans_dot, rot_ddot, trans_ddot,
            description=f"inverse({self.description})",
        )

    def rebased(self, t0: float) -> "RigidMotion":
        """Re-base so the returned motion satisfies A(t0) = I, b(t0) = 0.

        The rebased motion moves the posed solid M(t0) along the same world
        paths; used to apply identities whose proofs normalize at t0.
        """
        A0, b0 = self.evaluate(float(t0))
        fixed = constant_motion(A0.T, -A0.T @ b0, self.interval)
        return compose(self, fixed)


def constant_motion(A: np.ndarray, b: np.ndarray, interval) -> RigidMotion:
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)

    def _mat(t):
        t = np.asarray(t, dtype=float)
        return np.broadcast_to(A, t.shape + (3, 3)).copy()

    def _vec(t):
        t = np.asarray(t, dtype=float)
        return np.broadcast_to(b, t.shape + (3,)).copy()

    def _zero_mat(t):
        t = np.asarray(t, dtype=float)
        return np.zeros(t.shape + (3, 3))

    def _zero_vec(t):
        t = np.asarray(t, dtype=float)
        return np.zeros(t.shape + (3,))

    return RigidMotion(tuple(interval), _mat, _vec, _zero_mat, _zero_vec,
                       _zero_mat, _zero_vec, description="constant")


def compose(first: RigidMotion, second: RigidMotion) -> RigidMotion:
    """Pointwise product h1 o h2: (A1 A2, A1 b2 + b1), product-rule derivatives."""
    if first.interval != second.interval:
        raise ConfigError("composed motions must share the time interval")

    def rot(t):
        return first.rot(t) @ second.rot(t)

    def rot_dot(t):
        return first.rot_dot(t) @ second.rot(t) + first.rot(t) @ second.rot_dot(t)

    def rot_ddot(t):
        return (
            first.rot_ddot(t) @ second.rot(t)
            + 2.0 * first.rot_dot(t) @ second.rot_dot(t)
            + first.rot(t) @ second.rot_ddot(t)
        )

    def _mv(M, v):
        return np.einsum("...ij,...j->...i", M, v)

    def trans(t):
        return _mv(first.rot(t), second.trans(t)) + first.trans(t)

    def trans_dot(t):
        return (
            _mv(first.rot_dot(t), second.trans(t))
            + _mv(first.rot(t), second.trans_dot(t))
            + first.trans_dot(t)
        )

    def trans_ddot(t):
        return (
            _mv(first.rot_ddot(t), second.trans(t))
            + 2.0 * _mv(first.rot_dot(t), second.trans_dot(t))
            + _mv(first.rot(t), second.trans_ddot(t))
            + first.trans_ddot(t)
        )

    return RigidMotion(
        first.interval, rot, trans, rot_dot, trans_dot, rot_ddot, trans_ddot,
        description=f"compose({first.description}, {second.description})",
    )


def _rotation_callables(axis: np.ndarray, rate: float, phase: float = 0.0):
    """A(t) = exp((rate*t + phase) K) and its time derivatives."""
    K = skew(axis)

    def rot(t):
        t = np.asarray(t, dtype=float)
        return axis_angle_matrix(axis, rate * t + phase)

    def rot_dot(t):
        return rate * np.einsum("ij,...jk->...ik", K, rot(t))

    def rot_ddot(t):
        return rate * rate * np.einsum("ij,...jk->...ik", K @ K, rot(t))

    return rot, rot_dot, rot_ddot


def _identity_rotation(interval):
    def rot(t):
        t = np.asarray(t, dtype=float)
        return np.broadcast_to(np.eye(3), t.shape + (3, 3)).copy()

    def zero(t):
        t = np.asarray(t, dtype=float)
        return np.zeros(t.shape + (3, 3))

    return rot, zero, zero


def _translation_motion(interval, path, path_dot, path_ddot, description):
    rot, zero, zero2 = _identity_rotation(interval)
    return RigidMotion(tuple(interval), rot, path, zero, path_dot, zero2,
                       path_ddot, description=description)


# -- families -----------------------------------------------------------


def translation_line(direction, speed=1.0, interval=(0.0, 1.0), origin=(0.0, 0.0, 0.0)):
    d = _as_axis(direction) * float(speed)
    o = np.asarray(origin, dtype=float)

    def path(t):
        t = np.asarray(t, dtype=float)
        return o + t[..., None] * d

    def path_dot(t):
        t = np.asarray(t, dtype=float)
        return np.broadcast_to(d, t.shape + (3,)).copy()

    def path_ddot(t):
        t = np.asarray(t, dtype=float)
        return np.zeros(t.shape + (3,))

    return _translation_motion(interval, path, path_dot, path_ddot, "translation-line")


def translation_circle(radius, rate, interval=(0.0, 1.0), center=(0.0, 0.0, 0.0),
                       phase=0.0):
    """Translation along a circle in the xy-plane: b = center + r(cos, sin, 0)."""
    r = float(radius)
    w = float(rate)
    c = np.asarray(center, dtype=float)

    def _ang(t):
        return w * np.asarray(t, dtype=float) + phase

    def path(t):
        a = _ang(t)
        return c + r * np.stack([np.cos(a), np.sin(a), np.zeros_like(a)], axis=-1)

    def path_dot(t):
        a = _ang(t)
        return r * w * np.stack([-np.sin(a), np.cos(a), np.zeros_like(a)], axis=-1)

    def path_ddot(t):
        a = _ang(t)
        return -r * w * w * np.stack([np.cos(a), np.sin(a), np.zeros_like(a)], axis=-1)

    return _translation_motion(interval, path, path_dot, path_ddot, "translation-circle")


def translation_parabola(quad_coeff, speed=1.0, interval=(0.0, 1.0)):
    """b(t) = (s t, a (s t)^2, 0): path curvature 2a at the apex."""
    a = float(quad_coeff)
    s = float(speed)

    def path(t):
        t = np.asarray(t, dtype=float)
        x = s * t
        return np.stack([x, a * x * x, np.zeros_like(x)], axis=-1)

    def path_dot(t):
        t = np.asarray(t, dtype=float)
        x = s * t
        return np.stack([np.full_like(x, s), 2.0 * a * s * x, np.zeros_like(x)], axis=-1)

    def path_ddot(t):
        t = np.asarray(t, dtype=float)
        z = np.zeros_like(t)
        return np.stack([z, np.full_like(z, 2.0 * a * s * s), z], axis=-1)

    return _translation_motion(interval, path, path_dot, path_ddot, "translation-parabola")


def helix(radius, rate, climb, axis=(0.0, 1.0, 0.0), interval=(0.0, 1.0), phase=0.0):
    """Translation along a helix around ``axis`` (identity rotation).

    The circle lives in the plane normal to the axis; ``climb`` is the
    translation rate along the axis.
    """
    ax = _as_axis(axis)
    # orthonormal frame (e1, e2, ax)
    probe = np.array([1.0, 0.0, 0.0])
    if abs(probe @ ax) > 0.9:
        probe = np.array([0.0, 0.0, 1.0])
    e1 = probe - (probe @ ax) * ax
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(ax, e1)
    r, w, c = float(radius), float(rate), float(climb)

    def path(t):
        a = w * np.asarray(t, dtype=float) + phase
        t = np.asarray(t, dtype=float)
        return (
            r * np.cos(a)[..., None] * e1
            + r * np.sin(a)[..., None] * e2
            + (c * t)[..., None] * ax
        )

    def path_dot(t):
        a = w * np.asarray(t, dtype=float) + phase
        return (
            -r * w * np.sin(a)[..., None] * e1
            + r * w * np.cos(a)[..., None] * e2
            + c * np.broadcast_to(ax, a.shape + (3,))
        )

    def path_ddot(t):
        a = w * np.asarray(t, dtype=float) + phase
        return -r * w * w * (np.cos(a)[..., None] * e1 + np.sin(a)[..., None] * e2)

    return _translation_motion(interval, path, path_dot, path_ddot, "helix")


def rotation(axis, rate, interval=(0.0, 1.0), center=(0.0, 0.0, 0.0), phase=0.0):
    """Pure rotation about the axis line through ``center``."""
    ax = _as_axis(axis)
    c = np.asarray(center, dtype=float)
    rot, rot_dot, rot_ddot = _rotation_callables(ax, float(rate), float(phase))

    def _mv(M, v):
        return np.einsum("...ij,j->...i", M, v)

    def trans(t):
        return c - _mv(rot(t), c)

    def trans_dot(t):
        return -_mv(rot_dot(t), c)

    def trans_ddot(t):
        return -_mv(rot_ddot(t), c)

    return RigidMotion(tuple(interval), rot, trans, rot_dot, trans_dot,
                       rot_ddot, trans_ddot, description="rotation")


def screw(axis, rate, pitch_rate, interval=(0.0, 1.0), point_on_axis=(0.0, 0.0, 0.0),
          phase=0.0):
    """Screw about the axis line: rotation at ``rate`` plus axial translation
    at ``pitch_rate`` (length per unit time)."""
    ax = _as_axis(axis)
    p0 = np.asarray(point_on_axis, dtype=float)
    rot, rot_dot, rot_ddot = _rotation_callables(ax, float(rate), float(phase))
    v = float(pitch_rate)

    def _mv(M, w):
        return np.einsum("...ij,j->...i", M, w)

    def trans(t):
        t = np.asarray(t, dtype=float)
        return p0 - _mv(rot(t), p0) + (v * t)[..., None] * ax

    def trans_dot(t):
        t = np.asarray(t, dtype=float)
        return -_mv(rot_dot(t), p0) + np.broadcast_to(v * ax, t.shape + (3,))

    def trans_ddot(t):
        return -_mv(rot_ddot(t), p0)

    return RigidMotion(tuple(interval), rot, trans, rot_dot, trans_dot,
                       rot_ddot, trans_ddot, description="screw")


_FAMILIES = {
    "translation-line": translation_line,
    "translation-circle": translation_circle,
    "translation-parabola": translation_parabola,
    "helix": helix,
    "rotation": rotation,
    "screw": screw,
}


def make_motion(spec: dict) -> RigidMotion:
    """Build a motion from a config mapping.

    ``kind`` selects a family; ``composed-rotation`` wraps ``parts`` (applied
    right to left, i.e. parts[0] is the outermost transform).
    """
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ConfigError("motion spec must be a mapping with a 'kind' key")
    kind = spec["kind"]
    params = {k: v for k, v in spec.items() if k != "kind"}
    if kind == "composed-rotation":
        parts = params.pop("parts", None)
        if params:
            raise ConfigError(f"unknown composed-rotation keys: {sorted(params)}")
        if not parts or len(parts) < 2:
            raise ConfigError("composed-rotation needs at least two 'parts'")
        motions = [make_motion(p) for p in parts]
        out = motions[0]
        for m in motions[1:]:
            out = compose(out, m)
        return out
    try:
        family = _FAMILIES[kind]
    except KeyError:
        raise ConfigError(
            f"unknown motion kind {kind!r}; expected one of "
            f"{sorted(_FAMILIES) + ['composed-rotation']}"
        ) from None
    try:
        return family(**params)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for motion kind {kind!r}: {exc}") from None


# -- validation helpers --------------------------------------------------


def so3_residual(motion: RigidMotion, t) -> float:
    """max over t of ||A^T A - I||_F and |det A - 1| combined."""
    A = motion.rot(motion.check_time(t))
    gram = np.einsum("...ji,...jk->...ik", A, A) - np.eye(3)
    ortho = np.sqrt(np.einsum("...ij,...ij->...", gram, gram))
    det = np.abs(np.linalg.det(A) - 1.0)
    return float(max(np.max(ortho), np.max(det)))


def fd_derivative_residual(motion: RigidMotion, t, step=1e-4) -> float:
    """max deviation of analytic A', b', A'', b'' from central differences."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    t0, t1 = motion.interval
    t = np.clip(t, t0 + step, t1 - step)
    Ap, Am = motion.rot(t + step), motion.rot(t - step)
    bp, bm = motion.trans(t + step), motion.trans(t - step)
    A0, b0 = motion.rot(t), motion.trans(t)
    errs = [
        np.max(np.abs((Ap - Am) / (2 * step) - motion.rot_dot(t))),
        np.max(np.abs((bp - bm) / (2 * step) - motion.trans_dot(t))),
        np.max(np.abs((Ap - 2 * A0 + Am) / step**2 - motion.rot_ddot(t))),
        np.max(np.abs((bp - 2 * b0 + bm) / step**2 - motion.trans_ddot(t))),
    ]
    return float(max(errs))
