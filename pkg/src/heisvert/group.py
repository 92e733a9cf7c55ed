"""Group law, Korányi metric, dilations and cone predicates.

Points and tangent vectors are stored as float arrays whose last axis has
length 3, holding exponential coordinates ``(x, y, z)`` or left-invariant
frame coefficients ``(a, b, c)`` on ``X, Y, Z``. Every function broadcasts
over leading axes, so a batch of ``n`` points is just an ``(n, 3)`` array.

The product is

    (x1, y1, z1) * (x2, y2, z2) = (x1 + x2, y1 + y2, z1 + z2 + (x1*y2 - x2*y1) / 2)

which is the unique law in exponential coordinates whose inverse-difference
satisfies ``z(b^-1 a) = z_a - z_b + (x_a*y_b - x_b*y_a) / 2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from numpy.typing import ArrayLike, NDArray

FloatArray = NDArray[np.float64]

DEFAULT_TOL = 1e-12

IDENTITY = np.zeros(3)


def point(x: float, y: float, z: float) -> FloatArray:
    """Build a single point from its coordinates, rejecting non-finite input."""
    p = np.array([x, y, z], dtype=float)
    if not np.all(np.isfinite(p)):
        raise ValueError(f"point coordinates must be finite, got {p}")
    return p


def as_points(p: ArrayLike) -> FloatArray:
    arr = np.asarray(p, dtype=float)
    if arr.shape[-1:] != (3,):
        raise ValueError(f"expected trailing axis of length 3, got shape {arr.shape}")
    return arr


def group_mul(a: ArrayLike, b: ArrayLike) -> FloatArray:
    """Group product ``a * b`` (broadcasting)."""
    a = as_points(a)
    b = as_points(b)
    xa, ya, za = a[..., 0], a[..., 1], a[..., 2]
    xb, yb, zb = b[..., 0], b[..., 1], b[..., 2]
    return np.stack(
        [xa + xb, ya + yb, za + zb + 0.5 * (xa * yb - xb * ya)], axis=-1
    )


def inverse(p: ArrayLike) -> FloatArray:
    return -as_points(p)


def inverse_mul(a: ArrayLike, b: ArrayLike) -> FloatArray:
    """``a^-1 * b``, the displacement from ``a`` to ``b`` seen from ``a``."""
    a = as_points(a)
    b = as_points(b)
    xa, ya, za = a[..., 0], a[..., 1], a[..., 2]
    xb, yb, zb = b[..., 0], b[..., 1], b[..., 2]
    return np.stack(
        [xb - xa, yb - ya, zb - za - 0.5 * (xa * yb - xb * ya)], axis=-1
    )


def koranyi_norm(p: ArrayLike) -> FloatArray | float:
    """Korányi gauge ``((x^2 + y^2)^2 + 16 z^2)^(1/4)``."""
    p = as_points(p)
    h2 = p[..., 0] ** 2 + p[..., 1] ** 2
    out = np.sqrt(np.sqrt(h2 * h2 + 16.0 * p[..., 2] ** 2))
    return float(out) if out.ndim == 0 else out


def dist(a: ArrayLike, b: ArrayLike) -> FloatArray | float:
    """Left-invariant Korányi distance ``|b^-1 a|``."""
    return koranyi_norm(inverse_mul(b, a))


def dilate(r: float, p: ArrayLike) -> FloatArray:
    """Homogeneous dilation ``(x, y, z) -> (r x, r y, r^2 z)``."""
    if not r > 0:
        raise ValueError(f"dilation factor must be positive, got {r}")
    p = as_points(p)
    return p * np.array([r, r, r * r])


def adjoint(g: ArrayLike, v: ArrayLike) -> FloatArray:
    """Adjoint action ``Ad_g v`` on left-invariant frame coefficients.

    Only the vertical coefficient changes: it gains ``x_g b - y_g a``.
    """
    g = as_points(g)
    v = as_points(v)
    c = v[..., 2] + g[..., 0] * v[..., 1] - g[..., 1] * v[..., 0]
    return np.stack(np.broadcast_arrays(v[..., 0], v[..., 1], c), axis=-1)


def in_vcone(lam: float, p: ArrayLike, tol: float = DEFAULT_TOL) -> NDArray[np.bool_] | bool:
    """Closed vertical cone ``|z| >= lam (x^2 + y^2)``, up to ``tol``."""
    if not lam > 0:
        raise ValueError(f"cone parameter must be positive, got {lam}")
    p = as_points(p)
    out = np.abs(p[..., 2]) >= lam * (p[..., 0] ** 2 + p[..., 1] ** 2) - tol
    return bool(out) if out.ndim == 0 else out


def vcone_ratio(p: ArrayLike) -> FloatArray:
    """Largest ``lam`` with ``p`` in the closed cone (``inf`` on the center)."""
    p = as_points(p)
    h2 = p[..., 0] ** 2 + p[..., 1] ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(h2 > 0, np.abs(p[..., 2]) / np.where(h2 > 0, h2, 1.0), np.inf)


class ConeSign(str, Enum):
    PLUS = "plus"
    MINUS = "minus"
    ZERO = "zero"


def vcone_sign(p: ArrayLike) -> ConeSign:
    z = float(as_points(p)[2])
    if z > 0:
        return ConeSign.PLUS
    if z < 0:
        return ConeSign.MINUS
    return ConeSign.ZERO


@dataclass(frozen=True)
class VerticalPlane:
    """Vertical plane spanned by the center and the horizontal direction at angle theta.

    ``theta`` is normalized into ``[0, pi)``; ``normal`` is the horizontal
    unit vector obtained by turning the direction clockwise by a right angle,
    so the plane ``x = 0`` has normal ``(1, 0)``.
    """

    theta: float

    def __post_init__(self) -> None:
        if not math.isfinite(self.theta):
            raise ValueError("plane angle must be finite")
        object.__setattr__(self, "theta", float(self.theta) % math.pi)

    @property
    def direction(self) -> FloatArray:
        return np.array([math.cos(self.theta), math.sin(self.theta)])

    @property
    def normal(self) -> FloatArray:
        return np.array([math.sin(self.theta), -math.cos(self.theta)])

    def to_json(self) -> dict:
        return {"theta": self.theta}

    @classmethod
    def from_json(cls, data: dict) -> "VerticalPlane":
        return cls(float(data["theta"]))


def dist_to_plane(p: ArrayLike, plane: VerticalPlane) -> FloatArray | float:
    """Korányi distance from ``p`` to the vertical plane: ``|<pi(p), U>|``."""
    p = as_points(p)
    u = plane.normal
    out = np.abs(p[..., 0] * u[0] + p[..., 1] * u[1])
    return float(out) if out.ndim == 0 else out


def in_ilip_cone(
    plane: VerticalPlane, lip: float, p: ArrayLike, tol: float = DEFAULT_TOL
) -> NDArray[np.bool_] | bool:
    """Intrinsic Lipschitz cone: ``dist_to_plane(p) <= lip * |p|``."""
    if not 0 < lip < 1:
        raise ValueError(f"Lipschitz parameter must lie in (0, 1), got {lip}")
    out = np.asarray(dist_to_plane(p, plane) <= lip * np.asarray(koranyi_norm(p)) + tol)
    return bool(out) if out.ndim == 0 else out


def cone_containment_threshold(lam: float) -> float:
    """Smallest ``L`` for which the vertical cone sits inside every ``Cone_{W,L}``."""
    if not lam > 0:
        raise ValueError(f"cone parameter must be positive, got {lam}")
    return (1.0 + 16.0 * lam * lam) ** -0.25


def c_lambda(lam: float) -> float:
    """Monotonicity constant ``min(1/2, lam^2)``."""
    if not lam > 0:
        raise ValueError(f"cone parameter must be positive, got {lam}")
    return min(0.5, lam * lam)


def compact_intersection_const(lam: float) -> float:
    """Diameter constant for ``p VCone+ ∩ q VCone-`` relative to ``d(p, q)``."""
    c = c_lambda(lam)
    return math.sqrt(1.0 / (4.0 * c * lam)) + math.sqrt(1.0 / c)
