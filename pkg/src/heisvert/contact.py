"""Contact vector fields generated by a scalar potential, their flows,
horizontal Jacobians, single-ball reductions and the multiscale cascade.

Frame conventions follow ``group``: ``X = ∂x - (y/2) ∂z``, ``Y = ∂y + (x/2) ∂z``,
``Z = ∂z``. A potential ``psi`` generates ``V = Y[psi] X - X[psi] Y + psi Z``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree
from scipy.stats import qmc

from heisvert.group import (
    FloatArray,
    as_points,
    dilate,
    dist,
    group_mul,
    inverse,
    inverse_mul,
    koranyi_norm,
)

STEPS_PER_UNIT = 256
FD_STEP = 1e-5

# Volume of the unit Korányi ball: pi * int_0^1 rho sqrt(1 - rho^4) d rho.
UNIT_BALL_VOLUME = math.pi**2 / 8


class ReductionError(RuntimeError):
    """No admissible radius reduces the Jacobian mass on a ball."""


class CascadeDecayError(RuntimeError):
    """A cascade level failed to shrink the Jacobian mass geometrically."""


# ---------------------------------------------------------------------------
# Frame helpers
# ---------------------------------------------------------------------------


def frame_to_coords(p: FloatArray, v: FloatArray) -> FloatArray:
    """Coordinate velocity of the left-invariant vector with frame coefficients ``v`` at ``p``."""
    p = as_points(p)
    v = as_points(v)
    c = v[..., 2] + 0.5 * (p[..., 0] * v[..., 1] - p[..., 1] * v[..., 0])
    return np.stack(np.broadcast_arrays(v[..., 0], v[..., 1], c), axis=-1)


def coords_to_frame(p: FloatArray, v: FloatArray) -> FloatArray:
    """Frame coefficients of a coordinate velocity ``v`` at ``p``."""
    p = as_points(p)
    v = as_points(v)
    c = v[..., 2] - 0.5 * (p[..., 0] * v[..., 1] - p[..., 1] * v[..., 0])
    return np.stack(np.broadcast_arrays(v[..., 0], v[..., 1], c), axis=-1)



# ---------------------------------------------------------------------------
# Potentials and fields
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ContactPotential:
    """Bump ``amplitude * (1 - N(q))^4`` with ``q = s_{1/radius}(center^-1 v)`` and
    ``N = |q|_K^4``, vanishing outside the Korányi ball ``B(center, radius)``.

    ``amplitude = 0`` gives the zero potential; ``constant`` adds a constant
    (the field is then ``constant * Z`` away from the bump).
    """

    amplitude: float = 1.0
    center: tuple[float, float, float] = (0.0, 0.0, 0.0)
    radius: float = 1.0
    constant: float = 0.0

    def __post_init__(self) -> None:
        if not self.radius > 0:
            raise ValueError("support radius must be positive")

    def _local(self, p: FloatArray) -> FloatArray:
        q = inverse_mul(np.asarray(self.center, dtype=float), as_points(p))
        return dilate(1.0 / self.radius, q)

    def value_and_frame_derivatives(self, p: FloatArray) -> tuple[FloatArray, FloatArray]:
        """Return ``psi(p)`` and ``(X[psi], Y[psi], Z[psi])(p)``."""
        q = self._local(p)
        x, y, z = q[..., 0], q[..., 1], q[..., 2]
        h = x * x + y * y
        n = h * h + 16.0 * z * z
        inside = n < 1.0
        gap = np.where(inside, 1.0 - n, 0.0)
        val = self.amplitude * gap**4 + self.constant
        dn = -4.0 * self.amplitude * gap**3
        r = self.radius
        xd = dn * (4.0 * x * h - 16.0 * y * z) / r
        yd = dn * (4.0 * y * h + 16.0 * x * z) / r
        zd = dn * 32.0 * z / (r * r)
        return val, np.stack([xd, yd, zd], axis=-1)

    def __call__(self, p: FloatArray) -> FloatArray:
        return self.value_and_frame_derivatives(p)[0]

    def support_contains(self, p: FloatArray) -> np.ndarray:
        return np.asarray(dist(as_points(p), np.asarray(self.center, dtype=float))) < self.radius

    def conjugated(self, p: FloatArray, r: float) -> "ContactPotential":
        """Potential whose flow is ``v -> p * s_r(flow(s_r^-1(p^-1 v)))``."""
        c = group_mul(as_points(p), dilate(r, np.asarray(self.center, dtype=float)))
        return ContactPotential(
            self.amplitude * r * r, tuple(float(v) for v in c), self.radius * r, self.constant * r * r
        )


def contact_field(psi: ContactPotential, p: FloatArray) -> FloatArray:
    """Frame coefficients ``(Y[psi], -X[psi], psi)`` of the contact field at ``p``."""
    val, d = psi.value_and_frame_derivatives(p)
    return np.stack([d[..., 1], -d[..., 0], val], axis=-1)


def contact_field_coords(psi: ContactPotential, p: FloatArray) -> FloatArray:
    return frame_to_coords(p, contact_field(psi, p))


def divergence_fd(psi: ContactPotential, p: FloatArray, h: float = 1e-4) -> FloatArray:
    """Euclidean divergence of the coordinate field by central differences."""
    p = as_points(p)
    out = np.zeros(p.shape[:-1])
    for k in range(3):
        e = np.zeros(3)
        e[k] = h
        out += (contact_field_coords(psi, p + e)[..., k] - contact_field_coords(psi, p - e)[..., k]) / (2 * h)
    return out


def flow(psi: ContactPotential, t: float, p: FloatArray, steps: int | None = None) -> FloatArray:
    """Time-``t`` flow of the contact field by classical fixed-step RK4."""
    p = as_points(p).astype(float, copy=True)
    if steps is None:
        steps = max(1, math.ceil(STEPS_PER_UNIT * abs(t)))
    if steps < 1:
        raise ValueError("need at least one integration step")
    if t == 0.0:
        return p
    dt = t / steps
    f = lambda q: contact_field_coords(psi, q)  # noqa: E731
    for _ in range(steps):
        k1 = f(p)
        k2 = f(p + 0.5 * dt * k1)
        k3 = f(p + 0.5 * dt * k2)
        k4 = f(p + dt * k3)
        p = p + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return p


# ---------------------------------------------------------------------------
# Differentials
# ---------------------------------------------------------------------------


def frame_differential(fn, p: FloatArray, h: float = FD_STEP, directions: int = 3) -> FloatArray:
    """Differential of ``fn`` at ``p`` in the left-invariant frame, by central differences.

    Entry ``[..., i, k]`` is the ``i``-th frame coefficient of the image of the
    ``k``-th frame vector. Only the first ``directions`` columns are computed.
    """
    p = as_points(p)
    base = fn(p)
    cols = []
    for k in range(directions):
        e = np.zeros(3)
        e[k] = h
        diff = fn(group_mul(p, e)) - fn(group_mul(p, -e))
        cols.append(coords_to_frame(base, diff) / (2 * h))
    return np.stack(cols, axis=-1)


def _det2(m: FloatArray) -> FloatArray:
    return m[..., 0, 0] * m[..., 1, 1] - m[..., 0, 1] * m[..., 1, 0]


def _fd_image_and_hjac(fn, q: FloatArray, h: float = FD_STEP) -> tuple[FloatArray, FloatArray]:
    """Image of ``q`` and the horizontal Jacobian there, sharing one base evaluation."""
    base = fn(q)
    cols = []
    for k in range(2):
        e = np.zeros(3)
        e[k] = h
        diff = fn(group_mul(q, e)) - fn(group_mul(q, -e))
        cols.append(coords_to_frame(base, diff) / (2 * h))
    return base, cols[0][..., 0] * cols[1][..., 1] - cols[0][..., 1] * cols[1][..., 0]


# ---------------------------------------------------------------------------
# Primitive maps and their compositions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FlowStep:
    """Time-``t`` flow of a potential's contact field."""

    psi: ContactPotential
    t: float
    steps: int | None = None

    def apply(self, v: FloatArray) -> FloatArray:
        return flow(self.psi, self.t, v, self.steps)

    def inverse(self) -> "FlowStep":
        return FlowStep(self.psi, -self.t, self.steps)

    def apply_with_hjac(self, v: FloatArray) -> tuple[FloatArray, FloatArray]:
        return _fd_image_and_hjac(self.apply, as_points(v))

    def support_radius(self) -> tuple[FloatArray, float] | None:
        if self.psi.constant != 0.0:
            return None
        return np.asarray(self.psi.center, dtype=float), self.psi.radius


@dataclass(frozen=True)
class Translation:
    g: tuple[float, float, float]

    def apply(self, v: FloatArray) -> FloatArray:
        return group_mul(np.asarray(self.g, dtype=float), as_points(v))

    def inverse(self) -> "Translation":
        return Translation(tuple(float(c) for c in inverse(np.asarray(self.g, dtype=float))))

    def apply_with_hjac(self, v: FloatArray) -> tuple[FloatArray, FloatArray]:
        v = as_points(v)
        return self.apply(v), np.ones(v.shape[:-1])

    def support_radius(self) -> None:
        return None


@dataclass(frozen=True)
class Dilation:
    r: float

    def __post_init__(self) -> None:
        if not self.r > 0:
            raise ValueError("dilation factor must be positive")

    def apply(self, v: FloatArray) -> FloatArray:
        return dilate(self.r, v)

    def inverse(self) -> "Dilation":
        return Dilation(1.0 / self.r)

    def apply_with_hjac(self, v: FloatArray) -> tuple[FloatArray, FloatArray]:
        v = as_points(v)
        return self.apply(v), np.full(v.shape[:-1], self.r * self.r)

    def support_radius(self) -> None:
        return None


@dataclass(frozen=True)
class BallFamily:
    """Simultaneous rescaled copies ``v -> p_j * s_{r_j}(base(s_{r_j}^-1(p_j^-1 v)))``
    on pairwise disjoint Korányi balls ``B(p_j, r_j)``; identity elsewhere.

    ``base`` must be supported in the unit ball. Balls may be grouped into
    vertical columns (shared horizontal axis, heights ``c0 + k * spacing``),
    which makes point location vectorized; otherwise balls are scanned.
    """

    base: "ContactMap"
    centers: FloatArray
    radii: FloatArray
    columns: "ColumnIndex | None" = None

    def locate(self, v: FloatArray) -> np.ndarray:
        """Index of the ball containing each point, or -1."""
        v = as_points(v).reshape(-1, 3)
        if self.columns is not None:
            cand = self.columns.candidates(v)
        else:
            cand = np.full(v.shape[0], -1, dtype=np.int64)
            for j in range(self.centers.shape[0]):
                inside = np.asarray(koranyi_norm(inverse_mul(self.centers[j], v))) < self.radii[j]
                cand = np.where(inside & (cand < 0), j, cand)
            return cand
        ok = cand >= 0
        idx = np.where(ok, cand, 0)
        local = inverse_mul(self.centers[idx], v)
        ok &= np.asarray(koranyi_norm(local)) < self.radii[idx]
        return np.where(ok, cand, -1)

    def _local_apply(self, v: FloatArray, fn) -> tuple[FloatArray, FloatArray]:
        shape = as_points(v).shape
        v = as_points(v).reshape(-1, 3)
        out = v.copy()
        jac = np.ones(v.shape[0])
        idx = self.locate(v)
        sel = idx >= 0
        if np.any(sel):
            c = self.centers[idx[sel]]
            r = self.radii[idx[sel]][:, None]
            q = inverse_mul(c, v[sel]) * np.hstack([1 / r, 1 / r, 1 / r**2])
            img, j = fn(q)
            out[sel] = group_mul(c, img * np.hstack([r, r, r**2]))
            jac[sel] = j
        return out.reshape(shape), jac.reshape(shape[:-1])

    def apply(self, v: FloatArray) -> FloatArray:
        return self._local_apply(v, lambda q: (self.base(q), np.ones(q.shape[0])))[0]

    def apply_with_hjac(self, v: FloatArray) -> tuple[FloatArray, FloatArray]:
        return self._local_apply(v, self.base.apply_with_hjac)

    def inverse(self) -> "BallFamily":
        return BallFamily(self.base.inverse(), self.centers, self.radii, self.columns)

    def support_radius(self) -> None:
        return None


Primitive = FlowStep | Translation | Dilation | BallFamily


@dataclass(frozen=True)
class ContactMap:
    """Composition of primitive contact maps; ``steps[0]`` is applied first."""

    steps: tuple = ()

    def __call__(self, v: FloatArray) -> FloatArray:
        v = as_points(v)
        for s in self.steps:
            v = s.apply(v)
        return v

    def apply_with_hjac(self, v: FloatArray) -> tuple[FloatArray, FloatArray]:
        """Image and horizontal Jacobian by the chain rule over primitives."""
        v = as_points(v)
        jac = np.ones(v.shape[:-1])
        for s in self.steps:
            v, j = s.apply_with_hjac(v)
            jac = jac * j
        return v, jac

    def then(self, outer: "ContactMap") -> "ContactMap":
        """``outer ∘ self``."""
        return ContactMap(self.steps + outer.steps)

    def after(self, inner: "ContactMap") -> "ContactMap":
        """``self ∘ inner``."""
        return ContactMap(inner.steps + self.steps)

    def inverse(self) -> "ContactMap":
        return ContactMap(tuple(s.inverse() for s in reversed(self.steps)))

    def conjugate(self, p: FloatArray, r: float) -> "ContactMap":
        """``v -> p * s_r(self(s_r^-1(p^-1 v)))``."""
        p = as_points(p).reshape(3)
        pre = (Translation(tuple(float(c) for c in inverse(p))), Dilation(1.0 / r))
        post = (Dilation(r), Translation(tuple(float(c) for c in p)))
        return ContactMap(pre + self.steps + post)

    @classmethod
    def identity(cls) -> "ContactMap":
        return cls(())

    @classmethod
    def of_flow(cls, psi: ContactPotential, t: float, steps: int | None = None) -> "ContactMap":
        return cls((FlowStep(psi, t, steps),))

    @classmethod
    def translation(cls, g: FloatArray) -> "ContactMap":
        return cls((Translation(tuple(float(c) for c in as_points(g).reshape(3))),))

    @classmethod
    def dilation(cls, r: float) -> "ContactMap":
        return cls((Dilation(r),))


def horizontal_jacobian(m: ContactMap, p: FloatArray, h: float = FD_STEP) -> FloatArray:
    """``det`` of the horizontal block of the frame differential (central differences)."""
    return _det2(frame_differential(m, p, h, directions=2))


def full_jacobian(m: ContactMap, p: FloatArray, h: float = FD_STEP) -> FloatArray:
    return np.linalg.det(frame_differential(m, p, h))


def contactness_defect(m: ContactMap, p: FloatArray, h: float = FD_STEP) -> FloatArray:
    """Largest ``|Z|``-component of the images of ``X`` and ``Y``."""
    d = frame_differential(m, p, h, directions=2)
    return np.max(np.abs(d[..., 2, :]), axis=-1)


@dataclass
class JacobianIdentityReport:
    full: FloatArray
    horizontal: FloatArray
    max_rel_error: float


def jacobian_identity_check(m: ContactMap, p: FloatArray) -> JacobianIdentityReport:
    """Compare the full Jacobian with the squared horizontal Jacobian."""
    d = frame_differential(m, p)
    full = np.linalg.det(d)
    hor = _det2(d[..., :2, :2])
    err = np.abs(full - hor * hor) / np.abs(full)
    return JacobianIdentityReport(full, hor, float(np.max(err)))


@dataclass
class LinearizationReport:
    times: FloatArray
    errors: FloatArray
    ratios: FloatArray
    constant: float
    z_derivative: float


def linearized_jacobian_check(
    psi: ContactPotential, t_small: float, p: FloatArray, halvings: int = 4
) -> LinearizationReport:
    """Fit ``|J(t) - 1 - 2 Z[psi](p) t| <= K t^2`` over ``t_small, t_small/2, ...``."""
    p = as_points(p).reshape(3)
    zd = float(psi.value_and_frame_derivatives(p)[1][2])
    times = t_small / 2.0 ** np.arange(halvings + 1)
    errs = np.array(
        [abs(float(full_jacobian(ContactMap.of_flow(psi, t), p)) - 1.0 - 2.0 * zd * t) for t in times]
    )
    ratios = errs[:-1] / errs[1:]
    return LinearizationReport(times, errs, ratios, float(np.max(errs / times**2)), zd)


# ---------------------------------------------------------------------------
# Quasi-Monte-Carlo over Korányi balls
# ---------------------------------------------------------------------------


def ball_qmc(n: int, seed: int = 0) -> FloatArray:
    """Scrambled Sobol points of the bounding box kept inside the unit Korányi ball
    (``n`` box points, a power of two)."""
    s = qmc.Sobol(3, scramble=True, seed=seed).random(n)
    s = s * np.array([2.0, 2.0, 0.5]) - np.array([1.0, 1.0, 0.25])
    return s[np.asarray(koranyi_norm(s)) < 1.0]


def unit_sphere_samples(n: int, seed: int = 0) -> FloatArray:
    """Points on the unit Korányi sphere ``(x^2 + y^2)^2 + 16 z^2 = 1``."""
    rng = np.random.default_rng(seed)
    theta = rng.uniform(0.0, 2 * math.pi, n)
    psi = rng.uniform(-math.pi / 2, math.pi / 2, n)
    rho = np.sqrt(np.cos(psi))
    return np.column_stack([rho * np.cos(theta), rho * np.sin(theta), np.sin(psi) / 4.0])


# ---------------------------------------------------------------------------
# The base map and single-ball reduction
# ---------------------------------------------------------------------------


@dataclass
class Alpha0:
    """Base contact map on the unit ball with cached reference quadrature."""

    map: ContactMap
    psi: ContactPotential
    t: float
    kappa: float
    kappa_stderr: float
    jh_min: float
    displacement: float
    ref_points: FloatArray
    ref_images: FloatArray
    ref_jh: FloatArray

    @property
    def ref_ratio(self) -> float:
        """Reduction ratio on any ball when the outer map is the identity."""
        return float(np.mean(self.ref_jh))


def build_alpha0(
    t: float = 0.1,
    amplitude: float = 1.0,
    n_kappa: int = 2**15,
    n_ref: int = 2**10,
    replicates: int = 8,
    seed: int = 0,
    max_rebuilds: int = 6,
) -> Alpha0:
    """Flow of the unit bump for time ``t``, with its measured Jensen gap ``kappa``.

    ``kappa = (1 - mean_B J^H) / 2`` is estimated from ``replicates``
    independently scrambled Sobol sets; if it does not exceed three standard
    errors the time is doubled and the map rebuilt.
    """
    psi = ContactPotential(amplitude)
    for _ in range(max_rebuilds + 1):
        m = ContactMap.of_flow(psi, t)
        means = []
        jmin = math.inf
        disp = 0.0
        for k in range(replicates):
            pts = ball_qmc(n_kappa // replicates, seed=seed + 1 + k)
            img, jh = m.apply_with_hjac(pts)
            means.append(float(np.mean(jh)))
            jmin = min(jmin, float(np.min(jh)))
            disp = max(disp, float(np.max(dist(pts, img))))
        means = np.asarray(means)
        kappa = 0.5 * (1.0 - float(np.mean(means)))
        stderr = 0.5 * float(np.std(means, ddof=1)) / math.sqrt(replicates)
        if kappa > 3.0 * stderr:
            ref = ball_qmc(n_ref, seed=seed)
            ref_img, ref_jh = m.apply_with_hjac(ref)
            return Alpha0(m, psi, t, kappa, stderr, jmin, disp, ref, ref_img, ref_jh)
        t *= 2.0
    raise ReductionError("Jensen gap stayed below the noise floor")


@dataclass
class BallReduction:
    alpha: ContactMap
    center: FloatArray
    radius: float
    before: float
    after: float

    @property
    def ratio(self) -> float:
        return self.after / self.before


def ball_integrals(
    beta: ContactMap, alpha0: Alpha0, centers: FloatArray, radii: FloatArray
) -> tuple[FloatArray, FloatArray]:
    """``∫_{B(p,r)} |J^H_beta|`` and ``∫_{B(p,r)} |J^H_{beta ∘ alpha_{p,r}}|`` per ball.

    Both use the reference quadrature of ``alpha0`` carried to each ball:
    ``alpha_{p,r}`` maps ``p s_r(q)`` to ``p s_r(alpha0(q))`` and has horizontal
    Jacobian ``J^H_{alpha0}(q)`` there.
    """
    centers = as_points(centers).reshape(-1, 3)
    radii = np.asarray(radii, dtype=float).reshape(-1)
    m = alpha0.ref_points.shape[0]
    scale = np.column_stack([radii, radii, radii**2])[:, None, :]
    src = group_mul(centers[:, None, :], alpha0.ref_points[None, :, :] * scale)
    dst = group_mul(centers[:, None, :], alpha0.ref_images[None, :, :] * scale)
    both = np.concatenate([src.reshape(-1, 3), dst.reshape(-1, 3)])
    _, jb = beta.apply_with_hjac(both)
    jb = np.abs(jb)
    j_src = jb[: src.shape[0] * m].reshape(-1, m)
    j_dst = jb[src.shape[0] * m :].reshape(-1, m)
    vol = UNIT_BALL_VOLUME * radii**4
    before = vol * j_src.mean(axis=1)
    after = vol * (j_dst * np.abs(alpha0.ref_jh)[None, :]).mean(axis=1)
    return before, after


def ball_reduction(
    beta: ContactMap,
    p: FloatArray,
    r: float,
    alpha0: Alpha0,
    min_radius: float = 1e-4,
) -> BallReduction:
    """Rescaled copy of ``alpha0`` on ``B(p, r)``, halving ``r`` until
    ``after <= (1 - kappa/2) before``."""
    p = as_points(p).reshape(3)
    _, jp = beta.apply_with_hjac(p[None, :])
    if abs(float(jp[0])) == 0.0:
        raise ReductionError("outer map has vanishing horizontal Jacobian at the center")
    target = 1.0 - 0.5 * alpha0.kappa
    while r >= min_radius:
        before, after = ball_integrals(beta, alpha0, p[None, :], np.array([r]))
        if after[0] <= target * before[0]:
            alpha = ContactMap((BallFamily(alpha0.map, p[None, :].copy(), np.array([r])),))
            return BallReduction(alpha, p, r, float(before[0]), float(after[0]))
        r *= 0.5
    raise ReductionError(f"no admissible radius at {p}")


# ---------------------------------------------------------------------------
# Disjoint ball layouts
# ---------------------------------------------------------------------------


def ball_fits_unit(h: float, c: float, r: float, margin: float = 1e-3, n: int = 257) -> bool:
    """Conservative test that ``B((h, 0, c), r)`` (any horizontal direction with
    ``|π| = h``) lies in the open unit ball.

    A point ``p * q`` with ``|π(q)| = s`` has ``|π| <= h + s`` and
    ``|z| <= |c| + sqrt(r^4 - s^4)/4 + h s/2``; the gauge bound is maximized over ``s``.
    """
    s = np.linspace(0.0, r, n)
    z = abs(c) + np.sqrt(np.maximum(r**4 - s**4, 0.0)) / 4.0 + 0.5 * h * s
    return float(np.max((h + s) ** 4 + 16.0 * z * z)) < 1.0 - margin


@dataclass
class ColumnIndex:
    """Vertical stacks of equal balls: ball ``offset + k`` of a column sits at
    ``axis * Z^(k_min + k) * spacing``. Columns of one radius share a KD-tree."""

    groups: list = field(default_factory=list)

    def candidates(self, v: FloatArray) -> np.ndarray:
        out = np.full(v.shape[0], -1, dtype=np.int64)
        for tree, axes, radius, spacing, kmin, count, offset in self.groups:
            d, col = tree.query(v[:, :2])
            near = (d < radius) & (out < 0)
            if not np.any(near):
                continue
            c = col[near]
            ax = np.column_stack([axes[c], np.zeros(c.size)])
            zw = inverse_mul(ax, v[near])[:, 2]
            k = np.rint(zw / spacing).astype(np.int64) - kmin[c]
            ok = (k >= 0) & (k < count[c])
            idx = np.where(ok, offset[c] + k, -1)
            sub = out[near]
            out[near] = np.where(sub < 0, idx, sub)
        return out


@dataclass
class BallLayout:
    centers: FloatArray
    radii: FloatArray
    index: ColumnIndex

    def __len__(self) -> int:
        return self.radii.size


def column_layout(cap: float, tiers: int = 1, margin: float = 1e-3) -> BallLayout:
    """Disjoint balls inside the unit ball, stacked in vertical columns.

    Tier ``k`` uses radius ``cap / 2^k`` on a hexagonal lattice of axes with
    spacing ``2 r``; an axis is used when its disc misses every earlier disc.
    Balls on one axis are spaced ``r^2 / 2`` apart, which is exactly their
    height, so they are disjoint; balls on different axes have disjoint
    horizontal projections. Order: by tier, then axis distance from the
    center, then height.
    """
    centers: list[FloatArray] = []
    radii: list[float] = []
    discs = np.zeros((0, 3))
    index = ColumnIndex()
    for tier in range(tiers):
        r = cap / 2**tier
        spacing = r * r / 2.0
        n = int(math.ceil(1.0 / r)) + 2
        cand = [
            (2 * r * (i + 0.5 * (j % 2)), math.sqrt(3.0) * r * j)
            for j in range(-n, n + 1)
            for i in range(-n, n + 1)
        ]
        cand = [(x, y) for x, y in cand if math.hypot(x, y) + r < 1.0]
        cand.sort(key=lambda p: (round(math.hypot(*p), 12), math.atan2(p[1], p[0])))
        axes, kmins, counts, offsets = [], [], [], []
        kmax_all = int(0.25 / spacing) + 1
        for x, y in cand:
            if discs.shape[0] and np.any(np.hypot(discs[:, 0] - x, discs[:, 1] - y) < discs[:, 2] + r):
                continue
            h = math.hypot(x, y)
            ks = [k for k in range(-kmax_all, kmax_all + 1) if ball_fits_unit(h, k * spacing, r, margin)]
            if not ks:
                continue
            discs = np.vstack([discs, [x, y, r]])
            axes.append((x, y))
            kmins.append(ks[0])
            counts.append(len(ks))
            offsets.append(len(radii))
            for k in ks:
                centers.append(np.array([x, y, k * spacing]))
                radii.append(r)
        if axes:
            axes_arr = np.asarray(axes)
            index.groups.append(
                (
                    cKDTree(axes_arr),
                    axes_arr,
                    r,
                    spacing,
                    np.asarray(kmins),
                    np.asarray(counts),
                    np.asarray(offsets),
                )
            )
    return BallLayout(np.asarray(centers), np.asarray(radii), index)


# ---------------------------------------------------------------------------
# Multiscale cascade
# ---------------------------------------------------------------------------


@dataclass
class CascadeLevel:
    i: int
    mass: float
    n_balls: int
    max_radius: float
    captured: float

    def to_json(self) -> dict:
        return {
            "i": self.i,
            "F_i": self.mass,
            "n_balls": self.n_balls,
            "max_radius": self.max_radius,
            "captured": self.captured,
        }


@dataclass
class CascadeReport:
    beta: ContactMap
    alpha0: Alpha0
    levels: list[CascadeLevel]
    masses: list[float]
    layout: BallLayout
    selected: list[np.ndarray]
    radius_cap: float
    displacement_max: float
    boundary_max: float

    @property
    def kappa(self) -> float:
        return self.alpha0.kappa

    def to_json(self) -> dict:
        return {
            "levels": [lv.to_json() for lv in self.levels],
            "final_mass": self.masses[-1],
            "kappa_measured": self.alpha0.kappa,
            "kappa_stderr": self.alpha0.kappa_stderr,
            "flow_time": self.alpha0.t,
            "radius_cap": self.radius_cap,
            "displacement_max": self.displacement_max,
            "boundary_max": self.boundary_max,
        }


def _chunked_ball_integrals(
    beta: ContactMap, alpha0: Alpha0, centers: FloatArray, radii: FloatArray, max_points: int = 400_000
) -> tuple[FloatArray, FloatArray]:
    per = max(1, max_points // (2 * alpha0.ref_points.shape[0]))
    before = np.empty(radii.size)
    after = np.empty(radii.size)
    for s in range(0, radii.size, per):
        b, a = ball_integrals(beta, alpha0, centers[s : s + per], radii[s : s + per])
        before[s : s + per] = b
        after[s : s + per] = a
    return before, after


def vitali_cascade(
    epsilon: float,
    max_levels: int = 3,
    alpha0: Alpha0 | None = None,
    tiers: int = 1,
    max_halvings: int = 3,
    n_displacement: int = 10_000,
    n_boundary: int = 10_000,
    seed: int = 0,
) -> CascadeReport:
    """Compose rescaled copies of ``alpha0`` on disjoint balls, level by level,
    until the Jacobian mass ``F_i = ∫_B |J^H_{beta_i}|`` drops below
    ``epsilon F_0`` or ``max_levels`` levels are done.

    Radii are capped so that the summed displacement bound
    ``levels * cap * D0`` (``D0`` the measured displacement of ``alpha0``)
    stays below ``epsilon``. At each level balls are taken in layout order
    until their mass reaches ``F_i / 2`` (or the layout is exhausted); a ball
    whose reduction ratio exceeds ``1 - kappa/2`` is halved, then dropped.
    Raises ``CascadeDecayError`` when ``F_{i+1} > (1 - kappa/2) F_i``.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    if max_levels < 1:
        raise ValueError("need at least one level")
    a0 = build_alpha0(seed=seed) if alpha0 is None else alpha0
    cap = min(0.5, 0.95 * epsilon / (max_levels * a0.displacement))
    layout = column_layout(cap, tiers)
    target = 1.0 - 0.5 * a0.kappa
    beta = ContactMap.identity()
    masses = [UNIT_BALL_VOLUME]
    levels: list[CascadeLevel] = []
    selected: list[np.ndarray] = []
    for i in range(max_levels):
        f_i = masses[-1]
        if f_i < epsilon * masses[0]:
            break
        radii = layout.radii.copy()
        before, after = _chunked_ball_integrals(beta, a0, layout.centers, radii)
        captured = np.cumsum(before)
        stop = int(np.searchsorted(captured, 0.5 * f_i)) + 1
        take = np.zeros(radii.size, dtype=bool)
        take[: min(stop, radii.size)] = True
        for _ in range(max_halvings):
            bad = take & (after > target * before)
            if not np.any(bad):
                break
            radii[bad] *= 0.5
            b, a = _chunked_ball_integrals(beta, a0, layout.centers[bad], radii[bad])
            before[bad] = b
            after[bad] = a
        take &= after <= target * before
        radii[~take] = 0.0
        gain = float(np.sum(before[take] - after[take]))
        f_next = f_i - gain
        levels.append(
            CascadeLevel(i, f_i, int(take.sum()), float(radii.max(initial=0.0)), float(before[take].sum() / f_i))
        )
        if f_next > target * f_i:
            raise CascadeDecayError(
                f"level {i}: F went from {f_i:.6g} to {f_next:.6g}, above (1 - kappa/2) F = {target * f_i:.6g}"
            )
        family = BallFamily(a0.map, layout.centers, radii, layout.index)
        beta = beta.after(ContactMap((family,)))
        masses.append(f_next)
        selected.append(np.flatnonzero(take))
    pts = ball_qmc(_pow2_at_least(int(n_displacement / 0.6)), seed=seed + 101)[:n_displacement]
    disp = float(np.max(dist(pts, beta(pts))))
    sphere = unit_sphere_samples(n_boundary, seed=seed + 202)
    bmax = float(np.max(np.abs(beta(sphere) - sphere)))
    report = CascadeReport(beta, a0, levels, masses, layout, selected, cap, disp, bmax)
    if disp >= epsilon:
        raise CascadeDecayError(f"displacement {disp:.4g} is not below epsilon {epsilon}")
    return report


def _pow2_at_least(n: int) -> int:
    return 1 << max(0, int(math.ceil(math.log2(max(n, 1)))))


# ---------------------------------------------------------------------------
# Coarea check
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BoxRegion:
    lo: tuple[float, float, float]
    hi: tuple[float, float, float]

    def contains(self, p: FloatArray) -> np.ndarray:
        p = as_points(p)
        return np.all((p >= np.asarray(self.lo)) & (p <= np.asarray(self.hi)), axis=-1)

    def volume(self) -> float:
        return float(np.prod(np.asarray(self.hi) - np.asarray(self.lo)))

    def sample(self, n: int, seed: int) -> FloatArray:
        s = qmc.Sobol(3, scramble=True, seed=seed).random(_pow2_at_least(n))
        lo = np.asarray(self.lo)
        return lo + s * (np.asarray(self.hi) - lo)


@dataclass(frozen=True)
class BallRegion:
    center: tuple[float, float, float] = (0.0, 0.0, 0.0)
    radius: float = 1.0

    def contains(self, p: FloatArray) -> np.ndarray:
        return np.asarray(dist(as_points(p), np.asarray(self.center))) <= self.radius

    def volume(self) -> float:
        return UNIT_BALL_VOLUME * self.radius**4

    def sample(self, n: int, seed: int) -> FloatArray:
        q = ball_qmc(_pow2_at_least(int(n / 0.6)), seed=seed)
        r = self.radius
        return group_mul(np.asarray(self.center), q * np.array([r, r, r * r]))


@dataclass
class CoareaReport:
    lhs: float
    rhs: float
    ratio: float
    calibration: float
    n_fibers: int
    n_failed: int

    @property
    def calibrated_ratio(self) -> float:
        return self.ratio / self.calibration

    def to_json(self) -> dict:
        return {
            "lhs": self.lhs,
            "rhs": self.rhs,
            "ratio": self.ratio,
            "calibration": self.calibration,
            "calibrated_ratio": self.calibrated_ratio,
            "n_fibers": self.n_fibers,
            "n_failed": self.n_failed,
        }


def fiber_measures(
    m: ContactMap, region, v: FloatArray, z_range: tuple[float, float], n_z: int
) -> FloatArray:
    """Measure of ``(π∘m)^-1(v) ∩ region`` for each horizontal point ``v``.

    Each fiber is the preimage of the vertical line over ``v`` and is traced
    by pulling back ``n_z`` line samples through ``m^-1``; the measure sums
    ``|z(p_i^-1 p_{i+1})|`` over consecutive samples that both lie in the region.
    """
    zs = np.linspace(z_range[0], z_range[1], n_z)
    lines = np.concatenate(
        [np.broadcast_to(v[:, None, :2], (v.shape[0], n_z, 2)), np.broadcast_to(zs[None, :, None], (v.shape[0], n_z, 1))],
        axis=-1,
    )
    pre = m.inverse()(lines.reshape(-1, 3)).reshape(v.shape[0], n_z, 3)
    inside = region.contains(pre)
    dz = np.abs(inverse_mul(pre[:, :-1], pre[:, 1:])[..., 2])
    both = inside[:, :-1] & inside[:, 1:]
    out = np.sum(np.where(both, dz, 0.0), axis=1)
    out[~np.all(np.isfinite(pre), axis=(1, 2))] = np.nan
    return out


def coarea_check(
    m: ContactMap,
    region,
    n_fibers: int = 1024,
    n_z: int = 1025,
    n_rhs: int = 2**14,
    calibration: float = 1.0,
    seed: int = 0,
    pad: float = 0.02,
) -> CoareaReport:
    """Compare the average fiber measure of ``π∘m`` over ``region`` with
    ``∫_region |J^H_m|``.

    Fibers are taken over Sobol points of the padded horizontal bounding box
    of ``m(region)``; the line heights span the padded vertical extent.
    """
    probe = m(region.sample(4096, seed + 7))
    lo = probe.min(axis=0)
    hi = probe.max(axis=0)
    span = np.maximum(hi - lo, 1e-12)
    lo = lo - pad * span
    hi = hi + pad * span
    s = qmc.Sobol(2, scramble=True, seed=seed).random(_pow2_at_least(n_fibers))
    v = lo[:2] + s * (hi[:2] - lo[:2])
    meas = fiber_measures(m, region, v, (float(lo[2]), float(hi[2])), n_z)
    ok = np.isfinite(meas)
    area = float(np.prod(hi[:2] - lo[:2]))
    lhs = area * float(np.mean(meas[ok]))
    pts = region.sample(n_rhs, seed + 13)
    pts = pts[region.contains(pts)]
    _, jh = m.apply_with_hjac(pts)
    rhs = region.volume() * float(np.mean(np.abs(jh)))
    return CoareaReport(lhs, rhs, lhs / rhs, calibration, int(v.shape[0]), int((~ok).sum()))
