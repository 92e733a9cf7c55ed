"""Intrinsic Lipschitz graphs over vertical planes and their intersections.

A vertical plane ``W`` with direction ``D`` and horizontal normal ``U``
splits every point as ``p = w * v`` with ``w`` in ``W`` and ``v = s U`` a
horizontal vector along the normal. Points of ``W`` are described by plane
coordinates ``(u, z)``, standing for ``(u D, z)``. A graph over ``W`` is the
set of points ``w * (phi(w) U)``, optionally left-translated by a fixed
group element.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.interpolate import PchipInterpolator, RegularGridInterpolator
from scipy.optimize import minimize, minimize_scalar

from heisvert.curves import CurveMeta, SampledCurve, VerticalityReport, verify_vertical
from heisvert.group import (
    FloatArray,
    VerticalPlane,
    as_points,
    dist,
    group_mul,
    in_ilip_cone,
    in_vcone,
    inverse_mul,
    koranyi_norm,
)

GraphFunction = Callable[[FloatArray, FloatArray], FloatArray]


class InconclusiveError(RuntimeError):
    """The sampled loop does not determine a winding number."""


class TracingError(RuntimeError):
    """Continuation of the intersection curve broke down."""

    def __init__(self, message: str, last_good: FloatArray | None = None) -> None:
        super().__init__(message)
        self.last_good = last_good


class CertificationError(RuntimeError):
    """No vertical cone contains the requested cone intersection."""


# ---------------------------------------------------------------------------
# Splitting along a vertical plane
# ---------------------------------------------------------------------------


def plane_point(plane: VerticalPlane, w: FloatArray) -> FloatArray:
    """Group element of ``W`` with plane coordinates ``w = (u, z)``."""
    w = np.asarray(w, dtype=float)
    d = plane.direction
    return np.stack([w[..., 0] * d[0], w[..., 0] * d[1], w[..., 1]], axis=-1)


def normal_vector(plane: VerticalPlane, s: FloatArray) -> FloatArray:
    """Horizontal group element ``s U``."""
    s = np.asarray(s, dtype=float)
    n = plane.normal
    return np.stack([s * n[0], s * n[1], np.zeros_like(s)], axis=-1)


def split(plane: VerticalPlane, p: FloatArray) -> tuple[FloatArray, FloatArray]:
    """Return plane coordinates of ``Π_W(p)`` and the normal offset ``s`` with
    ``p = Π_W(p) * (s U)``."""
    p = as_points(p)
    s = p[..., 0] * plane.normal[0] + p[..., 1] * plane.normal[1]
    w = group_mul(p, normal_vector(plane, -s))
    u = w[..., 0] * plane.direction[0] + w[..., 1] * plane.direction[1]
    return np.stack([u, w[..., 2]], axis=-1), s


def project_plane(plane: VerticalPlane, p: FloatArray) -> FloatArray:
    """Plane coordinates of ``Π_W(p)``."""
    return split(plane, p)[0]


def project_normal(plane: VerticalPlane, p: FloatArray) -> FloatArray:
    """Normal offset of ``Π_V(p)``: the horizontal coordinate ``<π(p), U>``."""
    return split(plane, p)[1]


# ---------------------------------------------------------------------------
# Graph functions
# ---------------------------------------------------------------------------


def _make_function(spec: dict) -> GraphFunction:
    kind = spec.get("kind")
    if kind == "zero":
        return lambda u, z: np.zeros(np.broadcast(u, z).shape)
    if kind == "constant":
        c = float(spec["value"])
        return lambda u, z: np.full(np.broadcast(u, z).shape, c)
    if kind == "linear":
        k = float(spec["slope"])
        return lambda u, z: k * np.asarray(u, dtype=float) + 0.0 * np.asarray(z)
    if kind == "bump":
        a = float(spec["amplitude"])
        u0, z0 = (float(x) for x in spec.get("center", (0.0, 0.0)))
        w = float(spec.get("width", 1.0))
        if not w > 0:
            raise ValueError("bump width must be positive")

        def bump(u: FloatArray, z: FloatArray) -> FloatArray:
            du = (np.asarray(u, dtype=float) - u0) / w
            dz = (np.asarray(z, dtype=float) - z0) / (w * w)
            return a * np.exp(-(du * du) - dz * dz)

        return bump
    if kind == "tabulated":
        ug = np.asarray(spec["u"], dtype=float)
        zg = np.asarray(spec["z"], dtype=float)
        vals = np.asarray(spec["values"], dtype=float)
        interp = RegularGridInterpolator((ug, zg), vals, method="linear")

        def table(u: FloatArray, z: FloatArray) -> FloatArray:
            u, z = np.broadcast_arrays(np.asarray(u, dtype=float), np.asarray(z, dtype=float))
            pts = np.stack([np.clip(u, ug[0], ug[-1]), np.clip(z, zg[0], zg[-1])], axis=-1)
            return interp(pts.reshape(-1, 2)).reshape(u.shape)

        return table
    if kind == "profile":
        zs = np.asarray(spec["z"], dtype=float)
        vals = np.asarray(spec["values"], dtype=float)
        interp = PchipInterpolator(zs, vals, extrapolate=False)

        def profile(u: FloatArray, z: FloatArray) -> FloatArray:
            u, z = np.broadcast_arrays(np.asarray(u, dtype=float), np.asarray(z, dtype=float))
            return interp(np.clip(z, zs[0], zs[-1]))

        return profile
    raise ValueError(f"unknown graph function kind {kind!r}")


@dataclass
class ILipGraph:
    """Entire graph ``{h * w * (phi(w) U) : w in W}`` with claimed Lipschitz parameter."""

    plane: VerticalPlane
    function: GraphFunction
    lip: float
    translation: FloatArray | None = None
    spec: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not 0 < self.lip < 1:
            raise ValueError(f"Lipschitz parameter must lie in (0, 1), got {self.lip}")
        if self.translation is not None:
            self.translation = as_points(self.translation).reshape(3)

    @classmethod
    def from_spec(
        cls, plane: VerticalPlane, function: dict, lip: float, translation: FloatArray | None = None
    ) -> "ILipGraph":
        return cls(plane, _make_function(function), lip, translation, dict(function))

    @classmethod
    def zero(cls, plane: VerticalPlane, lip: float = 0.1) -> "ILipGraph":
        return cls.from_spec(plane, {"kind": "zero"}, lip)

    def translated(self, g: FloatArray) -> "ILipGraph":
        """Left translate ``g * Γ``."""
        h = as_points(g) if self.translation is None else group_mul(g, self.translation)
        return ILipGraph(self.plane, self.function, self.lip, h, self.spec)

    def phi(self, w: FloatArray) -> FloatArray:
        w = np.asarray(w, dtype=float)
        return np.asarray(self.function(w[..., 0], w[..., 1]), dtype=float)

    def to_json(self) -> dict:
        if not self.spec:
            raise ValueError("graph built from a bare callable has no JSON form")
        out = {"plane": self.plane.to_json(), "function": self.spec, "L": self.lip}
        if self.translation is not None:
            out["translation"] = self.translation.tolist()
        return out

    @classmethod
    def from_json(cls, data: dict | str) -> "ILipGraph":
        if isinstance(data, str):
            data = json.loads(data)
        tr = data.get("translation")
        return cls.from_spec(
            VerticalPlane.from_json(data["plane"]),
            data["function"],
            float(data["L"]),
            None if tr is None else np.asarray(tr, dtype=float),
        )


def graph_point(g: ILipGraph, w: FloatArray) -> FloatArray:
    """The graph point over plane coordinates ``w`` (translation applied)."""
    w = np.asarray(w, dtype=float)
    p = group_mul(plane_point(g.plane, w), normal_vector(g.plane, g.phi(w)))
    return p if g.translation is None else group_mul(g.translation, p)


def discrepancy(g: ILipGraph, p: FloatArray) -> FloatArray:
    """Normal offset of ``p`` minus the graph value over its plane projection.

    Zero exactly on the graph; its sign tells which side of the graph ``p`` is on.
    """
    p = as_points(p)
    if g.translation is not None:
        p = inverse_mul(g.translation, p)
    w, s = split(g.plane, p)
    return s - g.phi(w)


def graph_through_curve(curve: SampledCurve, plane: VerticalPlane, lip: float) -> ILipGraph:
    """Entire graph over ``plane`` containing every sample of ``curve``.

    The value depends on the plane height only, interpolating the samples'
    normal offsets; requires the plane heights of the samples to increase.
    """
    w, s = split(plane, curve.points)
    zs = w[:, 1]
    if np.any(np.diff(zs) <= 0):
        raise ValueError("samples must have strictly increasing plane heights")
    return ILipGraph.from_spec(plane, {"kind": "profile", "z": zs.tolist(), "values": s.tolist()}, lip)


# ---------------------------------------------------------------------------
# Cone verification
# ---------------------------------------------------------------------------


@dataclass
class ILipReport:
    ok: bool
    counterexample: tuple[FloatArray, FloatArray] | None
    max_ratio: float
    n_pairs: int


def verify_ilip(
    g: ILipGraph,
    n_pairs: int = 10_000,
    seed: int = 0,
    extent: float = 2.0,
    tol: float = 1e-12,
) -> ILipReport:
    """Sample graph-point pairs and test the cone condition ``p1^-1 p2 in Cone_{W,L}``.

    Base points are uniform in ``|u| <= extent``, ``|z| <= extent^2``;
    displacements have log-uniform sizes between ``1e-3`` and ``extent``.
    ``max_ratio`` is the largest observed ``dist_to_plane / |.|``.
    """
    rng = np.random.default_rng(seed)
    w1 = np.column_stack(
        [rng.uniform(-extent, extent, n_pairs), rng.uniform(-extent**2, extent**2, n_pairs)]
    )
    size = np.exp(rng.uniform(math.log(1e-3), math.log(extent), n_pairs))
    ang = rng.uniform(0.0, 2 * math.pi, n_pairs)
    dw = np.column_stack([size * np.cos(ang), 0.5 * size**2 * np.sin(ang)])
    w2 = w1 + dw
    p1 = graph_point(g, w1)
    p2 = graph_point(g, w2)
    disp = inverse_mul(p1, p2)
    n = g.plane.normal
    norm = np.asarray(koranyi_norm(disp))
    off = np.abs(disp[:, 0] * n[0] + disp[:, 1] * n[1])
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(norm > 0, off / np.where(norm > 0, norm, 1.0), 0.0)
    ok_mask = np.asarray(in_ilip_cone(g.plane, g.lip, disp, tol))
    if np.all(ok_mask):
        return ILipReport(True, None, float(ratio.max()), n_pairs)
    k = int(np.argmax(~ok_mask))
    return ILipReport(False, (w1[k], w2[k]), float(ratio.max()), n_pairs)


# ---------------------------------------------------------------------------
# Signed distance
# ---------------------------------------------------------------------------


NEGLIGIBLE_GAP = 1e-10


def signed_distance(g: ILipGraph, p: FloatArray, n_grid: int = 9) -> float:
    """``±d(p, Γ)``, positive on the side where the normal offset exceeds the graph.

    The graph point over ``Π_W(p)`` lies at distance ``|discrepancy|``, so the
    nearest graph point is searched within that radius: a coarse grid in
    plane coordinates followed by Nelder-Mead refinement.
    """
    p = as_points(p).reshape(3)
    gap = float(discrepancy(g, p))
    if abs(gap) <= NEGLIGIBLE_GAP:
        # The distance is bounded by |gap|; below this size the objective is rounding noise.
        return gap
    local = p if g.translation is None else inverse_mul(g.translation, p)
    w0, s0 = split(g.plane, local)
    radius = abs(gap)

    def objective(w: FloatArray) -> FloatArray:
        return np.asarray(dist(p, graph_point(g, w)))

    du = radius * np.linspace(-1.0, 1.0, n_grid)
    dz_span = radius * radius + radius * (abs(w0[0]) + abs(s0) + radius)
    dz = dz_span * np.linspace(-1.0, 1.0, n_grid)
    uu, zz = np.meshgrid(w0[0] + du, w0[1] + dz, indexing="ij")
    cand = np.stack([uu.ravel(), zz.ravel()], axis=-1)
    vals = objective(cand)
    best = cand[int(np.argmin(vals))]
    best_val = min(float(vals.min()), radius)
    res = minimize(
        lambda w: float(objective(np.asarray(w))),
        best,
        method="Nelder-Mead",
        options={
            "xatol": 1e-9 * radius,
            "fatol": 1e-9 * radius,
            "maxiter": 800,
            "initial_simplex": np.array(
                [best, best + [radius * 0.25, 0.0], best + [0.0, dz_span * 0.25]]
            ),
        },
    )
    d = min(best_val, float(res.fun))
    return math.copysign(d, gap)


# ---------------------------------------------------------------------------
# Winding number of the pair of signed functions
# ---------------------------------------------------------------------------


def _pair_values(g1: ILipGraph, g2: ILipGraph, pts: FloatArray) -> FloatArray:
    return np.stack([discrepancy(g1, pts), discrepancy(g2, pts)], axis=-1)


def plane_orientation(w1: VerticalPlane, w2: VerticalPlane) -> int:
    """Sign of ``det[U1; U2]``; zero when the planes coincide."""
    u1, u2 = w1.normal, w2.normal
    det = u1[0] * u2[1] - u1[1] * u2[0]
    if abs(det) < 1e-15:
        return 0
    return 1 if det > 0 else -1


def winding_number_check(
    g1: ILipGraph,
    g2: ILipGraph,
    base: FloatArray,
    t: float,
    n_theta: int = 64,
    max_theta: int = 1 << 16,
    tol: float = 1e-12,
) -> int:
    """Winding number of ``F = (f1, f2)`` around 0 along ``θ -> base * (t e_θ, 0)``.

    ``F`` uses the normal-offset discrepancies, which vanish exactly where the
    signed distances do and share their signs, so both pairs have the same
    winding number. The raw count is multiplied by the orientation of the
    pair of planes, so two distinct planes through the loop's center give 1
    whichever order they are passed in. The angle grid is doubled until
    consecutive arguments differ by less than a quarter turn.

    Raises ``InconclusiveError`` when ``F`` (nearly) vanishes on the loop, or
    when the loop is too small for its values to dominate ``F(base)``.
    """
    if not t > 0:
        raise ValueError("loop radius must be positive")
    orient = plane_orientation(g1.plane, g2.plane)
    if orient == 0:
        raise ValueError("winding number needs two distinct planes")
    base = as_points(base).reshape(3)
    center = float(np.linalg.norm(_pair_values(g1, g2, base[None, :])[0]))
    n = int(n_theta)
    while True:
        theta = np.linspace(0.0, 2 * math.pi, n, endpoint=False)
        loop = group_mul(base, np.column_stack([t * np.cos(theta), t * np.sin(theta), np.zeros(n)]))
        f = _pair_values(g1, g2, loop)
        mag = np.linalg.norm(f, axis=1)
        if np.min(mag) <= tol * max(1.0, t):
            raise InconclusiveError("F vanishes on the sampled loop")
        if np.min(mag) <= center:
            raise InconclusiveError(
                f"loop radius {t} too small: min |F| on loop {np.min(mag):.3e} <= |F(base)| {center:.3e}"
            )
        arg = np.arctan2(f[:, 1], f[:, 0])
        step = np.diff(np.append(arg, arg[0]))
        step = (step + math.pi) % (2 * math.pi) - math.pi
        if np.max(np.abs(step)) < math.pi / 2:
            return orient * int(round(step.sum() / (2 * math.pi)))
        if n >= max_theta:
            raise InconclusiveError("angle refinement limit reached")
        n *= 2


# ---------------------------------------------------------------------------
# Cone intersections
# ---------------------------------------------------------------------------


def _sphere_point(theta: FloatArray, rho: FloatArray) -> FloatArray:
    """Point of the unit Korányi sphere with horizontal part ``rho e_θ``, ``z >= 0``."""
    z = np.sqrt(np.clip(1.0 - rho**4, 0.0, None)) / 4.0
    return np.stack([rho * np.cos(theta), rho * np.sin(theta), z], axis=-1)


def _in_all_cones(lip: float, planes: tuple[VerticalPlane, ...], p: FloatArray) -> np.ndarray:
    if not planes:
        h = np.hypot(p[..., 0], p[..., 1])
        return h <= lip * np.asarray(koranyi_norm(p))
    ok = np.ones(p.shape[:-1], dtype=bool)
    for w in planes:
        ok &= np.asarray(in_ilip_cone(w, lip, p, tol=0.0))
    return ok


def _boundary_rho(lip: float, planes: tuple[VerticalPlane, ...], theta: FloatArray, iters: int = 64) -> FloatArray:
    """Smallest horizontal radius on the unit sphere leaving the cone intersection,
    bracketed from above by bisection (``1`` when no exit exists)."""
    theta = np.asarray(theta, dtype=float)
    lo = np.zeros_like(theta)
    hi = np.ones_like(theta)
    inside_top = _in_all_cones(lip, planes, _sphere_point(theta, hi))
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        inside = _in_all_cones(lip, planes, _sphere_point(theta, mid))
        lo = np.where(inside, mid, lo)
        hi = np.where(inside, hi, mid)
    return np.where(inside_top, 1.0, hi)


def _ratio(rho: FloatArray) -> FloatArray:
    return np.sqrt(np.clip(1.0 - rho**4, 0.0, None)) / (4.0 * rho * rho)


def intersection_cone_lambda(
    lip: float,
    *planes: VerticalPlane,
    n_theta: int = 4096,
    n_check: int = 200_000,
    seed: int = 0,
) -> float:
    """Largest ``λ`` with ``∩ Cone_{W,L} ⊂ VCone_λ`` over the given planes.

    With no planes the intersection runs over every vertical plane. The
    boundary of the intersection on the unit Korányi sphere is located by
    bisection along each sampled direction, the minimizing direction is
    refined, and the result is checked against random sphere samples.
    """
    if not 0 < lip < 1:
        raise ValueError(f"Lipschitz parameter must lie in (0, 1), got {lip}")
    if len(planes) == 1:
        raise ValueError("need at least two planes (or none for all planes)")
    for i in range(len(planes)):
        for j in range(i + 1, len(planes)):
            if plane_orientation(planes[i], planes[j]) == 0:
                raise ValueError("planes must be distinct")
    theta = np.linspace(0.0, math.pi, n_theta, endpoint=False)
    rho = _boundary_rho(lip, planes, theta)
    if np.any(rho >= 1.0):
        raise CertificationError(f"cone intersection at L={lip} contains horizontal directions")
    lam = _ratio(rho)
    k = int(np.argmin(lam))
    width = math.pi / n_theta
    refine = minimize_scalar(
        lambda th: float(_ratio(_boundary_rho(lip, planes, np.array([th]))[0])),
        bounds=(theta[k] - width, theta[k] + width),
        method="bounded",
        options={"xatol": 1e-12},
    )
    lam_cert = min(float(lam[k]), float(refine.fun))
    _certify(lip, planes, lam_cert, n_check, seed)
    return lam_cert


def _certify(lip: float, planes: tuple[VerticalPlane, ...], lam: float, n: int, seed: int) -> None:
    rng = np.random.default_rng(seed)
    theta = rng.uniform(0.0, 2 * math.pi, n)
    rho = rng.uniform(0.0, 1.0, n) ** 0.5
    p = _sphere_point(theta, rho)
    p[:, 2] *= rng.choice([-1.0, 1.0], n)
    inside = _in_all_cones(lip, planes, p)
    bad = inside & ~np.asarray(in_vcone(lam, p))
    if np.any(bad):
        raise CertificationError(f"sampled point {p[np.argmax(bad)]} escapes VCone_{lam}")


# ---------------------------------------------------------------------------
# Tracing the intersection of two graphs
# ---------------------------------------------------------------------------


@dataclass
class TraceResult:
    curve: SampledCurve
    lam_certified: float
    vertical: VerticalityReport
    max_residual: float


def _newton(
    func: Callable[[FloatArray], FloatArray],
    x0: FloatArray,
    tol: float,
    max_iter: int = 50,
    fd_step: float = 1e-7,
) -> FloatArray | None:
    """Damped Newton on a map ``R^2 -> R^2`` with a central-difference Jacobian."""
    x = np.array(x0, dtype=float)
    fx = func(x)
    for _ in range(max_iter):
        if np.max(np.abs(fx)) <= tol:
            return x
        jac = np.empty((2, 2))
        for k in range(2):
            e = np.zeros(2)
            e[k] = fd_step
            jac[:, k] = (func(x + e) - func(x - e)) / (2 * fd_step)
        try:
            dx = np.linalg.solve(jac, -fx)
        except np.linalg.LinAlgError:
            return None
        damping = 1.0
        norm0 = np.linalg.norm(fx)
        while damping > 1e-6:
            trial = x + damping * dx
            ft = func(trial)
            if np.linalg.norm(ft) < norm0:
                x, fx = trial, ft
                break
            damping *= 0.5
        else:
            return x if np.max(np.abs(fx)) <= tol else None
    return x if np.max(np.abs(fx)) <= tol else None


def trace_intersection(
    g1: ILipGraph,
    g2: ILipGraph,
    z_range: tuple[float, float],
    step: float,
    base: FloatArray | None = None,
    winding_radius: float = 1.0,
    check_winding: bool = True,
    newton_tol: float = 1e-13,
    min_step_fraction: float = 1.0 / 1024,
    residual_stride: int = 1,
) -> TraceResult:
    """Trace ``Γ1 ∩ Γ2`` as points ``base * (x, y, z)`` for heights ``z`` in ``z_range``.

    At every height the horizontal offset ``(x, y)`` solves ``F = 0`` by damped
    Newton seeded from the previous height. A failed solve halves the height
    step; once the step falls below ``min_step_fraction * step`` a
    ``TracingError`` carrying the last good point is raised. The result is
    checked with ``verify_vertical`` at the λ certified for the two planes,
    and the signed distances to both graphs are summed at every
    ``residual_stride``-th sample.
    """
    z0, z1 = (float(z) for z in z_range)
    if not (z1 > z0 and step > 0):
        raise ValueError("need z_range[0] < z_range[1] and a positive step")
    base = np.zeros(3) if base is None else as_points(base).reshape(3)
    if check_winding:
        for z in (z0, z1):
            c = group_mul(base, np.array([0.0, 0.0, z]))
            wn = winding_number_check(g1, g2, c, winding_radius)
            if wn != 1:
                raise TracingError(f"winding number {wn} at height {z}")

    def residual_at(z: float) -> Callable[[FloatArray], FloatArray]:
        def f(xy: FloatArray) -> FloatArray:
            p = group_mul(base, np.array([xy[0], xy[1], z]))
            return np.array([float(discrepancy(g1, p)), float(discrepancy(g2, p))])

        return f

    heights = [z0]
    xy = _newton(residual_at(z0), np.zeros(2), newton_tol)
    if xy is None:
        raise TracingError(f"no root at starting height {z0}")
    offsets = [xy]
    z = z0
    dz = step
    min_dz = step * min_step_fraction
    while z < z1:
        target = min(z + dz, z1)
        sol = _newton(residual_at(target), offsets[-1], newton_tol)
        if sol is None:
            dz *= 0.5
            if dz < min_dz:
                last = group_mul(base, np.array([*offsets[-1], z]))
                raise TracingError(f"continuation stalled above height {z}", last)
            continue
        z = target
        heights.append(z)
        offsets.append(sol)
        dz = min(step, 2 * dz)
    hz = np.asarray(heights)
    xy_arr = np.asarray(offsets)
    pts = group_mul(base, np.column_stack([xy_arr, hz]))
    lam = intersection_cone_lambda(max(g1.lip, g2.lip), g1.plane, g2.plane)
    curve = SampledCurve(hz, pts, CurveMeta(claimed_lambda=lam))
    report = verify_vertical(curve, lam)
    resid = 0.0
    for p in pts[::residual_stride]:
        resid = max(resid, abs(signed_distance(g1, p)) + abs(signed_distance(g2, p)))
    curve.meta.extra["max_residual"] = resid
    return TraceResult(curve, lam, report, resid)


__all__ = [
    "CertificationError",
    "ILipGraph",
    "ILipReport",
    "InconclusiveError",
    "TraceResult",
    "TracingError",
    "discrepancy",
    "graph_point",
    "graph_through_curve",
    "intersection_cone_lambda",
    "plane_orientation",
    "project_normal",
    "project_plane",
    "signed_distance",
    "split",
    "trace_intersection",
    "verify_ilip",
    "winding_number_check",
]
