"""Helix perturbations, the multiscale curve cascade and box-counting dimension.

A helix perturbation replaces a curve ``gamma`` by ``gamma(t) * w(sigma(t))``
where ``sigma`` is the running ``z``-mass of ``gamma`` and ``w`` is a small
closed horizontal loop ``v(0)^-1 v(s)`` with
``v(s) = (kappa / 8r) (cos(xi s), -phi sin(xi s), 0)``. The frequency ``xi``
fits a whole number of loops into the total mass, so endpoints are kept.
Each loop adds a constant ``phi kappa^2 xi / (128 r^2)`` to the vertical
speed per unit mass, which grows (``phi = +1``) or shrinks (``phi = -1``)
the two-dimensional measure.

The cascade applies this at scales ``rho^-i``. All levels share one
parameter grid on ``[0, ell]``; each level is stored as positions and left
velocities on that grid, so deep levels never re-evaluate a chain of closures.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.integrate import cumulative_simpson
from scipy.interpolate import PchipInterpolator

from heisvert.curves import (
    CurveMeta,
    DomainError,
    OrientationError,
    SampledCurve,
    SmoothCurveSpec,
    h2_measure,
    min_slope,
    multiscale_pairs,
    slope_of,
    verify_vertical,
)
from heisvert.group import (
    DEFAULT_TOL,
    FloatArray,
    adjoint,
    c_lambda,
    dilate,
    group_mul,
    in_vcone,
    inverse,
    inverse_mul,
    koranyi_norm,
)

BETA_CONST = 1.0 / 400.0

# Largest grid the cascade will allocate (points).
MAX_GRID = 20_000_000


class CascadeError(RuntimeError):
    """A cascade level violated one of its guaranteed bounds."""


@dataclass(frozen=True)
class HelixParams:
    kappa: float
    phi: int
    r: float = 1024.0
    beta_const: float = BETA_CONST

    def __post_init__(self) -> None:
        if not 0 < self.kappa < 1:
            raise DomainError("kappa must lie in (0, 1)")
        if self.phi not in (1, -1):
            raise DomainError("phi must be +1 or -1")
        if not self.r > 0 or not self.beta_const > 0:
            raise DomainError("r and beta_const must be positive")

    @property
    def amplitude(self) -> float:
        return self.kappa / (8.0 * self.r)

    def bracket(self) -> tuple[float, float]:
        """Guaranteed range of the vertical-speed ratio."""
        k2 = self.beta_const * self.kappa**2
        lo, hi = 1 + 2 * self.phi * k2, 1 + 6 * self.phi * k2
        return (min(lo, hi), max(lo, hi))


# ---------------------------------------------------------------------------
# The loop w(s) = v(0)^-1 v(s) and its left velocity
# ---------------------------------------------------------------------------


def loop_count(r: float, mass: float) -> int:
    return int(math.ceil(r * r * mass / (2 * math.pi)))


def loop_frequency(r: float, mass: float) -> float:
    return 2 * math.pi * loop_count(r, mass) / mass


def helix_offset(s: FloatArray, amplitude: float, xi: float, phi: int) -> FloatArray:
    c, sn = np.cos(xi * s), np.sin(xi * s)
    return np.stack(
        [amplitude * (c - 1.0), -phi * amplitude * sn, 0.5 * phi * amplitude**2 * sn], axis=-1
    )


def helix_velocity(s: FloatArray, amplitude: float, xi: float, phi: int) -> FloatArray:
    c, sn = np.cos(xi * s), np.sin(xi * s)
    return np.stack(
        [
            -amplitude * xi * sn,
            -phi * amplitude * xi * c,
            np.full_like(s, 0.5 * phi * amplitude**2 * xi, dtype=float),
        ],
        axis=-1,
    )


def _scale_tangent(v: FloatArray, q: float) -> FloatArray:
    return v * np.array([q, q, q * q])


def perturbed_velocity(
    base_vel: FloatArray, offset: FloatArray, offset_vel: FloatArray, speed: FloatArray
) -> FloatArray:
    """Left velocity of ``t -> base(t) * offset(sigma(t))`` given ``sigma' = speed``."""
    return adjoint(inverse(offset), base_vel) + speed[..., None] * offset_vel


# ---------------------------------------------------------------------------
# Unit-speed reparametrization and single helix perturbation
# ---------------------------------------------------------------------------


def _mass_table(c: SmoothCurveSpec, n: int) -> tuple[FloatArray, FloatArray]:
    t = c.grid(n)
    z = c.left_velocity(t)[:, 2]
    if np.any(z <= 0):
        raise DomainError("curve must be positively oriented")
    return t, cumulative_simpson(z, x=t, initial=0.0)


def unit_speed_reparametrize(c: SmoothCurveSpec, n_table: int = 2**16 + 1) -> SmoothCurveSpec:
    """Reparametrize by ``z``-mass on ``[0, ell]`` (monotone cubic inverse of the mass)."""
    t, mass = _mass_table(c, n_table)
    inv = PchipInterpolator(mass, t)

    def position(s: FloatArray) -> FloatArray:
        return c.position(inv(s))

    def left_velocity(s: FloatArray) -> FloatArray:
        tt = inv(s)
        v = c.left_velocity(tt)
        return v / v[..., 2:3]

    return SmoothCurveSpec(position, left_velocity, 0.0, float(mass[-1]))


@dataclass
class PerturbedCurve(SmoothCurveSpec):
    """Smooth helix perturbation with the data used to build it."""

    params: HelixParams = field(default=None)  # type: ignore[assignment]
    mass: float = 0.0
    xi: float = 0.0
    loops: int = 0
    base: SmoothCurveSpec | None = None
    sigma: PchipInterpolator | None = None


def helix_perturb(
    gamma: SmoothCurveSpec,
    params: HelixParams,
    n_table: int = 2**16 + 1,
    check_preconditions: bool = True,
) -> PerturbedCurve:
    """Perturb ``gamma`` by a mass-synchronized horizontal helix.

    The returned curve is ``t -> gamma(t) * w(sigma(t))``, which equals the
    helix-perturbed unit-speed reparametrization composed with ``sigma``;
    it has the same endpoints and parameter interval as ``gamma``.
    """
    if check_preconditions:
        try:
            m = min_slope(gamma, 4001)
        except OrientationError as exc:
            raise DomainError(f"curve is not positively oriented: {exc}") from exc
        if m < 1.0 / params.kappa:
            raise DomainError(f"h-slope {m:.6g} below 1/kappa = {1 / params.kappa:.6g}")
    t, mass = _mass_table(gamma, n_table)
    total = float(mass[-1])
    if check_preconditions and total < 1.0:
        raise DomainError(f"curve measure {total:.6g} below 1")
    sigma = PchipInterpolator(t, mass)
    xi = loop_frequency(params.r, total)
    amp, phi = params.amplitude, params.phi

    def position(tt: FloatArray) -> FloatArray:
        tt = np.asarray(tt, dtype=float)
        return group_mul(gamma.position(tt), helix_offset(sigma(tt), amp, xi, phi))

    def left_velocity(tt: FloatArray) -> FloatArray:
        tt = np.asarray(tt, dtype=float)
        base_vel = gamma.left_velocity(tt)
        s = sigma(tt)
        return perturbed_velocity(
            base_vel, helix_offset(s, amp, xi, phi), helix_velocity(s, amp, xi, phi), base_vel[..., 2]
        )

    return PerturbedCurve(
        position,
        left_velocity,
        gamma.t0,
        gamma.t1,
        params=params,
        mass=total,
        xi=xi,
        loops=loop_count(params.r, total),
        base=gamma,
        sigma=sigma,
    )


@dataclass
class HelixReport:
    endpoint_error: float
    max_displacement: float
    displacement_bound: float
    min_slope: float
    slope_bound: float
    min_speed_ratio: float
    max_speed_ratio: float
    measure_before: float
    measure_after: float
    bracket: tuple[float, float]

    @property
    def measure_ratio(self) -> float:
        return self.measure_after / self.measure_before


def check_helix(
    pert: PerturbedCurve, points_per_loop: int = 32, chunk: int = 2**20
) -> HelixReport:
    """Scan a perturbation on a grid resolving every loop.

    Integrates both measures with composite Simpson (``points_per_loop``
    panels per loop) and records displacement, slope and pointwise
    vertical-speed ratio extrema on the same nodes.
    """
    base = pert.base
    assert base is not None
    n_panels = max(2, points_per_loop * pert.loops)
    n_panels += n_panels % 2
    h = (pert.t1 - pert.t0) / n_panels
    acc_before = acc_after = 0.0
    disp = 0.0
    slope = math.inf
    rmin, rmax = math.inf, -math.inf
    start = 0
    while start < n_panels:
        stop = min(start + chunk, n_panels)
        k = np.arange(start, stop + 1)
        tt = pert.t0 + k * h
        tt[-1] = pert.t1 if stop == n_panels else tt[-1]
        weights = np.where(k % 2 == 1, 4.0, 2.0)
        weights[k == 0] = 1.0
        weights[k == n_panels] = 1.0
        if start > 0:
            weights[0] = 1.0  # the shared node was counted with weight 1 in the previous chunk
        if stop < n_panels:
            weights[-1] = 1.0
        vb = base.left_velocity(tt)
        va = pert.left_velocity(tt)
        acc_before += float(np.dot(weights, np.abs(vb[:, 2])))
        acc_after += float(np.dot(weights, np.abs(va[:, 2])))
        ratio = va[:, 2] / vb[:, 2]
        rmin, rmax = min(rmin, float(ratio.min())), max(rmax, float(ratio.max()))
        slope = min(slope, float(np.min(slope_of(va))))
        d = koranyi_norm(inverse_mul(base.position(tt), pert.position(tt)))
        disp = max(disp, float(np.max(d)))
        start = stop
    ends = np.array([pert.t0, pert.t1])
    end_err = float(np.max(np.abs(pert.position(ends) - base.position(ends))))
    p = pert.params
    return HelixReport(
        endpoint_error=end_err,
        max_displacement=disp,
        displacement_bound=p.kappa / p.r,
        min_slope=slope,
        slope_bound=1.0 / (p.kappa * p.r),
        min_speed_ratio=rmin,
        max_speed_ratio=rmax,
        measure_before=acc_before * h / 3,
        measure_after=acc_after * h / 3,
        bracket=p.bracket(),
    )


# ---------------------------------------------------------------------------
# Leeway radius and kappa
# ---------------------------------------------------------------------------


def koranyi_ball_points(radius: float, n_angle: int, n_lat: int, shells: Sequence[float]) -> FloatArray:
    """Grid on the Korányi ball: ``|pi| = R s sqrt(cos psi)``, ``z = R^2 s^2 sin(psi) / 4``."""
    th = np.linspace(0, 2 * math.pi, n_angle, endpoint=False)
    psi = np.linspace(-math.pi / 2, math.pi / 2, n_lat)
    out = []
    for s in shells:
        T, P = np.meshgrid(th, psi, indexing="ij")
        rad = radius * s * np.sqrt(np.clip(np.cos(P), 0, None))
        out.append(
            np.stack(
                [rad * np.cos(T), rad * np.sin(T), radius**2 * s**2 * np.sin(P) / 4], axis=-1
            ).reshape(-1, 3)
        )
    return np.concatenate(out)


def random_koranyi_ball(radius: float, n: int, rng: np.random.Generator) -> FloatArray:
    """Uniform-in-parameters random points of the closed Korányi ball."""
    th = rng.uniform(0, 2 * math.pi, n)
    psi = rng.uniform(-math.pi / 2, math.pi / 2, n)
    s = rng.uniform(0, 1, n) ** 0.25
    rad = radius * s * np.sqrt(np.cos(psi))
    return np.stack([rad * np.cos(th), rad * np.sin(th), radius**2 * s**2 * np.sin(psi) / 4], axis=-1)


def _cone_margin(lam_prime: float, p: FloatArray) -> FloatArray:
    return np.abs(p[..., 2]) - lam_prime * (p[..., 0] ** 2 + p[..., 1] ** 2)


def _leeway_ok(lam: float, lam_prime: float, delta: float, grid: tuple[int, int, tuple[float, ...]], n_k: int) -> bool:
    # rotations about the center and (x, y, z) -> (x, -y, -z) are isometric
    # automorphisms preserving both cones, so K reduces to (a, 0, 1)
    a = np.linspace(0, 1 / math.sqrt(lam), n_k)
    k_pts = np.stack([a, 0 * a, 1 + 0 * a], axis=-1)
    ball = koranyi_ball_points(delta, *grid)
    left = group_mul(ball[:, None, :], k_pts[None, :, :]).reshape(-1, 1, 3)
    prod = group_mul(left, ball[None, :, :])
    return bool(np.all(_cone_margin(lam_prime, prod) >= 0))


def leeway_delta(
    lam: float,
    lam_prime: float,
    n_angle: int = 16,
    n_lat: int = 9,
    shells: tuple[float, ...] = (0.5, 1.0),
    n_k: int = 17,
    iterations: int = 30,
    safety: float = 0.9,
) -> float:
    """Radius ``delta`` with ``B(0, delta) K B(0, delta)`` inside the ``lam_prime`` cone.

    ``K`` is the slice ``|z| = 1`` of the ``lam`` cone. Bisection on ``delta``
    with a grid certificate on ``K`` and on the ball; the result is scaled by
    ``safety`` to absorb grid gaps. The sampling density is a parameter, not
    a proof.
    """
    if not 0 < lam_prime < lam:
        raise DomainError("need 0 < lambda' < lambda")
    grid = (n_angle, n_lat, shells)
    lo, hi = 0.0, 1.0
    while _leeway_ok(lam, lam_prime, hi, grid, n_k):
        lo, hi = hi, 2 * hi
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        if _leeway_ok(lam, lam_prime, mid, grid, n_k):
            lo = mid
        else:
            hi = mid
    return safety * lo


def leeway_certificate(
    lam: float, lam_prime: float, delta: float, n: int = 1_000_000, seed: int = 0
) -> int:
    """Count random violations of ``g v g'`` in the ``lam_prime`` cone,
    scaled as in the leeway statement (``g, g'`` in ``B(0, delta sqrt|z(v)|)``)."""
    rng = np.random.default_rng(seed)
    z = rng.choice([-1.0, 1.0], n) * rng.uniform(0.01, 4.0, n)
    rad = np.sqrt(np.abs(z) / lam) * np.sqrt(rng.uniform(0, 1, n))
    th = rng.uniform(0, 2 * math.pi, n)
    v = np.stack([rad * np.cos(th), rad * np.sin(th), z], axis=-1)
    scale = delta * np.sqrt(np.abs(z))
    g = random_koranyi_ball(1.0, n, rng)
    g2 = random_koranyi_ball(1.0, n, rng)
    g = g * np.stack([scale, scale, scale**2], axis=-1)
    g2 = g2 * np.stack([scale, scale, scale**2], axis=-1)
    prod = group_mul(group_mul(g, v), g2)
    return int(np.count_nonzero(~in_vcone(lam_prime, prod, tol=0.0)))


@dataclass
class KappaChoice:
    kappa: float
    cone_term: float
    tenth: float
    leeway_term: float
    epsilon_term: float
    delta: float


def kappa_for(lam: float, lam_prime: float, epsilon: float, c: float | None = None) -> KappaChoice:
    """``min((lam + 1)^-2, 1/10, delta sqrt(c) / 4, epsilon / 2)`` with every branch."""
    if not lam > 0:
        raise DomainError("lambda must be positive")
    if not epsilon > 0:
        raise DomainError("epsilon must be positive")
    c = c_lambda(lam) if c is None else c
    delta = leeway_delta(lam, lam_prime)
    terms = ((lam + 1) ** -2, 0.1, delta * math.sqrt(c) / 4, epsilon / 2)
    return KappaChoice(min(terms), *terms, delta)


# ---------------------------------------------------------------------------
# Hölder exponents and dimension bounds
# ---------------------------------------------------------------------------


@dataclass
class HolderBounds:
    c_phi: float
    C_phi: float
    dim_lower: float
    dim_upper: float
    m_phi: float
    M_phi: float


def speed_factors(phi: int, kappa: float, beta_const: float = BETA_CONST) -> tuple[float, float]:
    k2 = beta_const * kappa**2
    return (1 + 2 * k2, 1 + 6 * k2) if phi == 1 else (1 - 6 * k2, 1 - 2 * k2)


def holder_exponent_bounds(
    phi: int, rho: float, kappa: float, beta_const: float = BETA_CONST
) -> HolderBounds:
    if phi not in (1, -1):
        raise DomainError("phi must be +1 or -1")
    m, M = speed_factors(phi, kappa, beta_const)
    lr = math.log(rho)
    c_phi = lr / math.log(rho**2 * M)
    C_phi = lr / math.log(rho**2 * m)
    return HolderBounds(c_phi, C_phi, 1 / C_phi, 1 / c_phi, m, M)


# ---------------------------------------------------------------------------
# Cascade
# ---------------------------------------------------------------------------


@dataclass
class CascadeState:
    level: int
    measure: float
    slope_bound: float
    rho: float
    min_slope: float
    max_drift: float
    speed_ratio: tuple[float, float] | None = None
    loops: int = 0
    vertical_ok: bool | None = None
    min_cone_ratio: float | None = None

    def csv_row(self) -> list[str]:
        return [str(self.level), repr(self.measure), repr(self.min_slope), repr(self.max_drift)]


@dataclass
class CascadeResult:
    states: list[CascadeState]
    t: FloatArray
    positions: list[FloatArray]
    final_velocity: FloatArray
    kappa: float
    rho: float
    phi: int
    lam: float
    lam_prime: float
    beta_const: float
    scale: float
    window_violations: int = 0
    window_checked: int = 0

    @property
    def final(self) -> SampledCurve:
        return self.level_curve(len(self.positions) - 1)

    def level_curve(self, i: int, stride: int = 1) -> SampledCurve:
        meta = CurveMeta(
            claimed_lambda=self.lam_prime,
            slope_bound=self.states[i].slope_bound,
            unit_speed=False,
            extra={"level": i, "rho": self.rho, "kappa": self.kappa, "phi": self.phi},
        )
        return SampledCurve(self.t[::stride], self.positions[i][::stride], meta)

    def level_csv(self) -> str:
        lines = ["i,ell_i,min_slope,max_drift"]
        lines += [",".join(s.csv_row()) for s in self.states]
        return "\n".join(lines) + "\n"

    def tail_bound(self) -> float:
        """Distance bound from the deepest level to the infinite-depth limit."""
        j = len(self.positions) - 1
        return 2 * self.kappa * self.rho ** (-j - 1)


def normalize_for_cascade(alpha0: SmoothCurveSpec, kappa: float) -> tuple[SmoothCurveSpec, float]:
    """Dilate so that measure >= 1 and h-slope >= 1/kappa, then reparametrize by mass."""
    m = min_slope(alpha0, 4001)
    ell = h2_measure(alpha0)
    scale = max(1.0, 1.0 / math.sqrt(ell), 1.0 / (kappa * m) if math.isfinite(m) else 1.0)
    curve = alpha0.dilated(scale) if scale != 1.0 else alpha0
    return unit_speed_reparametrize(curve), scale


def _cascade_grid(ell: float, levels: int, rho: float, kappa: float, points_per_loop: int) -> int:
    growth = (1 + kappa**2 / 32) ** levels
    finest = rho ** (2 * levels) * ell * growth / (2 * math.pi) + 1
    n = int(math.ceil(points_per_loop * finest)) + 1
    return max(n, 257)


def run_cascade(
    alpha0: SmoothCurveSpec,
    lam: float,
    lam_prime: float,
    epsilon: float,
    phi: int,
    levels: int,
    rho: float = 1000.0,
    kappa_override: float | None = None,
    beta_const: float = BETA_CONST,
    points_per_loop: int = 16,
    paper_bracket: bool | None = None,
    verify: bool = True,
    n_window: int = 20_000,
    seed: int = 0,
) -> CascadeResult:
    """Iterate helix perturbations at scales ``rho^-i`` for ``levels`` steps.

    Level ``i`` dilates ``alpha_i`` by ``rho^i``, perturbs with ``r = rho`` and
    dilates back. Every level is checked for: endpoint preservation, h-slope
    at least ``rho^-i / kappa``, pointwise drift
    ``d(alpha_j, alpha_i) <= 2 kappa rho^(-j-1)``, strict measure monotonicity
    in the direction of ``phi`` and (with ``verify``) verticality at
    ``lam_prime``. The per-level vertical-speed ratio must sit in the
    guaranteed bracket when ``paper_bracket`` is set (default: ``rho >= 1000``);
    otherwise the measured pointwise range is reported and the measure ratio
    is checked against it.
    """
    if phi not in (1, -1):
        raise DomainError("phi must be +1 or -1")
    if not 0 < lam_prime < lam:
        raise DomainError("need 0 < lambda' < lambda")
    if levels < 0:
        raise DomainError("levels must be non-negative")
    if kappa_override is not None:
        kappa = float(kappa_override)
    else:
        kappa = kappa_for(lam, lam_prime, epsilon).kappa
    if not 0 < kappa < 1:
        raise DomainError("kappa must lie in (0, 1)")
    if paper_bracket is None:
        paper_bracket = rho >= 1000
    curve, scale = normalize_for_cascade(alpha0, kappa)
    ell = curve.t1
    n = _cascade_grid(ell, levels, rho, kappa, points_per_loop)
    if n > MAX_GRID:
        raise DomainError(
            f"cascade grid of {n} points exceeds {MAX_GRID}; lower rho or levels (demo mode)"
        )
    t = np.linspace(0.0, ell, n)
    pos = curve.position(t)
    vel = curve.left_velocity(t)
    positions = [pos]
    states: list[CascadeState] = []
    rng = np.random.default_rng(seed)
    pairs = multiscale_pairs(n) if verify else None
    window_bad = window_total = 0

    def level_state(
        i: int, v: FloatArray, speed_ratio: tuple[float, float] | None, loops: int
    ) -> CascadeState:
        p = positions[i]
        measure = float(cumulative_simpson(np.abs(v[:, 2]), x=t)[-1])
        slope_bound = rho ** (-i) / kappa
        slope = float(np.min(slope_of(v)))
        drift = 0.0
        for j in range(i):
            d = float(np.max(koranyi_norm(inverse_mul(positions[j], p))))
            if d > 2 * kappa * rho ** (-j - 1) * (1 + 1e-9):
                raise CascadeError(
                    f"level {i}: drift {d:.6g} from level {j} exceeds 2 kappa rho^-(j+1)"
                )
            if j == 0:
                drift = d
        if slope < slope_bound * (1 - 1e-9):
            raise CascadeError(f"level {i}: h-slope {slope:.6g} below {slope_bound:.6g}")
        st = CascadeState(i, measure, slope_bound, rho, slope, drift, speed_ratio, loops)
        if verify:
            rep = verify_vertical(SampledCurve(t, p), lam_prime, pairs)
            st.vertical_ok, st.min_cone_ratio = rep.ok, rep.min_cone_ratio
            if not rep.ok:
                raise CascadeError(
                    f"level {i}: not {lam_prime}-vertical, counterexample {rep.counterexample}"
                )
        return st

    states.append(level_state(0, vel, None, 0))
    for i in range(levels):
        pos = positions[-1]
        speed = rho ** (2 * i) * vel[:, 2]  # vertical speed of the dilated level
        sigma = cumulative_simpson(speed, x=t, initial=0.0)
        mass = float(sigma[-1])
        if mass < 1.0 and paper_bracket:
            raise CascadeError(f"level {i}: dilated measure {mass:.6g} below 1")
        xi = loop_frequency(rho, mass)
        amp = kappa / (8 * rho)
        q = rho ** (-i)
        off = dilate(q, helix_offset(sigma, amp, xi, phi))
        off_vel = _scale_tangent(helix_velocity(sigma, amp, xi, phi), q)
        new_pos = group_mul(pos, off)
        new_vel = perturbed_velocity(vel, off, off_vel, speed)
        end_err = float(np.max(np.abs(new_pos[[0, -1]] - positions[0][[0, -1]])))
        if end_err > 1e-9 * max(1.0, float(np.max(np.abs(positions[0][[0, -1]])))):
            raise CascadeError(f"level {i + 1}: endpoints moved by {end_err:.3g}")
        ratio = new_vel[:, 2] / vel[:, 2]
        rng_ratio = (float(ratio.min()), float(ratio.max()))
        positions.append(new_pos)
        st = level_state(i + 1, new_vel, rng_ratio, loop_count(rho, mass))
        prev = states[-1].measure
        growth = st.measure / prev
        if paper_bracket:
            lo, hi = HelixParams(kappa, phi, rho, beta_const).bracket()
            if rng_ratio[0] < lo * (1 - 1e-6) or rng_ratio[1] > hi * (1 + 1e-6):
                raise CascadeError(
                    f"level {i + 1}: speed ratio {rng_ratio} outside guaranteed [{lo}, {hi}]"
                )
        if not (rng_ratio[0] * (1 - 1e-9) <= growth <= rng_ratio[1] * (1 + 1e-9)):
            raise CascadeError(f"level {i + 1}: measure ratio {growth} outside pointwise range")
        if (growth - 1) * phi <= 0:
            raise CascadeError(
                f"level {i + 1}: measure ratio {growth:.9g} not strictly monotone for phi={phi}"
            )
        states.append(st)
        b, tot = _window_check(t, pos, vel, i, rho, rng, n_window)
        window_bad += b
        window_total += tot
        vel = new_vel
    b, tot = _window_check(t, positions[-1], vel, levels, rho, rng, n_window)
    window_bad += b
    window_total += tot
    if window_bad:
        raise CascadeError(f"{window_bad} sampled chords violate the short-chord z window")
    return CascadeResult(
        states, t, positions, vel, kappa, rho, phi, lam, lam_prime, beta_const, scale,
        window_bad, window_total,
    )


def _window_check(
    t: FloatArray, pos: FloatArray, vel: FloatArray, i: int, rho: float,
    rng: np.random.Generator, n_chords: int,
) -> tuple[int, int]:
    """Chords with mass ``sigma <= rho^(-2i)`` must have ``sigma/2 <= |z| <= 3 sigma/2``."""
    n = t.size
    Sigma = cumulative_simpson(vel[:, 2], x=t, initial=0.0)
    limit = rho ** (-2 * i)
    s_idx = rng.integers(0, n - 1, n_chords)
    # target masses spread log-uniformly below the window limit
    target = limit * np.exp(rng.uniform(math.log(1e-4), 0.0, n_chords))
    e_idx = np.searchsorted(Sigma, Sigma[s_idx] + target, side="right") - 1
    keep = e_idx > s_idx
    s_idx, e_idx = s_idx[keep], e_idx[keep]
    sig = Sigma[e_idx] - Sigma[s_idx]
    keep = sig <= limit
    s_idx, e_idx, sig = s_idx[keep], e_idx[keep], sig[keep]
    z = np.abs(inverse_mul(pos[s_idx], pos[e_idx])[:, 2])
    bad = (z < 0.5 * sig * (1 - 1e-9)) | (z > 1.5 * sig * (1 + 1e-9))
    return int(np.count_nonzero(bad)), int(s_idx.size)


# ---------------------------------------------------------------------------
# Box-counting dimension
# ---------------------------------------------------------------------------


@dataclass
class BoxFit:
    estimate: float
    intercept: float
    scales: list[float]
    counts: list[int]
    residuals: list[float]


def greedy_cover_count(points: FloatArray, radius: float, stop_factor: float | None = None) -> int:
    """Greedy metric-ball cover in curve order.

    The first uncovered sample becomes a center and every sample within
    ``radius`` is marked covered. With ``stop_factor`` the forward scan from a
    center stops at the first sample farther than ``stop_factor * radius``
    (valid for vertical curves, where later samples cannot return closer
    than the intersection constant allows).
    """
    n = points.shape[0]
    covered = np.zeros(n, dtype=bool)
    count = 0
    i = 0
    while i < n:
        count += 1
        c = points[i]
        if stop_factor is None:
            d = np.asarray(koranyi_norm(inverse_mul(c, points[i:])))
            covered[i:] |= d <= radius
        else:
            start, block = i, 64
            while start < n:
                stop = min(start + block, n)
                d = np.asarray(koranyi_norm(inverse_mul(c, points[start:stop])))
                covered[start:stop] |= d <= radius
                far = np.flatnonzero(d > stop_factor * radius)
                if far.size:
                    break
                start, block = stop, block * 2
        i = _next_uncovered(covered, i + 1)
    return count


def _next_uncovered(covered: np.ndarray, start: int) -> int:
    n = covered.size
    block = 64
    while start < n:
        stop = min(start + block, n)
        free = np.flatnonzero(~covered[start:stop])
        if free.size:
            return start + int(free[0])
        start, block = stop, block * 2
    return n


def _thin(points: FloatArray, spacing: float) -> FloatArray:
    """Keep samples so consecutive kept points are at most about ``spacing`` apart."""
    steps = np.asarray(koranyi_norm(inverse_mul(points[:-1], points[1:])))
    if steps.max(initial=0.0) > spacing:
        return points
    acc = np.concatenate([[0.0], np.cumsum(steps)])
    keep = np.unique(np.searchsorted(acc, np.arange(0, acc[-1], spacing)))
    keep = np.union1d(keep, [points.shape[0] - 1])
    return points[keep]


def box_dimension_estimate(
    c: SampledCurve,
    scales: Sequence[float],
    stop_factor: float | None = None,
    min_decades: float = 2.0,
    min_samples: int = 1000,
) -> BoxFit:
    """Fit ``log N(r)`` against ``-log r`` for greedy Korányi-ball covers."""
    scales = sorted(float(s) for s in scales)
    if len(c) < min_samples:
        raise DomainError(f"need at least {min_samples} samples, got {len(c)}")
    if len(scales) < 3 or scales[-1] / scales[0] < 10**min_decades * (1 - 1e-9):
        raise DomainError(f"scales must span at least {min_decades} decades")
    counts = []
    for r in scales:
        pts = _thin(c.points, r / 8)
        counts.append(greedy_cover_count(pts, r, stop_factor))
    x = -np.log(scales)
    y = np.log(counts)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    return BoxFit(float(slope), float(intercept), scales, counts, resid.tolist())


