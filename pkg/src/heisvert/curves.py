"""Sampled and smooth curves: measure, slope, order, verticality checks,
subdivision chains and bi-Hölder reparametrization."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterator, Sequence

import numpy as np
from scipy.integrate import simpson

from heisvert.group import (
    DEFAULT_TOL,
    FloatArray,
    as_points,
    c_lambda,
    compact_intersection_const,
    dilate,
    group_mul,
    in_vcone,
    inverse_mul,
    koranyi_norm,
    vcone_ratio,
)

PANELS_PER_UNIT = 2**14

# Pairwise loops allocate blocks of at most this many pair entries.
PAIR_BLOCK = 2_000_000


class DomainError(ValueError):
    """An argument lies outside the domain of an operation."""


class OrientationError(ValueError):
    """A curve is not positively oriented where it was required to be."""


# ---------------------------------------------------------------------------
# Curve containers
# ---------------------------------------------------------------------------


@dataclass
class CurveMeta:
    claimed_lambda: float | None = None
    slope_bound: float | None = None
    unit_speed: bool = False
    extra: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        out = {
            "claimed_lambda": self.claimed_lambda,
            "slope_bound": self.slope_bound,
            "unit_speed": self.unit_speed,
        }
        out.update(self.extra)
        return out

    @classmethod
    def from_json(cls, data: dict | None) -> "CurveMeta":
        data = dict(data or {})
        return cls(
            claimed_lambda=data.pop("claimed_lambda", None),
            slope_bound=data.pop("slope_bound", None),
            unit_speed=bool(data.pop("unit_speed", False)),
            extra=data,
        )


@dataclass
class SampledCurve:
    """Ordered samples ``(t_i, p_i)`` with strictly increasing parameters."""

    t: FloatArray
    points: FloatArray
    meta: CurveMeta = field(default_factory=CurveMeta)

    def __post_init__(self) -> None:
        self.t = np.asarray(self.t, dtype=float)
        self.points = as_points(self.points).reshape(-1, 3)
        if self.t.ndim != 1 or self.t.shape[0] != self.points.shape[0]:
            raise DomainError("parameter and point arrays must have matching length")
        if self.t.shape[0] < 2:
            raise DomainError("a sampled curve needs at least 2 samples")
        if not (np.all(np.isfinite(self.t)) and np.all(np.isfinite(self.points))):
            raise DomainError("curve samples must be finite")
        if np.any(np.diff(self.t) <= 0):
            raise DomainError("curve parameters must be strictly increasing")

    def __len__(self) -> int:
        return self.t.shape[0]

    def subset(self, idx: Sequence[int] | np.ndarray) -> "SampledCurve":
        idx = np.asarray(idx)
        return SampledCurve(self.t[idx], self.points[idx], self.meta)

    def to_json(self) -> dict:
        rows = np.column_stack([self.t, self.points])
        return {"samples": rows.tolist(), "meta": self.meta.to_json()}

    @classmethod
    def from_json(cls, data: dict) -> "SampledCurve":
        rows = np.asarray(data["samples"], dtype=float)
        if rows.ndim != 2 or rows.shape[1] != 4:
            raise DomainError("curve samples must be rows [t, x, y, z]")
        return cls(rows[:, 0], rows[:, 1:], CurveMeta.from_json(data.get("meta")))

    def dumps(self) -> str:
        return json.dumps(self.to_json())

    @classmethod
    def loads(cls, text: str) -> "SampledCurve":
        return cls.from_json(json.loads(text))

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["t", "x", "y", "z"])
        for t, p in zip(self.t, self.points):
            writer.writerow([repr(float(t))] + [repr(float(c)) for c in p])
        return buf.getvalue()


Evaluator = Callable[[FloatArray], FloatArray]


@dataclass
class SmoothCurveSpec:
    """Smooth curve given by vectorized evaluators on ``[t0, t1]``.

    ``position(t)`` returns points of shape ``t.shape + (3,)`` and
    ``left_velocity(t)`` the left-trivialized derivative
    ``d/ds [gamma(t)^-1 gamma(s)]`` at ``s = t`` in the ``X, Y, Z`` frame.
    """

    position: Evaluator
    left_velocity: Evaluator
    t0: float
    t1: float

    def __post_init__(self) -> None:
        if not self.t1 > self.t0:
            raise DomainError("curve interval must have t1 > t0")

    @classmethod
    def from_coordinates(
        cls, position: Evaluator, velocity: Evaluator, t0: float, t1: float
    ) -> "SmoothCurveSpec":
        """Build from the coordinate derivative ``(x', y', z')``."""

        def left_velocity(t: FloatArray) -> FloatArray:
            p = position(t)
            v = velocity(t)
            return left_trivialize(p, v)

        return cls(position, left_velocity, t0, t1)

    def dilated(self, r: float) -> "SmoothCurveSpec":
        scale = np.array([r, r, r * r])
        return SmoothCurveSpec(
            lambda t: dilate(r, self.position(t)),
            lambda t: self.left_velocity(t) * scale,
            self.t0,
            self.t1,
        )

    def translated(self, g: FloatArray) -> "SmoothCurveSpec":
        g = np.asarray(g, dtype=float)
        return SmoothCurveSpec(
            lambda t: group_mul(g, self.position(t)),
            self.left_velocity,
            self.t0,
            self.t1,
        )

    def grid(self, n: int) -> FloatArray:
        return np.linspace(self.t0, self.t1, n)

    def sample(self, n: int, meta: CurveMeta | None = None) -> SampledCurve:
        t = self.grid(n)
        return SampledCurve(t, self.position(t), meta or CurveMeta())


def left_trivialize(p: FloatArray, v: FloatArray) -> FloatArray:
    """Convert a coordinate velocity ``v`` at ``p`` to left-invariant frame coefficients."""
    p = np.asarray(p, dtype=float)
    v = np.asarray(v, dtype=float)
    c = v[..., 2] - 0.5 * p[..., 0] * v[..., 1] + 0.5 * v[..., 0] * p[..., 1]
    return np.stack([v[..., 0], v[..., 1], c], axis=-1)


def _check_domain(c: SmoothCurveSpec, t: FloatArray) -> None:
    slack = 1e-12 * max(1.0, abs(c.t0), abs(c.t1))
    if np.any(t < c.t0 - slack) or np.any(t > c.t1 + slack):
        raise DomainError(f"parameter outside [{c.t0}, {c.t1}]")


def left_derivative(c: SmoothCurveSpec, t: float | FloatArray) -> FloatArray:
    t_arr = np.asarray(t, dtype=float)
    _check_domain(c, t_arr)
    return c.left_velocity(t_arr)


# ---------------------------------------------------------------------------
# Measure and slope
# ---------------------------------------------------------------------------


def _panel_count(length: float, panels_per_unit: int) -> int:
    n = max(2, int(math.ceil(panels_per_unit * length)))
    return n + (n % 2)


def h2_measure(
    c: SmoothCurveSpec | SampledCurve,
    t0: float | None = None,
    t1: float | None = None,
    panels_per_unit: int = PANELS_PER_UNIT,
) -> float:
    """Two-dimensional Hausdorff measure of a curve.

    Smooth curves integrate ``|z(gamma')|`` with composite Simpson; sampled
    curves sum ``|z(p_i^-1 p_{i+1})|`` over consecutive samples.
    """
    if isinstance(c, SampledCurve):
        steps = inverse_mul(c.points[:-1], c.points[1:])
        return float(np.sum(np.abs(steps[:, 2])))
    a = c.t0 if t0 is None else t0
    b = c.t1 if t1 is None else t1
    if b < a:
        raise DomainError("integration interval reversed")
    if b == a:
        return 0.0
    t = np.linspace(a, b, _panel_count(b - a, panels_per_unit) + 1)
    _check_domain(c, t)
    return float(simpson(np.abs(c.left_velocity(t)[:, 2]), x=t))


def z_integral(
    c: SmoothCurveSpec, s: float, t: float, panels_per_unit: int = PANELS_PER_UNIT
) -> float:
    """Signed integral of ``z(gamma')`` over ``[s, t]``."""
    lo, hi = min(s, t), max(s, t)
    if hi == lo:
        return 0.0
    grid = np.linspace(lo, hi, _panel_count(hi - lo, panels_per_unit) + 1)
    _check_domain(c, grid)
    val = float(simpson(c.left_velocity(grid)[:, 2], x=grid))
    return val if t >= s else -val


def slope_of(v: FloatArray) -> FloatArray:
    """``z / |pi|`` of tangent vectors, ``inf`` where the horizontal part vanishes."""
    v = np.asarray(v, dtype=float)
    h = np.hypot(v[..., 0], v[..., 1])
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(h > 0, v[..., 2] / np.where(h > 0, h, 1.0), np.inf)


def h_slope(c: SmoothCurveSpec, t: float | FloatArray) -> float | FloatArray:
    v = left_derivative(c, t)
    if np.any(v[..., 2] <= 0):
        raise OrientationError("h-slope needs z(gamma') > 0")
    out = slope_of(v)
    return float(out) if np.ndim(out) == 0 else out


def min_slope(c: SmoothCurveSpec, n: int = 1001) -> float:
    """Smallest h-slope over ``n`` evenly spaced parameters."""
    return float(np.min(h_slope(c, c.grid(n))))


# ---------------------------------------------------------------------------
# Order relation and pairwise verification
# ---------------------------------------------------------------------------


def precedes(p: FloatArray, q: FloatArray) -> bool | np.ndarray:
    """``p ≺ q`` iff ``z(p^-1 q) > 0``."""
    out = inverse_mul(p, q)[..., 2] > 0
    return bool(out) if np.ndim(out) == 0 else out


def _pair_blocks(n: int) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Yield ``(i, j)`` index arrays covering all pairs ``i < j`` in lexicographic order."""
    rows = max(1, PAIR_BLOCK // max(n, 1))
    for start in range(0, n - 1, rows):
        i = np.arange(start, min(start + rows, n - 1))
        ii, jj = np.meshgrid(i, np.arange(n), indexing="ij")
        mask = jj > ii
        yield ii[mask], jj[mask]


def _given_pair_blocks(pairs: np.ndarray) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    for start in range(0, pairs.shape[0], PAIR_BLOCK):
        chunk = pairs[start : start + PAIR_BLOCK]
        yield chunk[:, 0], chunk[:, 1]


def iter_pairs(n: int, pairs: np.ndarray | None) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    return _pair_blocks(n) if pairs is None else _given_pair_blocks(pairs)


def multiscale_pairs(n: int, n_coarse: int = 1500, n_offsets: int | None = None) -> np.ndarray:
    """Pair set for long curves: all pairs of an evenly spaced subset plus
    every index paired with its neighbours at offsets ``1, 2, 4, ...``."""
    coarse = np.unique(np.linspace(0, n - 1, min(n, n_coarse)).round().astype(np.int64))
    ci, cj = np.triu_indices(coarse.size, k=1)
    blocks = [np.column_stack([coarse[ci], coarse[cj]])]
    max_k = int(math.floor(math.log2(max(n - 1, 1)))) if n_offsets is None else n_offsets
    base = np.arange(n, dtype=np.int64)
    for k in range(max_k + 1):
        off = 1 << k
        if off >= n:
            break
        blocks.append(np.column_stack([base[: n - off], base[off:]]))
    return np.concatenate(blocks)


@dataclass
class VerticalityReport:
    ok: bool
    counterexample: tuple[int, int] | None
    min_cone_ratio: float
    n_pairs: int

    def to_json(self) -> dict:
        return {
            "ok": self.ok,
            "counterexample": list(self.counterexample) if self.counterexample else None,
            "min_cone_ratio": _json_float(self.min_cone_ratio),
            "n_pairs": self.n_pairs,
        }


def _json_float(x: float) -> float | str:
    return x if math.isfinite(x) else ("inf" if x > 0 else "-inf")


def verify_vertical(
    c: SampledCurve, lam: float, pairs: np.ndarray | None = None, tol: float = DEFAULT_TOL
) -> VerticalityReport:
    """Check ``p_i^-1 p_j`` lies in the closed vertical cone for all (or the given) pairs.

    Returns the lexicographically first violating pair, if any, together
    with the smallest cone parameter observed over the checked pairs.
    """
    pts = c.points
    first: tuple[int, int] | None = None
    worst = math.inf
    count = 0
    for i, j in iter_pairs(len(c), pairs):
        disp = inverse_mul(pts[i], pts[j])
        count += i.size
        worst = min(worst, float(np.min(vcone_ratio(disp), initial=math.inf)))
        if first is None:
            bad = ~in_vcone(lam, disp, tol)
            if np.any(bad):
                k = int(np.argmax(bad))
                first = (int(i[k]), int(j[k]))
    return VerticalityReport(first is None, first, worst, count)


class Monotonicity(str, Enum):
    INCREASING = "increasing"
    DECREASING = "decreasing"
    NEITHER = "neither"


def verify_monotone(c: SampledCurve, pairs: np.ndarray | None = None) -> Monotonicity:
    """Classify the sample order under ``≺`` over all (or the given) pairs ``i < j``."""
    all_pos = True
    all_neg = True
    pts = c.points
    for i, j in iter_pairs(len(c), pairs):
        z = inverse_mul(pts[i], pts[j])[:, 2]
        all_pos = all_pos and bool(np.all(z > 0))
        all_neg = all_neg and bool(np.all(z < 0))
        if not (all_pos or all_neg):
            return Monotonicity.NEITHER
    if all_pos:
        return Monotonicity.INCREASING
    if all_neg:
        return Monotonicity.DECREASING
    return Monotonicity.NEITHER


@dataclass
class MonotonicityReport:
    c_lambda: float
    min_z_ratio: float
    min_dist_ratio: float
    max_intersection_ratio: float
    intersection_const: float
    n_triples: int
    ok: bool

    def to_json(self) -> dict:
        return {k: _json_float(v) if isinstance(v, float) else v for k, v in self.__dict__.items()}


def _triples(n: int, n_triples: int, rng: np.random.Generator) -> np.ndarray:
    total = n * (n - 1) * (n - 2) // 6
    if total <= n_triples:
        a, b, c = np.meshgrid(np.arange(n), np.arange(n), np.arange(n), indexing="ij")
        mask = (a < b) & (b < c)
        return np.column_stack([a[mask], b[mask], c[mask]])
    idx = np.sort(
        np.stack([rng.choice(n, size=3, replace=False) for _ in range(n_triples)]), axis=1
    )
    return idx


def monotonicity_constants_check(
    c: SampledCurve,
    lam: float,
    n_triples: int = 10_000,
    seed: int = 0,
    tol: float = DEFAULT_TOL,
) -> MonotonicityReport:
    """Check ``z(a^-1 c) >= c_lam z(a^-1 b)`` and ``d(a, c) >= c_lam d(a, b)``
    for ordered sample triples ``a ≺ b ≺ c``.

    Also reports the largest ``d(a, b) / d(a, c)``, which must stay below the
    compact-intersection constant.
    """
    rng = np.random.default_rng(seed)
    tri = _triples(len(c), n_triples, rng)
    pa, pb, pc = (c.points[tri[:, k]] for k in range(3))
    zab = inverse_mul(pa, pb)[:, 2]
    zac = inverse_mul(pa, pc)[:, 2]
    zbc = inverse_mul(pb, pc)[:, 2]
    if np.any(zab <= 0) or np.any(zac <= 0) or np.any(zbc <= 0):
        raise DomainError("monotonicity check requires an increasing curve")
    dab = np.asarray(koranyi_norm(inverse_mul(pa, pb)))
    dac = np.asarray(koranyi_norm(inverse_mul(pa, pc)))
    cl = c_lambda(lam)
    zr = float(np.min(zac / zab))
    dr = float(np.min(dac / dab))
    ir = float(np.max(dab / dac))
    big_c = compact_intersection_const(lam)
    ok = zr >= cl - tol and dr >= cl - tol and ir <= big_c + tol
    return MonotonicityReport(cl, zr, dr, ir, big_c, int(tri.shape[0]), ok)


# ---------------------------------------------------------------------------
# Subdivision chains and bi-Hölder parametrization
# ---------------------------------------------------------------------------


@dataclass
class SubdivisionResult:
    indices: list[int]
    epsilon: float
    theta: float
    span: float
    bound: float

    @property
    def n(self) -> int:
        return len(self.indices) - 1


def subdivision_bound(lam: float, epsilon: float) -> float:
    """Packing bound on the number of chain steps."""
    cl = c_lambda(lam)
    return (compact_intersection_const(lam) + cl) ** 4 * (cl * epsilon / 4.0) ** -4


def _chain(points: FloatArray, v: int, w: int, epsilon: float) -> list[int]:
    span = float(koranyi_norm(inverse_mul(points[v], points[w])))
    step = 0.5 * epsilon * span
    chain = [v]
    cur = v
    while True:
        if koranyi_norm(inverse_mul(points[cur], points[w])) <= epsilon * span:
            if cur != w:
                chain.append(w)
            return chain
        d = np.asarray(koranyi_norm(inverse_mul(points[cur], points[cur + 1 : w + 1])))
        exits = np.flatnonzero(d >= step)
        # w itself is farther than epsilon * span, so an exit always exists
        cur = cur + 1 + int(exits[0])
        chain.append(cur)


def subdivide(
    c: SampledCurve, v_idx: int, w_idx: int, epsilon: float, lam: float | None = None
) -> SubdivisionResult:
    """Greedy chain ``v = q_0 ≺ ... ≺ q_n = w`` of curve samples.

    Each step moves to the first later sample leaving the ball of radius
    ``epsilon/2 * d(v, w)``; once ``w`` is within ``epsilon * d(v, w)`` the
    chain jumps to it. With ``lam`` given, the upper step bound, the
    separation bound with ``theta = c_lam / 2`` and the packing bound on
    ``n`` are asserted.
    """
    if not 0 < epsilon < 1:
        raise DomainError("epsilon must lie in (0, 1)")
    if not (0 <= v_idx < w_idx < len(c)):
        raise DomainError("need sample indices v < w")
    pts = c.points
    if not precedes(pts[v_idx], pts[w_idx]):
        raise DomainError("subdivision requires v ≺ w")
    chain = _chain(pts, v_idx, w_idx, epsilon)
    span = float(koranyi_norm(inverse_mul(pts[v_idx], pts[w_idx])))
    theta = c_lambda(lam) / 2 if lam is not None else math.nan
    bound = subdivision_bound(lam, epsilon) if lam is not None else math.inf
    res = SubdivisionResult(chain, epsilon, theta, span, bound)
    if lam is not None:
        check_subdivision(c, res)
    return res


def check_subdivision(c: SampledCurve, res: SubdivisionResult, tol: float = 1e-12) -> None:
    q = c.points[res.indices]
    steps = np.asarray(koranyi_norm(inverse_mul(q[:-1], q[1:])))
    if np.any(steps > res.epsilon * res.span * (1 + tol)):
        raise AssertionError("chain step exceeds epsilon * d(v, w)")
    if len(q) > 1:
        i, j = np.triu_indices(len(q), k=1)
        sep = np.asarray(koranyi_norm(inverse_mul(q[i], q[j])))
        if np.any(sep < res.theta * res.epsilon * res.span * (1 - tol)):
            raise AssertionError("chain separation below theta * epsilon * d(v, w)")
    if res.n > res.bound:
        raise AssertionError("chain longer than the packing bound")


@dataclass
class BiHolderResult:
    curve: SampledCurve
    alpha: float
    beta: float
    constant: float
    fitted_exponent: float
    radix: int
    depth: int


def _refine(points: FloatArray, v: int, w: int, epsilon: float) -> list[int]:
    chain = _chain(points, v, w, epsilon)
    if len(chain) == 2 and w - v > 1:
        # sampling too coarse to resolve a step: split off the sample before w
        chain = [v, w - 1, w]
    return chain


def biholder_parametrize(
    c: SampledCurve, epsilon: float = 0.5, min_radix: int = 16, n_bins: int = 24
) -> BiHolderResult:
    """Reparametrize an increasing curve on ``[0, 1]`` by radix-``N`` refinement.

    Every segment is subdivided by greedy chains; the ``k``-th chain point of
    a segment ``[s, s + h]`` receives parameter ``s + k h / N`` and the
    segment end keeps ``s + h``. ``N`` is the longest chain met, at least
    ``min_radix``. Exponents: ``alpha`` and ``beta`` are slopes of the upper
    and lower envelopes of ``log d`` against ``log |s - t|``; the returned
    constant makes ``C^-1 |s-t|^beta <= d <= C |s-t|^alpha`` hold on every
    sample pair.
    """
    pts = c.points
    n = len(c)
    mono = verify_monotone(c, multiscale_pairs(n) if n > 3000 else None)
    if mono is not Monotonicity.INCREASING:
        raise DomainError("bi-Hölder parametrization requires an increasing curve")
    # build the refinement tree level by level
    levels: list[list[list[int]]] = []
    segments = [(0, n - 1)]
    radix = min_radix
    while segments:
        chains = [_refine(pts, v, w, epsilon) for v, w in segments]
        levels.append(chains)
        radix = max(radix, max(len(ch) - 1 for ch in chains))
        segments = [(a, b) for ch in chains for a, b in zip(ch[:-1], ch[1:]) if b - a > 1]
    param = np.full(n, np.nan)
    param[0], param[n - 1] = 0.0, 1.0
    for chains in levels:
        for ch in chains:
            s, e = param[ch[0]], param[ch[-1]]
            h = e - s
            for k, idx in enumerate(ch[1:-1], start=1):
                param[idx] = s + k * h / radix
    if np.any(np.isnan(param)) or np.any(np.diff(param) <= 0):
        raise AssertionError("refinement did not assign increasing parameters")
    out = SampledCurve(param, pts, c.meta)
    alpha, beta, const, fitted = holder_fit(out, n_bins=n_bins)
    return BiHolderResult(out, alpha, beta, const, fitted, radix, len(levels))


def holder_fit(c: SampledCurve, n_bins: int = 24, max_pairs: int = 4_000_000) -> tuple[float, float, float, float]:
    """Envelope exponents, the two-sided constant and the least-squares exponent."""
    n = len(c)
    if n * (n - 1) // 2 <= max_pairs:
        i, j = np.triu_indices(n, k=1)
    else:
        pr = multiscale_pairs(n)
        i, j = pr[:, 0], pr[:, 1]
    dt = np.abs(c.t[j] - c.t[i])
    d = np.asarray(koranyi_norm(inverse_mul(c.points[i], c.points[j])))
    x, y = np.log(dt), np.log(d)
    fitted = float(np.polyfit(x, y, 1)[0])
    edges = np.linspace(x.min(), x.max() + 1e-12, n_bins + 1)
    which = np.digitize(x, edges) - 1
    xs, hi, lo = [], [], []
    for b in range(n_bins):
        m = which == b
        if np.any(m):
            xs.append(x[m].mean())
            hi.append(y[m].max())
            lo.append(y[m].min())
    if len(xs) < 2:
        return fitted, fitted, float(np.exp(np.max(np.abs(y - fitted * x)))), fitted
    alpha = float(np.polyfit(xs, hi, 1)[0])
    beta = float(np.polyfit(xs, lo, 1)[0])
    alpha = min(alpha, fitted)
    beta = max(beta, fitted)
    log_c = max(float(np.max(y - alpha * x)), float(np.max(beta * x - y)))
    return alpha, beta, float(np.exp(log_c)), fitted


# ---------------------------------------------------------------------------
# Slope-controlled verticality
# ---------------------------------------------------------------------------


@dataclass
class SlopeVerticalityReport:
    sigma: float
    horizontal: float
    horizontal_bound: float
    z_error: float
    z_error_bound: float
    cone_lambda: float | None
    in_cone: bool | None
    distance: float
    distance_bound: float | None
    ok: bool


def slope_verticality_check(
    c: SmoothCurveSpec,
    m: float,
    s: float,
    t: float,
    n_slope: int = 2001,
    panels_per_unit: int = PANELS_PER_UNIT,
    rtol: float = 1e-9,
) -> SlopeVerticalityReport:
    """Compare the chord ``gamma(s)^-1 gamma(t)`` against its ``z``-mass ``sigma``.

    Requires h-slope at least ``m`` on ``[s, t]`` (checked on ``n_slope``
    parameters). Asserts ``|pi| <= sigma/m`` and ``|z - sigma| <= sigma^2/m^2``,
    and when ``sigma < m^2`` cone membership at ``m^2/sigma - 1`` and
    ``d <= 4 sqrt(sigma) + 5 sigma/m``.
    """
    lo, hi = min(s, t), max(s, t)
    grid = np.linspace(lo, hi, n_slope)
    if np.min(h_slope(c, grid)) < m * (1 - 1e-12):
        raise DomainError(f"h-slope falls below {m} on [{lo}, {hi}]")
    sigma = abs(z_integral(c, s, t, panels_per_unit))
    ends = c.position(np.array([s, t]))
    chord = inverse_mul(ends[0], ends[1])
    horiz = float(np.hypot(chord[0], chord[1]))
    z_err = abs(abs(float(chord[2])) - sigma)
    slack = rtol * max(sigma, 1e-300)
    ok = horiz <= sigma / m + slack and z_err <= sigma**2 / m**2 + slack
    cone_lam = in_cone = dist_bound = None
    distance = float(koranyi_norm(chord))
    if sigma < m * m and sigma > 0:
        cone_lam = m * m / sigma - 1
        in_cone = bool(in_vcone(cone_lam, chord, tol=slack)) if cone_lam > 0 else True
        dist_bound = 4 * math.sqrt(sigma) + 5 * sigma / m
        ok = ok and in_cone and distance <= dist_bound + slack
    return SlopeVerticalityReport(
        sigma, horiz, sigma / m, z_err, sigma**2 / m**2, cone_lam, in_cone, distance, dist_bound, ok
    )


# ---------------------------------------------------------------------------
# Standard fixtures
# ---------------------------------------------------------------------------


def vertical_segment(length: float = 1.0, base: FloatArray | None = None) -> SmoothCurveSpec:
    """``t -> base * (0, 0, t)`` on ``[0, length]``."""
    curve = SmoothCurveSpec(
        lambda t: np.stack(np.broadcast_arrays(0.0 * t, 0.0 * t, t), axis=-1),
        lambda t: np.stack(np.broadcast_arrays(0.0 * t, 0.0 * t, 1.0 + 0.0 * t), axis=-1),
        0.0,
        length,
    )
    return curve if base is None else curve.translated(base)


def horizontal_segment(length: float = 1.0, angle: float = 0.0) -> SmoothCurveSpec:
    cx, cy = math.cos(angle), math.sin(angle)
    return SmoothCurveSpec(
        lambda t: np.stack(np.broadcast_arrays(cx * t, cy * t, 0.0 * t), axis=-1),
        lambda t: np.stack(np.broadcast_arrays(cx + 0.0 * t, cy + 0.0 * t, 0.0 * t), axis=-1),
        0.0,
        length,
    )


def closed_unit_curve() -> SmoothCurveSpec:
    """``t -> (cos t, -sin t, 0)`` on ``[0, 2 pi]``: closed, with ``z(gamma') = 1/2``
    and h-slope 1/2 under the product law of this package."""
    return SmoothCurveSpec.from_coordinates(
        lambda t: np.stack([np.cos(t), -np.sin(t), 0.0 * t], axis=-1),
        lambda t: np.stack([-np.sin(t), -np.cos(t), 0.0 * t], axis=-1),
        0.0,
        2 * math.pi,
    )
