"""End-to-end acceptance checks, one test per criterion.

Each test carries a ``criterion`` marker; ``conftest.py`` prints one PASS/FAIL
line per criterion at the end of the run. Run just this suite with
``pytest tests/test_acceptance.py -v``.
"""

import math
import time

import numpy as np
import pytest

from heisvert.cascade import (
    HelixParams,
    box_dimension_estimate,
    check_helix,
    helix_perturb,
    run_cascade,
)
from heisvert.contact import (
    BallRegion,
    BoxRegion,
    ContactMap,
    ContactPotential,
    ball_qmc,
    ball_reduction,
    build_alpha0,
    coarea_check,
    divergence_fd,
    jacobian_identity_check,
    linearized_jacobian_check,
    unit_sphere_samples,
    vitali_cascade,
)
from heisvert.curves import (
    SampledCurve,
    closed_unit_curve,
    h2_measure,
    horizontal_segment,
    monotonicity_constants_check,
    precedes,
    verify_vertical,
    vertical_segment,
)
from heisvert.graphs import ILipGraph, trace_intersection, winding_number_check
from heisvert.group import (
    VerticalPlane,
    c_lambda,
    dilate,
    dist,
    group_mul,
    in_vcone,
    inverse,
    inverse_mul,
    koranyi_norm,
)

W_X0 = VerticalPlane(math.pi / 2)
W_Y0 = VerticalPlane(0.0)
BUMP = {"kind": "bump", "amplitude": 0.02, "center": [0.1, 0.2], "width": 0.8}
DEMO = dict(rho=2.0, kappa_override=0.95)


def detail(record_property, text):
    record_property("detail", text)
    print(text)


# ---------------------------------------------------------------------------
# 1. Metric and group laws
# ---------------------------------------------------------------------------


@pytest.mark.criterion(1, "metric and group laws on 1e5 random tuples")
def test_metric_and_group_laws(record_property):
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    n = 100_000
    a, b, c, g = rng.normal(size=(4, n, 3))
    r = rng.uniform(0.01, 100, n)
    dab, dbc, dac = dist(a, b), dist(b, c), dist(a, c)
    triangle = float(np.max((dac - dab - dbc) / dac))
    left = float(np.max(np.abs(dist(group_mul(g, a), group_mul(g, b)) - dab) / dab))
    # One dilation factor per tuple, written out coordinatewise.
    scaled = a * np.column_stack([r, r, r * r])
    homog = float(np.max(np.abs(koranyi_norm(scaled) - r * koranyi_norm(a)) / (r * koranyi_norm(a))))
    assert np.array_equal(dilate(r[0], a[:1]), scaled[:1])
    elapsed = time.perf_counter() - start
    detail(
        record_property,
        f"triangle excess {triangle:.2e}, left invariance {left:.2e}, homogeneity {homog:.2e}, {elapsed:.2f} s",
    )
    assert triangle <= 1e-10
    assert left <= 1e-10
    assert homog <= 1e-10
    assert elapsed < 5


# ---------------------------------------------------------------------------
# 2. The order relation
# ---------------------------------------------------------------------------


def vertical_polygon(n: int, seed: int) -> SampledCurve:
    rng = np.random.default_rng(seed)
    xy = rng.normal(size=(n, 2)) * 0.01
    steps = np.column_stack([xy, 10.0 * np.sum(xy**2, axis=1) + 1e-3])
    pts = np.zeros((n + 1, 3))
    for k in range(n):
        pts[k + 1] = group_mul(pts[k], steps[k])
    return SampledCurve(np.arange(n + 1.0), pts)


@pytest.mark.criterion(2, "order relation: cyclic chain, transitivity on vertical sets, ratio bounds")
def test_order_relation(record_property):
    X, Y = np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0])
    chain = [X, inverse(Y), inverse(X), Y, X]
    gaps = [float(inverse_mul(p, q)[2]) for p, q in zip(chain, chain[1:])]
    assert gaps == [0.5, 0.5, 0.5, 0.5]
    assert all(precedes(p, q) for p, q in zip(chain, chain[1:]))
    # The chain returns to X, so the relation is not transitive on all of the group.
    assert not precedes(X, X)

    lam = 1.0
    curve = vertical_polygon(300, 7)
    assert verify_vertical(curve, lam, tol=0.0).ok
    rng = np.random.default_rng(8)
    tri = np.sort(rng.choice(len(curve), size=(12_000, 3)), axis=1)
    tri = tri[(tri[:, 0] < tri[:, 1]) & (tri[:, 1] < tri[:, 2])][:10_000]
    assert tri.shape[0] == 10_000
    pa, pb, pc = (curve.points[tri[:, k]] for k in range(3))
    assert np.all(in_vcone(lam, inverse_mul(pa, pb), tol=0.0) & in_vcone(lam, inverse_mul(pb, pc), tol=0.0))
    hyp = precedes(pa, pb) & precedes(pb, pc)
    transitive_failures = int(np.sum(hyp & ~precedes(pa, pc)))
    rep = monotonicity_constants_check(curve, lam, 10_000, seed=9, tol=0.0)
    bound = min(0.5, lam * lam)
    detail(
        record_property,
        f"transitivity failures {transitive_failures}/{int(hyp.sum())}, "
        f"min z ratio {rep.min_z_ratio:.4f}, min d ratio {rep.min_dist_ratio:.4f} vs {bound}",
    )
    assert hyp.all() and transitive_failures == 0
    assert rep.c_lambda == bound == c_lambda(lam)
    assert rep.min_z_ratio >= bound and rep.min_dist_ratio >= bound


# ---------------------------------------------------------------------------
# 3. Measure oracle
# ---------------------------------------------------------------------------


@pytest.mark.criterion(3, "measure oracle: vertical T, horizontal 0, closed curve 2 pi")
def test_measure_oracle(record_property):
    cases = [
        ("vertical", vertical_segment(3.0), 3.0),
        ("horizontal", horizontal_segment(2.0), 0.0),
        ("closed", closed_unit_curve(), 2 * math.pi),
    ]
    lines, ok = [], True
    for name, curve, expected in cases:
        start = time.perf_counter()
        got = h2_measure(curve)
        elapsed = time.perf_counter() - start
        err = abs(got - expected) / expected if expected else abs(got)
        good = err <= 1e-8 and elapsed < 1
        ok &= good
        lines.append(f"{name} {got:.10g} vs {expected:.10g} ({'ok' if good else 'off'})")
    detail(record_property, ", ".join(lines))
    assert ok


# ---------------------------------------------------------------------------
# 4. Single helix perturbation at r = 1024
# ---------------------------------------------------------------------------


@pytest.mark.criterion(4, "helix perturbation at r=1024, beta=1/400, kappa=0.1")
def test_helix_perturbation(record_property):
    start = time.perf_counter()
    lines = []
    for phi in (1, -1):
        params = HelixParams(0.1, phi, 1024.0, 1.0 / 400.0)
        rep = check_helix(helix_perturb(vertical_segment(1.0), params))
        ratio = rep.measure_after / rep.measure_before
        lo, hi = params.bracket()
        lines.append(f"phi={phi:+d} ratio {ratio:.9f} in [{lo:.6f}, {hi:.6f}]")
        assert rep.endpoint_error <= 1e-12
        assert rep.max_displacement <= params.kappa / params.r
        assert lo - 1e-9 <= ratio <= hi + 1e-9
    elapsed = time.perf_counter() - start
    detail(record_property, ", ".join(lines) + f", {elapsed:.1f} s")
    assert elapsed < 30


# ---------------------------------------------------------------------------
# 5. Demo cascade
# ---------------------------------------------------------------------------


@pytest.mark.criterion(5, "demo cascade, 6 levels, both directions")
def test_demo_cascade(record_property):
    start = time.perf_counter()
    lines = []
    for phi in (1, -1):
        res = run_cascade(vertical_segment(1.0), 1.0, 0.5, 0.5, phi, 6, **DEMO)
        ells = [s.measure for s in res.states]
        assert all((b - a) * phi > 0 for a, b in zip(ells, ells[1:]))
        for prev, cur in zip(res.states, res.states[1:]):
            lo, hi = cur.speed_ratio
            assert lo * (1 - 1e-9) <= cur.measure / prev.measure <= hi * (1 + 1e-9)
        assert all(s.vertical_ok for s in res.states)
        worst = 0.0
        for j in range(len(res.positions)):
            bound = 2 * res.kappa * res.rho ** (-j - 1)
            for i in range(j + 1, len(res.positions)):
                worst = max(worst, float(np.max(dist(res.positions[j], res.positions[i]))) / bound)
        assert worst <= 1 + 1e-9
        lines.append(f"phi={phi:+d} ell {ells[0]:.4f} -> {ells[-1]:.4f}, worst drift/bound {worst:.3f}")
    elapsed = time.perf_counter() - start
    detail(record_property, ", ".join(lines) + f", {elapsed:.1f} s")
    assert elapsed < 300


# ---------------------------------------------------------------------------
# 6. Box dimension
# ---------------------------------------------------------------------------


@pytest.mark.criterion(6, "box dimension: fixtures and direction of the cascade")
def test_box_dimension(record_property):
    vert = box_dimension_estimate(vertical_segment(1.0).sample(200_001), np.geomspace(0.01, 1.0, 7), stop_factor=3.0)
    hor = box_dimension_estimate(horizontal_segment(1.0).sample(100_001), np.geomspace(0.001, 0.1, 7))
    # The cascade is resolved down to helix scale 2^-8; the fit stays above it.
    scales = np.geomspace(2.0**-6, 2.0**-2, 5)
    est = {}
    for phi in (1, -1):
        res = run_cascade(vertical_segment(1.0), 1.0, 0.5, 0.5, phi, 8, points_per_loop=64, verify=False, **DEMO)
        est[phi] = box_dimension_estimate(res.final, scales, stop_factor=3.0, min_decades=1.0).estimate
    detail(
        record_property,
        f"vertical {vert.estimate:.4f}, horizontal {hor.estimate:.4f}, "
        f"cascade phi=+1 {est[1]:.4f}, phi=-1 {est[-1]:.4f}",
    )
    assert vert.estimate == pytest.approx(2.0, abs=0.1)
    assert hor.estimate == pytest.approx(1.0, abs=0.1)
    assert est[1] > 2.0 > est[-1]


# ---------------------------------------------------------------------------
# 7. Intersection tracing
# ---------------------------------------------------------------------------


@pytest.mark.criterion(7, "intersection tracing of graph pairs")
def test_intersection_tracing(record_property):
    zero1, zero2 = ILipGraph.zero(W_Y0), ILipGraph.zero(W_X0)
    axis = trace_intersection(zero1, zero2, (-1.0, 1.0), 0.05)
    expected = np.column_stack([np.zeros(len(axis.curve)), np.zeros(len(axis.curve)), axis.curve.t])
    axis_err = float(np.max(np.abs(axis.curve.points - expected)))
    g1 = ILipGraph.from_spec(W_Y0, BUMP, 0.1)
    g2 = ILipGraph.from_spec(W_X0, {**BUMP, "amplitude": -0.015, "center": [-0.2, 0.1]}, 0.1)
    tr = trace_intersection(g1, g2, (-1.0, 1.0), 0.05)
    again = verify_vertical(tr.curve, tr.lam_certified)
    windings = (
        winding_number_check(zero1, zero2, np.zeros(3), 1.0),
        winding_number_check(g1, g2, np.zeros(3), 1.0),
    )
    detail(
        record_property,
        f"axis error {axis_err:.1e}, bump residual {tr.max_residual:.1e}, "
        f"certified lambda {tr.lam_certified:.4f}, windings {windings}",
    )
    assert axis_err < 1e-8
    assert tr.max_residual < 1e-8
    assert tr.vertical.ok and again.ok
    assert windings == (1, 1)


# ---------------------------------------------------------------------------
# 8. Contact flows
# ---------------------------------------------------------------------------


@pytest.mark.criterion(8, "contact flows: divergence, Jacobian identity, linearization")
def test_contact_flow_suite(record_property):
    psi = ContactPotential(1.0)
    pts = ball_qmc(1024, seed=3)[:300] * np.array([0.8, 0.8, 0.64])
    _, d = psi.value_and_frame_derivatives(pts)
    div = divergence_fd(psi, pts, h=1e-5)
    div_err = float(np.max(np.abs(div - 2 * d[:, 2]) / np.maximum(np.abs(2 * d[:, 2]), 1e-3)))
    jac = jacobian_identity_check(ContactMap.of_flow(psi, 0.3), pts[:100])
    lin = linearized_jacobian_check(psi, 0.02, np.array([0.3, 0.0, 0.1]))
    detail(
        record_property,
        f"divergence rel err {div_err:.1e}, Jacobian identity rel err {jac.max_rel_error:.1e}, "
        f"Richardson ratios {np.round(lin.ratios, 3).tolist()}",
    )
    assert div_err < 1e-4
    assert jac.max_rel_error < 1e-5
    assert np.all(np.abs(lin.ratios - 4.0) <= 0.5)


# ---------------------------------------------------------------------------
# 9. Single-ball reduction
# ---------------------------------------------------------------------------


@pytest.mark.criterion(9, "base map and single-ball reduction at 10 centers")
def test_single_ball_reduction(record_property):
    start = time.perf_counter()
    a0 = build_alpha0()
    rng = np.random.default_rng(11)
    centers = ball_qmc(64, seed=12)[:10] * np.array([0.7, 0.7, 0.49])
    radii = rng.uniform(0.05, 0.2, 10)
    ratios = [ball_reduction(ContactMap.identity(), p, r, a0).ratio for p, r in zip(centers, radii)]
    elapsed = time.perf_counter() - start
    detail(
        record_property,
        f"kappa {a0.kappa:.5f} (stderr {a0.kappa_stderr:.1e}), max ratio {max(ratios):.5f} "
        f"vs {1 - a0.kappa / 2:.5f}, {elapsed:.1f} s",
    )
    assert a0.kappa > 0.005
    assert all(r <= 1 - a0.kappa / 2 for r in ratios)
    assert elapsed < 120


# ---------------------------------------------------------------------------
# 10 and 11. Multiscale cascade and coarea consistency
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def reduced():
    start = time.perf_counter()
    rep = vitali_cascade(0.3, max_levels=3)
    return rep, time.perf_counter() - start


@pytest.mark.slow
@pytest.mark.criterion(10, "multiscale cascade with epsilon=0.3 and 3 levels")
def test_multiscale_cascade(record_property, reduced):
    rep, elapsed = reduced
    kappa = rep.kappa
    f0, f3 = rep.masses[0], rep.masses[3]
    pts = ball_qmc(2**14, seed=31)[:10_000]
    assert pts.shape[0] == 10_000
    disp = float(np.max(dist(pts, rep.beta(pts))))
    sphere = unit_sphere_samples(10_000, seed=32)
    boundary = float(np.max(np.abs(rep.beta(sphere) - sphere)))
    detail(
        record_property,
        f"F_3/F_0 {f3 / f0:.5f} vs {(1 - kappa / 2) ** 3:.5f}, displacement {disp:.4f}, "
        f"boundary {boundary:.1e}, {elapsed:.0f} s",
    )
    assert f3 <= (1 - kappa / 2) ** 3 * f0
    assert disp < 0.3
    assert boundary <= 1e-12
    assert elapsed < 900


@pytest.mark.slow
@pytest.mark.criterion(11, "coarea consistency: calibration, dilation, reduced map")
def test_coarea_consistency(record_property, reduced):
    rep, _ = reduced
    box = BoxRegion((0.0, 0.0, 0.0), (1.0, 1.0, 1.0))
    ident = coarea_check(ContactMap.identity(), box)
    dil = coarea_check(ContactMap.dilation(0.5), box, calibration=ident.ratio)
    base = coarea_check(ContactMap.identity(), BallRegion())
    after = coarea_check(rep.beta, BallRegion())
    predicted = rep.masses[-1] / rep.masses[0]
    measured = after.lhs / base.lhs
    detail(
        record_property,
        f"calibration {ident.ratio:.5f}, dilation calibrated {dil.calibrated_ratio:.5f}, "
        f"fiber factor {measured:.4f} vs predicted {predicted:.4f}",
    )
    assert abs(dil.calibrated_ratio - 1) <= 0.02
    assert measured < 1
    assert abs(measured / predicted - 1) <= 0.1
