import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from heisvert.cascade import (
    CascadeError,
    HelixParams,
    box_dimension_estimate,
    check_helix,
    greedy_cover_count,
    helix_perturb,
    holder_exponent_bounds,
    kappa_for,
    leeway_certificate,
    leeway_delta,
    run_cascade,
    speed_factors,
)
from heisvert.curves import (
    DomainError,
    Monotonicity,
    SampledCurve,
    biholder_parametrize,
    h2_measure,
    horizontal_segment,
    monotonicity_constants_check,
    verify_monotone,
    vertical_segment,
)
from heisvert.group import c_lambda, dist

DEMO = dict(rho=2.0, kappa_override=0.95)


@pytest.fixture(scope="module")
def demo_runs():
    return {
        phi: run_cascade(vertical_segment(1.0), 1.0, 0.5, 0.5, phi, 4, **DEMO) for phi in (1, -1)
    }


def test_helix_params_validation():
    with pytest.raises(ValueError):
        HelixParams(1.5, 1, 1000.0)
    with pytest.raises(ValueError):
        HelixParams(0.1, 0, 1000.0)
    lo, hi = HelixParams(0.1, 1, 1024.0).bracket()
    assert lo == pytest.approx(1 + 2 * 0.01 / 400)
    assert hi == pytest.approx(1 + 6 * 0.01 / 400)


@pytest.mark.parametrize("phi", [1, -1])
def test_helix_demo_conclusions(phi):
    params = HelixParams(0.5, phi, 8.0)
    pert = helix_perturb(vertical_segment(1.0), params)
    rep = check_helix(pert)
    assert rep.endpoint_error < 1e-12
    assert rep.max_displacement <= params.kappa / params.r
    assert rep.min_slope >= rep.slope_bound
    ratio = rep.measure_after / rep.measure_before
    assert (ratio - 1) * phi > 0
    assert rep.min_speed_ratio * (1 - 1e-9) <= ratio <= rep.max_speed_ratio * (1 + 1e-9)


def test_helix_preconditions():
    with pytest.raises(DomainError):
        helix_perturb(horizontal_segment(2.0), HelixParams(0.5, 1, 8.0))
    with pytest.raises(DomainError):
        helix_perturb(vertical_segment(0.5), HelixParams(0.5, 1, 8.0))


def test_kappa_for_branches():
    small = kappa_for(100.0, 50.0, 1e-4)
    assert small.kappa == pytest.approx(5e-5)
    assert small.kappa == small.epsilon_term
    choice = kappa_for(1.0, 0.5, 0.5)
    branches = [choice.cone_term, choice.tenth, choice.leeway_term, choice.epsilon_term]
    assert choice.kappa == min(branches)
    assert choice.cone_term == pytest.approx(0.25)
    assert choice.tenth == 0.1
    assert choice.leeway_term == pytest.approx(choice.delta * math.sqrt(c_lambda(1.0)) / 4)
    with pytest.raises(DomainError):
        kappa_for(1.0, 1.0, 0.5)


def test_leeway_delta_positive_and_certified():
    delta = leeway_delta(1.0, 0.5)
    assert delta > 0
    assert leeway_certificate(1.0, 0.5, delta, n=200_000) == 0
    with pytest.raises(DomainError):
        leeway_delta(1.0, 1.0)


def test_leeway_delta_shrinks_towards_lambda():
    deltas = [leeway_delta(1.0, lp) for lp in (0.5, 0.8, 0.95, 0.99)]
    assert all(a > b for a, b in zip(deltas, deltas[1:]))


def test_holder_bounds():
    up = holder_exponent_bounds(1, 1000.0, 0.1)
    down = holder_exponent_bounds(-1, 1000.0, 0.1)
    assert 2 < up.dim_lower < up.dim_upper
    assert down.dim_lower < down.dim_upper < 2
    # Direct evaluation of the closed-form interval.
    assert up.dim_lower == pytest.approx(2 + math.log(1 + 5e-5) / math.log(1000), rel=1e-12)
    assert up.dim_upper == pytest.approx(2 + math.log(1 + 1.5e-4) / math.log(1000), rel=1e-12)
    assert speed_factors(1, 0.1) == pytest.approx((1 + 5e-5, 1 + 1.5e-4))


@pytest.mark.parametrize("phi", [1, -1])
def test_demo_cascade_levels(demo_runs, phi):
    res = demo_runs[phi]
    ells = [s.measure for s in res.states]
    assert all((b - a) * phi > 0 for a, b in zip(ells, ells[1:]))
    for s in res.states:
        assert s.vertical_ok
        assert s.min_slope >= s.slope_bound * (1 - 1e-9)
        assert s.measure >= 2.0 ** (-s.level)
    final = res.final
    assert np.allclose(final.points[[0, -1]], res.positions[0][[0, -1]], atol=1e-12)
    for j in range(len(res.positions)):
        for i in range(j + 1, len(res.positions)):
            d = dist(res.positions[j], res.positions[i])
            assert np.max(d) <= 2 * res.kappa * res.rho ** (-j - 1) * (1 + 1e-9)
    assert res.window_violations == 0 and res.window_checked > 0
    csv = res.level_csv().splitlines()
    assert csv[0] == "i,ell_i,min_slope,max_drift"
    assert len(csv) == len(res.states) + 1


def test_cascade_output_is_monotone_and_biholder(demo_runs):
    c = demo_runs[1].final
    sub = SampledCurve(c.t[::8], c.points[::8])
    assert verify_monotone(sub) is Monotonicity.INCREASING
    assert monotonicity_constants_check(sub, 0.5, 5_000).ok
    res = biholder_parametrize(sub)
    assert 0 < res.alpha <= res.beta < 1


def test_cascade_is_deterministic():
    a = run_cascade(vertical_segment(1.0), 1.0, 0.5, 0.5, 1, 2, **DEMO)
    b = run_cascade(vertical_segment(1.0), 1.0, 0.5, 0.5, 1, 2, **DEMO)
    assert a.final.dumps() == b.final.dumps()
    assert a.level_csv() == b.level_csv()


def test_cascade_errors():
    with pytest.raises(DomainError):
        run_cascade(vertical_segment(1.0), 1.0, 0.5, 0.5, 0, 2, **DEMO)
    with pytest.raises(DomainError):
        run_cascade(vertical_segment(1.0), 0.5, 1.0, 0.5, 1, 2, **DEMO)
    with pytest.raises(DomainError):
        run_cascade(vertical_segment(1.0), 1.0, 0.5, 0.5, 1, -1, **DEMO)
    # A cone far tighter than the construction allows fails at a named level.
    with pytest.raises(CascadeError, match="level"):
        run_cascade(vertical_segment(1.0), 1e6, 5e5, 0.5, 1, 2, **DEMO)


def test_tail_bound(demo_runs):
    res = demo_runs[1]
    j = len(res.positions) - 1
    assert res.tail_bound() == pytest.approx(2 * res.kappa * res.rho ** (-j - 1))


# ---------------------------------------------------------------------------
# Box counting
# ---------------------------------------------------------------------------


def axis_count_bracket(n_samples: int, spacing: float, r: float) -> tuple[int, int]:
    # Oracle: on the axis a ball of radius r covers the samples within r^2/4
    # above its center, about k = r^2 / (4 spacing) of them, and the next
    # center is the first sample past them. Rounding decides between k and k + 1.
    k = r * r / (4 * spacing)
    return math.floor(n_samples / (math.floor(k) + 1)), math.ceil(n_samples / math.floor(k))


def test_cover_count_matches_axis_oracle():
    n = 40_001
    pts = vertical_segment(1.0).sample(n).points
    for r in (0.05, 0.1, 0.2):
        lo, hi = axis_count_bracket(n, 1.0 / (n - 1), r)
        assert lo <= greedy_cover_count(pts, r) <= hi
        assert lo <= greedy_cover_count(pts, r, stop_factor=3.0) <= hi


def test_vertical_fixture_dimension():
    c = vertical_segment(1.0).sample(200_001)
    fit = box_dimension_estimate(c, np.geomspace(0.01, 1.0, 7), stop_factor=3.0)
    assert fit.estimate == pytest.approx(2.0, abs=0.1)


def test_horizontal_fixture_dimension():
    c = horizontal_segment(1.0).sample(100_001)
    fit = box_dimension_estimate(c, np.geomspace(0.001, 0.1, 7))
    assert fit.estimate == pytest.approx(1.0, abs=0.1)


def test_dimension_needs_enough_scales_and_samples():
    c = vertical_segment(1.0).sample(5_001)
    with pytest.raises(DomainError):
        box_dimension_estimate(c, [0.1, 0.2, 0.4])
    with pytest.raises(DomainError):
        box_dimension_estimate(vertical_segment(1.0).sample(100), np.geomspace(0.01, 1, 5))


@settings(max_examples=10, deadline=None)
@given(st.floats(0.05, 0.5))
def test_cover_count_decreases_with_radius(r):
    pts = vertical_segment(1.0).sample(2_001).points
    assert greedy_cover_count(pts, r) >= greedy_cover_count(pts, 2 * r)


@settings(max_examples=10, deadline=None)
@given(st.sampled_from([1, -1]), st.floats(0.3, 0.9))
def test_single_helix_moves_measure_in_direction_of_phi(phi, kappa):
    pert = helix_perturb(vertical_segment(1.0), HelixParams(kappa, phi, 4.0), n_table=4097)
    after = h2_measure(pert)
    assert (after - 1.0) * phi > 0
