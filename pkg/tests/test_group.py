import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from heisvert.group import (
    ConeSign,
    VerticalPlane,
    adjoint,
    c_lambda,
    compact_intersection_const,
    cone_containment_threshold,
    dilate,
    dist,
    dist_to_plane,
    group_mul,
    in_ilip_cone,
    in_vcone,
    inverse,
    inverse_mul,
    koranyi_norm,
    point,
    vcone_ratio,
    vcone_sign,
)

# Magnitudes below 1e-6 are excluded: their fourth powers underflow in the gauge.
coord = st.one_of(st.just(0.0), st.floats(1e-6, 10), st.floats(-10, -1e-6))
points = st.tuples(coord, coord, coord).map(np.array)
scales = st.floats(0.01, 100)


# Frozen oracle: the z-coordinate of b^-1 a written out by hand.
def z_inverse_difference(a, b):
    return a[..., 2] - b[..., 2] + 0.5 * (a[..., 0] * b[..., 1] - b[..., 0] * a[..., 1])


def test_product_examples():
    assert np.array_equal(group_mul([1, 0, 0], [0, 0, 0]), [1, 0, 0])
    assert np.array_equal(group_mul([1, 0, 0], [-1, 0, 0]), [0, 0, 0])
    assert np.allclose(group_mul([1, 0, 0], [0, 1, 0]), [1, 1, 0.5])


def test_product_matches_inverse_difference_formula():
    rng = np.random.default_rng(1)
    a, b = rng.normal(size=(2, 1000, 3))
    z = group_mul(inverse(b), a)[:, 2]
    assert np.allclose(z, z_inverse_difference(a, b), atol=1e-12)
    assert np.allclose(inverse_mul(b, a), group_mul(inverse(b), a), atol=1e-12)


def test_point_rejects_non_finite():
    with pytest.raises(ValueError):
        point(math.nan, 0, 0)
    with pytest.raises(ValueError):
        point(0, math.inf, 0)


def test_norm_examples():
    assert koranyi_norm([0, 0, 0]) == 0
    assert koranyi_norm([1, 0, 0]) == 1
    assert koranyi_norm([0, 0, 1]) == pytest.approx(2.0, abs=1e-15)


@pytest.mark.parametrize("t", [1e-6, 0.25, 1.0, 7.5])
def test_distance_along_center(t):
    assert dist([0, 0, 0], [0, 0, t]) == pytest.approx(2 * math.sqrt(t), rel=1e-14)


def test_dilation_examples():
    p = np.array([0.3, -1.2, 2.0])
    assert np.array_equal(dilate(1, p), p)
    assert np.array_equal(dilate(2, [1, 1, 1]), [2, 2, 4])
    with pytest.raises(ValueError):
        dilate(0, p)
    with pytest.raises(ValueError):
        dilate(-1, p)


def test_dilation_scales_distance():
    rng = np.random.default_rng(2)
    a, b = rng.normal(size=(2, 500, 3))
    r = 3.7
    assert np.allclose(dist(dilate(r, a), dilate(r, b)), r * dist(a, b), rtol=1e-12)


def test_cone_examples():
    assert in_vcone(1, [0, 0, 5])
    assert not in_vcone(1, [1, 0, 0.5])
    assert in_vcone(1, [1, 1, 2])
    with pytest.raises(ValueError):
        in_vcone(0, [0, 0, 1])
    assert vcone_ratio(np.array([1.0, 1.0, 2.0])) == 1.0
    assert vcone_ratio(np.array([0.0, 0.0, 2.0])) == math.inf


def test_cone_sign():
    assert vcone_sign([0, 0, 1]) is ConeSign.PLUS
    assert vcone_sign([0, 0, -1]) is ConeSign.MINUS
    assert vcone_sign([1, 0, 0]) is ConeSign.ZERO


def test_plane_normalization_and_normal():
    w = VerticalPlane(math.pi + 0.25)
    assert w.theta == pytest.approx(0.25)
    assert np.allclose(VerticalPlane(math.pi / 2).normal, [1, 0])
    assert abs(np.dot(w.normal, w.direction)) < 1e-15
    assert VerticalPlane.from_json(w.to_json()) == w
    with pytest.raises(ValueError):
        VerticalPlane(math.nan)


def test_distance_to_plane_examples():
    w = VerticalPlane(0.7)
    on_plane = np.array([*(2.0 * w.direction), 3.0])
    assert dist_to_plane(on_plane, w) == pytest.approx(0, abs=1e-15)
    assert dist_to_plane([0, 0, 4.2], w) == 0
    assert dist_to_plane([3, 4, 0], VerticalPlane(0.0)) == pytest.approx(4)


def test_distance_to_plane_grid_oracle():
    # Oracle: brute-force minimum of the Korányi distance to the plane y = 0.
    p = np.array([3.0, 4.0, 0.0])
    u = np.linspace(-2, 8, 1001)
    z = np.linspace(-20, 20, 1601)
    uu, zz = np.meshgrid(u, z)
    w = np.stack([uu, np.zeros_like(uu), zz], axis=-1)
    best = float(np.min(dist(p, w)))
    assert best == pytest.approx(4.0, abs=0.05)
    assert best >= 4.0 - 1e-12


def test_ilip_cone_examples():
    w = VerticalPlane(math.pi / 2)
    assert in_ilip_cone(w, 0.3, [0, 1, 5])
    assert not in_ilip_cone(w, 0.5, [1, 0, 0])
    for theta in np.linspace(0, math.pi, 7):
        assert in_ilip_cone(VerticalPlane(theta), 0.01, [0, 0, 1])
    with pytest.raises(ValueError):
        in_ilip_cone(w, 1.0, [0, 0, 1])


def test_containment_threshold():
    assert cone_containment_threshold(1e-9) == pytest.approx(1.0)
    # 1 + 16 * 15/16 = 16 and 16^(-1/4) = 1/2.
    assert cone_containment_threshold(math.sqrt(15) / 4) == pytest.approx(0.5)
    assert cone_containment_threshold(math.sqrt(15) / 4) ** -4 == pytest.approx(16.0)


def test_containment_threshold_sampling():
    # Sampling oracle: 10^4 points of VCone_λ, checked against 36 planes.
    lam = 0.8
    lstar = cone_containment_threshold(lam)
    rng = np.random.default_rng(3)
    xy = rng.normal(size=(10_000, 2))
    h2 = np.sum(xy**2, axis=1)
    z = lam * h2 * rng.uniform(1.0, 10.0, h2.size) * rng.choice([-1, 1], h2.size)
    p = np.column_stack([xy, z])
    assert np.all(in_vcone(lam, p))
    for theta in np.linspace(0, math.pi, 36, endpoint=False):
        assert np.all(in_ilip_cone(VerticalPlane(theta), lstar, p))
    # Just below the threshold some boundary point escapes.
    edge = np.array([1.0, 0.0, lam])
    assert not in_ilip_cone(VerticalPlane(math.pi / 2), 0.99 * lstar, edge)


def test_c_lambda():
    assert c_lambda(1) == 0.5
    assert c_lambda(0.5) == 0.25
    assert c_lambda(10) == 0.5


def test_compact_intersection_const():
    assert compact_intersection_const(1) == pytest.approx(math.sqrt(0.5) + math.sqrt(2))
    assert compact_intersection_const(0.25) == pytest.approx(8.0)
    grid = [0.1 * k for k in range(1, 101)]
    vals = [compact_intersection_const(lam) for lam in grid]
    assert all(a >= b - 1e-12 for a, b in zip(vals, vals[1:]))


def test_compact_intersection_sampling():
    # Oracle: sample pVCone+ ∩ qVCone- and compare its diameter with C d(p, q).
    lam = 1.0
    C = compact_intersection_const(lam)
    rng = np.random.default_rng(4)
    for _ in range(5):
        p = rng.normal(size=3)
        q = group_mul(p, [0.3 * rng.normal(), 0.3 * rng.normal(), 1.0])
        d = dist(p, q)
        cand = group_mul(p, rng.uniform([-3, -3, 0], [3, 3, 3 * d * d], size=(100_000, 3)))
        rel_p = inverse_mul(p, cand)
        rel_q = inverse_mul(q, cand)
        keep = (
            in_vcone(lam, rel_p) & (rel_p[:, 2] >= 0) & in_vcone(lam, rel_q) & (rel_q[:, 2] <= 0)
        )
        pts = cand[keep]
        assert pts.shape[0] > 10
        diam = max(float(np.max(dist(pts[i], pts))) for i in range(0, pts.shape[0], max(1, pts.shape[0] // 200)))
        assert diam <= C * d


def test_adjoint_changes_only_vertical_part():
    g = np.array([1.0, 2.0, 3.0])
    v = np.array([0.5, -1.0, 0.25])
    assert np.allclose(adjoint(g, v), [0.5, -1.0, 0.25 + 1.0 * -1.0 - 2.0 * 0.5])


# ---------------------------------------------------------------------------
# Properties
# ---------------------------------------------------------------------------


@given(points, points, points)
def test_associativity(a, b, c):
    lhs = group_mul(group_mul(a, b), c)
    rhs = group_mul(a, group_mul(b, c))
    assert np.allclose(lhs, rhs, atol=1e-9)


@given(points)
def test_inverse_and_identity(p):
    assert np.allclose(group_mul(p, inverse(p)), 0, atol=1e-12)
    assert np.array_equal(group_mul(p, np.zeros(3)), p)


@given(points, points, points)
def test_metric_axioms(a, b, c):
    dab, dba = dist(a, b), dist(b, a)
    assert dab == pytest.approx(dba, rel=1e-12, abs=1e-12)
    assert dist(a, c) <= dab + dist(b, c) + 1e-9 * (1 + dist(a, c))
    if np.array_equal(a, b):
        assert dab == 0
    elif np.max(np.abs(a - b)) > 1e-60:
        assert dab > 0


@given(points, points, points)
def test_left_invariance(g, a, b):
    assert dist(group_mul(g, a), group_mul(g, b)) == pytest.approx(dist(a, b), rel=1e-9, abs=1e-9)


@given(points, scales)
def test_homogeneity(p, r):
    assert koranyi_norm(dilate(r, p)) == pytest.approx(r * koranyi_norm(p), rel=1e-12, abs=1e-300)


@given(points, points, scales)
def test_dilation_is_automorphism(a, b, r):
    assert np.allclose(dilate(r, group_mul(a, b)), group_mul(dilate(r, a), dilate(r, b)), rtol=1e-12, atol=1e-9)


@given(points, scales, st.floats(0.01, 10))
def test_cone_scale_invariance(p, r, lam):
    # Avoid sitting on the boundary, where rounding decides membership.
    h2 = p[0] ** 2 + p[1] ** 2
    if abs(abs(p[2]) - lam * h2) < 1e-9 * (1 + abs(p[2])):
        return
    assert in_vcone(lam, p, tol=0.0) == in_vcone(lam, dilate(r, p), tol=0.0)


@settings(max_examples=50)
@given(points, points)
def test_inverse_difference_formula(a, b):
    assert group_mul(inverse(b), a)[2] == pytest.approx(z_inverse_difference(a, b), abs=1e-9)
