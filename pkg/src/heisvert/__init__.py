"""Computational toolkit for vertical curves, intrinsic Lipschitz graphs and
contact maps in the first Heisenberg group."""

from heisvert.group import (
    VerticalPlane,
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
    koranyi_norm,
    point,
    vcone_sign,
)

__all__ = [
    "VerticalPlane",
    "c_lambda",
    "compact_intersection_const",
    "cone_containment_threshold",
    "dilate",
    "dist",
    "dist_to_plane",
    "group_mul",
    "in_ilip_cone",
    "in_vcone",
    "inverse",
    "koranyi_norm",
    "point",
    "vcone_sign",
]

__version__ = "0.1.0"
