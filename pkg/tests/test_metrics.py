import numpy as np
import pytest
from oracles import flood_components

from skelprop.metrics import (
    compute_metrics,
    largest_component,
    topology_metrics,
    volumetric_metrics,
)
from skelprop.skeleton import graph_from_polylines
from skelprop.volume import BinaryMask, DataError, VolumeGeometry


def _mask(dims, data):
    return BinaryMask(VolumeGeometry(dims), data)


def test_largest_component_basic():
    data = np.zeros((12, 5, 5), bool)
    data[0:10, 1, 1] = True  # 10 voxels
    data[0:3, 3, 3] = True   # 3 voxels
    out = largest_component(_mask((12, 5, 5), data))
    assert out.n_foreground == 10
    assert out.data[5, 1, 1] and not out.data[0, 3, 3]


def test_largest_component_empty():
    out = largest_component(_mask((4, 4, 4), np.zeros((4, 4, 4), bool)))
    assert out.n_foreground == 0


def test_largest_component_tie_break():
    data = np.zeros((9, 3, 3), bool)
    data[6:8, 1, 1] = True  # later two-voxel component
    data[0:2, 1, 1] = True  # earlier two-voxel component (smaller min index)
    out = largest_component(_mask((9, 3, 3), data))
    assert out.n_foreground == 2
    assert out.data[0, 1, 1] and not out.data[6, 1, 1]


def test_largest_component_matches_flood_fill(rng):
    for _ in range(10):
        data = rng.random((8, 8, 8)) > 0.72
        out = largest_component(_mask((8, 8, 8), data))
        labels, n = flood_components(data)
        if n == 0:
            assert out.n_foreground == 0
            continue
        sizes = [int((labels == i).sum()) for i in range(1, n + 1)]
        assert out.n_foreground == max(sizes)
        kept = np.unique(labels[out.data])
        assert kept.size == 1  # exactly one component kept, intact
        assert int((labels == kept[0]).sum()) == out.n_foreground


def test_largest_component_fixed_point(rng):
    data = rng.random((8, 8, 8)) > 0.8
    once = largest_component(_mask((8, 8, 8), data))
    twice = largest_component(once)
    assert np.array_equal(once.data, twice.data)


def test_volumetric_perfect_and_disjoint():
    ref = np.zeros((6, 6, 6), bool)
    ref[2:4, 2:4, 2:4] = True
    dsc, tpr, fpr, counts = volumetric_metrics(_mask((6, 6, 6), ref), _mask((6, 6, 6), ref))
    assert (dsc, tpr, fpr) == (1.0, 1.0, 0.0)
    assert counts.tp == 8 and counts.fn == 0

    pred = np.zeros((6, 6, 6), bool)
    pred[0, 0, 0] = True
    dsc, tpr, fpr, counts = volumetric_metrics(_mask((6, 6, 6), pred), _mask((6, 6, 6), ref))
    assert dsc == 0.0 and tpr == 0.0
    assert counts.fp == 1 and counts.fn == 8
    assert counts.tp + counts.fp + counts.tn + counts.fn == 216


def test_volumetric_matches_counts(rng):
    for _ in range(10):
        pred = rng.random((5, 5, 5)) > 0.5
        ref = rng.random((5, 5, 5)) > 0.5
        dsc, tpr, fpr, c = volumetric_metrics(_mask((5, 5, 5), pred), _mask((5, 5, 5), ref))
        tp = int((pred & ref).sum())
        fp = int((pred & ~ref).sum())
        fn = int((~pred & ref).sum())
        tn = 125 - tp - fp - fn
        assert (c.tp, c.fp, c.tn, c.fn) == (tp, fp, tn, fn)
        assert dsc == pytest.approx(2 * tp / (2 * tp + fp + fn), abs=1e-12)
        assert tpr == pytest.approx(tp / (tp + fn), abs=1e-12)
        assert fpr == pytest.approx(fp / (fp + tn), abs=1e-12)


def test_dsc_symmetry_tpr_not(rng):
    pred = rng.random((5, 5, 5)) > 0.4
    ref = rng.random((5, 5, 5)) > 0.7
    a = volumetric_metrics(_mask((5, 5, 5), pred), _mask((5, 5, 5), ref))
    b = volumetric_metrics(_mask((5, 5, 5), ref), _mask((5, 5, 5), pred))
    assert a[0] == pytest.approx(b[0], abs=1e-12)
    assert a[1] != b[1]  # tpr is directional for these masks


def test_geometry_mismatch():
    with pytest.raises(DataError, match="geometry"):
        volumetric_metrics(
            _mask((4, 4, 4), np.zeros((4, 4, 4), bool)),
            _mask((5, 4, 4), np.zeros((5, 4, 4), bool)),
        )


def _two_branch_graph(geom):
    lines = [
        np.array([[1, 1, z] for z in range(10)]),
        np.array([[5, 5, z] for z in range(10)]),
    ]
    return graph_from_polylines(geom, lines), lines


def test_topology_full_coverage():
    geom = VolumeGeometry((8, 8, 10))
    graph, _ = _two_branch_graph(geom)
    pred = np.ones(geom.shape, bool)
    bd, bd_star, td = topology_metrics(_mask(geom.dims, pred), graph)
    assert (bd, bd_star, td) == (1.0, 1.0, 1.0)


def test_topology_half_coverage():
    geom = VolumeGeometry((8, 8, 10))
    graph, lines = _two_branch_graph(geom)
    pred = np.zeros(geom.shape, bool)
    for c in lines[0]:
        pred[tuple(c)] = True
    bd, bd_star, td = topology_metrics(_mask(geom.dims, pred), graph)
    assert (bd, bd_star) == (0.5, 0.5)
    assert td == pytest.approx(0.5)


def test_topology_eight_of_ten_boundary():
    # 8 of 10 voxels covered: f = 0.8 counts for BD (inclusive threshold)
    geom = VolumeGeometry((8, 8, 10))
    graph, lines = _two_branch_graph(geom)
    pred = np.zeros(geom.shape, bool)
    for c in lines[0][:8]:
        pred[tuple(c)] = True
    bd, bd_star, td = topology_metrics(_mask(geom.dims, pred), graph)
    assert bd == 0.5 and bd_star == 0.5
    # 7 of 10 must not count toward BD
    pred[tuple(lines[0][7])] = False
    bd7, bd_star7, _ = topology_metrics(_mask(geom.dims, pred), graph)
    assert bd7 == 0.0 and bd_star7 == 0.5


def test_bd_le_bd_star_random(rng):
    geom = VolumeGeometry((8, 8, 10))
    graph, _ = _two_branch_graph(geom)
    for _ in range(10):
        pred = rng.random(geom.shape) > 0.5
        bd, bd_star, td = topology_metrics(_mask(geom.dims, pred), graph)
        assert bd <= bd_star
        assert 0.0 <= td <= 1.0


def test_topology_empty_skeleton():
    geom = VolumeGeometry((4, 4, 4))
    graph, _ = _two_branch_graph(VolumeGeometry((8, 8, 10)))
    graph.branches = []
    with pytest.raises(DataError, match="no branches"):
        topology_metrics(_mask((8, 8, 10), np.zeros((8, 8, 10), bool)), graph)


def test_metrics_translation_invariance(rng):
    geom = VolumeGeometry((14, 14, 14))
    base_line = np.array([[2, 2, z] for z in range(2, 8)])
    pred = np.zeros(geom.shape, bool)
    ref = np.zeros(geom.shape, bool)
    for c in base_line:
        ref[tuple(c)] = True
        if c[2] < 6:
            pred[tuple(c)] = True
    g0 = graph_from_polylines(geom, [base_line])
    r0 = compute_metrics(_mask(geom.dims, pred), _mask(geom.dims, ref), g0)
    shift = np.array([3, 4, 5])
    pred_s = np.zeros(geom.shape, bool)
    ref_s = np.zeros(geom.shape, bool)
    for c in base_line:
        ref_s[tuple(c + shift)] = True
        if c[2] < 6:
            pred_s[tuple(c + shift)] = True
    g1 = graph_from_polylines(geom, [base_line + shift])
    r1 = compute_metrics(_mask(geom.dims, pred_s), _mask(geom.dims, ref_s), g1)
    for key in ("dsc", "tpr", "fpr", "bd", "bd_star", "td"):
        assert r0.as_dict()[key] == pytest.approx(r1.as_dict()[key], abs=1e-12)


def test_report_identities(rng):
    geom = VolumeGeometry((8, 8, 10))
    graph, _ = _two_branch_graph(geom)
    pred = rng.random(geom.shape) > 0.6
    rep = compute_metrics(_mask(geom.dims, pred), _mask(geom.dims, rng.random(geom.shape) > 0.6),
                          graph)
    c = rep.counts
    denom = 2 * c.tp + c.fp + c.fn
    if denom:
        assert rep.dsc == pytest.approx(2 * c.tp / denom, abs=1e-12)
    assert rep.bd <= rep.bd_star
    assert rep.detected_length_mm <= rep.tree_length_mm + 1e-12
