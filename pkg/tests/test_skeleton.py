import numpy as np
import pytest
from oracles import flood_components

from skelprop.skeleton import build_graph, graph_from_polylines, skeletonize, write_edge_list
from skelprop.volume import BinaryMask, DataError, SkeletonAnnotation, VolumeGeometry


def _mask(dims, coords):
    data = np.zeros(dims, dtype=bool)
    for c in coords:
        data[tuple(c)] = True
    return BinaryMask(VolumeGeometry(dims), data)


def _random_blob_mask(rng, dims=(24, 24, 24), n_balls=4):
    data = np.zeros(dims, bool)
    x, y, z = np.ogrid[: dims[0], : dims[1], : dims[2]]
    for _ in range(n_balls):
        c = rng.integers(4, np.asarray(dims) - 4)
        r = int(rng.integers(2, 5))
        data |= (x - c[0]) ** 2 + (y - c[1]) ** 2 + (z - c[2]) ** 2 <= r * r
    if not data.any():
        data[5, 5, 5] = True
    return BinaryMask(VolumeGeometry(dims), data)


def test_empty_mask_rejected():
    with pytest.raises(DataError, match="empty"):
        skeletonize(BinaryMask(VolumeGeometry((3, 3, 3)), np.zeros((3, 3, 3), bool)))


def test_thin_line_is_fixed_point():
    coords = [(1, 1, z) for z in range(1, 9)]
    m = _mask((3, 3, 10), coords)
    skeleton_ann = skeletonize(m)
    assert np.array_equal(skeleton_ann.to_mask().data, m.data)


def test_solid_box_skeleton():
    # committed after inspecting the thinning output on the 5x5x21 box:
    # 17 skeleton voxels (3.2% of 525), spanning z in [3, 19]
    data = np.zeros((7, 7, 23), bool)
    data[1:6, 1:6, 1:22] = True
    m = BinaryMask(VolumeGeometry((7, 7, 23)), data)
    skeleton_ann = skeletonize(m)
    assert len(skeleton_ann) < 0.25 * m.n_foreground
    zs = skeleton_ann.coords[:, 2]
    assert zs.max() - zs.min() + 1 >= 16


def test_idempotence_on_blobs(rng):
    for _ in range(5):
        m = _random_blob_mask(rng)
        skeleton_ann = skeletonize(m)
        again = skeletonize(skeleton_ann.to_mask())
        assert np.array_equal(again.linear, skeleton_ann.linear)


def test_component_count_preserved(rng):
    for _ in range(5):
        m = _random_blob_mask(rng)
        skeleton_ann = skeletonize(m)
        _, n_mask = flood_components(m.data)
        _, n_skel = flood_components(skeleton_ann.to_mask().data)
        assert n_mask == n_skel
        # skeleton stays inside the mask
        assert not (skeleton_ann.to_mask().data & ~m.data).any()


def test_straight_line_graph():
    coords = [(1, 1, z) for z in range(10)]
    skeleton_ann = SkeletonAnnotation.from_coords(VolumeGeometry((3, 3, 10)), coords)
    g = build_graph(skeleton_ann)
    assert g.n_branches == 1
    assert g.branches[0].n_voxels == 10
    assert g.n_endpoints == 2 and g.n_junctions == 0
    assert g.branches[0].length_mm == pytest.approx(9.0)


def test_symmetric_y_graph():
    center = np.array([6, 6, 6])
    arms = [np.array([1, 1, 1]), np.array([-1, -1, 1]), np.array([1, -1, -1])]
    coords = [center] + [center + k * a for a in arms for k in range(1, 5)]
    skeleton_ann = SkeletonAnnotation.from_coords(VolumeGeometry((13, 13, 13)), np.array(coords))
    g = build_graph(skeleton_ann)
    assert g.n_branches == 3
    assert g.n_junctions == 1
    assert g.n_endpoints == 3
    assert sorted(b.n_voxels for b in g.branches) == [5, 5, 5]
    # the junction voxel is shared by all three branches
    center_lin = skeleton_ann.geometry.to_linear(center[None, :])[0]
    assert all(center_lin in b.voxels for b in g.branches)


def test_isolated_voxel_and_pair():
    skeleton_ann = SkeletonAnnotation.from_coords(
        VolumeGeometry((9, 9, 9)), [[1, 1, 1], [5, 5, 5], [5, 5, 6]]
    )
    g = build_graph(skeleton_ann)
    assert g.n_branches == 2
    sizes = sorted(b.n_voxels for b in g.branches)
    assert sizes == [1, 2]
    lone = next(b for b in g.branches if b.n_voxels == 1)
    assert lone.length_mm == 0.0


def test_cycle_graph():
    ring = [(2, 2, 1), (3, 2, 1), (4, 3, 1), (3, 4, 1), (2, 4, 1), (1, 3, 1)]
    skeleton_ann = SkeletonAnnotation.from_coords(VolumeGeometry((6, 6, 3)), ring)
    g = build_graph(skeleton_ann)
    assert g.n_branches == 1
    assert g.branches[0].n_voxels == 6
    assert g.n_endpoints == 0


def test_branch_interiors_have_degree_two(rng):
    from skelprop.phantom import PhantomSpec, generate

    r = generate(PhantomSpec(VolumeGeometry((48, 48, 48)), depth=2, seed=11))
    g = build_graph(r.skeleton)
    row_of = {int(lin): i for i, lin in enumerate(g.linear)}
    for b in g.branches:
        for lin in b.voxels[1:-1]:
            assert g.degrees[row_of[int(lin)]] == 2


def test_every_voxel_in_some_branch(rng):
    from skelprop.phantom import PhantomSpec, generate

    for seed in (0, 1, 2):
        r = generate(PhantomSpec(VolumeGeometry((48, 48, 48)), depth=3, seed=seed))
        g = build_graph(r.skeleton)
        union = np.unique(np.concatenate([b.voxels for b in g.branches]))
        assert np.array_equal(union, g.linear)


def test_tree_length_translation_invariant():
    coords = np.array([[2, 2, 2], [3, 3, 2], [4, 4, 3], [5, 5, 3]])
    geom = VolumeGeometry((12, 12, 12), (1.0, 1.5, 2.0))
    g0 = build_graph(SkeletonAnnotation.from_coords(geom, coords))
    g1 = build_graph(SkeletonAnnotation.from_coords(geom, coords + 3))
    assert g0.tree_length_mm == pytest.approx(g1.tree_length_mm, abs=1e-12)


def test_graph_from_polylines_keeps_branch_list():
    geom = VolumeGeometry((10, 10, 10))
    lines = [
        np.array([[1, 1, 1], [2, 1, 1], [3, 1, 1]]),
        np.array([[3, 1, 1], [4, 2, 1], [5, 3, 1]]),
    ]
    g = graph_from_polylines(geom, lines)
    assert g.n_branches == 2
    assert g.branches[0].length_mm == pytest.approx(2.0)
    assert g.branches[1].length_mm == pytest.approx(2 * np.sqrt(2.0))
    assert len(g.linear) == 5  # shared joint voxel stored once


def test_edge_list_dump(tmp_path):
    coords = [(1, 1, z) for z in range(4)]
    skeleton_ann = SkeletonAnnotation.from_coords(VolumeGeometry((3, 3, 5)), coords)
    g = build_graph(skeleton_ann)
    path = tmp_path / "edges.txt"
    write_edge_list(g, str(path))
    lines = path.read_text().strip().splitlines()
    assert lines[0].startswith("# dims 3 3 5")
    assert len(lines) == 1 + 3  # three chain edges
    for ln in lines[1:]:
        u, v = map(int, ln.split())
        assert u < v
