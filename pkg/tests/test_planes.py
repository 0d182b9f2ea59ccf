import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spincal.planes import (LaserPoint, VoxelizationConfig, adaptive_voxelize, group_by_key,
                            plane_stats, voxel_key, voxelize)


class TestVoxelKey:
    @pytest.mark.parametrize("p, size, key", [((0.4, 0.4, 0.4), 1.0, (0, 0, 0)),
                                              ((-0.1, 0.0, 2.3), 1.0, (-1, 0, 2)),
                                              ((0.26, 0.0, 0.0), 0.25, (1, 0, 0))])
    def test_examples(self, p, size, key):
        assert voxel_key(p, size) == key

    def test_bad_size(self):
        with pytest.raises(ValueError):
            voxel_key((0, 0, 0), 0.0)


class TestPlaneStats:
    def test_triangle_is_flat(self):
        _, _, vals, _ = plane_stats([(0, 0, 0), (1, 0, 0), (0, 1, 0)])
        assert abs(vals[0]) < 1e-12

    def test_repeated_point(self):
        c, cov, _, _ = plane_stats(np.tile([1.5, -2.0, 3.0], (10, 1)))
        assert np.array_equal(c, [1.5, -2.0, 3.0])
        assert np.all(cov == 0)

    def test_population_normalisation(self, rng):
        pts = rng.normal(size=(1000, 3))
        c, cov, vals, vecs = plane_stats(pts)
        d = pts - pts.mean(axis=0)
        assert np.allclose(cov, d.T @ d / len(pts), atol=1e-10)
        assert np.allclose(cov @ vecs[:, 0], vals[0] * vecs[:, 0], atol=1e-8)

    def test_permutation_invariance(self, rng):
        pts = rng.normal(size=(300, 3)) * 4 + 10
        a = plane_stats(pts)
        b = plane_stats(pts[rng.permutation(300)])
        assert np.allclose(a[1], b[1], atol=1e-10)

    def test_empty(self):
        with pytest.raises(ValueError):
            plane_stats(np.zeros((0, 3)))


class TestLaserPoint:
    def test_derived_fields(self):
        lp = LaserPoint([3.0, 4.0, 0.0], 0.1)
        assert lp.depth == 5.0
        assert np.allclose(lp.bearing, [0.6, 0.8, 0.0])

    @pytest.mark.parametrize("kwargs", [dict(depth=-1.0), dict(bearing=[1.0, 1.0, 0.0]),
                                        dict(depth=2.0, bearing=[1.0, 0.0, 0.0])])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            LaserPoint([1.0, 0.0, 0.0], **kwargs)

    def test_origin(self):
        with pytest.raises(ValueError):
            LaserPoint([0.0, 0.0, 0.0])


@pytest.mark.parametrize("kwargs", [dict(root_size=0), dict(max_layers=0),
                                    dict(planarity_ratio=1.0), dict(min_points=3)])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        VoxelizationConfig(**kwargs)


def grid_plane(n=60, extent=3.0, z=0.0):
    g = np.linspace(-extent, extent, n) + 1e-3
    xx, yy = np.meshgrid(g, g)
    return np.column_stack([xx.ravel(), yy.ravel(), np.full(xx.size, z)])


def test_single_plane_features():
    feats = adaptive_voxelize(grid_plane(), VoxelizationConfig(1.0))
    assert feats
    for f in feats:
        assert f.eigenvalues[0] < 1e-10
        assert np.allclose(np.abs(f.min_eigenvector), [0, 0, 1], atol=1e-6)
        assert f.layer == 0


def test_crease_voxel_subdivides():
    # floor z=0.5 meets wall x=0.5 inside root voxel (0,0,0)
    g = np.linspace(0.01, 0.99, 40)
    a, b = np.meshgrid(g, g)
    floor = np.column_stack([a.ravel(), b.ravel(), np.full(a.size, 0.5)])
    wall = np.column_stack([np.full(a.size, 0.5), a.ravel(), b.ravel()])
    feats = adaptive_voxelize(np.vstack([floor, wall]), VoxelizationConfig(1.0, max_layers=2))
    assert all(f.layer == 1 for f in feats)
    assert len(feats) > 0
    for f in feats:
        assert f.eigenvalues[0] < 1e-10


def test_partition_properties(rng):
    pts = np.vstack([grid_plane(40, 4.0, 0.2), grid_plane(40, 4.0, 2.7)[:, [2, 0, 1]],
                     rng.uniform(-4, 4, (2000, 3))])
    cfg = VoxelizationConfig(1.0, max_layers=3)
    part = voxelize(pts, cfg)
    idx = part.order
    assert len(np.unique(idx)) == len(idx)  # disjoint
    for g in range(len(part)):
        members = pts[idx[part.starts[g]:part.starts[g + 1]]]
        assert len(members) >= cfg.min_points
        key = np.floor(members / part.sizes[g]).astype(int)
        assert np.all(key == part.keys[g])  # inside its voxel
    order = list(zip(part.layers.tolist(), map(tuple, part.keys.tolist())))
    assert order == sorted(order)


def test_children_refine_parents(rng):
    pts = rng.uniform(-3, 3, (5000, 3))
    for s in (1.0, 0.5):
        parent = np.floor(pts / s).astype(int)
        child = np.floor(pts / (s / 2)).astype(int)
        assert np.array_equal(child // 2, parent)


def test_noise_free_thickness_budget(clean_scan_omni, omni_gt):
    from spincal.dh import transform_points

    pts = transform_points(omni_gt, clean_scan_omni.true_theta, clean_scan_omni.points)
    part = voxelize(pts, VoxelizationConfig(0.5))
    assert np.sum(part.eigenvalues[:, 0]) < 1e-8 * len(pts)


def test_empty_regions_do_not_affect_neighbours():
    p = grid_plane(30, 1.0)
    far = p + [50.0, 0, 0]
    a = voxelize(p, VoxelizationConfig(1.0))
    b = voxelize(np.vstack([p, far]), VoxelizationConfig(1.0))
    near = b.keys[:, 0] < 10
    assert np.array_equal(a.keys, b.keys[near])


def test_adaptive_voxelize_empty():
    with pytest.raises(ValueError):
        adaptive_voxelize(np.zeros((0, 3)), VoxelizationConfig())


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 200), st.integers(0, 2**31 - 1))
def test_group_by_key_oracle(n, seed):
    keys = np.random.default_rng(seed).integers(-3, 3, (n, 3))
    order, starts, uniq = group_by_key(keys)
    assert sorted(order.tolist()) == list(range(n))
    assert len(uniq) == len({tuple(k) for k in keys.tolist()})
    for g in range(len(uniq)):
        assert np.all(keys[order[starts[g]:starts[g + 1]]] == uniq[g])
