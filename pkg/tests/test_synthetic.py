import numpy as np
import pytest
from hypothesis import given, strategies as st

from minegeo import synthetic as syn
from minegeo.camera import project_world
from minegeo.errors import ValidationError
from minegeo.pnp import pnp_dlt


def test_scene_is_deterministic(small_scene):
    again = syn.generate_scene(small_scene.params)
    assert np.array_equal(again.cloud.points, small_scene.cloud.points)
    assert np.array_equal(again.cloud.colors, small_scene.cloud.colors)
    for a, b in zip(again.queries, small_scene.queries):
        assert np.array_equal(a.geopose.pose.rotation, b.geopose.pose.rotation)
        assert np.array_equal(a.geopose.pose.center, b.geopose.pose.center)
    assert [m.position.tolist() for m in again.markers] == [m.position.tolist() for m in small_scene.markers]


def test_derive_seed_frozen():
    assert syn.derive_seed(0, "a") == syn.derive_seed(0, "a")
    assert syn.derive_seed(0, "a") != syn.derive_seed(1, "a")
    assert syn.derive_seed(0, "a", "b") != syn.derive_seed(0, "ab")
    assert 0 <= syn.derive_seed(7, "x") < 2**63


def test_flat_terrain_and_no_markers():
    p = syn.SceneParams(grid_nx=96, grid_ny=96, n_db=4, n_query=3, n_objects=0, amplitude=0.0, seed=3)
    s = syn.generate_scene(p)
    assert np.all(s.cloud.points[:, 2] == 0.0)
    assert s.markers == []
    assert syn.render_detections(s, s.queries[0].name)[0] == []


@pytest.mark.parametrize("bad", [dict(grid_nx=1), dict(n_db=0), dict(n_objects=-1),
                                 dict(amplitude=-1.0), dict(db_altitude=3.0)])
def test_invalid_params(bad):
    with pytest.raises(ValidationError):
        syn.SceneParams(**bad).validate()


@given(st.floats(0.0, 0.9))
def test_outlier_count(frac):
    scene = _SMALL[0]
    corr, inl = syn.render_correspondences(scene, scene.queries[0].name, outlier_fraction=frac, seed=1)
    assert np.count_nonzero(~inl) == int(np.floor(frac * len(inl) + 0.5))


_SMALL = []


@pytest.fixture(autouse=True)
def _stash(small_scene):
    if not _SMALL:
        _SMALL.append(small_scene)


def test_noiseless_correspondences_are_exact(small_scene):
    for v in small_scene.queries[:3]:
        corr, inl = syn.render_correspondences(small_scene, v.name, max_points=200, seed=2)
        assert inl.all()
        uv, depth = project_world(small_scene.intrinsics, v.geopose.pose, corr.points)
        assert np.max(np.abs(uv - corr.pixels)) < 1e-9 and np.all(depth > 0)
        pose = pnp_dlt(corr, small_scene.intrinsics)
        assert np.allclose(pose.center, v.geopose.pose.center, atol=1e-5)
        assert np.allclose(pose.rotation, v.geopose.pose.rotation, atol=1e-8)


def test_marker_on_principal_ray_is_centred(small_scene):
    v = small_scene.queries[0]
    pose = v.geopose.pose
    # walk along the optical axis to the ground
    axis = pose.rotation[2]
    c = pose.center
    t = -c[2] / axis[2]
    ground = c + t * axis
    uv, _ = project_world(small_scene.intrinsics, pose, ground[None])
    k = small_scene.intrinsics
    assert np.allclose(uv[0], [k.cx, k.cy], atol=1e-6)


def test_detections_box_contains_projection(small_scene):
    for v in small_scene.queries:
        dets, truth = syn.render_detections(small_scene, v.name)
        for d, m in zip(dets, truth):
            uv, _ = project_world(small_scene.intrinsics, v.geopose.pose, m.position[None])
            x0, y0, x1, y1 = d.box
            assert x0 <= uv[0, 0] <= x1 and y0 <= uv[0, 1] <= y1
            assert d.label == m.label


def test_withheld_selection():
    s = syn.generate_scene(syn.SceneParams(grid_nx=96, grid_ny=96, n_db=4, n_query=10, n_objects=0, seed=1))
    w = syn.withheld_queries(s, 0.3, seed=5)
    assert len(w) == 3 and w == sorted(w)
    assert w == syn.withheld_queries(s, 0.3, seed=5)
    assert syn.withheld_queries(s, 0.0) == []
