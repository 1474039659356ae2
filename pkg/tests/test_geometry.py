import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from yoto.errors import NonPositiveDepth, NonPositiveDisparity, ParseError
from yoto.geometry import (
    PointCloud,
    RigidTransform,
    StereoCamera,
    blend_rotation,
    compose,
    exp_so3,
    from_6d,
    is_rotation,
    lift,
    lift_many,
    log_so3,
    project,
    project_many,
    rot_z,
    to_6d,
)

from .conftest import random_rotations


def _random_transform(rng):
    return RigidTransform(random_rotations(rng, 1)[0], rng.normal(size=3))


def test_identity_composition(rng):
    g = _random_transform(rng)
    assert compose(RigidTransform.identity(), g).allclose(g, atol=0)


def test_inverse_composition(rng):
    for _ in range(50):
        g = _random_transform(rng)
        assert (g @ g.inverse()).allclose(RigidTransform.identity(), atol=1e-12)
        assert (g.inverse() @ g).allclose(RigidTransform.identity(), atol=1e-12)


def test_pure_translations_compose():
    g = RigidTransform.from_translation([1, 0, 0]) @ RigidTransform.from_translation([0, 2, 0])
    np.testing.assert_array_equal(g.apply([0, 0, 0]), [1, 2, 0])


def test_composition_matches_sequential_application(rng):
    g1, g2 = _random_transform(rng), _random_transform(rng)
    p = rng.normal(size=(20, 3))
    np.testing.assert_allclose((g1 @ g2).apply(p), g1.apply(g2.apply(p)), atol=1e-12)


def test_composition_associative(rng):
    a, b, c = (_random_transform(rng) for _ in range(3))
    assert ((a @ b) @ c).allclose(a @ (b @ c), atol=1e-12)


def test_project_on_axis(cam):
    assert project(cam, [0, 0, 1]) == (320.0, 240.0, 60.0)


def test_project_off_axis(cam):
    # u = 320 + 600*0.1/1, v = 240 + 600*(-0.05)/1, d = 600*0.1/1
    u, v, d = project(cam, [0.1, -0.05, 1.0])
    assert (u, v, d) == pytest.approx((380.0, 210.0, 60.0), abs=1e-12)


def test_project_behind_camera(cam):
    with pytest.raises(NonPositiveDepth):
        project(cam, [0, 0, -1])


def test_lift_examples(cam):
    np.testing.assert_allclose(lift(cam, 320, 240, 60), [0, 0, 1], atol=1e-15)
    np.testing.assert_allclose(lift(cam, 380, 210, 60), [0.1, -0.05, 1.0], atol=1e-12)
    with pytest.raises(NonPositiveDisparity):
        lift(cam, 320, 240, 0)


def test_vectorised_matches_scalar(cam, rng):
    p = np.column_stack([rng.uniform(-1, 1, 50), rng.uniform(-1, 1, 50), rng.uniform(0.2, 3, 50)])
    uvd = project_many(cam, p)
    for row, q in zip(uvd, p):
        np.testing.assert_allclose(row, project(cam, q), rtol=1e-15)
    np.testing.assert_allclose(lift_many(cam, uvd), p, atol=1e-12)


def test_camera_rejects_bad_params():
    with pytest.raises(ValueError):
        StereoCamera(focal_px=0)
    with pytest.raises(ValueError):
        StereoCamera(baseline_m=-0.1)


@settings(max_examples=200, deadline=None)
@given(
    st.floats(-2, 2), st.floats(-2, 2), st.floats(0.2, 3.0),
)
def test_round_trip_property(x, y, z):
    cam = StereoCamera()
    p = np.array([x, y, z])
    np.testing.assert_allclose(lift(cam, *project(cam, p)), p, atol=1e-9, rtol=0)


def test_6d_round_trip(rng):
    for R in random_rotations(rng, 100):
        R2 = from_6d(to_6d(R))
        assert is_rotation(R2)
        np.testing.assert_allclose(R2, R, atol=1e-12)


def test_log_exp_round_trip(rng):
    for R in random_rotations(rng, 100):
        np.testing.assert_allclose(exp_so3(log_so3(R)), R, atol=1e-12)


def test_blend_endpoints_and_midpoint():
    R0, R1 = np.eye(3), rot_z(np.pi / 2)
    np.testing.assert_allclose(blend_rotation(R0, R1, 0.0), R0, atol=1e-15)
    np.testing.assert_allclose(blend_rotation(R0, R1, 1.0), R1, atol=1e-15)
    np.testing.assert_allclose(blend_rotation(R0, R1, 0.5), rot_z(np.pi / 4), atol=1e-15)


def test_is_rotation_rejects_reflection():
    assert not is_rotation(np.diag([1.0, 1.0, -1.0]))
    assert not is_rotation(np.eye(3) * 1.001)


def test_point_cloud_binary_round_trip(tmp_path, rng):
    pc = PointCloud(rng.normal(size=(37, 3)), rng.integers(0, 4, 37))
    path = tmp_path / "c.ypc"
    pc.save(path)
    raw = path.read_bytes()
    assert raw[:4] == b"YPC1"
    assert int.from_bytes(raw[4:8], "little") == 37
    assert len(raw) == 8 + 37 * 24 + 37 * 4
    back = PointCloud.load(path)
    np.testing.assert_array_equal(back.points, pc.points)
    np.testing.assert_array_equal(back.labels, pc.labels)


def test_point_cloud_truncated(tmp_path, rng):
    data = PointCloud(rng.normal(size=(5, 3))).to_bytes()[:-3]
    with pytest.raises(ParseError):
        PointCloud.from_bytes(data)


def test_point_cloud_json():
    pc = PointCloud.from_json('{"points": [[0, 0, 1], [1, 2, 3]], "labels": [4, 5]}')
    assert len(pc) == 2
    assert pc.labels.tolist() == [4, 5]
    assert len(PointCloud.from_json([[0, 0, 0]])) == 1


def test_point_cloud_rejects_nan():
    with pytest.raises(ValueError):
        PointCloud(np.array([[0.0, np.nan, 1.0]]))
