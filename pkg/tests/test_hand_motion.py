import json

import numpy as np
import pytest

from yoto.errors import (
    DegenerateHand,
    IndexOutOfRange,
    MismatchedStreams,
    NonPositiveDisparity,
    ParseError,
)
from yoto.geometry import project
from yoto.hand_motion import (
    FINGERTIPS,
    ExactDisparity,
    HandFrame,
    extract_motion,
    gripper_state,
    hand_center,
    hand_pose,
    pose_from_joints,
    read_hand_frames,
    read_trajectory,
    stabilize_positions,
    write_hand_frames,
    write_trajectory,
)
from yoto.sim.teaching import hand_joints

from .conftest import random_rotations


def _frame(joints=None, j=0, hand="L", contact=False):
    if joints is None:
        joints = np.zeros((21, 3))
    return HandFrame(j, j / 30.0, hand, joints, contact)


def _hand_at(center, R=np.eye(3), j=0, hand="L", contact=False):
    return _frame(hand_joints(center, R), j, hand, contact)


def test_center_of_identical_joints():
    f = _frame(np.tile([0.1, -0.2, 0.7], (21, 1)))
    np.testing.assert_allclose(hand_center(f), [0.1, -0.2, 0.7])


def test_center_midpoint():
    J = np.zeros((21, 3))
    J[3] = (0, 0, 1)
    J[5] = (0, 0, 3)
    np.testing.assert_allclose(hand_center(_frame(J), [3, 5]), [0, 0, 2])


def test_center_matches_summation_oracle(rng):
    J = rng.normal(size=(21, 3))
    f = _frame(J)
    total = [0.0, 0.0, 0.0]
    for i in FINGERTIPS:
        for c in range(3):
            total[c] += J[i][c]
    np.testing.assert_allclose(hand_center(f), np.array(total) / 5, atol=1e-15)


@pytest.mark.parametrize("bad", [[], [21], [-1, 3]])
def test_center_bad_indices(bad):
    with pytest.raises(IndexOutOfRange):
        hand_center(_frame(), bad)


def test_alg1_worked_example():
    R = pose_from_joints(np.zeros(3), [1, 0, 1], [-1, 0, 1])
    np.testing.assert_allclose(R[:, 0], [1, 0, 0], atol=1e-15)
    np.testing.assert_allclose(R[:, 1], [0, 0, 1], atol=1e-15)
    np.testing.assert_allclose(R[:, 2], [0, -1, 0], atol=1e-15)


def test_hand_pose_is_rotation_equivariant(rng):
    J = rng.normal(size=(21, 3))
    R0 = hand_pose(_frame(J))
    for Q in random_rotations(rng, 20):
        np.testing.assert_allclose(hand_pose(_frame(J @ Q.T)), Q @ R0, atol=1e-12)


def test_hand_pose_proper_rotation(rng):
    for _ in range(200):
        R = hand_pose(_frame(rng.normal(size=(21, 3))))
        np.testing.assert_allclose(R.T @ R, np.eye(3), atol=1e-12)
        assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-12)


def test_collinear_hand_is_degenerate():
    J = np.zeros((21, 3))
    J[8] = (1, 1, 1)
    J[16] = (2, 2, 2)
    with pytest.raises(DegenerateHand) as exc:
        hand_pose(_frame(J, j=7))
    assert "frame 7" in str(exc.value)


def test_gripper_bit():
    assert gripper_state(_frame(contact=True)) == 0
    assert gripper_state(_frame(contact=False)) == 1


def test_stabilize_exact_source_round_trips(cam, rng):
    pts = rng.uniform([-0.3, -0.3, 0.4], [0.3, 0.3, 1.5], size=(50, 3))
    src = ExactDisparity(cam, {j: p[2] for j, p in enumerate(pts)})
    out = stabilize_positions(cam, pts, src)
    np.testing.assert_allclose(np.array(out), pts, atol=1e-9)


def test_stabilize_half_disparity_doubles_depth(cam, rng):
    pts = rng.uniform([-0.3, -0.3, 0.4], [0.3, 0.3, 1.5], size=(20, 3))
    src = ExactDisparity(cam, {j: p[2] for j, p in enumerate(pts)}, scale=0.5)
    out = np.array(stabilize_positions(cam, pts, src))
    np.testing.assert_allclose(out[:, 2], 2 * pts[:, 2], rtol=1e-12)
    # pixel stays put
    for p, q in zip(pts, out):
        np.testing.assert_allclose(project(cam, q)[:2], project(cam, p)[:2], atol=1e-9)


def test_stabilize_zero_disparity_names_frame(cam):
    pts = np.tile([0.0, 0.0, 1.0], (8, 1))

    def src(j, u, v):
        return 0.0 if j == 5 else cam.focal_px * cam.baseline_m

    with pytest.raises(NonPositiveDisparity) as exc:
        stabilize_positions(cam, pts, src)
    assert exc.value.frame == 5


def test_extract_single_frame(cam):
    fl = _hand_at([0.1, 0.0, 0.8], j=0, hand="L", contact=True)
    fr = _hand_at([-0.1, 0.0, 0.8], j=0, hand="R")
    traj = extract_motion([fl], [fr], cam)
    assert len(traj) == 1
    a, b = traj.samples[0]
    np.testing.assert_allclose(a.position, hand_center(fl), atol=1e-9)
    np.testing.assert_allclose(b.rotation, hand_pose(fr))
    assert (a.gripper, b.gripper) == (0, 1)


def test_extract_long_stream_matches_piecewise(cam, rng):
    J = 100
    Rs = random_rotations(rng, J)
    L = [_hand_at(rng.uniform(-0.2, 0.2, 3) + [0, 0, 1], Rs[j], j, "L", j % 7 == 0) for j in range(J)]
    R = [_hand_at(rng.uniform(-0.2, 0.2, 3) + [0, 0, 1], Rs[j].T, j, "R") for j in range(J)]
    traj = extract_motion(L, R, cam)
    assert len(traj) == J
    np.testing.assert_array_equal(traj.timestamps(), [f.timestamp_s for f in L])
    for (a, b), fl, fr in zip(traj.samples, L, R):
        np.testing.assert_allclose(a.position, hand_center(fl), atol=1e-9)
        np.testing.assert_allclose(b.rotation, hand_pose(fr), atol=1e-12)
        assert a.gripper == gripper_state(fl)


def test_mismatched_streams(cam):
    L = [_hand_at([0, 0, 1], j=j, hand="L") for j in range(3)]
    R = [_hand_at([0, 0, 1], j=j, hand="R") for j in (0, 1, 3)]
    with pytest.raises(MismatchedStreams):
        extract_motion(L, R, cam)


def test_non_increasing_timestamps(cam):
    L = [_hand_at([0, 0, 1], j=j, hand="L") for j in range(3)]
    L[2] = HandFrame(2, L[1].timestamp_s, "L", L[2].joints, False)
    R = [_hand_at([0, 0, 1], j=j, hand="R") for j in range(3)]
    with pytest.raises(MismatchedStreams):
        extract_motion(L, R, cam)


def test_frame_and_trajectory_files(tmp_path, cam):
    L = [_hand_at([0.05 * j, 0, 1], j=j, hand="L") for j in range(5)]
    R = [_hand_at([-0.05 * j, 0, 1], j=j, hand="R", contact=j > 2) for j in range(5)]
    path = tmp_path / "frames.jsonl"
    write_hand_frames(path, L + R)
    L2, R2 = read_hand_frames(path)
    assert [f.contact for f in R2] == [f.contact for f in R]
    np.testing.assert_array_equal(L2[3].joints, L[3].joints)
    traj = extract_motion(L2, R2, cam)
    tpath = tmp_path / "traj.jsonl"
    write_trajectory(tpath, traj)
    back = read_trajectory(tpath)
    np.testing.assert_array_equal(back.positions("R"), traj.positions("R"))
    np.testing.assert_array_equal(back.grippers("R"), traj.grippers("R"))


def test_truncated_line_reports_line_number(tmp_path):
    rec = _hand_at([0, 0, 1]).to_json()
    path = tmp_path / "bad.jsonl"
    path.write_text(json.dumps(rec) + "\n" + json.dumps(rec)[:40] + "\n")
    with pytest.raises(ParseError) as exc:
        read_hand_frames(path)
    assert exc.value.line == 2
