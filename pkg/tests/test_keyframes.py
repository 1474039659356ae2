import numpy as np
import pytest

from yoto.errors import LengthMismatch, MixedCoordination, NotAsynchronous, TooShort
from yoto.keyframes import (
    STRICTLY_ASYNC,
    SYNC,
    KeyframeConfig,
    KeyframeProgram,
    MotionMask,
    ReorganizedActions,
    build_program,
    decompose,
    derive_motion_mask,
    entry_counts,
    extract_keyframes,
    recompose,
    reorganize,
    split_gaps,
)
from yoto.sim.teaching import load_fixture, program_from_frames

from .programs import random_program, trajectory


def _line(J=100, speed=0.1, fps=30.0):
    x = np.arange(J)[:, None] * (speed / fps) * np.array([1.0, 0, 0])
    return x, x + [0, 0.5, 0]


@pytest.fixture(scope="module")
def drawer_program():
    return program_from_frames(*load_fixture("pull_drawer"), task="pull_drawer")


def test_planted_gripper_events():
    pl, pr = _line()
    g = np.ones(100, int)
    g[30:70] = 0
    traj = trajectory(pl, pr, grip_L=g)
    assert extract_keyframes(traj) == [0, 30, 70, 99]


def _split_oracle(idx, max_gap):
    out = [idx[0]]
    for a, b in zip(idx, idx[1:]):
        m = 1
        while (b - a) / m > max_gap:
            m += 1
        out += [a + (i * (b - a)) // m for i in range(1, m)] + [b]
    return out


def test_max_gap_subdivision():
    pl, pr = _line()
    g = np.ones(100, int)
    g[30:70] = 0
    idx = extract_keyframes(trajectory(pl, pr, grip_L=g), KeyframeConfig(max_gap=20))
    assert idx == _split_oracle([0, 30, 70, 99], 20)
    assert max(np.diff(idx)) <= 20


@pytest.mark.parametrize("gap", [1, 3, 7, 50])
def test_split_gaps_oracle(gap, rng):
    idx = sorted(set(rng.integers(0, 300, 12).tolist()))
    assert split_gaps(idx, gap) == _split_oracle(idx, gap)


def test_constant_velocity_has_no_events():
    pl, pr = _line()
    assert extract_keyframes(trajectory(pl, pr)) == [0, 99]


def test_constant_trajectory_single_keyframe():
    p = np.zeros((40, 3))
    traj = trajectory(p, p + 1)
    idx = extract_keyframes(traj)
    assert idx == [0, 39]
    # frame 0 is the initial state, so the only keyframe is the last frame
    assert build_program(traj, idx).K == 1


def test_stop_event_detected():
    # move for 30 frames, rest for 30, move again
    x = np.concatenate([np.linspace(0, 0.3, 30), np.full(30, 0.3), np.linspace(0.3, 0.6, 30)[1:]])
    pl = np.stack([x, np.zeros_like(x), np.zeros_like(x)], axis=1)
    pr = np.tile([0, 0.5, 0], (len(x), 1))
    idx = extract_keyframes(trajectory(pl, pr))
    assert len(idx) == 3
    assert 29 <= idx[1] <= 31


def test_too_short():
    p = np.zeros((1, 3))
    with pytest.raises(TooShort):
        extract_keyframes(trajectory(p, p))


def test_mask_sync_and_async():
    m = derive_motion_mask(np.full((4, 2), 0.1))
    assert m.mode == SYNC and len(m) == 4
    m = derive_motion_mask([[0.1, 0], [0, 0.1], [0.1, 0]])
    assert m.mode == STRICTLY_ASYNC
    assert m.movers() == ["L", "R", "L"]


def test_gripper_change_counts_as_motion():
    m = derive_motion_mask([[0.0, 0.1], [0.0, 0.0]], gripper_changes=[[0, 0], [1, 0]])
    assert m.movers() == ["R", "L"]


def test_mixed_coordination():
    with pytest.raises(MixedCoordination):
        derive_motion_mask([[0.1, 0.1], [0.1, 0.0]])


def test_drawer_fixture_arm_order(drawer_program):
    assert drawer_program.K == 10
    assert drawer_program.mask.movers() == list("RRLRLLLLLR")


def test_drawer_decomposition_sizes(drawer_program):
    A_L, A_R = decompose(drawer_program)
    assert (len(A_L), len(A_R)) == (6, 4)
    assert entry_counts(drawer_program) == {"keyframes": 10, "per_arm_entries": 20, "kept_entries": 10}


def test_drawer_reorganized_tags(drawer_program):
    r = reorganize(drawer_program)
    assert r.arm_tags() == list("RRLRLLLLLR")
    assert [a.k for a in r.entries] == list(range(1, 11))


def test_decompose_alternating(rng):
    p = random_program(rng, K=4, sync=False)
    mask = MotionMask([(1, 0), (0, 1), (1, 0), (0, 1)], STRICTLY_ASYNC)
    p = KeyframeProgram(p.actions_L, p.actions_R, mask, "", p.initial)
    A_L, A_R = decompose(p)
    assert [a.k for a in A_L] == [1, 3]
    assert [a.k for a in A_R] == [2, 4]


def test_decompose_singleton(rng):
    p = random_program(rng, K=1, sync=False)
    p = KeyframeProgram(p.actions_L, p.actions_R, MotionMask([(1, 0)], STRICTLY_ASYNC), "", p.initial)
    A_L, A_R = decompose(p)
    assert len(A_L) == 1 and A_R == []


def test_decompose_rejects_sync(rng):
    with pytest.raises(NotAsynchronous):
        decompose(random_program(rng, K=3, sync=True))


def test_sync_reorganize_layout(rng):
    p = random_program(rng, K=3, sync=True)
    r = reorganize(p)
    assert r.arm_tags() == ["L", "R"] * 3
    ts = [a.timestamp_s for a in r.entries]
    assert ts[0::2] == ts[1::2]


def test_round_trip_random_programs(rng):
    for _ in range(200):
        p = random_program(rng)
        assert recompose(reorganize(p), p.mask, p.task).same_as(p)


def test_round_trip_fixture(drawer_program):
    assert recompose(reorganize(drawer_program), drawer_program.mask, "pull_drawer").same_as(drawer_program)


def test_recompose_empty():
    p = recompose(ReorganizedActions([], SYNC, None), MotionMask(np.zeros((0, 2)), SYNC))
    assert p.K == 0


def test_sync_mask_needs_2k(rng):
    p = random_program(rng, K=3, sync=True)
    with pytest.raises(LengthMismatch):
        recompose(ReorganizedActions(p.actions_L, SYNC, p.initial), p.mask)


def test_async_wrong_arm(rng):
    p = random_program(rng, K=3, sync=False)
    r = reorganize(p)
    flipped = MotionMask(1 - p.mask.entries, STRICTLY_ASYNC)
    with pytest.raises(LengthMismatch):
        recompose(r, flipped)


def test_program_json_round_trip(tmp_path, rng):
    p = random_program(rng, K=6)
    p.save(tmp_path / "p.json")
    assert KeyframeProgram.load(tmp_path / "p.json").same_as(p)
