import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from chunklab.core import Action
from chunklab import envs
from chunklab.envs import (
    EpisodeOverError,
    TaskConfigError,
    TaskSpec,
    clip_action,
    expert_action,
    is_success,
    make_task,
    observe,
    quantize_task,
    reset,
    step,
    success_tick,
)


def rollout_expert(task, seed):
    st_, _, _ = reset(task, seed)
    states = [st_]
    for _ in range(task.episode_len):
        st_ = step(st_, expert_action(task, st_))
        states.append(st_)
    return states


class TestReset:
    def test_determinism(self):
        task = make_task("chase")
        a1, o1, r1 = reset(task, 3)
        a2, o2, r2 = reset(task, 3)
        assert np.array_equal(a1.robot.coords, a2.robot.coords)
        assert np.array_equal(a1.target, a2.target)
        assert o1 == o2 and r1 == r2

    def test_reach_static_target(self):
        task = make_task("reach")
        state, ob, _ = reset(task, 0)
        assert ob.captured_at == 0
        assert np.array_equal(ob.features, state.target)
        after = step(state, Action([0.0, 0.0]))
        assert np.array_equal(after.target, state.target)

    def test_chase_target_on_path(self):
        task = make_task("chase")
        state, ob, _ = reset(task, 1)
        assert ob.features.shape == (4,)
        assert np.array_equal(ob.features[:2], state.target)


class TestStep:
    def test_delta_addition_under_bound(self):
        task = make_task("reach", action_bound=2.0)
        state, _, _ = reset(task, 0)
        nxt = step(state, Action([1.0, 0.0]))
        assert np.allclose(nxt.robot.coords - state.robot.coords, [1.0, 0.0])
        assert nxt.tick == state.tick + 1

    def test_clipping(self):
        assert np.allclose(clip_action([3.0, 0.0], 1.0), [1.0, 0.0])
        assert np.allclose(clip_action([0.5, 0.0], 1.0), [0.5, 0.0])

    def test_clip_idempotent(self):
        rng = np.random.default_rng(0)
        for _ in range(500):
            a = rng.standard_normal(2) * rng.uniform(0, 3)
            once = clip_action(a, 0.08)
            assert np.array_equal(clip_action(once, 0.08), once)

    def test_target_advances_at_path_speed(self):
        task = make_task("chase")
        state, _, _ = reset(task, 2)
        disp = state.path.step_displacement()
        nxt = step(state, Action([0.0, 0.0]))
        assert np.allclose(nxt.target, state.target + disp)

    def test_episode_over(self):
        task = make_task("reach", episode_len=2)
        state, _, _ = reset(task, 0)
        state = step(state, Action([0.0, 0.0]))
        state = step(state, Action([0.0, 0.0]))
        with pytest.raises(EpisodeOverError):
            step(state, Action([0.0, 0.0]))


class TestObserve:
    def test_features_exclude_robot(self):
        task = make_task("chase")
        state, _, _ = reset(task, 0)
        moved = step(state, Action([0.05, 0.0]))
        # same target trajectory, different robot: features must agree
        ob = observe(moved)
        assert np.array_equal(ob.features[:2], moved.target)
        assert ob.captured_at == 1

    def test_event_visible_from_its_tick(self):
        event_pos = [5.0, 5.0]
        task = make_task("reach", event_schedule=((10, {"pos": event_pos}),))
        state, _, _ = reset(task, 0)
        for _ in range(9):
            state = step(state, Action([0.0, 0.0]))
        assert not np.array_equal(observe(state).features, event_pos)
        state = step(state, Action([0.0, 0.0]))
        assert state.tick == 10
        assert np.array_equal(observe(state).features, event_pos)

    def test_chase_event_reverse(self):
        task = make_task("chase", event_schedule=((5, {"reverse": True}),))
        state, _, _ = reset(task, 0)
        omega_before = state.path.omega
        for _ in range(5):
            state = step(state, Action([0.0, 0.0]))
        assert state.path.omega == -omega_before


class TestExpert:
    def test_direction_toward_target(self):
        task = make_task("reach")
        state, _, _ = reset(task, 0)
        act = expert_action(task, state)
        to_target = state.target - state.robot.coords
        cos = np.dot(act.delta, to_target) / (
            np.linalg.norm(act.delta) * np.linalg.norm(to_target)
        )
        assert cos > 0.999

    def test_fixed_point(self):
        task = make_task("reach")
        state, _, _ = reset(task, 0)
        pinned = envs.EnvState(
            task=task,
            robot=__import__("chunklab").core.RobotState(state.target),
            path=state.path,
            tick=0,
            rng_seed=0,
        )
        act = expert_action(task, pinned)
        assert np.linalg.norm(act.delta) < 1e-12

    @pytest.mark.parametrize("name", ["reach", "chase", "catch"])
    def test_expert_success_rate(self, name):
        # demonstrator quality gate: >= 95% over 100 seeds
        task = make_task(name)
        wins = sum(is_success(task, rollout_expert(task, s)) for s in range(100))
        assert wins >= 95


class TestSuccess:
    def test_glued_robot_succeeds(self):
        task = make_task("reach")
        state, _, _ = reset(task, 0)
        states = [state]
        for _ in range(task.episode_len):
            to_target = state.target - state.robot.coords
            state = step(state, Action(to_target))
            states.append(state)
        assert is_success(task, states)
        dists = [float(np.linalg.norm(s.robot.coords - s.target)) for s in states]
        first_inside = next(i for i, d in enumerate(dists) if d <= task.success_radius)
        assert success_tick(task, states) == first_inside + task.hold_ticks - 1

    def test_never_close_fails(self):
        task = make_task("reach")
        state, _, _ = reset(task, 0)
        states = [state]
        for _ in range(task.episode_len):
            state = step(state, Action([0.0, 0.0]))
            states.append(state)
        assert not is_success(task, states)

    def test_hold_must_be_consecutive(self):
        task = make_task("reach", hold_ticks=5, success_radius=0.1, episode_len=12)
        state, _, _ = reset(task, 0)
        target = state.target
        states = [state]
        tick = 0
        for _ in range(task.episode_len):
            tick += 1
            # sit on the target except one interruption at tick 4
            if tick == 4 or tick > 8:
                dest = target + np.array([1.0, 0.0])
            else:
                dest = target
            state = step(state, Action(dest - state.robot.coords))
            states.append(state)
        # longest inside-run is 4 < 5
        assert not is_success(task, states)

    def test_catch_terminal_tick(self):
        task = make_task("catch")
        states = rollout_expert(task, 0)
        assert is_success(task, states)
        assert success_tick(task, states) == task.terminal_tick


class TestRollforwardOracle:
    @settings(max_examples=60, deadline=None)
    @given(seed=st.integers(0, 10_000), n=st.integers(0, 8))
    def test_sum_of_inbound_actions_is_exact(self, seed, n):
        task = make_task("reach")
        rng = np.random.default_rng(seed)
        state, _, _ = reset(task, seed)
        total = state.robot.coords.copy()
        deltas = []
        for _ in range(n):
            d = rng.uniform(-1, 1, size=2)
            d = d / max(np.linalg.norm(d) / task.action_bound, 1.0) * rng.uniform(0, 1)
            deltas.append(d)
        cur = state
        acc = total
        for d in deltas:
            cur = step(cur, Action(d))
            acc = acc + d
        assert np.array_equal(cur.robot.coords, acc)


class TestTaskSpec:
    def test_json_round_trip(self, tmp_path):
        task = make_task("chase", event_schedule=((7, {"reverse": True}),))
        p = tmp_path / "task.json"
        task.save_json(p)
        loaded = TaskSpec.load_json(p)
        assert loaded == task

    def test_validation(self):
        with pytest.raises(TaskConfigError):
            make_task("reach", action_bound=-1.0)
        with pytest.raises(TaskConfigError):
            make_task("reach", event_schedule=((100, {"pos": [0, 0]}),))
        with pytest.raises(TaskConfigError):
            make_task("nope")

    def test_bad_event_key(self):
        task = make_task("reach", event_schedule=((5, {"velocity": [1, 1]}),))
        state, _, _ = reset(task, 0)
        for _ in range(4):
            state = step(state, Action([0.0, 0.0]))
        with pytest.raises(TaskConfigError):
            step(state, Action([0.0, 0.0]))


class TestQuantizeTask:
    def test_identity(self):
        task = make_task("reach")
        assert quantize_task(task, 1) is task

    def test_scaling(self):
        task = make_task("chase")
        q = quantize_task(task, 2)
        assert q.action_bound == task.action_bound * 2
        assert q.episode_len == task.episode_len // 2
        assert q.success_radius == task.success_radius
        assert q.hold_ticks == -(-task.hold_ticks // 2)

    def test_macro_target_path_matches_micro_subsampling(self):
        task = make_task("chase")
        qtask = quantize_task(task, 3)
        s_micro, _, _ = reset(task, 5)
        s_macro, _, _ = reset(qtask, 5)
        assert np.allclose(s_micro.target, s_macro.target)
        for i in range(10):
            for _ in range(3):
                s_micro = step(s_micro, Action([0.0, 0.0]))
            s_macro = step(s_macro, Action([0.0, 0.0]))
            assert np.allclose(s_micro.target, s_macro.target, atol=1e-12)
