import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from chunklab import data
from chunklab.data import (
    DatasetParseError,
    DemoRejectedError,
    EmptyDatasetError,
    Dataset,
    QuantSpec,
    Trajectory,
    generate_dataset,
    load_dataset,
    make_offset_sample,
    quantize_trajectory,
    record_trajectory,
    sample_batch,
    save_dataset,
)
from chunklab.envs import make_task


@pytest.fixture(scope="module")
def reach_ds():
    return generate_dataset(make_task("reach"), 6, 0)


@pytest.fixture(scope="module")
def chase_ds():
    return generate_dataset(make_task("chase"), 6, 0)


def random_trajectory(rng, T=20, dim=2):
    # Dyadic-grid actions keep every partial sum exactly representable, so
    # identities that hold in exact arithmetic hold bitwise here too.
    actions = rng.integers(-1000, 1001, size=(T, dim)) * 2.0**-14
    states = np.zeros((T, dim))
    states[0] = rng.integers(-1000, 1001, size=dim) * 2.0**-14
    for t in range(1, T):
        states[t] = states[t - 1] + actions[t - 1]
    return Trajectory(
        task="reach",
        seed=0,
        obs=rng.uniform(-1, 1, size=(T, 2)),
        obs_ticks=np.arange(T),
        states=states,
        actions=actions,
    )


class TestRecording:
    def test_length_and_consistency(self, reach_ds):
        traj = reach_ds.trajectories[0]
        assert len(traj) == make_task("reach").episode_len
        traj.validate()

    def test_expert_failure_rejected(self):
        # an episode too short to satisfy the hold requirement cannot succeed
        task = make_task("reach", episode_len=3, hold_ticks=10)
        with pytest.raises(DemoRejectedError):
            record_trajectory(task, 0)

    def test_generate_dataset_deterministic(self):
        t = make_task("reach")
        d1 = generate_dataset(t, 3, 7)
        d2 = generate_dataset(t, 3, 7)
        for a, b in zip(d1.trajectories, d2.trajectories):
            assert a.seed == b.seed
            assert np.array_equal(a.states, b.states)

    def test_dataset_dims(self, chase_ds):
        assert chase_ds.obs_dim == 4
        assert chase_ds.state_dim == 2
        assert chase_ds.action_dim == 2


class TestOffsetSamples:
    def test_zero_offset_is_plain_cloning(self, reach_ds):
        traj = reach_ds.trajectories[0]
        s = make_offset_sample(traj, 5, 0, 8)
        assert s.obs.captured_at == 5
        assert np.array_equal(s.state.coords, traj.states[5])
        assert np.array_equal(s.target_chunk, traj.actions[5:13])

    def test_offset_construction_rule(self, reach_ds):
        # delta=2, t=10 pairs the tick-10 observation with tick-12 state/actions
        traj = reach_ds.trajectories[0]
        s = make_offset_sample(traj, 10, 2, 8)
        assert np.array_equal(s.obs.features, traj.obs[10])
        assert np.array_equal(s.state.coords, traj.states[12])
        assert np.array_equal(s.target_chunk, traj.actions[12:20])
        assert s.delta == 2

    def test_padding_at_end(self, reach_ds):
        traj = reach_ds.trajectories[0]
        T = len(traj)
        s = make_offset_sample(traj, T - 1, 0, 8)
        assert np.array_equal(s.target_chunk[0], traj.actions[T - 1])
        assert np.array_equal(s.target_chunk[1:], np.zeros((7, 2)))

    def test_index_error(self, reach_ds):
        with pytest.raises(IndexError):
            make_offset_sample(reach_ds.trajectories[0], len(reach_ds.trajectories[0]), 0, 8)

    def test_offset_state_equals_rolled_forward_obs_state(self, chase_ds):
        # ties the augmentation to rollforward: state = obs-time state + sum of
        # the intervening recorded actions, exactly
        for traj in chase_ds.trajectories[:3]:
            for t in (0, 7, len(traj) - 2):
                for delta in (0, 1, 3, 4):
                    s = make_offset_sample(traj, t, delta, 8)
                    rolled = traj.states[t].copy()
                    for j in range(t, min(t + delta, len(traj))):
                        rolled = rolled + traj.actions[j]
                    assert np.array_equal(s.state.coords, rolled)


class TestSampleBatch:
    def test_empty_dataset(self):
        with pytest.raises(EmptyDatasetError):
            sample_batch(Dataset([]), 4, 0, 8, np.random.default_rng(0))

    def test_delta_zero_degenerate(self, reach_ds):
        rng = np.random.default_rng(0)
        batch = sample_batch(reach_ds, 64, 0, 8, rng)
        assert all(s.delta == 0 for s in batch)

    def test_delta_uniform_within_3_sigma(self, reach_ds):
        rng = np.random.default_rng(0)
        n = 10_000
        batch = sample_batch(reach_ds, n, 3, 8, rng)
        counts = np.bincount([s.delta for s in batch], minlength=4)
        p = 0.25
        sigma = np.sqrt(n * p * (1 - p))
        assert np.all(np.abs(counts - n * p) <= 3 * sigma)

    def test_deterministic_given_rng(self, reach_ds):
        b1 = sample_batch(reach_ds, 16, 3, 8, np.random.default_rng(11))
        b2 = sample_batch(reach_ds, 16, 3, 8, np.random.default_rng(11))
        for s1, s2 in zip(b1, b2):
            assert s1.delta == s2.delta
            assert np.array_equal(s1.target_chunk, s2.target_chunk)

    def test_delta_weights(self, reach_ds):
        rng = np.random.default_rng(0)
        batch = sample_batch(reach_ds, 500, 2, 8, rng, delta_weights=[0.0, 0.0, 1.0])
        assert all(s.delta == 2 for s in batch)
        with pytest.raises(ValueError):
            sample_batch(reach_ds, 4, 2, 8, rng, delta_weights=[1.0])


class TestQuantization:
    def test_block_sum_q3(self):
        rng = np.random.default_rng(0)
        traj = random_trajectory(rng, T=20)
        q = quantize_trajectory(traj, 3)
        assert np.array_equal(q.actions[0], traj.actions[0] + traj.actions[1] + traj.actions[2])
        assert len(q) == 6
        q.validate()

    def test_identity(self):
        rng = np.random.default_rng(1)
        traj = random_trajectory(rng)
        assert quantize_trajectory(traj, 1) is traj

    def test_invalid_factor(self):
        with pytest.raises(ValueError):
            QuantSpec(0)
        rng = np.random.default_rng(1)
        with pytest.raises(ValueError):
            quantize_trajectory(random_trajectory(rng), 0)

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 1000), T=st.integers(2, 40), q=st.integers(1, 5))
    def test_telescoping_at_block_boundaries(self, seed, T, q):
        # macro cumulative sums equal micro cumulative sums at every boundary
        rng = np.random.default_rng(seed)
        traj = random_trajectory(rng, T=T)
        qt = quantize_trajectory(traj, q)
        micro_cum = np.cumsum(traj.actions, axis=0)
        macro_cum = np.cumsum(qt.actions, axis=0)
        for i in range(len(qt)):
            boundary = (i + 1) * q - 1
            assert np.array_equal(macro_cum[i], micro_cum[boundary])

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 1000), T=st.integers(2, 40), q=st.integers(1, 5))
    def test_final_state_endpoint(self, seed, T, q):
        # last quantized state + last macro action lands on the original
        # state at tick floor(T/q) * q (oracle: direct summation)
        rng = np.random.default_rng(seed)
        traj = random_trajectory(rng, T=T)
        n = T // q
        if n == 0:
            return
        qt = quantize_trajectory(traj, q)
        endpoint = qt.states[-1] + qt.actions[-1]
        expected = traj.states[0] + traj.actions[: n * q].sum(axis=0)
        assert np.array_equal(endpoint, expected)

    def test_states_track_block_starts(self):
        # re-accumulated macro states coincide with the micro block-start
        # states to floating-point reassociation error
        rng = np.random.default_rng(3)
        actions = rng.uniform(-0.1, 0.1, size=(30, 2))
        states = np.zeros((30, 2))
        for t in range(1, 30):
            states[t] = states[t - 1] + actions[t - 1]
        traj = Trajectory(
            task="reach", seed=0, obs=np.zeros((30, 2)), obs_ticks=np.arange(30),
            states=states, actions=actions,
        )
        qt = quantize_trajectory(traj, 3)
        qt.validate()
        assert np.allclose(qt.states, traj.states[::3][:10], atol=1e-12)

    def test_obs_subsampled_at_block_starts(self):
        rng = np.random.default_rng(2)
        traj = random_trajectory(rng, T=10)
        qt = quantize_trajectory(traj, 2)
        assert np.array_equal(qt.obs, traj.obs[::2][:5])
        assert np.array_equal(qt.obs_ticks, np.arange(5))


class TestPersistence:
    def test_round_trip_exact(self, tmp_path, chase_ds):
        p = tmp_path / "ds.jsonl"
        save_dataset(chase_ds, p)
        loaded = load_dataset(p)
        assert len(loaded) == len(chase_ds)
        for a, b in zip(chase_ds.trajectories, loaded.trajectories):
            assert a.task == b.task and a.seed == b.seed
            assert np.array_equal(a.obs, b.obs)
            assert np.array_equal(a.obs_ticks, b.obs_ticks)
            assert np.array_equal(a.states, b.states)
            assert np.array_equal(a.actions, b.actions)

    def test_truncated_line_reports_line_number(self, tmp_path, reach_ds):
        p = tmp_path / "ds.jsonl"
        save_dataset(reach_ds, p)
        lines = p.read_text().splitlines()
        lines[2] = lines[2][: len(lines[2]) // 2]
        p.write_text("\n".join(lines) + "\n")
        with pytest.raises(DatasetParseError) as exc:
            load_dataset(p)
        assert exc.value.line_no == 3

    def test_inconsistent_states_rejected_on_load(self, tmp_path, reach_ds):
        p = tmp_path / "ds.jsonl"
        save_dataset(reach_ds, p)
        import json

        lines = p.read_text().splitlines()
        rec = json.loads(lines[0])
        rec["steps"][3]["s"][0] += 0.5
        lines[0] = json.dumps(rec)
        p.write_text("\n".join(lines) + "\n")
        with pytest.raises(DatasetParseError) as exc:
            load_dataset(p)
        assert exc.value.line_no == 1

    def test_empty_file(self, tmp_path):
        p = tmp_path / "empty.jsonl"
        p.write_text("")
        ds = load_dataset(p)
        assert len(ds) == 0
