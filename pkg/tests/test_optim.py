import numpy as np
import pytest

from chunklab.nn import OptimState, Schedule, adamw_step, init_optim, lr_at, parameter


class TestSchedule:
    def test_defaults_are_reference_recipe(self):
        s = Schedule()
        assert s.lr_peak == 5e-5
        assert s.lr_min == 2.5e-6
        assert s.warmup_steps == 1000
        assert s.decay_steps == 30000

    def test_peak_at_warmup_end(self):
        assert lr_at(1000, Schedule()) == pytest.approx(5e-5)

    def test_min_at_decay_end_and_after(self):
        s = Schedule()
        assert lr_at(30000, s) == pytest.approx(2.5e-6)
        assert lr_at(45000, s) == pytest.approx(2.5e-6)

    def test_linear_warmup_midpoint(self):
        # step 500 of a 1000-step warmup sits at half the peak
        assert lr_at(500, Schedule()) == pytest.approx(2.5e-5)

    def test_cosine_midpoint_formula(self):
        s = Schedule()
        mid = (s.warmup_steps + s.decay_steps) // 2
        expected = s.lr_min + (s.lr_peak - s.lr_min) * 0.5 * (1 + np.cos(np.pi / 2))
        assert lr_at(mid, s) == pytest.approx(expected)

    def test_monotone_decay_after_warmup(self):
        s = Schedule()
        vals = [lr_at(t, s) for t in range(1000, 30001, 500)]
        assert all(a >= b for a, b in zip(vals, vals[1:]))

    def test_validation(self):
        with pytest.raises(ValueError):
            Schedule(warmup_steps=100, decay_steps=50)
        with pytest.raises(ValueError):
            lr_at(-1, Schedule())


class TestAdamW:
    def _params(self, seed=0):
        rng = np.random.default_rng(seed)
        return {"w": parameter(rng.standard_normal((3, 2))), "b": parameter(rng.standard_normal(2))}

    def test_default_hyperparameters(self):
        opt = init_optim(self._params())
        assert opt.betas == (0.9, 0.95)
        assert opt.weight_decay == pytest.approx(1e-10)

    def test_zero_grads_zero_decay_is_identity(self):
        params = self._params()
        opt = init_optim(params, weight_decay=0.0)
        grads = {k: np.zeros_like(p.data) for k, p in params.items()}
        new_params, opt2 = adamw_step(opt, params, grads)
        for k in params:
            assert np.array_equal(new_params[k].data, params[k].data)
        assert opt2.step == 1

    def test_matches_hand_computed_update(self):
        w0 = np.array([1.0, -2.0])
        params = {"w": parameter(w0.copy())}
        sched = Schedule(lr_peak=1e-2, lr_min=1e-2, warmup_steps=0, decay_steps=1)
        opt = init_optim(params, sched, betas=(0.9, 0.95), weight_decay=0.1)
        g = np.array([0.5, -1.0])
        new_params, opt = adamw_step(opt, params, {"w": g})
        # bias-corrected first step: mhat = g, vhat = g^2
        expected = w0 - 1e-2 * (g / (np.abs(g) + 1e-8) + 0.1 * w0)
        assert np.allclose(new_params["w"].data, expected)

    def test_decoupled_weight_decay_shrinks_without_grads(self):
        params = {"w": parameter(np.array([2.0, -2.0]))}
        sched = Schedule(lr_peak=1e-2, lr_min=1e-2, warmup_steps=0, decay_steps=1)
        opt = init_optim(params, sched, weight_decay=0.5)
        new_params, _ = adamw_step(opt, params, {"w": np.zeros(2)})
        assert np.allclose(new_params["w"].data, np.array([2.0, -2.0]) * (1 - 1e-2 * 0.5))

    def test_deterministic_sequence(self):
        def run():
            params = self._params(seed=4)
            sched = Schedule(lr_peak=1e-3, lr_min=1e-4, warmup_steps=2, decay_steps=10)
            opt = init_optim(params, sched)
            rng = np.random.default_rng(0)
            for _ in range(10):
                grads = {k: rng.standard_normal(p.data.shape) for k, p in params.items()}
                params, opt = adamw_step(opt, params, grads)
            return params

        p1, p2 = run(), run()
        for k in p1:
            assert np.array_equal(p1[k].data, p2[k].data)

    def test_moments_shaped_like_params(self):
        params = self._params()
        opt = init_optim(params)
        for k, p in params.items():
            assert opt.m[k].shape == p.data.shape
            assert opt.v[k].shape == p.data.shape
