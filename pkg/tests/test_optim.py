import math

import numpy as np
import pytest

from frevl.errors import NumericFault, ScheduleExhaustedError, ShapeError
from frevl.optim import (
    AdamWState,
    ScheduleConfig,
    adamw_step,
    clip_global_norm,
    global_grad_norm,
    init_adamw,
    lr_at_step,
)


class TestSchedule:
    def test_endpoints(self):
        cfg = ScheduleConfig(peak_lr=0.2, warmup_steps=10, total_steps=100)
        assert abs(lr_at_step(5, cfg) - 0.1) < 1e-12
        assert abs(lr_at_step(10, cfg) - 0.2) < 1e-12
        assert abs(lr_at_step(100, cfg) - 0.0) < 1e-12

    def test_endpoints_with_floor(self):
        cfg = ScheduleConfig(peak_lr=1e-3, warmup_steps=20, total_steps=200,
                             min_lr=1e-5)
        assert abs(lr_at_step(10, cfg) - 5e-4) < 1e-12
        assert abs(lr_at_step(20, cfg) - 1e-3) < 1e-12
        assert abs(lr_at_step(200, cfg) - 1e-5) < 1e-12

    def test_cosine_midpoint(self):
        cfg = ScheduleConfig(peak_lr=0.2, warmup_steps=10, total_steps=110)
        # halfway through decay: cos(pi/2) = 0 -> peak/2
        assert abs(lr_at_step(60, cfg) - 0.1) < 1e-12

    def test_warmup_linear(self):
        cfg = ScheduleConfig(peak_lr=1.0, warmup_steps=4, total_steps=40)
        for s in range(5):
            assert abs(lr_at_step(s, cfg) - s / 4) < 1e-12

    def test_monotone_decay_after_warmup(self):
        cfg = ScheduleConfig(peak_lr=0.1, warmup_steps=5, total_steps=50)
        lrs = [lr_at_step(s, cfg) for s in range(5, 51)]
        assert all(a >= b for a, b in zip(lrs, lrs[1:]))

    def test_exhausted(self):
        cfg = ScheduleConfig(peak_lr=0.1, warmup_steps=5, total_steps=50)
        with pytest.raises(ScheduleExhaustedError):
            lr_at_step(51, cfg)

    def test_negative_step(self):
        cfg = ScheduleConfig(peak_lr=0.1, warmup_steps=5, total_steps=50)
        with pytest.raises(ValueError):
            lr_at_step(-1, cfg)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            ScheduleConfig(peak_lr=0.1, warmup_steps=0, total_steps=10)
        with pytest.raises(ValueError):
            ScheduleConfig(peak_lr=0.1, warmup_steps=10, total_steps=10)


class TestClip:
    def test_three_four_five(self):
        grads = {"a": np.array([3.0]), "b": np.array([4.0])}
        clipped, norm = clip_global_norm(grads, 1.0)
        assert norm == 5.0
        np.testing.assert_allclose(clipped["a"], [0.6], atol=1e-15)
        np.testing.assert_allclose(clipped["b"], [0.8], atol=1e-15)
        assert abs(global_grad_norm(clipped) - 1.0) < 1e-12

    def test_below_threshold_untouched(self):
        grads = {"a": np.array([0.3, 0.4])}
        clipped, norm = clip_global_norm(grads, 1.0)
        assert norm == 0.5
        assert clipped["a"] is grads["a"]

    def test_non_finite_rejected(self):
        with pytest.raises(NumericFault, match="bad"):
            clip_global_norm({"bad": np.array([np.nan])}, 1.0)
        with pytest.raises(NumericFault):
            clip_global_norm({"g": np.array([np.inf])}, 1.0)

    def test_max_norm_validation(self):
        with pytest.raises(ValueError):
            clip_global_norm({"a": np.ones(1)}, 0.0)


class TestAdamW:
    def test_single_step_oracle_no_decay(self):
        # theta=1, g=1, lr=0.1: mhat = vhat = 1 -> theta' ~ 0.9
        params = {"w": np.ones((1, 1))}
        state = init_adamw(params, weight_decay=0.0)
        new, st = adamw_step(params, {"w": np.ones((1, 1))}, state, 0.1)
        assert abs(new["w"][0, 0] - 0.9) < 1e-6
        assert st.step == 1

    def test_single_step_oracle_with_decay(self):
        # decoupled decay adds wd * theta: theta' ~ 1 - 0.1 * (1 + 0.01)
        params = {"w": np.ones((1, 1))}
        state = init_adamw(params, weight_decay=0.01)
        new, _ = adamw_step(params, {"w": np.ones((1, 1))}, state, 0.1)
        assert abs(new["w"][0, 0] - 0.899) < 1e-6

    def test_decay_skips_one_dim_params(self):
        params = {"b": np.ones(1)}
        state = init_adamw(params, weight_decay=0.5)
        new, _ = adamw_step(params, {"b": np.ones(1)}, state, 0.1)
        # same as the no-decay oracle despite weight_decay=0.5
        assert abs(new["b"][0] - 0.9) < 1e-6

    def test_first_step_is_gradient_scale_free(self):
        for scale in (1e-6, 1.0, 1e6):
            params = {"w": np.ones((1, 1))}
            state = init_adamw(params, weight_decay=0.0)
            new, _ = adamw_step(params, {"w": np.full((1, 1), scale)},
                                state, 0.01)
            # within 2% of lr: eps in the denominator perturbs tiny gradients
            assert abs((1.0 - new["w"][0, 0]) - 0.01) < 0.02 * 0.01

    def test_functional_purity(self):
        params = {"w": np.ones((2, 2))}
        grads = {"w": np.full((2, 2), 0.5)}
        state = init_adamw(params)
        before = params["w"].copy()
        m_before = state.m["w"].copy()
        adamw_step(params, grads, state, 0.1)
        assert np.array_equal(params["w"], before)
        assert np.array_equal(state.m["w"], m_before)

    def test_determinism(self):
        def run():
            params = {"w": np.ones((2, 2), dtype=np.float32)}
            state = init_adamw(params)
            for i in range(10):
                g = {"w": np.full((2, 2), 0.1 * (i + 1), dtype=np.float32)}
                params, state = adamw_step(params, g, state, 0.01)
            return params["w"]
        assert np.array_equal(run(), run())

    def test_key_set_mismatch(self):
        params = {"w": np.ones((1, 1))}
        state = init_adamw(params)
        with pytest.raises(ShapeError):
            adamw_step(params, {"v": np.ones((1, 1))}, state, 0.1)

    def test_shape_mismatch(self):
        params = {"w": np.ones((1, 1))}
        state = init_adamw(params)
        with pytest.raises(ShapeError):
            adamw_step(params, {"w": np.ones((2, 1))}, state, 0.1)

    def test_negative_lr_rejected(self):
        params = {"w": np.ones((1, 1))}
        with pytest.raises(ValueError):
            adamw_step(params, {"w": np.ones((1, 1))}, init_adamw(params),
                       -0.1)

    def test_quadratic_convergence(self):
        # minimize sum((x - c)^2); AdamW should land near c well within
        # 2000 constant-lr steps
        c = np.array([[1.5, -2.0], [0.5, 3.0]])
        params = {"x": np.zeros((2, 2))}
        state = init_adamw(params, weight_decay=0.0)
        for _ in range(2000):
            g = {"x": 2.0 * (params["x"] - c)}
            params, state = adamw_step(params, g, state, 0.05)
        assert float(np.max(np.abs(params["x"] - c))) < 1e-3

    def test_moments_accumulate(self):
        params = {"w": np.ones((1, 1))}
        state = init_adamw(params)
        g = {"w": np.full((1, 1), 2.0)}
        _, s1 = adamw_step(params, g, state, 0.0)
        assert abs(s1.m["w"][0, 0] - 0.2) < 1e-12
        assert abs(s1.v["w"][0, 0] - 0.004) < 1e-12
