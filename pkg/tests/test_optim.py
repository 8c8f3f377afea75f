"""AdamW, schedule, and gradient accumulation contracts."""

import numpy as np
import pytest

from mtlab import model as M
from mtlab import optim
from mtlab.errors import ConfigError, OptimError
from mtlab.numerics import Tensor, backward, using_dtype


def _scalar_params(value=1.0):
    cfg = M.ModelConfig(vocab_size=10, d_model=2, n_heads=1, n_enc_layers=1,
                        n_dec_layers=1, d_ff=2, max_positions=4)
    # a bare two-entry parameter set is enough to drive the optimizer
    tensors = {"w": Tensor(np.array([[value]], dtype=np.float64))}
    return M.Params(cfg, tensors)


class TestSchedule:
    def test_boundaries(self):
        sched = optim.ScheduleConfig(warmup_steps=100, total_steps=1000)
        lr0 = 0.3
        assert optim.lr_at(sched, lr0, 0) == 0.0
        assert optim.lr_at(sched, lr0, 100) == pytest.approx(lr0)
        assert optim.lr_at(sched, lr0, 550) == pytest.approx(0.5 * lr0)
        assert optim.lr_at(sched, lr0, 1000) == 0.0
        assert optim.lr_at(sched, lr0, 5000) == 0.0

    def test_piecewise_linear_and_continuous(self):
        sched = optim.ScheduleConfig(warmup_steps=10, total_steps=50)
        values = [optim.lr_at(sched, 1.0, s) for s in range(60)]
        assert max(values) == pytest.approx(1.0)
        assert values.index(max(values)) == 10
        diffs = np.diff(values)
        # two slopes only: warmup up-slope and decay down-slope (then flat 0)
        assert np.allclose(diffs[:9], 0.1)
        assert np.allclose(diffs[10:49], -1.0 / 40)

    def test_zero_warmup(self):
        sched = optim.ScheduleConfig(warmup_steps=0, total_steps=10)
        assert optim.lr_at(sched, 1.0, 0) == pytest.approx(1.0)

    def test_invalid(self):
        with pytest.raises(ConfigError):
            optim.ScheduleConfig(warmup_steps=11, total_steps=10).validate()


class TestAdamW:
    def test_single_step_hand_value(self):
        # theta=1, g=1, t=1, lr=0.1, wd=0: m_hat=1, v_hat=1
        # theta' = 1 - 0.1 * 1/(1 + 1e-8)
        params = _scalar_params(1.0)
        state = optim.AdamWState(params)
        cfg = optim.AdamWConfig(lr=0.1, weight_decay=0.0)
        optim.adamw_step(params, {"w": np.array([[1.0]])}, state, cfg)
        expected = 1.0 - 0.1 * (1.0 / (1.0 + 1e-8))
        assert params["w"].data[0, 0] == pytest.approx(expected, abs=1e-6)
        assert params["w"].data[0, 0] == pytest.approx(0.9, abs=1e-6)

    def test_zero_gradient_no_decay_keeps_params(self):
        params = _scalar_params(2.5)
        state = optim.AdamWState(params)
        cfg = optim.AdamWConfig(lr=0.1, weight_decay=0.0)
        optim.adamw_step(params, {"w": np.zeros((1, 1))}, state, cfg)
        assert params["w"].data[0, 0] == 2.5

    def test_decoupled_decay_scales_exactly(self):
        params = _scalar_params(2.0)
        state = optim.AdamWState(params)
        cfg = optim.AdamWConfig(lr=0.1, weight_decay=0.01)
        optim.adamw_step(params, {"w": np.zeros((1, 1))}, state, cfg)
        assert params["w"].data[0, 0] == pytest.approx(2.0 * (1 - 0.001), rel=1e-12)

    def test_one_dim_params_exempt_from_decay(self):
        cfg = M.ModelConfig(vocab_size=10, d_model=2, n_heads=1, n_enc_layers=1,
                            n_dec_layers=1, d_ff=2, max_positions=4)
        params = M.Params(cfg, {"b": Tensor(np.array([3.0], dtype=np.float64))})
        state = optim.AdamWState(params)
        optim.adamw_step(
            params, {"b": np.zeros(1)}, state, optim.AdamWConfig(lr=0.1, weight_decay=0.5)
        )
        assert params["b"].data[0] == 3.0

    def test_wd_zero_equals_adam(self):
        rng = np.random.default_rng(0)
        grads = [rng.standard_normal((3, 3)) for _ in range(5)]

        def run(wd):
            cfg_model = M.ModelConfig(vocab_size=10, d_model=2, n_heads=1,
                                      n_enc_layers=1, n_dec_layers=1, d_ff=2,
                                      max_positions=4)
            params = M.Params(cfg_model, {"w": Tensor(np.ones((3, 3)))})
            state = optim.AdamWState(params)
            cfg = optim.AdamWConfig(lr=0.01, weight_decay=wd)
            for g in grads:
                optim.adamw_step(params, {"w": g}, state, cfg)
            return params["w"].data.copy()

        # manual Adam (no decay) as the oracle
        theta = np.ones((3, 3))
        m = np.zeros((3, 3))
        v = np.zeros((3, 3))
        for t, g in enumerate(grads, 1):
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            theta -= 0.01 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
        np.testing.assert_allclose(run(0.0), theta, rtol=1e-6)

    def test_non_finite_gradient_names_parameter(self):
        params = _scalar_params()
        state = optim.AdamWState(params)
        with pytest.raises(OptimError, match="'w'"):
            optim.adamw_step(params, {"w": np.array([[np.nan]])}, state, optim.AdamWConfig())

    def test_scheduled_lr_override(self):
        params = _scalar_params(1.0)
        state = optim.AdamWState(params)
        optim.adamw_step(params, {"w": np.array([[1.0]])}, state,
                         optim.AdamWConfig(lr=99.0, weight_decay=0.0), lr=0.1)
        assert params["w"].data[0, 0] == pytest.approx(0.9, abs=1e-6)


class TestAccumulation:
    def _loss_and_grads(self, params, batch):
        loss = M.loss_teacher_forcing(params, batch)
        tensors = [params[n] for n in params.names()]
        grads = backward(loss, tensors)
        return {n: grads[params[n]] for n in params.names()}

    def test_flush_before_add_rejected(self):
        with pytest.raises(OptimError):
            optim.GradAccumulator().flush()

    def test_factor_one_is_identity(self):
        acc = optim.GradAccumulator(1)
        g = {"w": np.array([1.0, 2.0])}
        acc.add(g, weight=7.0)
        assert acc.ready
        np.testing.assert_allclose(acc.flush()["w"], [1.0, 2.0])

    def test_micro_batches_equal_full_batch(self, float64):
        cfg = M.ModelConfig(vocab_size=17, d_model=8, n_heads=2, n_enc_layers=1,
                            n_dec_layers=1, d_ff=12, max_positions=12, dropout=0.0)
        params = M.init(cfg, seed=3)
        rng = np.random.default_rng(4)
        # unequal lengths: per-token weighting must still reproduce the
        # full-batch mean gradient
        seqs = [
            ([3, 4, 5, 1], [6, 7, 1]),
            ([8, 1], [9, 10, 11, 1]),
            ([12, 13, 14, 15, 1], [16, 1]),
            ([5, 6, 1], [7, 8, 9, 1]),
        ]
        full = M.make_batch([s for s, _ in seqs], [t for _, t in seqs], cfg.pad_id)
        want = self._loss_and_grads(params, full)

        acc = optim.GradAccumulator(4)
        for s, t in seqs:
            micro = M.make_batch([s], [t], cfg.pad_id)
            grads = self._loss_and_grads(params, micro)
            acc.add(grads, weight=float(micro.tgt_mask.sum()))
        got = acc.flush()
        for name in want:
            np.testing.assert_allclose(got[name], want[name], atol=1e-6)

    def test_training_equivalence_accumulated_vs_full(self, float64):
        # k micro-batches of size b, stepped through AdamW, match full
        # batches of size k*b step for step
        cfg = M.ModelConfig(vocab_size=17, d_model=8, n_heads=2, n_enc_layers=1,
                            n_dec_layers=1, d_ff=12, max_positions=12, dropout=0.0)
        rng = np.random.default_rng(5)
        data = [
            ([int(x) for x in rng.integers(3, 17, rng.integers(2, 6))] + [1],
             [int(x) for x in rng.integers(3, 17, rng.integers(2, 6))] + [1])
            for _ in range(8)
        ]

        def train(batch_groups):
            params = M.init(cfg, seed=9)
            state = optim.AdamWState(params)
            ocfg = optim.AdamWConfig(lr=1e-3)
            for group in batch_groups:
                acc = optim.GradAccumulator(len(group))
                for chunk in group:
                    batch = M.make_batch([s for s, _ in chunk], [t for _, t in chunk], cfg.pad_id)
                    grads = self._loss_and_grads(params, batch)
                    acc.add(grads, weight=float(batch.tgt_mask.sum()))
                optim.adamw_step(params, acc.flush(), state, ocfg)
            return params

        # two optimizer steps each way
        full = train([[data[:4]], [data[4:]]])
        micro = train([[data[0:2], data[2:4]], [data[4:6], data[6:8]]])
        for name in full.names():
            np.testing.assert_allclose(
                micro[name].data, full[name].data, rtol=1e-5, atol=1e-9
            )
