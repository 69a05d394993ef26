import numpy as np
import pytest

from dynkv.model import ModelConfig, init_deterministic, prefill, decode_step
from dynkv.policies import (PolicyConfig, apply_plan, h2o_select, identity_plan,
                            make_plan, pyramid_budgets, pyramid_select,
                            snapkv_select, streaming_select)
from dynkv.trace import AttentionTrace, synth_trace


def cfg_for(policy, **kw):
    base = dict(wt=32, ws=8, sink=4, pyramid_min=8)
    base.update(kw)
    return PolicyConfig(policy=policy, **base)


def random_trace(L=4, H=2, S=128, ws=8, seed=0):
    rng = np.random.default_rng(seed)
    return AttentionTrace(L=L, H=H, S=S, ws=ws,
                          scores=rng.random((L, H, S)).astype(np.float32))


class TestStreaming:
    def test_sink_plus_recency(self):
        plan = streaming_select(100, 3, cfg_for("streaming", wt=10, ws=4, sink=4))
        want = sorted(list(range(4)) + list(range(94, 100)))
        for pos in plan.positions:
            np.testing.assert_array_equal(pos, want)

    def test_budget_covers_sequence(self):
        plan = streaming_select(10, 2, cfg_for("streaming", wt=10, ws=4, sink=4))
        np.testing.assert_array_equal(plan.positions[0], np.arange(10))

    def test_pure_recency(self):
        plan = streaming_select(50, 1, cfg_for("streaming", wt=10, ws=4, sink=0))
        np.testing.assert_array_equal(plan.positions[0], np.arange(40, 50))

    def test_sink_exceeds_budget(self):
        with pytest.raises(ValueError, match="sink exceeds budget"):
            streaming_select(50, 1, cfg_for("streaming", wt=10, ws=4, sink=10))


class TestH2O:
    def test_heavy_hitter_kept(self):
        t = random_trace(seed=1)
        t.scores[:, :, 17] = 5.0  # dominant position in every layer
        plan = h2o_select(t, cfg_for("h2o"))
        for pos in plan.positions:
            assert 17 in pos

    def test_uniform_tiebreak(self):
        t = synth_trace(3, 2, 64, 8, "uniform")
        cfg = cfg_for("h2o", wt=16, ws=8)
        plan = h2o_select(t, cfg)
        want = sorted(list(range(8)) + list(range(56, 64)))
        for pos in plan.positions:
            np.testing.assert_array_equal(pos, want)

    def test_matches_sort_oracle(self):
        t = random_trace(seed=2)
        cfg = cfg_for("h2o")
        plan = h2o_select(t, cfg)
        for l in range(t.L):
            acc = t.scores[l].sum(axis=0)[: t.S - cfg.ws]
            oracle = sorted(sorted(range(len(acc)), key=lambda i: (-acc[i], i))[:cfg.wt - cfg.ws])
            np.testing.assert_array_equal(plan.positions[l][:cfg.wt - cfg.ws], oracle)


class TestSnapKV:
    def test_single_head_equals_h2o_on_pooled(self):
        from dynkv.kernels import pool1d_max
        t = random_trace(H=1, seed=3)
        cfg = cfg_for("snapkv")
        plan = snapkv_select(t, cfg)
        pooled = AttentionTrace(L=t.L, H=1, S=t.S, ws=t.ws,
                                scores=pool1d_max(t.scores, cfg.pool_kernel))
        plan_h2o = h2o_select(pooled, cfg_for("h2o"))
        for a, b in zip(plan.positions, plan_h2o.positions):
            np.testing.assert_array_equal(a, b)

    def test_needle_retained(self):
        t = synth_trace(4, 2, 128, 8, "needle-at:40:0.9", seed=4)
        plan = snapkv_select(t, cfg_for("snapkv"))
        for pos in plan.positions:
            assert 40 in pos

    def test_uniform_budget_exact(self):
        t = synth_trace(4, 3, 128, 8, "uniform")
        cfg = cfg_for("snapkv")
        plan = snapkv_select(t, cfg)
        for pos in plan.positions:
            assert len(pos) == cfg.wt


class TestPyramid:
    def test_two_layer_interpolation(self):
        b = pyramid_budgets(2, PolicyConfig(policy="pyramid", wt=10, ws=4, pyramid_min=4))
        np.testing.assert_array_equal(b, [16, 4])

    def test_single_layer(self):
        b = pyramid_budgets(1, PolicyConfig(policy="pyramid", wt=10, ws=4, pyramid_min=4))
        np.testing.assert_array_equal(b, [10])

    def test_total_and_monotone_property(self):
        rng = np.random.default_rng(6)
        for _ in range(500):
            ws = int(rng.integers(1, 16))
            wt = int(rng.integers(ws + 1, 256))
            pmin = int(rng.integers(ws, wt + 1))
            L = int(rng.integers(1, 33))
            cfg = PolicyConfig(policy="pyramid", wt=wt, ws=ws, pyramid_min=pmin)
            b = pyramid_budgets(L, cfg)
            assert int(b.sum()) == wt * L
            assert np.all(np.diff(b) <= 0)

    def test_invalid_pyramid(self):
        with pytest.raises(ValueError, match="invalid pyramid"):
            pyramid_budgets(2, PolicyConfig(policy="pyramid", wt=10, ws=4, pyramid_min=11))

    def test_select_respects_budgets(self):
        t = random_trace(L=4, S=256, seed=7)
        cfg = cfg_for("pyramid", wt=32, ws=8, pyramid_min=16)
        plan = pyramid_select(t, cfg)
        budgets = pyramid_budgets(4, cfg)
        for pos, b in zip(plan.positions, budgets):
            assert len(pos) == min(int(b), t.S)


class TestPlanInvariants:
    @pytest.mark.parametrize("policy", ["full", "streaming", "h2o", "snapkv",
                                        "pyramid", "dynamic"])
    def test_window_always_present(self, policy):
        t = random_trace(seed=8)
        plan = make_plan(t, cfg_for(policy, pyramid_min=16))
        plan.validate()
        window = set(range(t.S - t.ws, t.S))
        for pos in plan.positions:
            assert window <= set(int(p) for p in pos)

    @pytest.mark.parametrize("policy", ["streaming", "h2o", "snapkv"])
    def test_fixed_budget_exact(self, policy):
        t = random_trace(seed=9)
        cfg = cfg_for(policy)
        plan = make_plan(t, cfg)
        for pos in plan.positions:
            assert len(pos) == min(cfg.wt, t.S)

    @pytest.mark.parametrize("policy", ["streaming", "h2o", "snapkv", "pyramid", "dynamic"])
    def test_degenerate_short_sequence(self, policy):
        t = random_trace(S=24, seed=10)
        plan = make_plan(t, cfg_for(policy, wt=32, ws=8, pyramid_min=16))
        for pos in plan.positions:
            np.testing.assert_array_equal(pos, np.arange(24))

    def test_deterministic(self):
        t = random_trace(seed=11)
        for policy in ["streaming", "h2o", "snapkv", "pyramid", "dynamic"]:
            cfg = cfg_for(policy, pyramid_min=16)
            a, b = make_plan(t, cfg), make_plan(t, cfg)
            for x, y in zip(a.positions, b.positions):
                np.testing.assert_array_equal(x, y)


class TestApplyPlan:
    @pytest.fixture()
    def setup(self):
        mcfg = ModelConfig(n_layers=3, n_query_heads=2, n_kv_heads=1,
                           head_dim=8, vocab=32, seed=2)
        model = init_deterministic(mcfg)
        toks = np.arange(40) % 32
        cache, wattn, _ = prefill(model, toks, ws=4)
        return model, cache, wattn

    def test_identity_plan_unchanged(self, setup):
        model, cache, _ = setup
        plan = identity_plan(40, 3, 4)
        out = apply_plan(cache, plan)
        for l in range(3):
            np.testing.assert_array_equal(out.keys[l], cache.keys[l])

    def test_window_only(self, setup):
        _, cache, _ = setup
        plan = identity_plan(40, 3, 4)
        plan.positions = [np.arange(36, 40)] * 3
        out = apply_plan(cache, plan)
        assert all(out.seq_len(l) == 4 for l in range(3))

    def test_arbitrary_plan_decodes(self, setup):
        model, cache, _ = setup
        plan = identity_plan(40, 3, 4)
        plan.positions = [np.array([0, 5, 17, 36, 37, 38, 39])] * 3
        out = apply_plan(cache, plan)
        logits, out = decode_step(model, out, 1)
        assert logits.shape == (32,)
        for l in range(3):
            assert np.all(np.diff(out.positions[l]) > 0)

    def test_mismatch(self, setup):
        _, cache, _ = setup
        plan = identity_plan(41, 3, 4)
        with pytest.raises(ValueError, match="plan/cache mismatch"):
            apply_plan(cache, plan)
