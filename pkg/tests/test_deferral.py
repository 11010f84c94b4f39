import numpy as np
import pytest

from reprompt.deferral import (CostSpec, CostTable, batch_surrogate,
                               build_cost_table, complement_costs, decide,
                               deferral_loss, option_probabilities,
                               read_cost_tables_csv, reprice, segmentation_error,
                               surrogate_grad, surrogate_mae,
                               write_cost_tables_csv)
from reprompt.propagator import (KindDynamics, PromptDynamics, dice_trace,
                                 make_prompt, propagate)
from reprompt.synthgen import ClipConfig, generate_clip


def table(base=0.4, errs=(0.3, 0.2, 0.35), spec=None):
    return CostTable(clip_id="t", candidates=(10, 20, 30), base_error=base,
                     corrected_errors=np.array(errs), spec=spec or CostSpec())


def test_cost_spec_rejects_negative():
    with pytest.raises(ValueError):
        CostSpec(base_cost=-0.1)
    with pytest.raises(ValueError):
        CostSpec(correction_cost=-1)


def test_cost_table_validation():
    with pytest.raises(ValueError):
        table(errs=(0.3, 0.2))               # wrong arity
    with pytest.raises(ValueError):
        table(base=1.5)
    with pytest.raises(ValueError):
        CostTable(clip_id="t", candidates=(20, 10), base_error=0.1,
                  corrected_errors=np.array([0.1, 0.1]))


def test_cost_formulas():
    t = table(spec=CostSpec(base_cost=0.05, correction_cost=0.01))
    assert t.accept_cost == pytest.approx(0.05 + 0.4)
    assert np.allclose(t.correction_costs, 0.05 + 0.01 + np.array([0.3, 0.2, 0.35]))


def test_reprice_changes_costs_not_errors():
    t = table()
    t2 = reprice(t, CostSpec(base_cost=0.0, correction_cost=0.5))
    assert np.array_equal(t2.corrected_errors, t.corrected_errors)
    assert t2.base_error == t.base_error
    assert np.allclose(t2.correction_costs, t.corrected_errors + 0.5)


def test_deferral_loss_values():
    t = table(spec=CostSpec(base_cost=0.0, correction_cost=0.01))
    assert deferral_loss(0, t) == pytest.approx(0.4)
    assert deferral_loss(20, t) == pytest.approx(0.21)
    with pytest.raises(ValueError):
        deferral_loss(11, t)


def test_complement_costs_clamped_accept_first():
    t = table(base=0.4, errs=(0.3, 0.995, 0.35),
              spec=CostSpec(base_cost=0.0, correction_cost=0.01))
    w = complement_costs(t)
    assert w.shape == (4,)
    assert w[0] == pytest.approx(0.6)          # 1 - accept cost
    assert w[2] == 0.0                          # cost above 1 clamps to weight 0
    assert np.all((w >= 0) & (w <= 1))


def test_segmentation_error_is_mean_dice_loss(benchmark):
    clip = benchmark["eval_clips"][0]
    result = benchmark["eval_results"]["mask"][0]
    want = float(np.mean([1.0 - d for d in dice_trace(result, clip)]))
    assert segmentation_error(result, clip) == pytest.approx(want, abs=1e-12)


class TestSurrogate:
    def test_probabilities_match_softmax_by_hand(self):
        s = np.array([0.5, -1.0, 2.0])
        p = option_probabilities(s)
        z = 1.0 + np.exp(-s).sum()
        assert p[0] == pytest.approx(1.0 / z, abs=1e-12)
        assert np.allclose(p[1:], np.exp(-s) / z, atol=1e-12)
        assert p.sum() == pytest.approx(1.0, abs=1e-12)

    def test_bracket_sum_identity(self):
        rng = np.random.default_rng(8)
        for _ in range(50):
            s = rng.normal(scale=3.0, size=9)
            p = option_probabilities(s)
            assert abs(np.sum(1.0 - p) - 9.0) < 1e-12

    def test_gradient_matches_central_differences(self):
        rng = np.random.default_rng(21)
        h = 1e-6
        for _ in range(30):
            s = rng.normal(size=7)
            w = rng.uniform(size=8)
            g = surrogate_grad(s, w)
            for i in range(7):
                e = np.zeros(7)
                e[i] = h
                fd = (surrogate_mae(s + e, w) - surrogate_mae(s - e, w)) / (2 * h)
                assert abs(g[i] - fd) / max(1.0, abs(g[i]), abs(fd)) < 1e-6

    def test_batch_agrees_with_single(self):
        rng = np.random.default_rng(3)
        scores = rng.normal(size=(5, 6))
        weights = rng.uniform(size=(5, 7))
        losses, grads = batch_surrogate(scores, weights)
        for i in range(5):
            assert losses[i] == pytest.approx(surrogate_mae(scores[i], weights[i]), abs=1e-12)
            assert np.allclose(grads[i], surrogate_grad(scores[i], weights[i]), atol=1e-12)

    def test_extreme_scores_stay_finite(self):
        s = np.array([500.0, -500.0, 0.0])
        w = np.array([0.5, 0.5, 0.5, 0.5])
        assert np.isfinite(surrogate_mae(s, w))
        assert np.isfinite(surrogate_grad(s, w)).all()


class TestDecide:
    def test_accept_when_all_scores_positive(self):
        assert decide(np.array([0.2, 1.0, 3.0]), (10, 20, 30)) == 0

    def test_defer_at_first_minimum(self):
        assert decide(np.array([0.5, -1.0, -1.0]), (10, 20, 30)) == 20

    def test_zero_score_defers(self):
        assert decide(np.array([0.0, 2.0, 3.0]), (10, 20, 30)) == 10

    def test_no_candidates_accepts(self):
        assert decide(np.array([]), ()) == 0

    def test_arity_mismatch(self):
        with pytest.raises(ValueError):
            decide(np.array([1.0]), (10, 20))


class TestBuildCostTable:
    def test_noise_free_corrections_never_hurt(self):
        # with sigma=0 the error model is deterministic, so the best
        # correction must be at least as good as accepting
        clip = generate_clip(ClipConfig(frame_count=30), 11, "c")
        dyn = PromptDynamics(mask=KindDynamics(0.95, 0.45, 0.08, 0.0))
        t = build_cost_table(clip, "mask", (5, 10, 15, 20, 25), CostSpec(), dyn)
        assert t.corrected_errors.min() <= t.base_error + 1e-9

    def test_candidate_out_of_range(self):
        clip = generate_clip(ClipConfig(frame_count=10), 11, "c")
        with pytest.raises(ValueError):
            build_cost_table(clip, "mask", (5, 99), CostSpec(), PromptDynamics())

    def test_reuses_initial_result(self, benchmark):
        clip = benchmark["eval_clips"][0]
        r0 = benchmark["eval_results"]["mask"][0]
        t = build_cost_table(clip, "mask", benchmark["candidates"],
                             benchmark["spec"], benchmark["dyn"],
                             initial_result=r0)
        ref = benchmark["eval_tables"][0]
        assert t.base_error == ref.base_error
        assert np.array_equal(t.corrected_errors, ref.corrected_errors)


def test_csv_round_trip(tmp_path):
    spec = CostSpec(base_cost=0.0, correction_cost=0.01)
    tables = [table(spec=spec),
              CostTable(clip_id="u", candidates=(10, 20, 30), base_error=0.25,
                        corrected_errors=np.array([0.2, 0.22, 0.18]), spec=spec)]
    path = tmp_path / "costs.csv"
    meta = {"lambda_base": repr(0.0), "lambda_corr": repr(0.01), "note": "x"}
    write_cost_tables_csv(tables, path, meta)
    text = path.read_text()
    assert "clip_id,candidate_frame,ell_0,ell_0k,c_prop,c_corr" in text
    got_meta, got = read_cost_tables_csv(path)
    assert got_meta["note"] == "x"
    assert [t.clip_id for t in got] == ["t", "u"]
    for a, b in zip(tables, got):
        assert a.base_error == b.base_error
        assert np.array_equal(a.corrected_errors, b.corrected_errors)
        assert a.candidates == b.candidates
        assert np.array_equal(a.correction_costs, b.correction_costs)
