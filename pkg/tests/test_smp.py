"""Annealing schedule, sparsity loss, and the combined training step."""

import math

import numpy as np
import pytest

from _oracles import fd_grad
from prunelab import autograd, gating, smp
from prunelab.autograd import Tensor
from prunelab.gating import GatedParameter
from prunelab.models import Dims, build_model
from prunelab.optim import Adam, Sgd
from prunelab.rng import CounterRng
from prunelab.smp import (SmpConfig, SparsitySchedule, TrainingDiverged, anneal_alpha,
                          default_lambda, smp_finalize, smp_train_step, sparsity_loss,
                          total_loss)
from prunelab import data as scene_data
from prunelab import training


class TestAnnealAlpha:
    def test_start_is_zero(self):
        assert anneal_alpha(0, 100) == 0.0

    def test_end_is_one(self):
        assert anneal_alpha(100, 100) == pytest.approx(1.0)

    def test_midpoint_is_half(self):
        assert anneal_alpha(50, 100) == pytest.approx(0.5)

    def test_monotone_nondecreasing(self):
        vals = [anneal_alpha(n, 200) for n in range(201)]
        assert all(b >= a for a, b in zip(vals, vals[1:]))
        assert all(0.0 <= v <= 1.0 for v in vals)

    def test_overrun_clamps_with_warning(self):
        with pytest.warns(UserWarning):
            assert anneal_alpha(150, 100) == 1.0


class TestDefaultLambda:
    def test_is_five_at_eighty_percent(self):
        assert default_lambda(0.8) == pytest.approx(5.0)

    def test_is_twenty_at_high_sparsity(self):
        assert default_lambda(0.975) == pytest.approx(20.0)

    def test_formula_value(self):
        assert default_lambda(0.99) == pytest.approx(50.0)

    def test_rejects_one(self):
        with pytest.raises(ValueError):
            default_lambda(1.0)


def _gates(values):
    values = np.asarray(values, dtype=np.float32)
    w = Tensor(np.ones_like(values), requires_grad=True)
    g = Tensor(values, requires_grad=True)
    return {"t": GatedParameter(weight=w, gate=g, name="t")}


class TestSparsityLoss:
    def test_dense_network_pays_the_gap(self):
        gates = _gates(np.full(10, 5.0))  # everything kept
        loss = sparsity_loss(gates, s_target=0.8, alpha=0.5)
        assert loss.item() == pytest.approx(0.4)

    def test_zero_at_exact_target(self):
        gates = _gates([2.0, 2.0, -2.0, -2.0])  # sparsity 0.5
        assert sparsity_loss(gates, 0.5, alpha=1.0).item() == pytest.approx(0.0)

    def test_zero_when_annealing_off(self):
        gates = _gates(np.linspace(-3, 3, 7))
        assert sparsity_loss(gates, 0.9, alpha=0.0).item() == pytest.approx(0.0)

    def test_nonnegative_everywhere(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            gates = _gates(rng.normal(size=12))
            s = rng.uniform(0, 0.99)
            a = rng.uniform(0, 1)
            assert sparsity_loss(gates, s, a).item() >= 0.0

    def test_gate_gradient_closed_form(self):
        # count path is straight-through: d L_s / d g = alpha * sign(gap) / p_total
        vals = np.array([1.0, -0.5, 2.0, 0.3], dtype=np.float32)
        gates = _gates(vals)
        loss = sparsity_loss(gates, s_target=0.9, alpha=0.7)
        loss.backward()
        expected = np.full(4, 0.7 * 1.0 / 4)  # gap positive: too dense
        np.testing.assert_allclose(gates["t"].gate.grad, expected, rtol=1e-5)

    def test_pressure_uniform_across_gate_values(self):
        # a saturated gate and a marginal gate feel identical pressure
        gates = _gates([8.0, 0.01, -6.0, 3.0])
        sparsity_loss(gates, 0.9, alpha=1.0).backward()
        g = gates["t"].gate.grad
        assert np.all(g == g[0])


class TestTotalLoss:
    def test_zero_weight_recovers_task_loss(self):
        task = Tensor(1.25)
        ls = Tensor(0.4)
        assert total_loss(task, ls, 0.0).item() == pytest.approx(1.25)

    def test_weighted_sum(self):
        assert total_loss(Tensor(1.0), Tensor(0.4), 5.0).item() == pytest.approx(3.0)

    def test_gate_gradient_decomposes(self):
        """Engine gradient at the gates equals the two hand-built legs.

        Toy: L_c = sum(v * (W o bits)) is linear in the mask, so the task
        leg is (dL_c/dW') * W * sigma'(g), with dL_c/dW' verified by
        finite differences on the smooth W' -> L_c map. The sparsity leg
        is the closed-form alpha * sign(gap) / p_total (count path is
        straight-through to the gate).
        """
        rng = np.random.default_rng(42)
        n = 10
        w_vals = rng.uniform(0.5, 1.5, size=n).astype(np.float32)
        g_vals = rng.normal(size=n).astype(np.float32)
        v = rng.uniform(-1, 1, size=n).astype(np.float32)
        lam, alpha, s_target = 3.0, 0.6, 0.9

        w = Tensor(w_vals, requires_grad=True)
        g = Tensor(g_vals, requires_grad=True)
        gp = GatedParameter(weight=w, gate=g, name="t")
        mask_rng = CounterRng(7)
        eff = gating.gated_forward(gp, mask_rng)
        bits = eff.data / np.where(w_vals == 0, 1, w_vals)  # recover sampled bits
        task = autograd.sum_(autograd.mul(eff, Tensor(v)))
        loss = total_loss(task, sparsity_loss({"t": gp}, s_target, alpha), lam)
        loss.backward()

        # task leg: dL_c/dW' by finite differences on the masked weights
        wp = Tensor(w_vals * bits, requires_grad=True)
        dlc_dwp = fd_grad(lambda t: autograd.sum_(autograd.mul(t, Tensor(v))), [wp])[0]
        sig = 1 / (1 + np.exp(-g_vals))
        task_leg = dlc_dwp * w_vals * sig * (1 - sig)
        kept = float((g_vals >= 0).sum())
        gap = s_target - (1 - kept / n)
        sparsity_leg = np.full(n, lam * alpha * np.sign(gap) / n)
        np.testing.assert_allclose(g.grad, task_leg + sparsity_leg, rtol=1e-3, atol=1e-4)


def _tiny_setup(seed=0, s_target=0.8, lam=5.0, steps=50):
    dims = Dims(hidden=8, embed=8, attn=8, enc_hidden=8, feat=8)
    model = build_model("sa_lstm", dims, seed=seed)
    model.attach_gates(5.0, parts=("decoder",))
    dataset = scene_data.generate_dataset(11, 96)
    schedule = SparsitySchedule(s_target, steps)
    config = SmpConfig(lambda_s=lam)
    theta_opt = Adam(model.trainable(), lr=0.01)
    gate_opt = Sgd(model.gate_tensors(), lr=100.0)
    return model, dataset, schedule, config, theta_opt, gate_opt


class TestSmpTrainStep:
    def test_telemetry_contract(self):
        model, ds, schedule, config, topt, gopt = _tiny_setup()
        rng = CounterRng(5)
        batch = ds.sample_batch(rng, 8)
        rec = smp_train_step(model, batch, schedule, config, rng, topt, gopt)
        assert set(rec) == {"step", "xe_loss", "weighted_sparsity_loss", "gate_mean", "sparsity"}
        assert rec["step"] == 0
        assert rec["gate_mean"] == pytest.approx(5.0)  # pre-update snapshot of m
        assert rec["sparsity"] == pytest.approx(0.0)
        assert schedule.n == 1

    def test_schedule_exhaustion_rejected(self):
        model, ds, schedule, config, topt, gopt = _tiny_setup(steps=1)
        rng = CounterRng(5)
        smp_train_step(model, ds.sample_batch(rng, 8), schedule, config, rng, topt, gopt)
        with pytest.raises(ValueError):
            smp_train_step(model, ds.sample_batch(rng, 8), schedule, config, rng, topt, gopt)

    def test_nan_loss_aborts_with_layer_dump(self):
        model, ds, schedule, config, topt, gopt = _tiny_setup()
        model.params["dec.output.kernel"].data[0, 0] = np.nan
        rng = CounterRng(5)
        autograd.CHECK_FINITE = False  # reach the training-level NaN policy
        with pytest.raises(TrainingDiverged) as exc:
            smp_train_step(model, ds.sample_batch(rng, 8), schedule, config, rng, topt, gopt)
        assert "per-layer sparsity" in str(exc.value)

    def test_gate_mean_decreases_under_pressure(self):
        model, ds, schedule, config, topt, gopt = _tiny_setup(steps=300, lam=20.0)
        rng = CounterRng(5)
        first = None
        for _ in range(300):
            rec = smp_train_step(model, ds.sample_batch(rng, 8), schedule, config,
                                 rng, topt, gopt)
            if first is None:
                first = rec["gate_mean"]
        assert rec["gate_mean"] < first

    def test_lambda_zero_tracks_dense_loss(self):
        """With no sparsity pressure and gates at 5, training follows the
        dense trajectory almost exactly (keep-prob 0.9933)."""
        dims = Dims(hidden=8, embed=8, attn=8, enc_hidden=8, feat=8)
        ds = scene_data.generate_dataset(11, 96)

        class Tap:
            def __init__(self):
                self.losses = []

            def write(self, rec):
                self.losses.append(rec["xe_loss"])

        def run(use_smp):
            model = build_model("sa_lstm", dims, seed=3)
            tap = Tap()
            hooks = None
            if use_smp:
                model.attach_gates(5.0, parts=("decoder",))
                hooks = training.SmpHooks(schedule=SparsitySchedule(0.8, 100),
                                          config=SmpConfig(lambda_s=0.0),
                                          gate_opt=Sgd(model.gate_tensors(), lr=100.0))
            training.train(model, ds, steps=100, rng=CounterRng(9), lr=0.02,
                           smp_hooks=hooks, telemetry=tap)
            return np.array(tap.losses)

        dense = run(False)
        gated = run(True)
        corr = np.corrcoef(dense, gated)[0, 1]
        assert corr > 0.99


class TestSmpFinalize:
    def test_reports_definitional_sparsity(self):
        model, *_ = _tiny_setup()
        for gp in model.gated.values():
            gp.gate.data[:] = -1.0
        gp = next(iter(model.gated.values()))
        gp.gate.data.ravel()[:10] = 1.0
        p_nnz, p_total = gating.count_nnz(model.gated)
        report = smp_finalize(model)
        assert report["sparsity"] == pytest.approx(1 - p_nnz / p_total)
        assert report["p_nnz"] == 10

    def test_one_entry_per_prunable_tensor(self):
        model, *_ = _tiny_setup()
        report = smp_finalize(model)
        assert set(report["per_layer"]) == set(model.gated.keys())

    def test_double_finalize_rejected(self):
        model, *_ = _tiny_setup()
        smp_finalize(model)
        with pytest.raises(gating.LifecycleError):
            for gp in model.gated.values():
                gating.finalize(gp)
