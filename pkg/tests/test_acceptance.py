"""Acceptance gate.

Every criterion runs at its stated tolerance and prints one PASS/FAIL
line (run with -s to see them inline). Heavy training runs are shared
across criteria through a module cache; the whole module is sized for
roughly half an hour of desktop CPU time.
"""

import json
import math
import time
from pathlib import Path

import numpy as np
import pytest

from prunelab import autograd, baselines, checkpoint, gating, training
from prunelab.autograd import Tensor
from prunelab.baselines import PrunerSpec, gradual_schedule
from prunelab.gating import GatedParameter, binarize_ste, finalize, sample_bern, sample_round
from prunelab.harness import ExperimentConfig, run_experiment
from prunelab.models import Dims, build_model
from prunelab.rng import CounterRng
from prunelab.smp import anneal_alpha, default_lambda

SEEDS = [1, 2, 3]
STEPS = 3500
DATASET = {"seed": 2024, "n_samples": 640}
DIMS: dict = {}  # package defaults are the calibrated desk-scale model
DROPOUT = 0.2  # dense rate; pruned runs train at half per the config rule

_MODULE_T0 = time.time()
_runs: dict = {}
_run_seconds: dict = {}


def _emit(num, name, ok, detail):
    print(f"\nACCEPTANCE {num:02d} {name}: {'PASS' if ok else 'FAIL'} - {detail}")
    assert ok, f"criterion {num} ({name}) failed: {detail}"


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance")


def _run(workdir, name, **overrides):
    if name in _runs:
        return _runs[name]
    base = dict(dims=dict(DIMS), dataset=dict(DATASET), steps=STEPS, batch_size=16,
                dropout=DROPOUT, seeds=list(SEEDS), out_dir=str(Path(workdir) / name))
    base.update(overrides)
    cfg = ExperimentConfig(**base)
    t0 = time.time()
    report = run_experiment(cfg)
    _run_seconds[name] = time.time() - t0
    _runs[name] = report
    return report


def _mean_acc(report):
    return float(np.mean([r["metrics"]["test"]["token_accuracy"]
                          for r in report["per_seed"]]))


def _sparsities(report):
    return [r["sparsity"] for r in report["per_seed"]]


class TestCriterion01SparsityAttainment:
    @pytest.mark.parametrize("target", [0.8, 0.9, 0.95])
    def test_target(self, workdir, target):
        name = f"smp{int(target * 1000)}"
        report = _run(workdir, name, method="smp", s_target=target, lambda_s="auto")
        sp = _sparsities(report)
        errs = [abs(s - target) for s in sp]
        per_run = _run_seconds[name] / len(SEEDS)
        ok = all(e <= 0.01 for e in errs) and per_run <= 300.0
        _emit(1, f"sparsity-attainment s={target}", ok,
              f"landings={[f'{s:.4f}' for s in sp]} (tol 0.01), {per_run:.0f}s/run (cap 300)")


class TestCriterion02Undershoot:
    def test_lambda_one_undershoots(self, workdir):
        report = _run(workdir, "undershoot", method="smp", s_target=0.9, lambda_s=1.0)
        sp = _sparsities(report)
        ok = all(s < 0.85 for s in sp)
        _emit(2, "undershoot at lambda=1", ok,
              f"sparsities={[f'{s:.4f}' for s in sp]} (must be < 0.85)")


class TestCriterion03InitOrdering:
    def test_positive_init_at_least_as_good(self, workdir):
        high = _run(workdir, "smp800", method="smp", s_target=0.8, lambda_s="auto")
        low = _run(workdir, "m_neg", method="smp", s_target=0.8, lambda_s="auto", m=-5.0)
        acc_hi, acc_lo = _mean_acc(high), _mean_acc(low)
        at_target = all(abs(s - 0.8) <= 0.01 for s in _sparsities(high) + _sparsities(low))
        ok = acc_hi >= acc_lo and at_target
        _emit(3, "gate-init ordering m=5 vs m=-5", ok,
              f"acc(m=5)={acc_hi:.4f} >= acc(m=-5)={acc_lo:.4f}, both at target: {at_target}")


class TestCriterion04DenseMatch:
    def test_sparse_tracks_dense(self, workdir):
        dense = _run(workdir, "dense", method="dense")
        s80 = _run(workdir, "smp800", method="smp", s_target=0.8, lambda_s="auto")
        s95 = _run(workdir, "smp950", method="smp", s_target=0.95, lambda_s="auto")
        d, a80, a95 = _mean_acc(dense), _mean_acc(s80), _mean_acc(s95)
        ok = (a80 >= d - 0.02) and (a95 >= d - 0.05)
        _emit(4, "dense match at moderate sparsity", ok,
              f"dense={d:.4f}, 80%={a80:.4f} (tol -0.02), 95%={a95:.4f} (tol -0.05)")


class TestCriterion05MethodOrdering:
    def test_ordering_at_extreme_sparsity(self, workdir):
        smp975 = _run(workdir, "smp975", method="smp", s_target=0.975, lambda_s="auto")
        gradual = _run(workdir, "gradual975", s_target=0.975,
                       method={"kind": "gradual_uniform"})
        hard = _run(workdir, "hard975", s_target=0.975, method={"kind": "hard_uniform"})
        a_smp, a_grad, a_hard = _mean_acc(smp975), _mean_acc(gradual), _mean_acc(hard)
        ok = (a_smp >= a_grad) and (a_grad >= a_hard - 0.01)
        _emit(5, "method ordering at 97.5%", ok,
              f"smp={a_smp:.4f} >= gradual={a_grad:.4f} >= hard={a_hard:.4f} (hard tie tol 0.01)")


class TestCriterion06SteExactness:
    def test_pass_through_bit_exact_on_random_graphs(self):
        rng = np.random.default_rng(606)
        mask_rng = CounterRng(606)
        checked = 0
        for case in range(1000):
            n = int(rng.integers(3, 40))
            g = Tensor(rng.normal(size=n).astype(np.float32), requires_grad=True)
            s = autograd.sigmoid(g)
            bits = (mask_rng.bernoulli(s.data) if case % 2 == 0
                    else (g.data >= 0).astype(np.float32))
            b = binarize_ste(s, bits)
            w = Tensor(rng.normal(size=n).astype(np.float32))
            kind = case % 3
            if kind == 0:
                loss = autograd.sum_(autograd.mul(b, w))
            elif kind == 1:
                loss = autograd.sum_(autograd.tanh(autograd.add(autograd.mul(b, w), 0.3)))
            else:
                loss = autograd.mean(autograd.mul(autograd.mul(b, w), b))
            loss.backward()
            assert s.grad is not None and b.grad is not None
            if s.grad.tobytes() != b.grad.tobytes():
                _emit(6, "straight-through exactness", False, f"case {case} diverged")
            checked += 1
        _emit(6, "straight-through exactness", checked == 1000,
              f"{checked} randomized graphs, gradient at sigmoid == gradient at sample, bit-exact")


class TestCriterion07ScheduleExactness:
    def test_anneal_and_cubic(self):
        a0, a1, am = anneal_alpha(0, 1000), anneal_alpha(1000, 1000), anneal_alpha(500, 1000)
        g0 = gradual_schedule(100, 100, 900, 0.8)
        g1 = gradual_schedule(900, 100, 900, 0.8)
        gm = gradual_schedule(500, 100, 900, 0.8)
        ok = (a0 == 0.0 and a1 == 1.0 and am == 0.5
              and g0 == 0.0 and g1 == 0.8 and abs(gm - 0.875 * 0.8) <= 1e-6)
        _emit(7, "schedule exactness", ok,
              f"alpha=({a0},{am},{a1}) cubic=({g0},{gm:.6f},{g1}) midpoint tol 1e-6")


class TestCriterion08FinalizeConsistency:
    def test_zero_patterns_match(self):
        rng = np.random.default_rng(808)
        mismatches = 0
        for _ in range(1000):
            shape = tuple(rng.integers(1, 12, size=int(rng.integers(1, 3))))
            gates = rng.normal(size=shape).astype(np.float32)
            weights = rng.uniform(0.25, 2.0, size=shape).astype(np.float32)
            gp = GatedParameter(weight=Tensor(weights, requires_grad=True),
                                gate=Tensor(gates, requires_grad=True))
            mask = sample_round(gp)
            final = finalize(gp)
            if not np.array_equal(final.data != 0, mask.bits != 0):
                mismatches += 1
        _emit(8, "finalize/ML-draw consistency", mismatches == 0,
              f"1000 random gate tensors, zero patterns identical ({mismatches} mismatches)")


class TestCriterion09BernoulliCalibration:
    def test_keep_rates(self):
        draws = 100_000
        results = []
        ok = True
        for i, g in enumerate((-2.0, 0.0, 2.0)):
            gp = GatedParameter(weight=Tensor(np.ones(draws)),
                                gate=Tensor(np.full(draws, g, dtype=np.float32)))
            rate = sample_bern(gp, CounterRng(909 + i)).bits.mean()
            target = 1.0 / (1.0 + math.exp(-g))
            results.append(f"g={g}: {rate:.4f} vs {target:.4f}")
            ok = ok and abs(rate - target) <= 0.01
        _emit(9, "Bernoulli calibration", ok, "; ".join(results) + " (tol 0.01)")


class TestCriterion10BaselineOracles:
    def test_magnitude_masks_match_sort_oracles(self):
        rng = np.random.default_rng(1010)
        params = {"a": rng.normal(size=(20, 25)).astype(np.float32),
                  "b": rng.normal(size=(15, 22)).astype(np.float32),
                  "c": rng.normal(size=170).astype(np.float32)}  # 1000 params total
        exact = True
        for s in (0.3, 0.8):
            blind = baselines.magnitude_prune_blind(params, s)
            order = []
            for name, w in params.items():
                order += [(abs(v), len(order) + j, name, j)
                          for j, v in enumerate(np.asarray(w).ravel())]
            order.sort(key=lambda e: (e[0], e[1]))
            k = int(math.floor(s * 1000))
            dropped = {(n, j) for _, _, n, j in order[:k]}
            for name, w in params.items():
                oracle = np.ones(w.size, dtype=np.float32)
                for j in range(w.size):
                    if (name, j) in dropped:
                        oracle[j] = 0.0
                exact = exact and np.array_equal(blind[name].bits.ravel(), oracle)
            uniform = baselines.magnitude_prune_uniform(params, s)
            for name, w in params.items():
                flat = np.abs(w).ravel()
                kcut = int(math.floor(s * flat.size))
                oracle = np.ones(flat.size, dtype=np.float32)
                oracle[np.argsort(flat, kind="stable")[:kcut]] = 0.0
                exact = exact and np.array_equal(uniform[name].bits.ravel(), oracle)
        _emit(10, "baseline oracles (magnitude)", exact,
              "blind+uniform masks equal brute-force sort oracles on 1000-param model, exact")

    def test_snip_ranking_kendall_tau(self):
        rng = np.random.default_rng(1011)
        w = rng.normal(size=(6, 8)).astype(np.float32)  # 48 params <= 50
        x = rng.normal(size=(12, 6)).astype(np.float32)
        targets = rng.integers(1, 8, size=12)

        class Stub:
            pad_id = 0
            params = {"w": Tensor(w, requires_grad=True)}

            def prunable_names(self, parts=None):
                return ["w"]

            def forward_logits(self, batch, eff):
                return autograd.matmul(Tensor(x), eff["w"]), targets

        stub = Stub()
        cs = {"w": Tensor(np.ones_like(w), requires_grad=True)}
        eff = {"w": autograd.mul(Tensor(w), cs["w"])}
        logits, t = stub.forward_logits(None, eff)
        autograd.cross_entropy(logits, t, 0).backward()
        saliency = np.abs(cs["w"].grad).ravel()

        def loss_at(c):
            z = x @ (w * c.reshape(6, 8))
            z = z - z.max(axis=1, keepdims=True)
            logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
            return -np.mean(logp[np.arange(12), targets])

        h = 1e-4
        fd = np.zeros(48)
        for j in range(48):
            c = np.ones(48)
            c[j] = 1 + h
            hi = loss_at(c)
            c[j] = 1 - h
            fd[j] = abs(hi - loss_at(c)) / (2 * h)
        concordant = 0
        discordant = 0
        for i in range(48):
            for j in range(i + 1, 48):
                a = np.sign(saliency[i] - saliency[j])
                b = np.sign(fd[i] - fd[j])
                if a * b > 0:
                    concordant += 1
                elif a * b < 0:
                    discordant += 1
        tau = (concordant - discordant) / (concordant + discordant)
        _emit(10, "baseline oracles (saliency ranking)", tau == 1.0,
              f"Kendall tau = {tau:.4f} over 48-parameter model (required 1.0)")

    def test_lottery_survivors_bit_equal(self):
        model = build_model("sa_lstm", Dims(hidden=8, embed=8, attn=8,
                                            enc_hidden=8, feat=8), seed=10)
        from prunelab import data as scene_data
        ds = scene_data.generate_dataset(41, 96)
        init = baselines.snapshot_init(model)
        training.train(model, ds, steps=60, rng=CounterRng(10), lr=0.02)
        masks = baselines.lottery_oneshot(model, init,
                                          PrunerSpec(kind="hard_blind", s_target=0.8))
        exact = True
        for name in model.prunable_names():
            bits = masks[name].bits
            exact = exact and (model.params[name].data[bits == 1].tobytes()
                               == init[name][bits == 1].tobytes())
            exact = exact and np.all(model.params[name].data[bits == 0] == 0)
        _emit(10, "baseline oracles (ticket rewind)", exact,
              "survivors bit-equal to the init snapshot, pruned positions zero")


class TestCriterion11SchemeDirection:
    def test_scheme_c_at_least_b(self, workdir):
        spec = {"kind": "gradual_uniform"}
        b = _run(workdir, "schemeB", scheme="B", s_target=0.9, method=dict(spec))
        c = _run(workdir, "schemeC", scheme="C", s_target=0.9, method=dict(spec))
        acc_b, acc_c = _mean_acc(b), _mean_acc(c)
        at_target = all(abs(s - 0.9) <= 0.01 for s in _sparsities(b) + _sparsities(c))
        _emit(11, "scheme C >= scheme B (gradual, 90%)", acc_c >= acc_b and at_target,
              f"C={acc_c:.4f} >= B={acc_b:.4f} over {len(SEEDS)} seeds, "
              f"both at 90% sparsity: {at_target}")


class TestCriterion12Serialization:
    def test_fuzzed_round_trips(self, tmp_path):
        rng = np.random.default_rng(1212)
        failures = 0
        for case in range(1000):
            ndim = int(rng.integers(1, 4))
            shape = tuple(rng.integers(1, 9, size=ndim))
            density = float(rng.uniform(0, 1))
            w = rng.normal(size=shape).astype(np.float32)
            w = np.where(rng.uniform(size=shape) < density, w, 0.0).astype(np.float32)
            storage = ("auto", "coo", "dense")[case % 3]
            path = tmp_path / "fuzz.smpc"
            checkpoint.save_raw(path, {"t": w}, {"case": case}, storage=storage)
            loaded, meta = checkpoint.load_raw(path)
            if not (np.array_equal(loaded["t"], w) and loaded["t"].dtype == np.float32
                    and meta["case"] == case):
                failures += 1
        _emit(12, "serialization round-trip", failures == 0,
              f"1000 fuzzed tensors round-tripped exactly ({failures} failures)")

    def test_sparse_checkpoint_strictly_smaller(self, tmp_path):
        model = build_model("sa_lstm", seed=11)
        params = {n: model.params[n].data for n in model.prunable_names()}
        model.apply_masks(baselines.magnitude_prune_uniform(params, 0.95))
        sparse_path = tmp_path / "sparse.smpc"
        dense_path = tmp_path / "dense.smpc"
        checkpoint.save(model, sparse_path, storage="auto")
        checkpoint.save(model, dense_path, storage="dense")
        s, d = sparse_path.stat().st_size, dense_path.stat().st_size
        _emit(12, "serialization compression", s < d,
              f"95%-sparse save {s} bytes < dense save {d} bytes")

    def test_corrupt_files_rejected_never_crash(self, tmp_path):
        rng = np.random.default_rng(1213)
        w = rng.normal(size=(9, 7)).astype(np.float32)
        w[rng.uniform(size=(9, 7)) < 0.6] = 0.0
        blob = checkpoint.serialize({"t": w}, {"v": 1}, storage="coo")
        path = tmp_path / "c.smpc"
        bad = 0
        trials = 0
        for cut in range(0, len(blob), max(len(blob) // 97, 1)):
            trials += 1
            path.write_bytes(blob[:cut])
            try:
                checkpoint.load_raw(path)
            except checkpoint.FormatError:
                pass
            except Exception:
                bad += 1
        for k in range(300):
            trials += 1
            mutated = bytearray(blob)
            pos = int(rng.integers(0, len(blob)))
            mutated[pos] = int(rng.integers(0, 256))
            path.write_bytes(bytes(mutated))
            try:
                checkpoint.load_raw(path)  # may legally succeed (value bytes)
            except checkpoint.FormatError:
                pass
            except Exception:
                bad += 1
        _emit(12, "serialization rejection", bad == 0,
              f"{trials} corrupt/truncated variants: FormatError or clean load, no crashes")


class TestCriterion13Determinism:
    def test_rerun_reproduces_everything(self, workdir):
        first = _run(workdir, "smp900", method="smp", s_target=0.9, lambda_s="auto")
        cfg = ExperimentConfig(dims=dict(DIMS), dataset=dict(DATASET), steps=STEPS,
                               batch_size=16, dropout=DROPOUT, seeds=list(SEEDS),
                               method="smp", s_target=0.9, lambda_s="auto",
                               out_dir=str(Path(workdir) / "smp900-replay"))
        replay = run_experiment(cfg)
        metrics_equal = first["metrics_mean"] == replay["metrics_mean"]
        bytes_equal = all(
            Path(a["checkpoint"]).read_bytes() == Path(b["checkpoint"]).read_bytes()
            for a, b in zip(first["per_seed"], replay["per_seed"]))
        elapsed = time.time() - _MODULE_T0
        _emit(13, "determinism", metrics_equal and bytes_equal,
              f"replay metrics identical: {metrics_equal}, checkpoint bytes identical: "
              f"{bytes_equal}; acceptance wall time {elapsed:.0f}s on this host "
              f"(target: under 2700s on a 4-core desktop)")
