"""Acceptance criteria, one test each, at their stated tolerances.

Each test prints ``PASS``/``FAIL`` with the measured values; the lines are
collected and repeated in the terminal summary.
"""
import itertools
import os
import time
from fractions import Fraction

import numpy as np
import pytest

from binsignal import autodiff as ad
from binsignal.formats import (checkpoint_bytes, parse_checkpoint_bytes, parse_signal_bytes, read_pgm,
                               signal_file_bytes)
from binsignal.ingest import load_binary
from binsignal.layers import (BasicBlock, Bottleneck, ClassificationHead, Conv1d, ConvLayerSpec, GroupNorm,
                              Linear, PreActBlock, SqueezeExcite)
from binsignal.metrics import ConfusionMatrix, macro_scores, partial_auc, pr_curve
from binsignal.model_builder import ModelConfig, build_model, parse_model_name, summarize
from binsignal.noisebench import corpus_noise_table, file_noise, total_noise
from binsignal.sigproc import ResampleSpec, Signal, byteplot, resample_1d
from binsignal.synthetic import structured_corpus, texture_dataset
from binsignal.training import Recipe, class_weights, train_arrays
from conftest import ACCEPTANCE, DATA
from oracles import macro_bruteforce, partial_auc_exact, pr_points_exact, resample as resample_oracle


def report(n, name, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} {n} {name}: {detail}"
    print(line)
    ACCEPTANCE.append(line)
    assert ok, line


def within(value, ref, rel):
    return abs(value / ref - 1) <= rel


def test_01_parameter_counts():
    rows = [("resnet1d18", 11.2), ("resnet1d34", 21.3), ("resnet1d50", 23.6), ("resnet1d101", 42.6),
            ("resnet1d152", 58.2), ("resnet1dv2-152d-se", 106.8)]
    got, ok = [], True
    for name, ref in rows:
        m = summarize(parse_model_name(name, class_count=47)).params_m
        ok &= within(m, ref, 0.02)
        got.append(f"{name}={m:.2f}M")
    for bt, ref in (("V1", 14.0), ("V1_5", 14.4), ("V2", 14.4), ("V2_SE", 21.0)):
        cfg = ModelConfig(block_type=bt, depths=(2, 2, 2, 2), stem="standard", activation="relu",
                          class_count=47, bottleneck=True)
        m = summarize(cfg).params_m
        ok &= within(m, ref, 0.10)
        got.append(f"{bt}={m:.2f}M")
    report(1, "parameter counts", ok, " ".join(got))


def test_02_conversion_ablation():
    want = {(True, True): (2.3, 11.2), (False, True): (32.6, 11.2),
            (True, False): (0.8, 3.9), (False, False): (11.1, 3.9)}
    got, ok = [], True
    for (stride2, kernel2), (gmacs, params) in want.items():
        s = summarize(parse_model_name("resnet1d18", class_count=47, square_stride=stride2,
                                       square_kernel=kernel2))
        ok &= within(s.gmacs, gmacs, 0.10) and within(s.params_m, params, 0.02)
        got.append(f"({'T' if stride2 else 'F'},{'T' if kernel2 else 'F'})={s.gmacs:.2f}G/{s.params_m:.2f}M")
    report(2, "MAC counts", ok, " ".join(got))


def test_03_conversion_parity():
    m = build_model(parse_model_name("resnet1d18"), materialize=False)
    convs = [c for _, c in m.conv_layers()]
    params_ok = all(c.spec.param_count == c.source.kernel_h * c.source.kernel_w
                    * c.source.in_channels * c.source.out_channels for c in convs)
    strides_ok = all(c.spec.stride == c.source.stride_h * c.source.stride_w for c in convs)
    # 2D reduction per side: stem conv 2, pool 2, stages 1, 2, 2, 2
    area = (2 * 2 * 1 * 2 * 2 * 2) ** 2
    ok = params_ok and strides_ok and m.total_stride() == area
    report(3, "conversion parity", ok,
           f"{len(convs)} convs, params equal={params_ok}, strides equal={strides_ok}, "
           f"1D stride {m.total_stride()} vs 2D area {area}")


def test_04_resampling_fidelity():
    rng = np.random.default_rng(0)
    x = rng.random(1000)
    ident = float(np.max(np.abs(resample_1d(Signal(x), 1000).samples - x)))
    const = 0.0
    for n_in, n_out in ((100, 37), (37, 100), (500, 500), (7, 3000)):
        y = resample_1d(Signal(np.full(n_in, 0.42)), n_out).samples
        const = max(const, float(np.max(np.abs(y - 0.42))))
    oracle = 0.0
    for _ in range(200):
        n_in, n_out = int(rng.integers(1, 65)), int(rng.integers(1, 65))
        v = rng.random(n_in)
        got = resample_1d(Signal(v), n_out).samples
        oracle = max(oracle, float(np.max(np.abs(got - np.array(resample_oracle(v.tolist(), n_out))))))
    ok = ident < 1e-6 and const < 1e-9 and oracle < 1e-9
    report(4, "resampling fidelity", ok,
           f"identity err {ident:.1e}, constant err {const:.1e}, oracle err {oracle:.1e} (200 cases)")


@pytest.mark.slow
def test_05_noise_paths(tmp_path):
    t0 = time.perf_counter()
    paths = structured_corpus(tmp_path, count=100, seed=0)
    sizes = [os.path.getsize(p) for p in paths]
    table = corpus_noise_table(paths)
    elapsed = time.perf_counter() - t0
    rows = {(r.path, r.source): r for r in table.rows}
    sig, img = rows[("signal", "resize")].mse, rows[("image", "resize")].mse
    # a signal is stored unrounded, so its total noise is its resize noise alone
    per_file_exact = True
    for p in paths[:5]:
        reps = [r for r in file_noise(p) if r.path == "signal"]
        per_file_exact &= total_noise(reps).mse == next(r.mse for r in reps if r.source == "resize")
    stored = signal_file_bytes(Signal(np.array([0.123456789])))[16:] == np.float32(0.123456789).tobytes()
    ok = (table.n_files == 100 and sig < img and per_file_exact and stored and elapsed < 120
          and min(sizes) >= 50_000 and max(sizes) <= 500_000)
    report(5, "noise paths", ok,
           f"signal resize MSE {sig:.1f} < image resize MSE {img:.1f}; signal quantisation in total "
           f"noise 0 (unrounded storage); image quantise MSE {rows[('image', 'quantise')].mse:.2f}; "
           f"{elapsed:.0f}s")


def _weighted(out, seed=1):
    return (out * np.random.default_rng(seed).standard_normal(out.shape)).sum()


def _fd_module(module, shape, seed=0):
    module.initialize(np.random.default_rng(seed), np.float64)
    for p in module.parameters():
        p.data = p.data + 0.1 * np.random.default_rng(seed + 1).standard_normal(p.shape)
    x = ad.Tensor(np.random.default_rng(seed + 2).standard_normal(shape), requires_grad=True)
    return ad.finite_difference_check(lambda: _weighted(module(x)), [x] + module.parameters(), max_coords=40)


def test_06_gradients():
    t0 = time.perf_counter()
    layers = {
        "conv": (Conv1d(ConvLayerSpec(3, 4, 5, 2, bias=True)), (2, 3, 11)),
        "groupnorm": (GroupNorm(6, 3), (2, 6, 5)),
        "linear": (Linear(5, 3), (4, 5)),
        "se": (SqueezeExcite(4, 2), (2, 4, 6)),
        "basic": (BasicBlock(4, 8, 4, 9), (2, 4, 16)),
        "bottleneck": (Bottleneck(4, 2, 8, 4, 9), (2, 4, 16)),
        "preact_se": (PreActBlock(4, 2, 8, 4, 9, se_ratio=2), (2, 4, 16)),
        "head": (ClassificationHead(4, 3), (2, 4, 5)),
    }
    errs = {k: _fd_module(m, s) for k, (m, s) in layers.items()}
    for bt in ("V1", "V2_SE"):
        cfg = ModelConfig(block_type=bt, depths=(1, 1, 1, 1), base_width=8, class_count=3,
                          input_length=256, stage_strides=(1, 2, 1, 1))
        model = build_model(cfg, seed=0, dtype=np.float64)
        x = ad.Tensor(np.random.default_rng(3).standard_normal((2, 1, 256)), requires_grad=True)
        errs[f"resnet1d_{bt}"] = ad.finite_difference_check(
            lambda: _weighted(model(x)), [x] + model.parameters(), max_coords=6)
    worst = max(errs, key=errs.get)
    ok = errs[worst] < 1e-4 and time.perf_counter() - t0 < 300
    report(6, "gradient correctness", ok,
           f"max rel err {errs[worst]:.1e} ({worst}) over {len(errs)} modules, float64")


@pytest.fixture(scope="module")
def texture_run():
    xtr, ytr = texture_dataset(400, 4096, seed=0)
    xva, yva = texture_dataset(100, 4096, seed=1)
    cfg = ModelConfig(block_type="V2_SE", depths=(1, 1, 1, 1), base_width=8, stem="deep",
                      class_count=2, input_length=4096, norm_groups=1)
    t0 = time.perf_counter()
    ck = train_arrays(Recipe.improved(seed=0), xtr, ytr, xva, yva, cfg)
    return ck, time.perf_counter() - t0


@pytest.mark.slow
def test_07_desk_scale_learning(texture_run):
    ck, elapsed = texture_run
    f1 = float(ck.meta["best_val_f1"])
    ok = f1 >= 0.95 and elapsed < 300
    report(7, "desk-scale learning", ok,
           f"val macro-F1 {f1:.3f} at epoch {ck.meta['best_epoch']} of {len(ck.log)}, {elapsed:.0f}s")


def test_08_metrics_oracles():
    rng = np.random.default_rng(0)
    mismatches = 0
    for _ in range(1000):
        c = int(rng.integers(1, 8))
        cm = rng.integers(0, 20, (c, c)) * (rng.random((c, c)) < 0.7)
        mismatches += macro_scores(ConfusionMatrix(cm)) != macro_bruteforce(cm.tolist())
    cases, worst_auc, pt_mismatch = 0, 0.0, 0
    levels = (0.2, 0.5, 0.8)
    for n in range(1, 7):
        for labels in itertools.product((0, 1), repeat=n):
            if not any(labels):
                continue
            score_sets = [tuple(np.linspace(0.9, 0.1, n))] + list(itertools.product(levels, repeat=n))
            for scores in score_sets:
                cases += 1
                curve = pr_curve(scores, labels)
                exact = pr_points_exact(list(scores), list(labels))
                pt_mismatch += curve.points != [(float(r), float(p)) for r, p in exact]
                if curve.recall[-1] >= 0.5:
                    worst_auc = max(worst_auc, abs(partial_auc(curve, 0.5)
                                                   - float(partial_auc_exact(exact, Fraction(1, 2)))))
    ok = mismatches == 0 and pt_mismatch == 0 and worst_auc < 1e-12
    report(8, "metrics oracles", ok,
           f"macro mismatches {mismatches}/1000; PR point mismatches {pt_mismatch}/{cases}; "
           f"max partial-AUC err {worst_auc:.1e}")


def test_09_format_stability():
    rng = np.random.default_rng(0)
    x = rng.standard_normal(1000).astype(np.float32)
    raw = signal_file_bytes(x)
    sig_ok = signal_file_bytes(parse_signal_bytes(raw)) == raw
    tensors = {"a": rng.standard_normal((3, 4, 5)).astype(np.float32), "b": np.float32(rng.random((7,)))}
    ck = checkpoint_bytes("block_type=V2_SE\n", tensors)
    ck_ok = checkpoint_bytes(*parse_checkpoint_bytes(ck)) == ck
    img = byteplot(load_binary(os.path.join(DATA, "fixture_1k.bin")), 256)
    golden_ok = np.array_equal(img, read_pgm(os.path.join(DATA, "fixture_1k_golden.pgm")))
    report(9, "format stability", sig_ok and ck_ok and golden_ok,
           f"signal round-trip {sig_ok}, checkpoint round-trip {ck_ok}, golden byteplot {golden_ok}")


@pytest.mark.slow
def test_10_recipe_anchors(texture_run):
    ck, _ = texture_run
    lines = ck.log_csv().splitlines()
    header = [l for l in lines if l.startswith("#")]
    rows = [l.split(",") for l in lines if not l.startswith("#")][1:]
    r = Recipe.improved()
    peak = float(rows[r.warmup_epochs - 1][2])
    ft = {float(row[2]) for row in rows if row[1] == "finetune"}
    w = class_weights([90, 10], 0.5)
    ok = (peak == 0.001 and ft == {0.0001} and "# weight_decay=0.005" in header
          and "# label_smoothing_alpha=0.1" in header and np.allclose(w, [0.745, 2.236], atol=1e-3))
    report(10, "recipe anchors", ok,
           f"lr at warm-up end {peak}, fine-tune lr {sorted(ft)}, header "
           f"{[h for h in header if 'decay' in h or 'alpha' in h]}, class weights "
           f"[{w[0]:.3f}, {w[1]:.3f}]")
