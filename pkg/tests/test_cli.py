import os
import subprocess
import sys

import numpy as np
import pytest

from binsignal.cli import main
from binsignal.formats import read_pgm, read_signal_file
from binsignal.ingest import load_binary, load_manifest
from binsignal.metrics import macro_scores, metrics_csv, pr_curve, pr_curve_csv
from binsignal.sigproc import ResampleSpec, binary_to_signal, byteplot
from binsignal.synthetic import write_texture_dataset
from binsignal.training import Checkpoint, evaluate, load_signals, predict_proba
from conftest import DATA

FIXTURE = os.path.join(DATA, "fixture_1k.bin")
TINY = ["--model", "resnet1dv2-18-se", "--depths", "1,1,1,1", "--base-width", "8",
        "--input-len", "256", "--stage-strides", "1,2,1,1", "--norm-groups", "1"]


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    d = tmp_path_factory.mktemp("texture")
    return write_texture_dataset(d, n_train=16, n_val=20, length=256)


@pytest.fixture(scope="module")
def fresh_checkpoint(dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("ck") / "fresh.1dck"
    log = out.with_suffix(".csv")
    assert main(["train", "--train", dataset[0], "--val", dataset[1], *TINY, "--epochs", "0",
                 "--finetune-epochs", "0", "--out", str(out), "--log", str(log), "--quiet"]) == 0
    return out


def test_convert_length_field(tmp_path, capsys):
    src = tmp_path / "five.bin"
    src.write_bytes(b"\x01\x02\x03\x04\x05")
    out = tmp_path / "five.1dsg"
    assert run(capsys, "convert", src, "--length", 8, "--out", out)[0] == 0
    raw = out.read_bytes()
    assert int.from_bytes(raw[8:16], "little") == 8 and len(raw) == 16 + 32


def test_convert_nearest_constant(tmp_path, capsys):
    src = tmp_path / "c.bin"
    src.write_bytes(b"\x40" * 1000)
    out = tmp_path / "c.1dsg"
    assert run(capsys, "convert", src, "--length", 64, "--filter", "nearest", "--out", out)[0] == 0
    s = read_signal_file(out).samples
    assert (s == s[0]).all() and s[0] == np.float32(64 / 255)


@pytest.mark.parametrize("filt", ["lanczos", "linear", "cubic", "nearest"])
def test_convert_matches_library(tmp_path, capsys, filt):
    out = tmp_path / "f.1dsg"
    assert run(capsys, "convert", FIXTURE, "--length", 700, "--filter", filt, "--out", out)[0] == 0
    want = binary_to_signal(load_binary(FIXTURE), 700, ResampleSpec(filt)).samples
    assert read_signal_file(out).samples.tobytes() == want.astype(np.float32).tobytes()


def test_convert_hexbytes(tmp_path, capsys):
    out = tmp_path / "h.1dsg"
    path = os.path.join(DATA, "fixture.bytes")
    assert run(capsys, "convert", path, "--format", "hexbytes", "--length", 32, "--out", out)[0] == 0
    want = binary_to_signal(load_binary(path, "hexbytes"), 32).samples
    assert np.array_equal(read_signal_file(out).samples, want.astype(np.float32))


def test_byteplot_golden(tmp_path, capsys):
    out = tmp_path / "g.pgm"
    assert run(capsys, "byteplot", FIXTURE, "--out", out)[0] == 0
    with open(os.path.join(DATA, "fixture_1k_golden.pgm"), "rb") as f:
        assert out.read_bytes() == f.read()


def test_byteplot_constant_and_size(tmp_path, capsys):
    src = tmp_path / "c.bin"
    src.write_bytes(b"\x99" * 3200)
    out = tmp_path / "c.pgm"
    assert run(capsys, "byteplot", src, "--size", 40, "--out", out)[0] == 0
    img = read_pgm(out)
    assert img.shape == (40, 40) and (img == 0x99).all()


def test_exit_codes(tmp_path, capsys):
    code, _, err = run(capsys, "convert", tmp_path / "missing.bin", "--out", tmp_path / "x.1dsg")
    assert code == 1 and "missing.bin" in err
    empty = tmp_path / "empty.bin"
    empty.write_bytes(b"")
    assert run(capsys, "convert", empty, "--out", tmp_path / "x.1dsg")[0] == 1
    code, _, err = run(capsys, "convert", FIXTURE, "--out", tmp_path / "no" / "dir" / "x.1dsg")
    assert code == 2 and "cannot write" in err
    assert run(capsys, "byteplot", FIXTURE, "--out", tmp_path / "no" / "x.pgm")[0] == 2


def test_count_reports_reference_numbers(capsys):
    code, out, _ = run(capsys, "count", "resnet1d18", 65536)
    assert code == 0
    lines = dict(l.split(": ", 1) for l in out.splitlines())
    params = int(lines["parameters"].split()[0])
    macs = int(lines["macs"].split()[0])
    assert abs(params / 11.2e6 - 1) < 0.02 and abs(macs / 2.3e9 - 1) < 0.10
    code2, out2, _ = run(capsys, "count", "--model", "resnet1d18", "--input-len", 65536)
    assert out2 == out


def test_count_unknown_model_lists_presets(capsys):
    code, _, err = run(capsys, "count", "resnet1d19", 65536)
    assert code == 1 and "resnet1d18" in err and "resnet1dv2-152d-se" in err


def test_noise_table(tmp_path, capsys):
    from binsignal.ingest import write_manifest
    for i in range(2):
        (tmp_path / f"b{i}.bin").write_bytes(bytes(range(256)) * (20 + i))
    write_manifest(tmp_path / "m.csv", [("b0.bin", 0), ("b1.bin", 0), ("nope.bin", 0)])
    code, out, err = run(capsys, "noise", tmp_path / "m.csv", "--target-len", 1024, "--image-size", 32)
    assert code == 0 and "nope.bin" in err
    from binsignal.noisebench import NoiseConfig, corpus_noise_table
    lib = corpus_noise_table(load_manifest(tmp_path / "m.csv"), NoiseConfig(1024, 32), 1)
    assert out == lib.to_csv()
    assert out.splitlines()[0] == "path,source,mean_mse,mean_snr_db"


def test_predict_probabilities_sum_to_one(fresh_checkpoint, capsys):
    code, out, _ = run(capsys, "predict", fresh_checkpoint, FIXTURE)
    assert code == 0
    probs = [float(l.split(": ")[1]) for l in out.splitlines() if l.startswith("p[")]
    assert len(probs) == 2 and abs(sum(probs) - 1) < 1e-6
    assert int(out.splitlines()[0].split(": ")[1]) == int(np.argmax(probs))


def test_predict_signal_length_mismatch(fresh_checkpoint, tmp_path, capsys):
    sig = tmp_path / "s.1dsg"
    main(["convert", FIXTURE, "--length", "300", "--out", str(sig)])
    code, _, err = run(capsys, "predict", fresh_checkpoint, sig, "--format", "signal")
    assert code == 1 and "300" in err and "256" in err


def test_eval_matches_library(fresh_checkpoint, dataset, tmp_path, capsys):
    m_out, pr_out = tmp_path / "m.csv", tmp_path / "pr.csv"
    code, out, _ = run(capsys, "eval", fresh_checkpoint, dataset[1], "--metrics-out", m_out, "--pr-out", pr_out)
    assert code == 0
    ck = Checkpoint.load(fresh_checkpoint)
    x, y = load_signals(load_manifest(dataset[1]), 256)
    cm, probs = evaluate(ck.model(), x, y, 2, ck.stats)
    assert m_out.read_text() == metrics_csv(cm)
    assert pr_out.read_text() == pr_curve_csv(pr_curve(probs[:, 1], y))
    f1 = float(out.splitlines()[0].split(": ")[1])
    assert f1 == macro_scores(cm)[0]
    assert 0.2 <= f1 <= 0.6


def test_checkpoint_config_mismatch_is_fatal(fresh_checkpoint, tmp_path, capsys):
    ck = Checkpoint.load(fresh_checkpoint)
    key = next(iter(ck.tensors))
    ck.tensors[key] = np.zeros((3, 3, 3), np.float32)
    bad = tmp_path / "bad.1dck"
    ck.save(bad)
    code, _, err = run(capsys, "predict", bad, FIXTURE)
    assert code == 1 and "(3, 3, 3)" in err


def test_train_outputs_are_reproducible(dataset, tmp_path, capsys):
    outs = []
    for k in range(2):
        ck, log = tmp_path / f"{k}.1dck", tmp_path / f"{k}.csv"
        code, _, _ = run(capsys, "train", "--train", dataset[0], "--val", dataset[1], *TINY,
                         "--epochs", 1, "--finetune-epochs", 1, "--warmup-epochs", 1,
                         "--batch-size", 8, "--seed", 4, "--out", ck, "--log", log, "--quiet")
        assert code == 0
        outs.append((ck.read_bytes(), log.read_text()))
    assert outs[0] == outs[1]
    log = outs[0][1].splitlines()
    assert "# seed=4" in log and log[-1].split(",")[1] == "finetune"


def test_entry_point_subprocess(tmp_path):
    out = tmp_path / "x.1dsg"
    r = subprocess.run([sys.executable, "-m", "binsignal.cli", "convert", FIXTURE, "--length", "16",
                        "--out", str(out)], capture_output=True, text=True)
    assert r.returncode == 0 and out.exists()
    r = subprocess.run([sys.executable, "-m", "binsignal.cli", "convert", str(tmp_path / "nope")],
                       capture_output=True, text=True)
    assert r.returncode == 2  # argparse usage error: --out is required
