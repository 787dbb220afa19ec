import json
import math
import os
import shutil
import subprocess
import wave

import numpy as np
import pytest

import dtts

CLI = os.environ.get("DTTS_CLI") or shutil.which("dtts")
CLI = os.path.abspath(CLI) if CLI else None


def run_cli(*args, cwd=None):
    if CLI is None:
        pytest.skip("dtts executable not available")
    return subprocess.run([CLI, *map(str, args)], cwd=cwd, capture_output=True, text=True)


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    manifest = dtts.make_synthetic_corpus(root / "data", utterances=8, speakers=2)
    assert dtts.prepare_data([manifest], root / "cache") == 8
    return root, manifest


def test_constants():
    assert dtts.MEL_CHANNELS == 80
    assert dtts.SAMPLES_PER_FRAME == 600
    assert dtts.HOP == 200
    assert dtts.ANALYSIS_RATE == 16000
    assert dtts.OUTPUT_RATE == 48000


@pytest.mark.parametrize("n", [1, 199, 200, 12345])
def test_mel_frames(n):
    x = np.sin(np.arange(n) * 0.05).tolist()
    mel = dtts.compute_mel(x)
    assert mel.shape == (n // 200 + 1, 80)
    assert dtts.mel_frame_count(n) == n // 200 + 1


def test_resample_and_vocode_lengths():
    assert len(dtts.resample_48k_to_16k([0.0] * 4800)) == 1600
    mel = np.full((7, 80), -6.0)
    assert len(dtts.baseline_vocode(mel, iterations=4)) == 7 * 600


def test_ssim_identity():
    x = np.random.default_rng(0).normal(size=(12, 80))
    assert math.isclose(dtts.ssim(x, x), 1.0, abs_tol=1e-6)


def test_batches_cover_items():
    items = [(f"u{i}", 100 + 37 * i) for i in range(50)]
    plan = dtts.build_batches(items, 2000, 3)
    flat = sorted(i for batch in plan for i in batch)
    assert flat == list(range(50))
    assert all(sum(items[i][1] for i in batch) <= 2000 for batch in plan)
    with pytest.raises(dtts.DataError):
        dtts.build_batches([("big", 7000)], 6000, 0)


def test_model_introspection():
    model = dtts.AcousticModel("toy", vocab_size=6, seed=1)
    arch = model.architecture()
    assert arch["encoder_blocks"] == 2 and arch["decoder_blocks"] == 2
    assert arch["block_order"][:3] == ["conv_feed_forward", "depthwise_conv", "relative_self_attention"]
    assert sum(model.parameter_breakdown().values()) == model.count_parameters()
    assert model.reference_encoder_calls == 0
    with pytest.raises(dtts.UsageError):
        model.synthesize([])


def test_train_and_synthesize(corpus, tmp_path):
    root, manifest = corpus
    result = dtts.train(
        {"preset": "toy", "pretrain_manifest": str(manifest), "cache_dir": str(root / "cache"),
         "out_dir": str(tmp_path / "run")},
        ["max_steps=3"],
    )
    assert result["steps"] == 3
    assert set(result["final_eval"]) >= {"total", "mel_l1"}
    lines = (tmp_path / "run" / "metrics.jsonl").read_text().splitlines()
    assert len(lines) == 3

    model = dtts.AcousticModel.load(result["checkpoint"])
    assert model.count_parameters() > 0

    tokens = (root / "data" / "manifest.txt").read_text().splitlines()[0].split("|")[1].split()
    (tmp_path / "line.txt").write_text(" ".join(tokens) + "\n")
    out = dtts.synthesize(result["checkpoint"], tmp_path / "line.txt", 1, 0, tmp_path / "out", "baseline")
    assert out["mel"].shape[1] == 80
    with wave.open(str(out["wav_path"])) as w:
        assert w.getframerate() == 48000
        assert w.getnframes() == 600 * out["mel"].shape[0]


def test_cli_pipeline(tmp_path):
    assert run_cli("make-synthetic", "--out", "corp", cwd=tmp_path).returncode == 0
    prep = run_cli("prepare-data", "--manifest", "corp/manifest.txt", "--cache-dir", "cache", cwd=tmp_path)
    assert prep.returncode == 0, prep.stderr
    train = run_cli("train", "--cache-dir", "cache", "--out-dir", "run",
                    "--override", "pretrain_manifest=corp/manifest.txt", "--override", "max_steps=2",
                    "--override", "model.decoder.num_blocks=1", cwd=tmp_path)
    assert train.returncode == 0, train.stderr
    summary = json.loads(train.stdout)
    assert summary["steps"] == 2
    report = run_cli("eval-props", "--checkpoint", "run/model.ckpt", "--manifest", "corp/manifest.txt",
                     "--cache-dir", "cache", cwd=tmp_path)
    assert report.returncode == 0, report.stderr
    props = json.loads(report.stdout)
    assert props["architecture"]["decoder_blocks"] == 1
    assert props["inference_reference_calls"] == 0
    assert props["toeplitz_deviation"] < 1e-5
    assert props["padding_invariance_gap"] < 1e-5


def test_cli_exit_codes(tmp_path):
    assert run_cli().returncode == 2
    assert run_cli("train", "--override", "bogus=1", cwd=tmp_path).returncode == 2
    assert run_cli("prepare-data", "--manifest", "missing.txt", "--cache-dir", "c", cwd=tmp_path).returncode == 3

    run_cli("make-synthetic", "--out", "corp", cwd=tmp_path)
    run_cli("prepare-data", "--manifest", "corp/manifest.txt", "--cache-dir", "cache", cwd=tmp_path)
    blowup = run_cli("train", "--cache-dir", "cache", "--out-dir", "run",
                     "--override", "pretrain_manifest=corp/manifest.txt", "--override", "max_steps=3",
                     "--override", "base_lr=1e200", "--override", "grad_clip=1e300", cwd=tmp_path)
    assert blowup.returncode == 4
    assert "last_good" in blowup.stderr
    assert (tmp_path / "run" / "last_good.ckpt").exists()
