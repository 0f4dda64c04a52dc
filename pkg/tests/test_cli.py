import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from grnnbf.array_sim import DEFAULT_POSITIONS, ArrayGeometry, read_manifest, scene_from_record
from grnnbf.cli import VALID_KIND_NAMES, main
from grnnbf.metrics import si_snr
from grnnbf.nn import load_checkpoint
from grnnbf.signal import WaveBuffer
from grnnbf.wav import load_wav, save_wav

SMALL_CONFIG = """\
[estimator]
blocks = 1
layers_per_block = 2
channels = 8

[beamformer]
hidden = 8
dnn_units = 8

[training]
chunk_seconds = 0.25
lr = 1e-3
checkpoint_every = 1
"""


def tree_hash(root: Path) -> str:
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "small.ini").write_text(SMALL_CONFIG)
    assert main(["simulate", "--out", str(root / "sim"), "--scenes", "12", "--seed", "7", "--duration", "1.0"]) == 0
    return root


def test_simulate_is_deterministic(workspace, tmp_path):
    again = tmp_path / "again"
    assert main(["simulate", "--out", str(again), "--scenes", "12", "--seed", "7", "--duration", "1.0"]) == 0
    assert tree_hash(again) == tree_hash(workspace / "sim")
    assert len(list((again / "wav").glob("*.wav"))) == 12


def test_simulate_usage_errors(tmp_path, capsys):
    assert main(["simulate", "--out", str(tmp_path / "x"), "--scenes", "0", "--seed", "1"]) == 2
    assert "--scenes" in capsys.readouterr().err
    assert main(["simulate", "--out", str(tmp_path / "x"), "--seed", "1"]) == 2
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["simulate", "--out", str(blocker / "sub"), "--scenes", "12", "--seed", "1", "--duration", "1"]) != 0


def test_manifest_regenerates_scene_zero(workspace):
    # the WAV stores float32, so compare against the float32 rounding
    sim = workspace / "sim"
    recs = read_manifest(sim / "manifest.jsonl")
    rec = recs[0]
    scene = scene_from_record(rec, ArrayGeometry(DEFAULT_POSITIONS))
    wav = load_wav(sim / rec["wav"])
    assert np.array_equal(wav.samples, scene.mixture.samples.astype(np.float32).astype(np.float64))


def _train(workspace, out, *extra):
    return main(["train", "--config", str(workspace / "small.ini"), "--manifest",
                 str(workspace / "sim" / "manifest.jsonl"), "--out", str(out), *extra])


def test_train_one_step_writes_loadable_checkpoint(workspace, capsys):
    out = workspace / "one.ckpt"
    assert _train(workspace, out, "--steps", "1") == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "step loss si_snr" and lines[1].startswith("1 ")
    arrays, config, layout = load_checkpoint(out)
    assert config["step"] == 1 and config["model"]["kind"] == "grnn-bf"


def test_train_classic_rejects_steps(workspace, tmp_path, capsys):
    assert _train(workspace, tmp_path / "c.ckpt", "--kind", "mvdr", "--steps", "3") == 2
    assert "no trainable beamformer parameters unless cRF training enabled" in capsys.readouterr().err
    assert _train(workspace, tmp_path / "c.ckpt", "--kind", "gev", "--steps", "1", "--train-crf") == 0


def test_train_invalid_kind_lists_valid(workspace, tmp_path, capsys):
    assert _train(workspace, tmp_path / "x.ckpt", "--kind", "lcmv", "--steps", "1") == 2
    err = capsys.readouterr().err
    for name in VALID_KIND_NAMES:
        assert name in err
    assert _train(workspace, tmp_path / "x.ckpt", "--kind", "rnn-gev-mask-norm", "--steps", "1") == 0


def test_train_resume_continues_identically(workspace, tmp_path):
    a, b, c = tmp_path / "a.ckpt", tmp_path / "b.ckpt", tmp_path / "c.ckpt"
    assert _train(workspace, a, "--steps", "2") == 0
    assert _train(workspace, b, "--steps", "4", "--resume", str(a)) == 0
    assert _train(workspace, c, "--steps", "4") == 0
    arr_b, cfg_b, _ = load_checkpoint(b)
    arr_c, cfg_c, _ = load_checkpoint(c)
    assert cfg_b["loss_history"] == cfg_c["loss_history"]
    assert b.read_bytes() == c.read_bytes()


def test_separate_determinism_and_errors(workspace, tmp_path):
    ckpt = workspace / "sep.ckpt"
    assert _train(workspace, ckpt, "--steps", "1") == 0
    rec = read_manifest(workspace / "sim" / "manifest.jsonl")[1]
    wav = workspace / "sim" / rec["wav"]
    doa = str(rec["azimuths"][0])
    o1, o2 = tmp_path / "o1.wav", tmp_path / "o2.wav"
    assert main(["separate", "--ckpt", str(ckpt), "--in", str(wav), "--doa", doa, "--out", str(o1)]) == 0
    assert main(["separate", "--ckpt", str(ckpt), "--in", str(wav), "--doa", doa, "--out", str(o2)]) == 0
    assert o1.read_bytes() == o2.read_bytes()
    out = load_wav(o1)
    assert out.num_channels == 1 and out.length == load_wav(wav).length
    two = tmp_path / "two.wav"
    save_wav(two, WaveBuffer(load_wav(wav).samples[:2]))
    assert main(["separate", "--ckpt", str(ckpt), "--in", str(two), "--doa", doa, "--out", str(o1)]) == 2
    assert main(["separate", "--ckpt", str(ckpt), "--in", str(wav), "--out", str(o1)]) == 2
    assert main(["separate", "--ckpt", str(tmp_path / "none"), "--in", str(wav), "--doa", "0",
                 "--out", str(o1)]) == 2


@pytest.mark.slow
def test_separate_single_speaker_improves(trained_models, trend_data, geom, cfg, tmp_path):
    ckpt, _ = trained_models("grnn-bf", "layer")
    held = trend_data[1]
    # a 1-speaker scene: no interferers, only the diffuse background noise
    rec = min((r for r in held if r["speaker_count"] == 1), key=lambda r: r["snr_db"])
    scene = scene_from_record(rec, geom, cfg)
    src = tmp_path / "one.wav"
    save_wav(src, scene.mixture)
    out = tmp_path / "out.wav"
    assert main(["separate", "--ckpt", str(ckpt), "--in", str(src), "--doa", str(rec["azimuths"][0]),
                 "--out", str(out)]) == 0
    ref = scene.reference
    got = si_snr(load_wav(out).samples[0], ref)
    base = si_snr(load_wav(src).samples[0], ref)
    print(f"1-speaker separation: output {got:.2f} dB, mixture {base:.2f} dB")
    assert got > base


def test_evaluate_classic_oracle(workspace, tmp_path, capsys):
    out = tmp_path / "rep"
    args = ["evaluate", "--classic", "mvdr", "--manifest", str(workspace / "sim" / "manifest.jsonl"),
            "--out", str(out)]
    assert main(args) == 0
    rows = [json.loads(line) for line in (tmp_path / "rep.jsonl").read_text().splitlines()]
    buckets = {(r["system"], r["bucket"]): r for r in rows if r["type"] == "bucket"}
    for (system, bucket), r in buckets.items():
        if system == "oracle-mvdr":
            assert r["si_snr"] > buckets[("mixture", bucket)]["si_snr"], bucket
    scenes = [r for r in rows if r["type"] == "scene"]
    assert len(scenes) == 12
    avg = buckets[("oracle-mvdr", "Avg")]["si_snr"]
    parts = [buckets[("oracle-mvdr", f"{k}SPK")] for k in (1, 2, 3)]
    assert abs(sum(p["count"] * p["si_snr"] for p in parts) / 12 - avg) < 1e-9
    first = (tmp_path / "rep.tsv").read_bytes()
    assert main(args) == 0
    assert (tmp_path / "rep.tsv").read_bytes() == first


def test_evaluate_errors(workspace, tmp_path):
    assert main(["evaluate", "--classic", "mvdr", "--manifest", str(tmp_path / "nope.jsonl"),
                 "--out", str(tmp_path / "r")]) == 2
    assert main(["evaluate", "--classic", "lcmv", "--manifest", str(workspace / "sim" / "manifest.jsonl"),
                 "--out", str(tmp_path / "r")]) == 2


def test_config_unknown_key_and_echo(tmp_path, capsys, workspace):
    bad = tmp_path / "bad.ini"
    bad.write_text("[training]\nlearning_rate = 0.1\n")
    assert main(["--config", str(bad), "simulate", "--out", str(tmp_path / "s"), "--scenes", "12",
                 "--seed", "1"]) == 2
    assert "unknown config key" in capsys.readouterr().err
    good = tmp_path / "good.ini"
    good.write_text("[array]\nsnr_min_db = 20\n")
    assert main(["--config", str(good), "simulate", "--out", str(tmp_path / "s"), "--scenes", "12",
                 "--seed", "1", "--duration", "0.5", "--no-wav"]) == 0
    err = capsys.readouterr().err
    assert "snr_min_db = 20.0  # user" in err
    assert "duration_s = 0.5  # flag" in err
    assert "hop = 256  # default" in err
    assert all(r["snr_db"] >= 20 for r in read_manifest(tmp_path / "s" / "manifest.jsonl"))


def test_threads_flag_validation(tmp_path, monkeypatch):
    assert main(["--threads", "0", "simulate", "--out", str(tmp_path), "--scenes", "12", "--seed", "1"]) == 2
    monkeypatch.setenv("GRNNBF_THREADS", "many")
    assert main(["simulate", "--out", str(tmp_path), "--scenes", "12", "--seed", "1"]) == 2
