import hashlib
import json
import subprocess
import sys

import numpy as np
import pytest

from grnnbf.array_sim import (
    ANGLE_BUCKETS,
    ArrayGeometry,
    SceneError,
    SceneSpec,
    angle_bucket,
    generate_manifest,
    mix_scene,
    pseudo_speech,
    read_manifest,
    render_source,
    scene_from_record,
    steering_vector,
    write_manifest,
)
from grnnbf.signal import StftConfig, WaveBuffer


def db(x):
    return 10 * np.log10(x)


def test_geometry_invariants():
    with pytest.raises(SceneError):
        ArrayGeometry((0.0, 0.0, 0.0))
    with pytest.raises(SceneError):
        ArrayGeometry((0.1, 0.05))
    with pytest.raises(SceneError):
        ArrayGeometry((0.0,))


def test_steering_broadside_dc_and_modulus(geom, cfg):
    assert np.array_equal(steering_vector(geom, 90.0, cfg).values, np.ones((257, 4)))
    for az in (0.0, 33.0, 170.0, 400.0):
        v = steering_vector(geom, az, cfg).values
        assert np.allclose(np.abs(v), 1.0, atol=1e-15)
        assert np.array_equal(v[0], np.ones(4))
    # angles wrap modulo 360
    assert np.allclose(steering_vector(geom, 400.0, cfg).values, steering_vector(geom, 40.0, cfg).values)


def test_steering_phase_hand_value(cfg):
    two = ArrayGeometry((0.0, 0.05))
    v = steering_vector(two, 0.0, cfg).values
    k = 32  # 1 kHz
    assert cfg.bin_frequencies()[k] == 1000.0
    phase = np.angle(v[k, 1] / v[k, 0])
    assert phase == pytest.approx(-2 * np.pi * 1000 * 0.05 / 343, abs=1e-12)
    assert phase == pytest.approx(-0.9158, abs=5e-4)


def test_render_broadside_and_zero(geom, cfg, rng):
    x = WaveBuffer(rng.standard_normal(8000))
    out = render_source(x, geom, 90.0, cfg).samples
    sl = slice(512, -512)
    for m in range(4):
        assert np.max(np.abs(out[m, sl] - x.samples[0, sl])) < 1e-10
    assert not np.any(render_source(WaveBuffer(np.zeros(4000)), geom, 30.0, cfg).samples)


def test_render_delay_cross_correlation(geom, cfg):
    rng = np.random.default_rng(5)
    x = pseudo_speech(16000, rng)
    out = render_source(WaveBuffer(x), geom, 0.0, cfg).samples
    tau = geom.delays(0.0)
    sl = slice(1024, -1024)
    ref = out[0, sl]
    for m in range(1, 4):
        sig = out[m, sl]
        lags = np.arange(-20, 21)
        xc = [np.dot(ref[20:-20], np.roll(sig, -lag)[20:-20]) for lag in lags]
        assert lags[int(np.argmax(xc))] == round(tau[m] * 16000)


def test_render_energy_preserved(geom, cfg):
    x = pseudo_speech(16000, np.random.default_rng(9))
    out = render_source(WaveBuffer(x), geom, 20.0, cfg).samples
    sl = slice(1024, -1024)
    e0 = np.sum(x[sl] ** 2)
    for m in range(4):
        assert abs(np.sum(out[m, sl] ** 2) / e0 - 1) < 0.01


def test_render_rejects_short_and_multichannel(geom):
    with pytest.raises(Exception):
        render_source(WaveBuffer(np.zeros(100)), geom, 0.0)
    with pytest.raises(SceneError):
        render_source(WaveBuffer(np.zeros((2, 2000))), geom, 0.0)


def _sources(n, rng, k):
    return [WaveBuffer(pseudo_speech(n, rng)) for _ in range(k)]


def test_mix_sir_zero_and_additivity(geom, cfg):
    rng = np.random.default_rng(3)
    n = 16000
    tgt, i1, i2 = _sources(n, rng, 3)
    noise = WaveBuffer(rng.standard_normal((4, n)))
    spec = SceneSpec(40.0, [100.0, 150.0], sir_db=0.0, snr_db=25.0, num_speakers=3)
    scene = mix_scene(spec, tgt, [i1, i2], noise, geom, cfg)
    e_s = np.sum(scene.target_clean.samples[0] ** 2)
    e_i = np.sum(scene.interference.samples[0] ** 2)
    assert abs(e_i / e_s - 1) < 1e-9
    resid = scene.mixture.samples - scene.target_clean.samples - scene.noise_plus_interference.samples
    assert np.max(np.abs(resid)) < 1e-12


def test_mix_snr_only_noise(geom, cfg):
    rng = np.random.default_rng(4)
    n = 16000
    (tgt,) = _sources(n, rng, 1)
    spec = SceneSpec(60.0, [], sir_db=0.0, snr_db=30.0, num_speakers=1)
    scene = mix_scene(spec, tgt, [], WaveBuffer(rng.standard_normal((4, n))), geom, cfg)
    s = scene.target_clean.samples[0]
    e = scene.mixture.samples[0] - s
    assert abs(db(np.sum(s**2) / np.sum(e**2)) - 30.0) <= 0.01


@pytest.mark.parametrize("seed", range(6))
def test_measured_sir_snr_match(geom, cfg, seed):
    rec = generate_manifest(12, seed, duration_s=1.0)[seed % 12]
    scene = scene_from_record(rec, geom, cfg)
    s = scene.target_clean.samples[0]
    assert abs(db(np.sum(s**2) / np.sum(scene.noise.samples[0] ** 2)) - rec["snr_db"]) <= 0.01
    if rec["speaker_count"] > 1:
        assert abs(db(np.sum(s**2) / np.sum(scene.interference.samples[0] ** 2)) - rec["sir_db"]) <= 0.01


def test_mix_errors(geom, cfg):
    n = 4000
    rng = np.random.default_rng(0)
    noise = WaveBuffer(rng.standard_normal((4, n)))
    with pytest.raises(SceneError, match="zero energy"):
        mix_scene(SceneSpec(10.0), WaveBuffer(np.zeros(n)), [], noise, geom, cfg)
    with pytest.raises(SceneError):
        mix_scene(SceneSpec(10.0), WaveBuffer(np.ones(n), 8000), [], noise, geom, cfg)
    with pytest.raises(SceneError):
        SceneSpec(10.0, [10.0], num_speakers=2)
    with pytest.raises(SceneError):
        SceneSpec(10.0, [20.0], num_speakers=1)


def test_angle_buckets():
    assert angle_bucket(15.0) == "0-15" and angle_bucket(15.01) == "15-45"
    assert angle_bucket(180.0) == "90-180"
    with pytest.raises(SceneError):
        angle_bucket(0.0)


def test_manifest_determinism_and_stratification(tmp_path):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    write_manifest(a, generate_manifest(120, 42))
    write_manifest(b, generate_manifest(120, 42))
    assert a.read_bytes() == b.read_bytes()
    recs = read_manifest(a)
    counts = {}
    for r in recs:
        key = (r["angle_bucket"], r["speaker_count"])
        counts[key] = counts.get(key, 0) + 1
        az = r["azimuths"]
        assert len(az) == r["speaker_count"]
        for other in az[1:]:
            gap = abs(az[0] - other)
            lo, hi = ANGLE_BUCKETS[r["angle_bucket"]]
            assert lo < min(gap, 360 - gap) <= hi
        assert -6 <= r["sir_db"] <= 6 and 18 <= r["snr_db"] <= 30
    assert len(counts) == 12 and set(counts.values()) == {10}
    assert generate_manifest(120, 43) != recs


def test_manifest_too_few_scenes():
    with pytest.raises(SceneError):
        generate_manifest(11, 0)


def _scene_hash(rec):
    from grnnbf.array_sim import DEFAULT_POSITIONS

    scene = scene_from_record(rec, ArrayGeometry(DEFAULT_POSITIONS), StftConfig())
    return hashlib.sha256(scene.mixture.samples.tobytes() + scene.target_clean.samples.tobytes()).hexdigest()


def test_manifest_regeneration_hash_stable():
    rec = generate_manifest(12, 7, duration_s=1.0)[5]
    h = _scene_hash(rec)
    assert h == _scene_hash(dict(rec))
    code = (
        "import json, sys, hashlib\n"
        "from grnnbf.array_sim import ArrayGeometry, DEFAULT_POSITIONS, scene_from_record\n"
        "from grnnbf.signal import StftConfig\n"
        "s = scene_from_record(json.loads(sys.argv[1]), ArrayGeometry(DEFAULT_POSITIONS), StftConfig())\n"
        "print(hashlib.sha256(s.mixture.samples.tobytes() + s.target_clean.samples.tobytes()).hexdigest())\n"
    )
    out = subprocess.run([sys.executable, "-c", code, json.dumps(rec)], capture_output=True, text=True, check=True)
    assert out.stdout.strip() == h


def test_pseudo_speech_deterministic_and_scaled():
    a = pseudo_speech(8000, np.random.default_rng(1))
    b = pseudo_speech(8000, np.random.default_rng(1))
    assert np.array_equal(a, b)
    assert np.sqrt(np.mean(a**2)) == pytest.approx(0.1)
