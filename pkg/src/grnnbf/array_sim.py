"""Anechoic far-field scene simulation for a linear microphone array.

Sources are rendered by multiplying their STFT with a plane-wave steering
vector and resynthesizing, then mixed at a prescribed SIR and SNR measured
on the reference microphone (index 0).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal as sps

from .signal import SignalError, StftConfig, WaveBuffer, istft, stft

__all__ = [
    "ANGLE_BUCKETS",
    "SPEAKER_COUNTS",
    "DEFAULT_POSITIONS",
    "ArrayGeometry",
    "SteeringVector",
    "SceneSpec",
    "Scene",
    "SceneError",
    "steering_vector",
    "render_source",
    "pseudo_speech",
    "mix_scene",
    "angle_bucket",
    "generate_manifest",
    "write_manifest",
    "read_manifest",
    "scene_from_record",
]

REF_CHANNEL = 0
DEFAULT_POSITIONS = (0.0, 0.04, 0.10, 0.18)

# label -> (low, high] angle gap in degrees
ANGLE_BUCKETS = {
    "0-15": (0.0, 15.0),
    "15-45": (15.0, 45.0),
    "45-90": (45.0, 90.0),
    "90-180": (90.0, 180.0),
}
SPEAKER_COUNTS = (1, 2, 3)


class SceneError(ValueError):
    pass


@dataclass(frozen=True)
class ArrayGeometry:
    positions: tuple
    speed_of_sound: float = 343.0

    def __post_init__(self):
        pos = tuple(float(p) for p in self.positions)
        if len(pos) < 2:
            raise SceneError("an array needs at least two microphones")
        if any(b <= a for a, b in zip(pos, pos[1:])):
            raise SceneError(f"microphone positions must be strictly increasing: {pos}")
        if self.speed_of_sound <= 0:
            raise SceneError("speed_of_sound must be positive")
        object.__setattr__(self, "positions", pos)

    @property
    def num_mics(self) -> int:
        return len(self.positions)

    def delays(self, azimuth: float) -> np.ndarray:
        """Plane-wave delays in seconds relative to microphone 0."""
        x = np.asarray(self.positions)
        c = np.cos(np.deg2rad(azimuth % 360.0))
        if abs(c) < 1e-12:  # broadside: exact zero so v == 1
            c = 0.0
        return (x - x[0]) * c / self.speed_of_sound


@dataclass
class SteeringVector:
    values: np.ndarray  # (F, M) complex, unit modulus
    azimuth: float = 0.0

    @property
    def phase(self) -> np.ndarray:
        return np.angle(self.values)


def steering_vector(geom: ArrayGeometry, azimuth: float, cfg: StftConfig = StftConfig()) -> SteeringVector:
    """v_m(f) = exp(-j 2 pi f tau_m) for every one-sided bin frequency."""
    freqs = cfg.bin_frequencies()
    tau = geom.delays(azimuth)
    return SteeringVector(np.exp(-2j * np.pi * np.outer(freqs, tau)), float(azimuth))


def render_source(signal: WaveBuffer, geom: ArrayGeometry, azimuth: float, cfg: StftConfig = StftConfig()) -> WaveBuffer:
    """Render a mono source at ``azimuth`` onto every microphone.

    The fractional delays are applied as a per-bin phase shift in the STFT
    domain, so the result is exactly ``S(t, f) * v(f)`` up to STFT
    consistency.
    """
    if signal.num_channels != 1:
        raise SceneError("render_source expects a mono signal")
    if signal.length < cfg.window_length:
        raise SignalError(f"signal of {signal.length} samples is shorter than one window")
    spec = stft(signal, cfg)
    v = steering_vector(geom, azimuth, cfg).values
    data = spec.data[:, :, 0:1] * v[None, :, :]
    out = istft(data, cfg, length=signal.length)
    return WaveBuffer(out.samples, signal.sample_rate)


def pseudo_speech(num_samples: int, rng: np.random.Generator, sample_rate: int = 16000, rms: float = 0.1) -> np.ndarray:
    """Deterministic speech-like signal: syllables of formant-shaped harmonic
    tones with slow pitch drift, fricative noise bursts and short pauses."""
    out = np.zeros(num_samples)
    pos = 0
    f0_base = rng.uniform(90.0, 240.0)
    nyq = sample_rate / 2
    while pos < num_samples:
        n = int(rng.uniform(0.12, 0.35) * sample_rate)
        n = min(n, num_samples - pos)
        kind = rng.choice(3, p=[0.7, 0.18, 0.12])
        t = np.arange(n) / sample_rate
        env = np.sin(np.pi * (np.arange(n) + 0.5) / n) ** rng.uniform(0.6, 1.5)
        if kind == 0:
            f0 = f0_base * rng.uniform(0.85, 1.2)
            drift = 1 + rng.uniform(-0.1, 0.1) * t / max(t[-1], 1e-3)
            vib = 1 + 0.02 * np.sin(2 * np.pi * rng.uniform(4, 7) * t + rng.uniform(0, 2 * np.pi))
            inst = f0 * drift * vib
            phase = 2 * np.pi * np.cumsum(inst) / sample_rate
            formants = np.array([
                rng.uniform(300, 900), rng.uniform(900, 2400), rng.uniform(2300, 3600)
            ])
            widths = np.array([90.0, 140.0, 220.0])
            gains = np.array([1.0, rng.uniform(0.3, 0.8), rng.uniform(0.1, 0.4)])
            seg = np.zeros(n)
            for k in range(1, int(min(4500.0, 0.9 * nyq) // f0) + 1):
                fk = k * f0
                amp = np.sum(gains * np.exp(-0.5 * ((fk - formants) / widths) ** 2)) + 0.02
                seg += amp * np.sin(k * phase + rng.uniform(0, 2 * np.pi))
        elif kind == 1:
            lo = rng.uniform(1800, 3500)
            hi = min(lo + rng.uniform(1500, 3500), 0.95 * nyq)
            sos = sps.butter(4, [lo, hi], btype="bandpass", fs=sample_rate, output="sos")
            seg = 0.5 * sps.sosfilt(sos, rng.standard_normal(n))
        else:
            seg = np.zeros(n)
        out[pos : pos + n] = seg * env
        pos += n
    level = np.sqrt(np.mean(out**2))
    if level > 0:
        out *= rms / level
    return out


@dataclass
class SceneSpec:
    target_azimuth: float
    interferer_azimuths: list = field(default_factory=list)
    sir_db: float = 0.0
    snr_db: float = 25.0
    num_speakers: int = 1
    seed: int = 0

    def __post_init__(self):
        self.interferer_azimuths = [float(a) for a in self.interferer_azimuths]
        if self.num_speakers != 1 + len(self.interferer_azimuths):
            raise SceneError("num_speakers must equal 1 + number of interferers")
        if not 1 <= self.num_speakers <= 3:
            raise SceneError(f"num_speakers must be 1..3, got {self.num_speakers}")
        for az in self.interferer_azimuths:
            gap = _angle_gap(self.target_azimuth, az)
            if not 0.0 < gap <= 180.0:
                raise SceneError(f"interferer at {az} deg coincides with the target")

    @property
    def angle_gap(self) -> float | None:
        if not self.interferer_azimuths:
            return None
        return min(_angle_gap(self.target_azimuth, a) for a in self.interferer_azimuths)


def _angle_gap(a: float, b: float) -> float:
    d = abs(a - b) % 360.0
    return 360.0 - d if d > 180.0 else d


@dataclass
class Scene:
    mixture: WaveBuffer
    target_clean: WaveBuffer
    noise_plus_interference: WaveBuffer
    spec: SceneSpec
    interference: WaveBuffer | None = None
    noise: WaveBuffer | None = None

    @property
    def reference(self) -> np.ndarray:
        """Clean target at the reference microphone."""
        return self.target_clean.samples[REF_CHANNEL]


def _energy(x: np.ndarray) -> float:
    return float(np.sum(x**2))


def mix_scene(spec: SceneSpec, target: WaveBuffer, interferers, noise: WaveBuffer,
              geom: ArrayGeometry, cfg: StftConfig = StftConfig()) -> Scene:
    """Render and mix a scene.

    ``noise`` is spatially white sensor noise with one channel per
    microphone.  Interferers are summed and scaled to ``spec.sir_db`` against
    the target on microphone 0; noise is scaled to ``spec.snr_db`` against
    the target on the same microphone.
    """
    interferers = list(interferers)
    if len(interferers) != len(spec.interferer_azimuths):
        raise SceneError("one interferer signal per interferer azimuth is required")
    rate = target.sample_rate
    for src in [target, *interferers]:
        if src.num_channels != 1:
            raise SceneError("sources must be mono")
        if src.sample_rate != rate or src.length != target.length:
            raise SceneError("sources must share sample rate and length")
    if noise.sample_rate != rate:
        raise SceneError("noise must share the sources' sample rate")
    if noise.num_channels != geom.num_mics or noise.length != target.length:
        raise SceneError("noise must have one channel per microphone and match the target length")

    s = render_source(target, geom, spec.target_azimuth, cfg).samples
    e_s = _energy(s[REF_CHANNEL])
    if e_s <= 0:
        raise SceneError("target has zero energy on the reference channel")

    interference = np.zeros_like(s)
    for src, az in zip(interferers, spec.interferer_azimuths):
        interference += render_source(src, geom, az, cfg).samples
    if interferers:
        e_i = _energy(interference[REF_CHANNEL])
        if e_i <= 0:
            raise SceneError("interferers have zero energy on the reference channel")
        interference *= np.sqrt(e_s / (e_i * 10 ** (spec.sir_db / 10)))

    n = np.array(noise.samples, dtype=np.float64)
    e_n = _energy(n[REF_CHANNEL])
    if e_n > 0:
        n *= np.sqrt(e_s / (e_n * 10 ** (spec.snr_db / 10)))

    npi = interference + n
    mixture = s + npi
    return Scene(
        mixture=WaveBuffer(mixture, rate),
        target_clean=WaveBuffer(s, rate),
        noise_plus_interference=WaveBuffer(npi, rate),
        spec=spec,
        interference=WaveBuffer(interference, rate),
        noise=WaveBuffer(n, rate),
    )


def angle_bucket(gap: float) -> str:
    for label, (lo, hi) in ANGLE_BUCKETS.items():
        if lo < gap <= hi:
            return label
    raise SceneError(f"angle gap {gap} outside (0, 180]")


def _sample_azimuths(rng: np.random.Generator, bucket: str, count: int) -> tuple[float, list]:
    lo, hi = ANGLE_BUCKETS[bucket]
    while True:
        target = float(rng.uniform(0.0, 180.0))
        if count == 0:
            return round(target, 3), []
        others = []
        for _ in range(count):
            gap = float(rng.uniform(lo, hi))
            sides = [target + gap, target - gap]
            sides = [a for a in sides if 0.0 <= a <= 180.0]
            if not sides or gap <= 0.0:
                break
            others.append(sides[int(rng.integers(len(sides)))])
        if len(others) == count:
            # round for a stable manifest, then recheck the bucket
            target = round(target, 3)
            others = [round(a, 3) for a in others]
            if all(lo < _angle_gap(target, a) <= hi for a in others):
                return target, others


def generate_manifest(n_scenes: int, rng_seed: int, buckets=None, duration_s: float = 4.0,
                      sample_rate: int = 16000, sir_range=(-6.0, 6.0), snr_range=(18.0, 30.0)) -> list:
    """Stratified scene records, deterministic in ``rng_seed``.

    ``buckets`` is a list of (angle_label, speaker_count) cells; scenes are
    assigned round-robin so every cell gets ``n // cells`` or one more.
    """
    if buckets is None:
        buckets = [(a, k) for a in ANGLE_BUCKETS for k in SPEAKER_COUNTS]
    buckets = [(str(a), int(k)) for a, k in buckets]
    for a, k in buckets:
        if a not in ANGLE_BUCKETS or k not in SPEAKER_COUNTS:
            raise SceneError(f"unknown bucket ({a}, {k})")
    if n_scenes < len(buckets):
        raise SceneError(f"need at least {len(buckets)} scenes to cover every bucket, got {n_scenes}")
    master = np.random.default_rng(rng_seed)
    records = []
    for i in range(n_scenes):
        label, count = buckets[i % len(buckets)]
        seed = int(master.integers(0, 2**31 - 1))
        rng = np.random.default_rng(seed)
        target, others = _sample_azimuths(rng, label, count - 1)
        records.append({
            "scene_id": f"scene{i:05d}",
            "seed": seed,
            "azimuths": [target, *others],
            "sir_db": round(float(rng.uniform(*sir_range)), 4),
            "snr_db": round(float(rng.uniform(*snr_range)), 4),
            "angle_bucket": label,
            "speaker_count": count,
            "duration_s": float(duration_s),
            "sample_rate": int(sample_rate),
            "wav": None,
        })
    return records


def write_manifest(path, records) -> None:
    with open(path, "w", encoding="utf-8") as fp:
        for rec in records:
            fp.write(json.dumps(rec, sort_keys=True) + "\n")


def read_manifest(path) -> list:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"manifest not found: {path}")
    with open(path, encoding="utf-8") as fp:
        return [json.loads(line) for line in fp if line.strip()]


def scene_from_record(record: dict, geom: ArrayGeometry, cfg: StftConfig = StftConfig()) -> Scene:
    """Regenerate the audio for one manifest record."""
    rate = int(record.get("sample_rate", cfg.sample_rate))
    n = int(round(float(record["duration_s"]) * rate))
    rng = np.random.default_rng(int(record["seed"]) + 7919)
    azimuths = list(record["azimuths"])
    spec = SceneSpec(
        target_azimuth=azimuths[0],
        interferer_azimuths=azimuths[1:],
        sir_db=float(record["sir_db"]),
        snr_db=float(record["snr_db"]),
        num_speakers=len(azimuths),
        seed=int(record["seed"]),
    )
    target = WaveBuffer(pseudo_speech(n, rng, rate), rate)
    interferers = [WaveBuffer(pseudo_speech(n, rng, rate), rate) for _ in azimuths[1:]]
    noise = WaveBuffer(rng.standard_normal((geom.num_mics, n)), rate)
    return mix_scene(spec, target, interferers, noise, geom, cfg)
