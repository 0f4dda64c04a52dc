"""Chunk-wise end-to-end training with Adam, gradient clipping, periodic
checkpoints and exact resume."""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import asdict, dataclass, field

import numpy as np

from .array_sim import REF_CHANNEL, ArrayGeometry, scene_from_record
from .beamformer.recurrent import RecurrentConfig
from .crf import EstimatorConfig
from .features import FeatureLayout
from .metrics import si_snr_loss
from .nn import Adam, NonFiniteError, clip_grad_norm, load_checkpoint, save_checkpoint
from .nn.optim import GradientError
from .separation import CrfClassicSystem, NeuralSystem, SeparationModel, prepare_inputs
from .signal import StftConfig, WaveBuffer

__all__ = [
    "TrainConfig",
    "TrainError",
    "DivergenceError",
    "TrainState",
    "train",
    "build_model",
    "save_training_checkpoint",
    "load_model",
    "system_from_checkpoint",
    "CLASSIC_NO_TRAIN",
]

CLASSIC_NO_TRAIN = "no trainable beamformer parameters unless cRF training enabled"
_ENERGY_FLOOR = 1e-8


class TrainError(ValueError):
    pass


class DivergenceError(RuntimeError):
    """Non-finite loss or gradient; the last good checkpoint is left in place."""


@dataclass
class TrainConfig:
    chunk_seconds: float = 4.0
    lr: float = 1e-4
    max_grad_norm: float = 10.0
    steps: int = 1000
    batch_size: int = 1
    seed: int = 0
    kind: str = "grnn-bf"
    norm: str = "layer"
    train_crf: bool = False
    checkpoint_every: int = 100
    loading: float = 1e-5

    def __post_init__(self):
        if self.kind not in ("mvdr", "gev", "rnn-gev", "grnn-bf"):
            raise TrainError(f"unknown beamformer kind {self.kind!r}; valid kinds: mvdr, gev, rnn-gev, grnn-bf")
        if self.norm not in ("mask", "layer"):
            raise TrainError(f"unknown normalization {self.norm!r}")
        if self.kind in ("mvdr", "gev") and self.steps > 0 and not self.train_crf:
            raise TrainError(CLASSIC_NO_TRAIN)
        if self.steps < 0 or self.batch_size < 1 or self.checkpoint_every < 1:
            raise TrainError("steps must be >= 0; batch_size and checkpoint_every >= 1")
        if self.lr <= 0 or self.max_grad_norm <= 0:
            raise TrainError("lr and max_grad_norm must be positive")

    @property
    def classic(self) -> bool:
        return self.kind in ("mvdr", "gev")

    def check_chunk(self, stft_cfg: StftConfig) -> int:
        n = int(round(self.chunk_seconds * stft_cfg.sample_rate))
        if n < 2 * stft_cfg.window_length:
            raise TrainError(f"chunk of {n} samples is shorter than two windows ({2 * stft_cfg.window_length})")
        return n


@dataclass
class TrainState:
    model: SeparationModel
    optimizer: Adam
    step: int = 0
    loss_history: list = field(default_factory=list)
    rng: np.random.Generator | None = None


def build_model(cfg: TrainConfig, geom: ArrayGeometry, stft_cfg: StftConfig, est_cfg: EstimatorConfig,
                rec_cfg: RecurrentConfig | None = None) -> SeparationModel:
    """Fresh model; initialization depends only on ``cfg.seed``."""
    rng = np.random.default_rng([cfg.seed, 0])
    if cfg.classic:
        bf = None
    else:
        rec_cfg = rec_cfg or RecurrentConfig()
        bf = RecurrentConfig(**{**rec_cfg.to_dict(), "kind": cfg.kind, "norm": cfg.norm})
    return SeparationModel(geom.num_mics, stft_cfg, est_cfg, bf, rng)


def _model_meta(model: SeparationModel, geom: ArrayGeometry, cfg: TrainConfig) -> dict:
    return {
        "num_mics": model.num_mics,
        "stft": {k: getattr(model.stft_cfg, k) for k in ("fft_size", "window_length", "hop", "window", "sample_rate")},
        "geometry": {"positions": list(geom.positions), "speed_of_sound": geom.speed_of_sound},
        "estimator": model.est_cfg.to_dict(),
        "beamformer": model.bf_cfg.to_dict() if model.bf_cfg is not None else None,
        "kind": cfg.kind,
        "loading": cfg.loading,
    }


def save_training_checkpoint(path, state: TrainState, cfg: TrainConfig, geom: ArrayGeometry) -> None:
    arrays = dict(state.model.state_dict())
    arrays.update(state.optimizer.state())
    config = {
        "model": _model_meta(state.model, geom, cfg),
        "train": asdict(cfg),
        "step": state.step,
        "adam_step": state.optimizer.step_count,
        "loss_history": list(state.loss_history),
        "rng_state": state.rng.bit_generator.state if state.rng is not None else None,
    }
    save_checkpoint(path, arrays, config, state.model.layout.to_dict())


def _model_from_meta(meta: dict, layout: dict | None):
    stft_cfg = StftConfig(**meta["stft"])
    geom = ArrayGeometry(tuple(meta["geometry"]["positions"]), meta["geometry"]["speed_of_sound"])
    est_cfg = EstimatorConfig(**meta["estimator"])
    bf = RecurrentConfig(**meta["beamformer"]) if meta["beamformer"] else None
    model = SeparationModel(meta["num_mics"], stft_cfg, est_cfg, bf, np.random.default_rng(0))
    if layout and FeatureLayout.from_dict(layout) != model.layout:
        raise TrainError("checkpoint feature layout does not match the model")
    return model, geom, stft_cfg


def load_model(path):
    """(model, geometry, stft config, checkpoint config) from a checkpoint file."""
    arrays, config, layout = load_checkpoint(path)
    if "model" not in config:
        raise TrainError(f"{path} is not a training checkpoint")
    model, geom, stft_cfg = _model_from_meta(config["model"], layout)
    model.load_state_dict({k: v for k, v in arrays.items() if not k.startswith("adam.")})
    return model, geom, stft_cfg, config


def system_from_checkpoint(path):
    """Evaluation system for a checkpoint: recurrent models run end to end,
    cRF-only models feed a chunk-level classic beamformer."""
    model, geom, stft_cfg, config = load_model(path)
    meta = config["model"]
    if model.bf_cfg is None:
        return CrfClassicSystem(model, meta["kind"], meta["loading"]), geom, stft_cfg
    return NeuralSystem(model), geom, stft_cfg


class _SceneCache:
    """Bounded cache of (mixture, reference) pairs regenerated from records."""

    def __init__(self, records, geom, stft_cfg, capacity: int = 64):
        self.records = records
        self.geom = geom
        self.stft_cfg = stft_cfg
        self.capacity = capacity
        self._items = OrderedDict()

    def __getitem__(self, i: int):
        if i in self._items:
            self._items.move_to_end(i)
            return self._items[i]
        scene = scene_from_record(self.records[i], self.geom, self.stft_cfg)
        item = (scene.mixture.samples, scene.target_clean.samples[REF_CHANNEL], scene.spec.target_azimuth)
        self._items[i] = item
        if len(self._items) > self.capacity:
            self._items.popitem(last=False)
        return item


def _draw_chunk(rng, cache: _SceneCache, n_records: int, chunk: int):
    for _ in range(100):
        i = int(rng.integers(n_records))
        mix, ref, doa = cache[i]
        length = mix.shape[1]
        if length < chunk:
            off, n = 0, length
        else:
            off, n = int(rng.integers(0, length - chunk + 1)), chunk
        r = ref[off : off + n]
        if np.sum((r - r.mean()) ** 2) > _ENERGY_FLOOR:
            return mix[:, off : off + n], r, doa
    raise TrainError("could not draw a training chunk with non-silent reference")


def train(cfg: TrainConfig, records, geom: ArrayGeometry, stft_cfg: StftConfig = StftConfig(),
          est_cfg: EstimatorConfig = EstimatorConfig(), rec_cfg: RecurrentConfig | None = None,
          checkpoint_path=None, resume_from=None, log=None) -> TrainState:
    """Train to ``cfg.steps`` total optimizer steps.

    Each step draws ``batch_size`` random chunks (scene, offset) from the
    data RNG, averages their negative Si-SNR and takes one clipped Adam step.
    With ``resume_from`` the model, optimizer moments, step counter, loss
    history and data RNG are restored, so the continued run matches an
    uninterrupted one exactly.
    """
    records = list(records)
    if not records:
        raise TrainError("empty manifest")
    chunk = cfg.check_chunk(stft_cfg)
    if cfg.classic and not cfg.train_crf and cfg.steps > 0:
        raise TrainError(CLASSIC_NO_TRAIN)

    model = build_model(cfg, geom, stft_cfg, est_cfg, rec_cfg)
    names = [n for n, _ in model.named_parameters()]
    opt = Adam(model.parameters(), lr=cfg.lr, names=names)
    state = TrainState(model, opt, 0, [], np.random.default_rng([cfg.seed, 1]))
    if resume_from is not None:
        arrays, config, _ = load_checkpoint(resume_from)
        saved = config.get("model", {})
        if saved.get("kind") != cfg.kind or saved.get("estimator") != est_cfg.to_dict():
            raise TrainError("checkpoint was trained with a different model configuration")
        model.load_state_dict({k: v for k, v in arrays.items() if not k.startswith("adam.")})
        opt.load_state(arrays, config["adam_step"])
        state.step = int(config["step"])
        state.loss_history = list(config["loss_history"])
        state.rng.bit_generator.state = config["rng_state"]

    cache = _SceneCache(records, geom, stft_cfg)
    dtype = model.parameters()[0].data.dtype
    while state.step < cfg.steps:
        model.zero_grad()
        total = 0.0
        try:
            for _ in range(cfg.batch_size):
                mix, ref, doa = _draw_chunk(state.rng, cache, len(records), chunk)
                Y, feats = prepare_inputs(WaveBuffer(mix, stft_cfg.sample_rate), geom, doa, stft_cfg)
                out = model(Y.data, feats.data.astype(dtype), mix.shape[1])
                loss = si_snr_loss(out, ref) * (1.0 / cfg.batch_size)
                loss.backward()
                total += loss.item()
            if not math.isfinite(total):
                raise NonFiniteError("non-finite loss")
            clip_grad_norm(model.parameters(), cfg.max_grad_norm, names)
            opt.step()
        except (NonFiniteError, GradientError, FloatingPointError) as exc:
            raise DivergenceError(f"training diverged at step {state.step + 1}: {exc}") from exc
        state.step += 1
        state.loss_history.append(total)
        if log is not None:
            log(state.step, total)
        if checkpoint_path is not None and (state.step % cfg.checkpoint_every == 0 or state.step == cfg.steps):
            save_training_checkpoint(checkpoint_path, state, cfg, geom)
    if checkpoint_path is not None and cfg.steps == 0:
        save_training_checkpoint(checkpoint_path, state, cfg, geom)
    return state
