"""Run configuration: one INI file with fixed sections, typed defaults and
per-key provenance."""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

__all__ = ["SCHEMA_VERSION", "DEFAULTS", "ConfigError", "RunConfig", "load_config", "BEAMFORMER_KINDS", "NORM_NAMES"]

SCHEMA_VERSION = 1

BEAMFORMER_KINDS = ("mvdr", "gev", "rnn-gev", "grnn-bf")
NORM_NAMES = {"mask-norm": "mask", "layer-norm": "layer"}


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _floats(text: str) -> tuple:
    return tuple(float(x) for x in text.replace(",", " ").split())


# section -> key -> (default, parser)
DEFAULTS = {
    "meta": {"schema_version": (SCHEMA_VERSION, int)},
    "stft": {
        "fft_size": (512, int),
        "window_length": (512, int),
        "hop": (256, int),
        "window": ("hann", str),
        "sample_rate": (16000, int),
    },
    "array": {
        "positions": ((0.0, 0.04, 0.10, 0.18), _floats),
        "speed_of_sound": (343.0, float),
        "duration_s": (4.0, float),
        "sir_min_db": (-6.0, float),
        "sir_max_db": (6.0, float),
        "snr_min_db": (18.0, float),
        "snr_max_db": (30.0, float),
    },
    "features": {"ref_channel": (0, int)},
    "estimator": {
        "blocks": (2, int),
        "layers_per_block": (4, int),
        "channels": (64, int),
        "kernel": (3, int),
        "crf_half_width": (1, int),
        "causal": (False, _bool),
    },
    "beamformer": {
        "kind": ("grnn-bf", str),
        "norm": ("layer-norm", str),
        "hidden": (64, int),
        "num_layers": (2, int),
        "dnn_units": (64, int),
        "loading": (1e-5, float),
    },
    "training": {
        "chunk_seconds": (4.0, float),
        "lr": (1e-4, float),
        "max_grad_norm": (10.0, float),
        "steps": (1000, int),
        "batch_size": (1, int),
        "seed": (0, int),
        "checkpoint_every": (100, int),
        "train_crf": (False, _bool),
    },
    "evaluation": {
        "masks": ("oracle", str),
    },
}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    values: dict
    provenance: dict = field(default_factory=dict)

    def __getitem__(self, section: str) -> dict:
        return self.values[section]

    def get(self, section: str, key: str):
        return self.values[section][key]

    def set(self, section: str, key: str, value, source: str = "flag") -> None:
        if section not in DEFAULTS or key not in DEFAULTS[section]:
            raise ConfigError(f"unknown config key [{section}] {key}")
        self.values[section][key] = value
        self.provenance[(section, key)] = source
        _validate(self)

    def echo(self) -> str:
        lines = []
        for section, keys in DEFAULTS.items():
            lines.append(f"[{section}]")
            for key in keys:
                value = self.values[section][key]
                if isinstance(value, tuple):
                    value = ", ".join(f"{v:g}" for v in value)
                lines.append(f"{key} = {value}  # {self.provenance.get((section, key), 'default')}")
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {s: {k: list(v) if isinstance(v, tuple) else v for k, v in keys.items()}
                for s, keys in self.values.items()}

    # typed views -------------------------------------------------------
    def stft_config(self):
        from .signal import StftConfig

        return StftConfig(**self.values["stft"])

    def geometry(self):
        from .array_sim import ArrayGeometry

        a = self.values["array"]
        return ArrayGeometry(tuple(a["positions"]), a["speed_of_sound"])

    def estimator_config(self):
        from .crf import EstimatorConfig

        return EstimatorConfig(**self.values["estimator"])

    def recurrent_config(self):
        from .beamformer.recurrent import RecurrentConfig

        b = self.values["beamformer"]
        if b["kind"] not in ("rnn-gev", "grnn-bf"):
            return None
        return RecurrentConfig(kind=b["kind"], norm=NORM_NAMES[b["norm"]], hidden=b["hidden"],
                               num_layers=b["num_layers"], dnn_units=b["dnn_units"])


def _validate(cfg: RunConfig) -> None:
    b = cfg.values["beamformer"]
    if b["kind"] not in BEAMFORMER_KINDS:
        raise ConfigError(f"unknown beamformer kind {b['kind']!r}; valid kinds: {', '.join(BEAMFORMER_KINDS)}")
    if b["norm"] not in NORM_NAMES:
        raise ConfigError(f"unknown normalization {b['norm']!r}; valid: {', '.join(NORM_NAMES)}")
    if cfg.values["evaluation"]["masks"] not in ("oracle",):
        raise ConfigError("evaluation masks must be 'oracle'")
    t = cfg.values["training"]
    s = cfg.values["stft"]
    if t["chunk_seconds"] * s["sample_rate"] < 2 * s["window_length"]:
        raise ConfigError("training chunk must hold at least two analysis windows")
    if t["steps"] < 0 or t["batch_size"] < 1 or t["checkpoint_every"] < 1:
        raise ConfigError("steps must be >= 0, batch_size and checkpoint_every >= 1")
    if t["lr"] <= 0 or t["max_grad_norm"] <= 0:
        raise ConfigError("lr and max_grad_norm must be positive")
    if len(cfg.values["array"]["positions"]) < 2:
        raise ConfigError("the array needs at least two microphones")
    if cfg.values["meta"]["schema_version"] != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {cfg.values['meta']['schema_version']} (expected {SCHEMA_VERSION})")


def load_config(path=None, text: str | None = None) -> RunConfig:
    """Parse an INI file (or string); absent keys take their defaults."""
    values = {s: {k: d for k, (d, _) in keys.items()} for s, keys in DEFAULTS.items()}
    provenance = {}
    if path is not None or text is not None:
        parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
        parser.optionxform = str
        try:
            if path is not None:
                p = Path(path)
                if not p.is_file():
                    raise ConfigError(f"config file not found: {p}")
                parser.read_string(p.read_text(encoding="utf-8"), source=str(p))
            else:
                parser.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"malformed config: {exc}") from None
        for section in parser.sections():
            if section not in DEFAULTS:
                raise ConfigError(f"unknown config section [{section}]")
            for key, raw in parser.items(section):
                if key not in DEFAULTS[section]:
                    raise ConfigError(f"unknown config key [{section}] {key}")
                conv = DEFAULTS[section][key][1]
                try:
                    values[section][key] = conv(raw)
                except ValueError as exc:
                    raise ConfigError(f"[{section}] {key}: {exc}") from None
                provenance[(section, key)] = "user"
    cfg = RunConfig(values, provenance)
    _validate(cfg)
    return cfg
