"""Command-line entry point: simulate, train, separate, evaluate.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

THREADS_ENV = "GRNNBF_THREADS"
_BLAS_ENV = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMBA_NUM_THREADS")

CLASSIC_KINDS = ("mvdr", "gev")
RECURRENT_KINDS = ("rnn-gev", "grnn-bf")
VALID_KIND_NAMES = CLASSIC_KINDS + tuple(f"{k}-{n}" for k in RECURRENT_KINDS for n in ("mask-norm", "layer-norm"))


class UsageError(Exception):
    """Bad flags, config or inputs: exit status 2."""


def _common(parser: argparse.ArgumentParser, suppress: bool) -> None:
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", default=default, help="INI run configuration")
    parser.add_argument("--threads", type=int, default=default,
                        help=f"worker/BLAS thread cap (default ${THREADS_ENV} or 1); 1 is bit-deterministic")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="grnnbf", description="Multichannel speech separation with recurrent beamformers")
    _common(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a scene manifest and mixture WAVs")
    _common(p, suppress=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--scenes", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--duration", type=float, help="scene length in seconds (overrides [array] duration_s)")
    p.add_argument("--no-wav", action="store_true", help="write the manifest only")

    p = sub.add_parser("train", help="train a separation model")
    _common(p, suppress=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--steps", type=int)
    p.add_argument("--kind", help=f"one of: {', '.join(VALID_KIND_NAMES)} (or rnn-gev / grnn-bf with --norm)")
    p.add_argument("--norm", choices=("mask-norm", "layer-norm"))
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--chunk-seconds", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--checkpoint-every", type=int)
    p.add_argument("--train-crf", action="store_true", help="train the cRF estimator for a classic beamformer")
    p.add_argument("--resume", help="continue from this checkpoint")

    p = sub.add_parser("separate", help="separate one multichannel WAV")
    _common(p, suppress=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--doa", type=float, help="target direction of arrival in degrees")
    p.add_argument("--out", required=True)

    p = sub.add_parser("evaluate", help="bucketed Si-SNR/SDR report over a manifest")
    _common(p, suppress=True)
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--ckpt")
    g.add_argument("--classic", help="mvdr or gev with oracle masks")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="report prefix; writes <out>.tsv and <out>.jsonl")
    return parser


def _resolve_threads(value) -> int:
    if value is None:
        env = os.environ.get(THREADS_ENV)
        if env is None:
            return 1
        try:
            value = int(env)
        except ValueError:
            raise UsageError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
    if value < 1:
        raise UsageError("--threads must be >= 1")
    return value


def _parse_kind(name: str, norm: str | None):
    if name in CLASSIC_KINDS:
        return name, norm
    if name in RECURRENT_KINDS:
        return name, norm
    for base in RECURRENT_KINDS:
        for n in ("mask-norm", "layer-norm"):
            if name == f"{base}-{n}":
                return base, n
    raise UsageError(f"invalid beamformer kind {name!r}; valid kinds: {', '.join(VALID_KIND_NAMES)}")


def _echo(cfg) -> None:
    # after flag overrides, so provenance reads default / user / flag
    print(cfg.echo(), file=sys.stderr)


def _err(msg: str) -> None:
    print(f"grnnbf: error: {msg}", file=sys.stderr)


def _load_records(path):
    from .array_sim import read_manifest

    p = Path(path)
    if not p.is_file():
        raise UsageError(f"manifest not found: {p}")
    try:
        return read_manifest(p)
    except ValueError as exc:
        raise UsageError(f"malformed manifest {p}: {exc}") from None


def cmd_simulate(args, cfg, threads: int) -> int:
    from .array_sim import SceneError, generate_manifest, scene_from_record, write_manifest
    from .wav import save_wav

    if args.scenes < 1:
        raise UsageError("--scenes must be >= 1")
    if args.duration is not None:
        cfg.set("array", "duration_s", args.duration)
    _echo(cfg)
    a = cfg["array"]
    try:
        records = generate_manifest(args.scenes, args.seed, duration_s=a["duration_s"],
                                    sample_rate=cfg["stft"]["sample_rate"],
                                    sir_range=(a["sir_min_db"], a["sir_max_db"]),
                                    snr_range=(a["snr_min_db"], a["snr_max_db"]))
    except SceneError as exc:
        raise UsageError(str(exc)) from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if not args.no_wav:
        geom, stft_cfg = cfg.geometry(), cfg.stft_config()
        (out / "wav").mkdir(exist_ok=True)

        def render(rec):
            rel = f"wav/{rec['scene_id']}.wav"
            save_wav(out / rel, scene_from_record(rec, geom, stft_cfg).mixture)
            return rel

        if threads > 1:
            from concurrent.futures import ThreadPoolExecutor

            with ThreadPoolExecutor(max_workers=threads) as pool:
                rels = list(pool.map(render, records))
        else:
            rels = [render(r) for r in records]
        for rec, rel in zip(records, rels):
            rec["wav"] = rel
    write_manifest(out / "manifest.jsonl", records)
    print(f"wrote {len(records)} scenes to {out / 'manifest.jsonl'}")
    return 0


def cmd_train(args, cfg, threads: int) -> int:
    from .train import CLASSIC_NO_TRAIN, TrainConfig, TrainError, train

    t = cfg["training"]
    overrides = {"steps": args.steps, "lr": args.lr, "seed": args.seed, "chunk_seconds": args.chunk_seconds,
                 "batch_size": args.batch_size, "checkpoint_every": args.checkpoint_every}
    for key, value in overrides.items():
        if value is not None:
            cfg.set("training", key, value)
    if args.train_crf:
        cfg.set("training", "train_crf", True)
    kind, norm = cfg["beamformer"]["kind"], cfg["beamformer"]["norm"]
    if args.kind is not None:
        kind, norm_from_kind = _parse_kind(args.kind, None)
        norm = norm_from_kind or norm
    if args.norm is not None:
        norm = args.norm
    cfg.set("beamformer", "kind", kind)
    cfg.set("beamformer", "norm", norm)
    _echo(cfg)
    if kind in CLASSIC_KINDS and t["steps"] > 0 and not t["train_crf"]:
        raise UsageError(CLASSIC_NO_TRAIN)
    records = _load_records(args.manifest)
    from .config import NORM_NAMES

    try:
        tcfg = TrainConfig(chunk_seconds=t["chunk_seconds"], lr=t["lr"], max_grad_norm=t["max_grad_norm"],
                           steps=t["steps"], batch_size=t["batch_size"], seed=t["seed"], kind=kind,
                           norm=NORM_NAMES[norm], train_crf=t["train_crf"],
                           checkpoint_every=t["checkpoint_every"], loading=cfg["beamformer"]["loading"])
        tcfg.check_chunk(cfg.stft_config())
    except TrainError as exc:
        raise UsageError(str(exc)) from None
    if args.resume is not None and not Path(args.resume).is_file():
        raise UsageError(f"checkpoint not found: {args.resume}")
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    print("step loss si_snr", flush=True)

    def log(step, loss):
        print(f"{step} {loss:.6f} {-loss:.4f}", flush=True)

    train(tcfg, records, cfg.geometry(), cfg.stft_config(), cfg.estimator_config(), cfg.recurrent_config(),
          checkpoint_path=args.out, resume_from=args.resume, log=log)
    return 0


def cmd_separate(args, cfg, threads: int) -> int:
    from .nn import CheckpointError
    from .signal import WaveBuffer
    from .train import TrainError, system_from_checkpoint
    from .wav import WavError, load_wav, save_wav

    _echo(cfg)
    if args.doa is None:
        raise UsageError("--doa is required: the directional feature needs the target direction")
    for path in (args.ckpt, args.input):
        if not Path(path).is_file():
            raise UsageError(f"file not found: {path}")
    try:
        system, geom, stft_cfg = system_from_checkpoint(args.ckpt)
    except (CheckpointError, TrainError) as exc:
        raise UsageError(f"cannot load checkpoint: {exc}") from None
    try:
        wave = load_wav(args.input)
    except WavError as exc:
        raise UsageError(str(exc)) from None
    if wave.num_channels != geom.num_mics:
        raise UsageError(f"input has {wave.num_channels} channels, the model expects {geom.num_mics}")
    if wave.sample_rate != stft_cfg.sample_rate:
        raise UsageError(f"input sample rate {wave.sample_rate} != {stft_cfg.sample_rate}")
    out = system.separate(wave, geom, args.doa)
    save_wav(args.out, WaveBuffer(out[None, :], wave.sample_rate))
    print(f"wrote {args.out}")
    return 0


def cmd_evaluate(args, cfg, threads: int) -> int:
    from .evaluate import EvalError, evaluate
    from .nn import CheckpointError
    from .separation import OracleClassicSystem
    from .train import TrainError, system_from_checkpoint

    _echo(cfg)
    records = _load_records(args.manifest)
    if args.classic is not None:
        if args.classic not in CLASSIC_KINDS:
            raise UsageError(f"--classic must be one of {', '.join(CLASSIC_KINDS)}")
        system = OracleClassicSystem(args.classic, cfg["beamformer"]["loading"])
        geom, stft_cfg = cfg.geometry(), cfg.stft_config()
    else:
        if not Path(args.ckpt).is_file():
            raise UsageError(f"checkpoint not found: {args.ckpt}")
        try:
            system, geom, stft_cfg = system_from_checkpoint(args.ckpt)
        except (CheckpointError, TrainError) as exc:
            raise UsageError(f"cannot load checkpoint: {exc}") from None
    try:
        report = evaluate(system, records, geom, stft_cfg, workers=threads, base_dir=Path(args.manifest).parent)
    except EvalError as exc:
        raise UsageError(str(exc)) from None
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    report.write(args.out)
    sys.stdout.write(report.to_tsv())
    return 0


COMMANDS = {"simulate": cmd_simulate, "train": cmd_train, "separate": cmd_separate, "evaluate": cmd_evaluate}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        threads = _resolve_threads(args.threads)
        for var in _BLAS_ENV:
            os.environ[var] = str(threads)
        from .config import ConfigError, load_config

        try:
            cfg = load_config(args.config)
        except ConfigError as exc:
            raise UsageError(str(exc)) from None
        try:
            return COMMANDS[args.command](args, cfg, threads)
        except ConfigError as exc:
            raise UsageError(str(exc)) from None
    except UsageError as exc:
        _err(str(exc))
        return 2
    except KeyboardInterrupt:
        return 130
    except Exception as exc:  # runtime failure: report and exit 1
        _err(f"{type(exc).__name__}: {exc}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
