"""WAV read/write (PCM-16 and IEEE float-32, little-endian RIFF)."""

from __future__ import annotations

import os
import struct
import warnings

import numpy as np
from scipy.io import wavfile

from .signal import WaveBuffer

__all__ = ["WavError", "load_wav", "save_wav"]

_PCM = 1
_FLOAT = 3
_EXTENSIBLE = 0xFFFE


class WavError(ValueError):
    pass


def _check_riff(path: str) -> None:
    """Validate the RIFF container sizes before handing off to the decoder."""
    size = os.path.getsize(path)
    if size < 12:
        raise WavError(f"{path}: file too short to be a WAV file ({size} bytes)")
    with open(path, "rb") as fp:
        header = fp.read(12)
        riff, riff_size, wave = struct.unpack("<4sI4s", header)
        if riff != b"RIFF" or wave != b"WAVE":
            raise WavError(f"{path}: not a RIFF/WAVE file")
        if riff_size + 8 > size:
            raise WavError(f"{path}: truncated file ({size} bytes, header declares {riff_size + 8})")
        fmt_tag = bits = None
        while True:
            chunk = fp.read(8)
            if len(chunk) < 8:
                break
            cid, csize = struct.unpack("<4sI", chunk)
            pos = fp.tell()
            if pos + csize > size:
                raise WavError(f"{path}: truncated {cid!r} chunk")
            if cid == b"fmt ":
                body = fp.read(min(csize, 40))
                fmt_tag, _, _, _, _, bits = struct.unpack("<HHIIHH", body[:16])
                if fmt_tag == _EXTENSIBLE and len(body) >= 26:
                    fmt_tag = struct.unpack("<H", body[24:26])[0]
            elif cid == b"data" and fmt_tag is None:
                raise WavError(f"{path}: data chunk before fmt chunk")
            fp.seek(pos + csize + (csize & 1))
    if fmt_tag is None:
        raise WavError(f"{path}: missing fmt chunk")
    if (fmt_tag, bits) not in ((_PCM, 16), (_FLOAT, 32)):
        raise WavError(f"{path}: unsupported codec (format tag {fmt_tag}, {bits} bits)")


def load_wav(path) -> WaveBuffer:
    """Read a PCM-16 or float-32 WAV file into a float64 :class:`WaveBuffer`.

    PCM samples are scaled by 1/32768.
    """
    path = os.fspath(path)
    _check_riff(path)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("error", wavfile.WavFileWarning)
            rate, data = wavfile.read(path)
    except (ValueError, wavfile.WavFileWarning) as exc:
        raise WavError(f"{path}: {exc}") from exc
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise WavError(f"{path}: unsupported sample type {data.dtype}")
    samples = samples.T if samples.ndim == 2 else samples[None, :]
    return WaveBuffer(samples, int(rate))


def save_wav(path, wave: WaveBuffer, subtype: str = "float32") -> None:
    """Write ``wave`` as interleaved float-32 (default) or PCM-16."""
    samples = wave.samples.T
    if subtype == "float32":
        data = samples.astype("<f4")
    elif subtype == "pcm16":
        data = np.clip(np.round(samples * 32768.0), -32768, 32767).astype("<i2")
    else:
        raise WavError(f"unsupported subtype {subtype!r}")
    wavfile.write(os.fspath(path), int(wave.sample_rate), np.ascontiguousarray(data))
