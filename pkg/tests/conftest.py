import os

# single-threaded BLAS before numpy loads, so every run is bit-reproducible
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMBA_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import numpy as np
import pytest

from grnnbf.array_sim import DEFAULT_POSITIONS, ArrayGeometry, generate_manifest
from grnnbf.signal import StftConfig

_ACCEPTANCE = []


def record_criterion(name: str, passed: bool, detail: str = "") -> None:
    line = f"[{'PASS' if passed else 'FAIL'}] {name}" + (f" :: {detail}" if detail else "")
    _ACCEPTANCE.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def geom():
    return ArrayGeometry(DEFAULT_POSITIONS)


@pytest.fixture(scope="session")
def cfg():
    return StftConfig()


# desk-scale trend training, shared by the acceptance suite and the CLI
# separation test; each model is trained once per session
TREND_STEPS = 2000
TREND_SCENES = 200
TREND_CHUNK = 1.0
TREND_LR = 1e-3


@pytest.fixture(scope="session")
def trend_data():
    train = generate_manifest(TREND_SCENES, 1000)
    held = generate_manifest(36, 2000)
    return train, held


@pytest.fixture(scope="session")
def trained_models(tmp_path_factory, trend_data, geom, cfg):
    """Lazily trained checkpoints keyed by (kind, norm)."""
    from grnnbf.train import TrainConfig, train

    root = tmp_path_factory.mktemp("trend")
    cache = {}

    def get(kind: str, norm: str):
        key = (kind, norm)
        if key not in cache:
            path = root / f"{kind}-{norm}.ckpt"
            tcfg = TrainConfig(kind=kind, norm=norm, chunk_seconds=TREND_CHUNK, lr=TREND_LR,
                               steps=TREND_STEPS, seed=0, checkpoint_every=TREND_STEPS)
            state = train(tcfg, trend_data[0], geom, cfg, checkpoint_path=path)
            cache[key] = (path, state.loss_history)
        return cache[key]

    return get
