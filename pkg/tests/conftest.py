"""Shared small-scale fixtures.

Everything here is sized for speed: 3 textures, 12 frames each, 24-px
frames, a 2-stage encoder.  The full desk-scale benchmark lives in
test_acceptance.py behind a session-scoped fixture so it runs once.
"""

import numpy as np
import pytest

from telextile.augment import AugmentConfig
from telextile.dataset import synthesize_dataset, synthetic_manifest
from telextile.moco import TrainConfig, train
from telextile.nn import EncoderConfig


TINY_FRAME_SIZE = 24
TINY_CROP = 16


@pytest.fixture(scope="session")
def tiny_manifest():
    return synthetic_manifest(n_samples=3, seed=7, jig=True)


@pytest.fixture(scope="session")
def tiny_frames(tiny_manifest):
    return synthesize_dataset(tiny_manifest, seed=7, frames_per_sample=12,
                              frame_size=TINY_FRAME_SIZE)


@pytest.fixture(scope="session")
def tiny_aug():
    return AugmentConfig(crop_size=TINY_CROP)


@pytest.fixture(scope="session")
def tiny_enc_cfg():
    return EncoderConfig(input_size=TINY_CROP,
                         conv_stages=((4, 3, 2), (8, 3, 2)),
                         embedding_dim=8)


@pytest.fixture(scope="session")
def tiny_train_cfg():
    return TrainConfig(epochs=2, batch_size=8, queue_size=16, seed=0)


@pytest.fixture(scope="session")
def tiny_run(tiny_manifest, tiny_frames, tiny_aug, tiny_enc_cfg, tiny_train_cfg):
    """A complete (checkpoint, history) pair from a seconds-scale run."""
    return train((tiny_manifest, tiny_frames), tiny_aug, tiny_enc_cfg,
                 tiny_train_cfg, train_count=9)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


# ---------------------------------------------------------------------------
# acceptance reporting

_CRITERION_LINES: list[str] = []


@pytest.fixture(scope="session")
def criterion():
    """Record one PASS/FAIL line per acceptance criterion.

    The lines are echoed in the terminal summary, so they survive
    pytest's output capture.
    """
    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}"
        _CRITERION_LINES.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERION_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_CRITERION_LINES):
            terminalreporter.write_line(line)
