import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from tsrdiff.checks import TINY_MODEL  # noqa: E402
from tsrdiff.config import load_config  # noqa: E402
from tsrdiff.data import generate_corpus, load_corpus  # noqa: E402
from tsrdiff.glyphs import make_alphabet  # noqa: E402

TINY_TRAIN = {**TINY_MODEL, "trainer.total_steps": 8, "trainer.r1": 2, "trainer.r2": 4, "trainer.batch_size": 3,
              "trainer.checkpoint_every": 3, "trainer.ocr_steps": 2, "trainer.tau_steps": 2,
              "trainer.ocr_batch": 4, "trainer.tau_batch": 4, "data.min_len": 1}


def tiny_config(**overrides):
    return load_config(None, {**TINY_TRAIN, **{k.replace("__", "."): v for k, v in overrides.items()}})


@pytest.fixture(scope="session")
def tiny_corpus_dir(tmp_path_factory):
    cfg = tiny_config()
    mc = cfg.model
    root = tmp_path_factory.mktemp("tiny_corpus")
    generate_corpus(root, make_alphabet(mc.K), 40, seed=3, max_len=mc.max_len, min_len=1, height=mc.height,
                    width=mc.width)
    return root


@pytest.fixture(scope="session")
def tiny_corpus(tiny_corpus_dir):
    return load_corpus(tiny_corpus_dir)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
