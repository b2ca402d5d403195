import numpy as np
import pytest

from lidsnet import toy
from lidsnet.config import Config
from lidsnet.text import load_dataset
from lidsnet.trainer import TrainingLog, train


def small_config(**kw) -> Config:
    """Default architecture, toy-sized training schedule."""
    base = dict(embeddings="random", pairs_per_class=150, phase1_epochs=3, phase2_epochs=15,
                phase2_patience=15, seed=0)
    base.update(kw)
    return Config(**base)


@pytest.fixture(scope="session")
def toy_root(tmp_path_factory):
    return toy.write_toy_corpus(tmp_path_factory.mktemp("toy"), n_train=30, n_valid=10, n_test=10)


@pytest.fixture(scope="session")
def toy_corpus(toy_root):
    return load_dataset(toy_root)


@pytest.fixture(scope="session")
def toy_run(toy_corpus):
    log = TrainingLog()
    return train(toy_corpus, small_config(), log), log


@pytest.fixture(scope="session")
def toy_model(toy_run):
    return toy_run[0]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# ---------------------------------------------------------------------------
# acceptance report: one PASS/FAIL/SKIP line per criterion, printed at the end
# ---------------------------------------------------------------------------

ACCEPTANCE = []


class _Criterion:
    def __init__(self, number, title):
        self.number, self.title, self.detail = number, title, ""

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is None:
            status = "PASS"
        elif issubclass(exc_type, pytest.skip.Exception):
            status, self.detail = "SKIP", str(exc.msg if hasattr(exc, "msg") else exc)
        else:
            status = "FAIL"
            self.detail = self.detail or f"{exc_type.__name__}: {exc}".splitlines()[0]
        line = f"criterion {self.number:>4}  {status}  {self.title}"
        if self.detail:
            line += f"  [{self.detail}]"
        ACCEPTANCE.append(line)
        print(line)
        return False


@pytest.fixture
def criterion():
    return _Criterion


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
