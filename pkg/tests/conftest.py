import sys

import pytest

from chorus_kit.dataset import SynthConfig, write_corpus


@pytest.fixture(scope="session")
def mini_corpus(tmp_path_factory):
    """Ten short synthetic songs: 8 train, 1 val, 1 test."""
    cfg = SynthConfig(repeats=(2,), verse=(6, 8), chorus=(8, 10), bridge=(6, 6))
    return write_corpus(tmp_path_factory.mktemp("corpus"), n_songs=10, seed=3, cfg=cfg)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "VERDICTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
