import json

import numpy as np
import pytest

from braymoore import tap

_ACCEPTANCE = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = {}


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for k in sorted(lines):
            terminalreporter.write_line(lines[k])


@pytest.fixture
def acceptance(request, capsys):
    """``acceptance(k, ok, detail)`` prints one PASS/FAIL line for criterion ``k``."""
    store = request.config.stash[_ACCEPTANCE]

    def record(k: int, ok: bool, detail: str) -> bool:
        line = f"{'PASS' if ok else 'FAIL'} criterion {k:2d}: {detail}"
        store[k] = line
        with capsys.disabled():
            print(f"\n{line}")
        return ok

    return record


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def uniform_point():
    return tap.make_tap_point(np.full(16, 0.5), 0.5)


@pytest.fixture
def write_json(tmp_path):
    def _write(name, obj):
        path = tmp_path / name
        path.write_text(json.dumps(obj))
        return str(path)

    return _write

