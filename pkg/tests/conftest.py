from pathlib import Path

import pytest

DATA = Path(__file__).parent / "data"


@pytest.fixture
def fixture_corpus():
    return DATA / "fixture_corpus.jsonl"


class ScriptedRNG:
    """Stand-in generator returning preset draws, to force each k-RR branch."""

    def __init__(self, uniforms, integers):
        self._u = list(uniforms)
        self._i = list(integers)

    def random(self, shape):
        import numpy as np
        n = int(np.prod(shape))
        out, self._u = self._u[:n], self._u[n:]
        return np.array(out, dtype=float).reshape(shape)

    def integers(self, low, high, size):
        import numpy as np
        n = int(np.prod(size))
        out, self._i = self._i[:n], self._i[n:]
        assert all(low <= x < high for x in out)
        return np.array(out, dtype=np.int64).reshape(size)


@pytest.fixture
def scripted_rng():
    return ScriptedRNG


def pytest_terminal_summary(terminalreporter):
    lines = []
    for key in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(key, []):
            if getattr(rep, "when", None) != "call":
                continue
            lines += [v for k, v in getattr(rep, "user_properties", ()) if k == "acceptance"]
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1][1:])):
            terminalreporter.write_line(line)
