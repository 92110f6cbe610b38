import sys
import time
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_VERDICTS: list[str] = []


class Verdict:
    """Collects one PASS/FAIL line per acceptance criterion."""

    def __call__(self, number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        _VERDICTS.append(line)
        print(line)
        return ok


@pytest.fixture(scope="session")
def verdict():
    return Verdict()


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_VERDICTS):
            terminalreporter.write_line(line)


class Benchmark64:
    """Registrations of the 64^3 two-channel phantom (seed 0), computed once
    per session and shared by every test that needs them."""

    dims = (64, 64, 64)
    seed = 0

    def __init__(self):
        from gcreg.optimizer import RegistrationConfig, register
        from gcreg.phantom import make_phantom
        self.S, self.T, self.truth = make_phantom("two-channel-blob", self.dims, self.seed)
        self._runs = {}
        # load every compiled kernel before anything is timed
        S, T, _ = make_phantom("two-channel-blob", (8, 8, 8), 0)
        register(T, S, RegistrationConfig(block_size=4, levels=2))
        register(T, S, RegistrationConfig(levels=2), direct=True)

    def run(self, block_size, direct=False):
        """``(field, report, seconds)`` for one single-threaded forward run."""
        from gcreg.optimizer import RegistrationConfig, register
        key = (block_size, direct)
        if key not in self._runs:
            cfg = RegistrationConfig(block_size=block_size)
            start = time.perf_counter()
            u, rep = register(self.T, self.S, cfg, direct=direct)
            self._runs[key] = (u, rep, time.perf_counter() - start)
        return self._runs[key]


@pytest.fixture(scope="session")
def bench64():
    return Benchmark64()
