import time
import warnings

import numpy as np
import pytest
from hypothesis import settings

from cilsynth import experiment as ex

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")


class CaseStudy:
    """Lazily evaluated stages of the corridor case study with default parameters."""

    def __init__(self):
        self.t0 = time.perf_counter()
        self.cfg = ex.load_config(environ={})
        self.clean = ex.dataset(self.cfg, mislabel=False)
        self.bad = ex.dataset(self.cfg, mislabel=True)
        self.mmap = ex.measurement_map(self.cfg, self.clean)
        self._cache = {}

    def _get(self, key, fn):
        if key not in self._cache:
            self._cache[key] = fn()
        return self._cache[key]

    def _train(self, data, constrained):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            return ex.train(self.cfg, data, constrained, self.mmap)

    @property
    def c0(self):
        return self._get("c0", lambda: self._train(self.clean, False))

    @property
    def c1(self):
        return self._get("c1", lambda: self._train(self.bad, False))

    @property
    def c2(self):
        return self._get("c2", lambda: self._train(self.bad, True))

    def rollouts(self, name):
        bank = getattr(self, name).bank
        return self._get("sim_" + name, lambda: ex.simulate_bank(self.cfg, bank))

    @property
    def elapsed(self):
        return time.perf_counter() - self.t0


@pytest.fixture(scope="session")
def casestudy():
    return CaseStudy()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE = {}


@pytest.fixture
def accept():
    """Record the outcome of an acceptance criterion: ``accept(key, ok, detail)``."""
    def record(key, ok, detail=""):
        ACCEPTANCE[key] = (bool(ok), detail)
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: (int(k.split()[0].rstrip("abc")), k)):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} {key}: {detail}")
