import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("grdkit", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("grdkit")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def grid_sites(rng, n, nb=90, nr=6):
    """``n`` distinct sites of a bitrate x resolution grid in the unit box,
    always containing the four corners."""
    from grdkit.sampling import GridSpec

    corners = [(0, 0), (0, nb - 1), (nr - 1, 0), (nr - 1, nb - 1)]
    rest = [(r, k) for r in range(nr) for k in range(nb) if (r, k) not in corners]
    pick = rng.choice(len(rest), n - 4, replace=False)
    cells = corners + [rest[p] for p in pick]
    return np.array([[k / (nb - 1), r / (nr - 1)] for r, k in cells])


@pytest.fixture(scope="session")
def corpus_small():
    from grdkit.corpus import SyntheticSpec, synth_corpus

    return synth_corpus(SyntheticSpec(seed=7), 6)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
