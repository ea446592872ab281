import numpy as np
import pytest

from evorecon import genome as gn
from evorecon.phenotype import TensorShape


def small_genome(**kw):
    base = dict(g1=1, g2=(3,), g3=0, g4=0, g5=0, g6=0, g7=0, g8=0, g9=0, g10=0,
                g11="ADAM", g12=4)
    base.update(kw)
    return gn.Genome(**base)


def genome_stream(seed, count, max_half_layers=None):
    """Seeded random genomes, optionally resampling g1 to stay small."""
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < count:
        g = gn.random_genome(rng)
        if max_half_layers is not None:
            g = g.replace(g1=int(rng.integers(1, max_half_layers + 1)),
                          g12=int(rng.integers(1, 4)))
        out.append(g)
    return out


@pytest.fixture
def shape32():
    return TensorShape(32, 32, 1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance report ----------------------------------------------------------

_ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture(scope="session")
def acceptance(request):
    """Criterion number -> (passed, detail); printed after the run."""
    return request.config.stash.setdefault(_ACCEPTANCE, {})


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(_ACCEPTANCE, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        ok, detail = results[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}")
