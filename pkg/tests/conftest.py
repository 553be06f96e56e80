import numpy as np
import pytest

from umil import kernels
from umil.datamodel import Dataset
from umil.synthgen import GeneratorConfig, generate_arrays

BACKENDS = ["python"] + (["cython"] if kernels.BACKEND == "cython" else [])


@pytest.fixture(params=BACKENDS)
def kmod(request):
    return kernels.backend(request.param)


def small_generator(**kw):
    base = dict(n_train_normal=6, n_train_abnormal=6, n_test_normal=4, n_test_abnormal=4, snippets_per_video=16,
                anomaly_len_min=2, anomaly_len_max=5, frames_per_fine_snippet=3)
    base.update(kw)
    return GeneratorConfig(**base)


@pytest.fixture(scope="session")
def small_data():
    man, feats, oracle = generate_arrays(small_generator())
    return Dataset(man, feats), oracle


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
