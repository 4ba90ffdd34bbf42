import os

# keep BLAS single-threaded before numpy loads anywhere in the test process
for var in ("OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "OMP_NUM_THREADS"):
    os.environ.setdefault(var, "1")

import numpy as np
import pytest

from epigraph.data import SynthSpec, synth_generate


@pytest.fixture(scope="session")
def tiny_table():
    """Small gap-free synthetic table shared by pipeline tests."""
    table, truth = synth_generate(SynthSpec(weeks=120, predictors=3, noise=0.05), seed=9)
    return table, truth


@pytest.fixture()
def rng():
    return np.random.Generator(np.random.Philox(key=[1234, 0]))
