import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from gbsemu import cumulants as cu
from gbsemu import gaussian as g


@pytest.fixture(scope="session")
def inst6():
    inst, _ = g.random_instance(M=6, k=3, eta=0.6, r_max=1.0, seed=3)
    return inst


@pytest.fixture(scope="session")
def dist6(inst6):
    return g.brute_force_distribution(inst6)


@pytest.fixture(scope="session")
def tables6(inst6):
    ctab = cu.correlator_table(inst6, K=5)
    return ctab, cu.cumulants_from_correlators(ctab)


@pytest.fixture(scope="session")
def thermal8():
    """Independent thermal modes: diagonal covariance, click probs ~ 0.1."""
    nbar = np.linspace(0.08, 0.16, 8)
    diag = 2.0 * nbar + 1.0
    sigma = np.diag(np.concatenate([diag, diag]))
    return g.GaussianInstance(sigma=sigma, hbar=2.0)
