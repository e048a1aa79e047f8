import numpy as np
import pytest

from ncsim.mati_bounds import ProtocolConstants, StabilityCertificate


def draw_feasible_parameters(rng, n, branch_cycle=True):
    """Random (consts, cert, ps) triples satisfying the jump-contraction
    feasibility condition, cycling through the three gamma-vs-L regimes."""
    out = []
    for i in range(n):
        rho = rng.uniform(0.1, 0.9)
        lam = rng.uniform(1.0, 1.8)
        ps_min = max(0.0, (lam**2 - 1.0) / (lam**2 - rho**2))
        ps = rng.uniform(ps_min + 0.02 * (1.0 - ps_min), 1.0)
        L = rng.uniform(0.5, 25.0)
        mode = i % 3 if branch_cycle else 0
        if mode == 0:
            gamma = L * rng.uniform(1.05, 3.0)
        elif mode == 1:
            gamma = L * (1.0 + rng.uniform(-1e-13, 1e-13))
        else:
            gamma = L * rng.uniform(0.3, 0.95)
        out.append(
            (ProtocolConstants(rho=rho, lam=lam), StabilityCertificate(L=L, gamma=gamma), ps)
        )
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
