import numpy as np
import pytest
from threadpoolctl import threadpool_limits

from groupsbl.arrays import AngleGrid, UniformLinearArray
from groupsbl.channels import ObservationSet
from groupsbl.vbi import Hyperparams, Workspace, init_state


@pytest.fixture(scope="session", autouse=True)
def _single_threaded_blas():
    # Two contended vCPUs: threaded BLAS spin-waits dominate the small
    # per-user factorizations, so one thread is both faster and stable.
    with threadpool_limits(limits=1):
        yield


def small_problem(seed=0, n_users=2, n_groups=2, n_pilots=4, grid_size=2,
                  n_antennas=4, snr_db=10.0, **hyper_kwargs):
    """Tiny random instance for update-level tests: returns
    (hyper, observations, geometry, workspace, state)."""
    rng = np.random.default_rng(seed)
    geometry = UniformLinearArray(n_antennas, 0.5)
    pilots = (rng.standard_normal((n_pilots, n_antennas))
              + 1j * rng.standard_normal((n_pilots, n_antennas))) / np.sqrt(2)
    grid = AngleGrid.for_geometry(geometry, grid_size, n_users)
    from groupsbl.arrays import build_dictionary
    dictionary = build_dictionary(geometry, grid, 0)
    sensing = pilots @ dictionary
    coeffs = np.zeros((n_users, grid_size), dtype=complex)
    for k in range(n_users):
        hot = rng.integers(0, grid_size)
        coeffs[k, hot] = rng.standard_normal() + 1j * rng.standard_normal()
    sigma2 = 10.0 ** (-snr_db / 10.0)
    received = coeffs @ sensing.T + np.sqrt(sigma2 / 2) * (
        rng.standard_normal((n_users, n_pilots))
        + 1j * rng.standard_normal((n_users, n_pilots)))
    observations = ObservationSet(pilots=pilots, received=received,
                                  noise_variance=sigma2, snr_db=snr_db)
    hyper_kwargs.setdefault("n_groups", n_groups)
    hyper_kwargs.setdefault("grid_size", grid_size)
    hyper_kwargs.setdefault("init_seed", seed)
    hyper = Hyperparams(**hyper_kwargs)
    workspace = Workspace(observations, geometry, grid)
    state = init_state(hyper, workspace)
    return hyper, observations, geometry, workspace, state


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
