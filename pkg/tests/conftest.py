import pytest

from avloc.oracle import calibrate, generate_dataset


@pytest.fixture(scope="session")
def calibrated_params():
    return calibrate(sim_trials=50_000, seed=0)


@pytest.fixture(scope="session")
def oracle_dataset(calibrated_params):
    return generate_dataset(calibrated_params, n_subjects=33, seed=11)
