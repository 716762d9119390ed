import numpy as np
import pytest

from lorentzmix.billiard import BilliardSystem
from lorentzmix.geometry import default_table, validate_table
from lorentzmix.stats import RngSpec

TABLE_SEED = 20260810


@pytest.fixture(scope="session")
def table():
    t = default_table()
    validate_table(t, n_dirs=8, n_rays=100_000, rng=TABLE_SEED)
    return t


@pytest.fixture(scope="session")
def system(table):
    return BilliardSystem(table, num_threads=2)


@pytest.fixture()
def gen():
    return RngSpec(424242).generator()


def assert_close(a, b, tol, msg=""):
    assert abs(a - b) <= tol, f"{msg}: |{a} - {b}| = {abs(a - b)} > {tol}"
