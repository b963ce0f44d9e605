import random
from pathlib import Path

import pytest

from llema import chem, oracle
from llema.crystal import Lattice, Site, Structure
from llema.tasks import load_task

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def db():
    return oracle.ReferenceDB.bundled_fixture()


@pytest.fixture(scope="session")
def wide_bandgap():
    return load_task("wide_bandgap")


@pytest.fixture
def rock_salt_nacl():
    lat = Lattice(5.64, 5.64, 5.64, 90, 90, 90)
    na = [(0, 0, 0), (0, 0.5, 0.5), (0.5, 0, 0.5), (0.5, 0.5, 0)]
    cl = [(0.5, 0.5, 0.5), (0.5, 0, 0), (0, 0.5, 0), (0, 0, 0.5)]
    sites = [Site("Na", p) for p in na] + [Site("Cl", p) for p in cl]
    return Structure(lat, tuple(sites))


@pytest.fixture
def ga2o3():
    lat = Lattice(4.98, 4.98, 13.4, 90, 90, 120)
    sites = [Site("Ga", (0.0, 0.0, 0.1)), Site("Ga", (0.5, 0.5, 0.3))] + [
        Site("O", (0.3, 0.3, 0.2 * i)) for i in range(3)
    ]
    return Structure(lat, tuple(sites))


def random_structure(rng: random.Random, max_sites: int = 8) -> Structure:
    """Valid random structure for fuzz tests."""
    symbols = chem.default_table().symbols()
    lat = Lattice(
        a=rng.uniform(2.0, 12.0),
        b=rng.uniform(2.0, 12.0),
        c=rng.uniform(2.0, 12.0),
        alpha=rng.uniform(60.0, 120.0),
        beta=rng.uniform(60.0, 120.0),
        gamma=rng.uniform(60.0, 120.0),
    )
    n = rng.randint(1, max_sites)
    pool = rng.sample(symbols, rng.randint(1, min(4, n)))
    sites = tuple(
        Site(rng.choice(pool), (rng.random(), rng.random(), rng.random()))
        for _ in range(n)
    )
    return Structure(lat, sites)


def realizable_random_structure(rng: random.Random, max_sites: int = 8) -> Structure:
    """Random structure whose lattice is guaranteed volume-realizable."""
    while True:
        s = random_structure(rng, max_sites)
        from llema.crystal import _volume_argument

        if _volume_argument(s.lattice) > 1e-6:
            return s
