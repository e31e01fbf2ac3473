"""
Shared pytest fixtures: the bundled networks and a random network factory.
"""
import os
from pathlib import Path
from typing import Callable, Dict, Optional, Tuple

import numpy as np
import pytest
from dotenv import load_dotenv
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from netparse import InitialProfile, ReactionNetwork, parse_network

load_dotenv()

HERE = Path(__file__).parent


def resolve_networks_dir(raw: Optional[str] = None) -> Path:
    """CRN_EXAMPLES_DIR (relative paths taken from the repo root), else networks/."""
    raw = os.getenv("CRN_EXAMPLES_DIR") if raw is None else raw
    if not raw:
        return HERE / "networks"
    path = Path(raw)
    return path if path.is_absolute() else HERE / path


NETWORKS_DIR = resolve_networks_dir()


def load_fixture(name: str) -> ReactionNetwork:
    return parse_network((NETWORKS_DIR / f"{name}.crn").read_text(encoding="utf-8"))


def _connected(n: int, rates: Dict[Tuple[int, int], float]) -> bool:
    if n == 1:
        return True
    if not rates:
        return False
    rows = [j for (_, j) in rates]
    cols = [i for (i, _) in rates]
    adjacency = csr_matrix((np.ones(len(rates)), (rows, cols)), shape=(n, n))
    count, _ = connected_components(adjacency, directed=True, connection="weak")
    return count == 1


def make_random_network(
    rng: np.random.Generator,
    n: Optional[int] = None,
    max_species: int = 8,
    rate_range: Tuple[float, float] = (0.1, 10.0),
    density: Optional[float] = None,
) -> ReactionNetwork:
    """Random connected network; each ordered pair reacts with probability density."""
    n = n or int(rng.integers(2, max_species + 1))
    while True:
        p = density if density is not None else rng.uniform(0.15, 0.7)
        rates = {
            (i, j): float(rng.uniform(*rate_range))
            for i in range(n)
            for j in range(n)
            if i != j and rng.random() < p
        }
        if _connected(n, rates):
            break
    profiles = (InitialProfile("const", (1.0,)),) + (InitialProfile(),) * (n - 1)
    return ReactionNetwork(
        species=tuple(f"S{k}" for k in range(n)),
        rates=rates,
        diffusions=(1.0,) * n,
        initial_profiles=profiles,
        grid_cells=16,
    )


@pytest.fixture
def random_network() -> Callable[..., ReactionNetwork]:
    return make_random_network


@pytest.fixture
def networks_dir() -> Path:
    return NETWORKS_DIR


@pytest.fixture
def two_species() -> ReactionNetwork:
    return load_fixture("two_species")


@pytest.fixture
def triangle_detailed() -> ReactionNetwork:
    return load_fixture("triangle_detailed")


@pytest.fixture
def triangle_complex() -> ReactionNetwork:
    return load_fixture("triangle_complex")


@pytest.fixture
def random5() -> ReactionNetwork:
    return load_fixture("random5")


@pytest.fixture
def diffusion_bump() -> ReactionNetwork:
    return load_fixture("diffusion_bump")


@pytest.fixture
def degenerate() -> ReactionNetwork:
    return load_fixture("degenerate")


@pytest.fixture
def four_components() -> ReactionNetwork:
    return load_fixture("four_components")


@pytest.fixture
def chain() -> ReactionNetwork:
    return parse_network("species A B\nrxn A -> B 1.0\ninit A const 1.0\n")
