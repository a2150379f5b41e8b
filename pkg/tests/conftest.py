import os
from pathlib import Path

import numpy as np
import pytest

from pagtn.smiles import Atom, Bond, MolGraph

DATA_DIR = Path(__file__).parent / "data"
# user-supplied benchmark CSVs (not shipped with the package)
EXTERNAL_DATA = Path(os.environ.get("PAGTN_DATA_DIR", "/root/data"))


def external_csv(name: str) -> Path:
    path = EXTERNAL_DATA / name
    if not path.exists():
        pytest.skip(f"{name} not found under {EXTERNAL_DATA}; set PAGTN_DATA_DIR")
    return path


def graph_from_edges(n: int, edges, aromatic: bool = False) -> MolGraph:
    """Carbon-only graph with single bonds, bypassing the SMILES parser."""
    edges = sorted({(min(a, b), max(a, b)) for a, b in edges if a != b})
    adjacency = [[] for _ in range(n)]
    for a, b in edges:
        adjacency[a].append(b)
        adjacency[b].append(a)
    atoms = tuple(Atom("C", degree=len(adjacency[i]), is_aromatic=aromatic) for i in range(n))
    bonds = tuple(Bond(a, b, "aromatic" if aromatic else "single") for a, b in edges)
    return MolGraph(atoms, bonds, tuple(tuple(sorted(nb)) for nb in adjacency))


def random_edges(rng: np.random.Generator, n: int, p: float):
    return [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < p]


@pytest.fixture
def corpus():
    import csv

    with (DATA_DIR / "smiles_corpus.csv").open() as fh:
        return list(csv.DictReader(fh))


# acceptance verdicts, printed in the terminal summary
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
