import numpy as np
import pytest

from diffspectra.molgraph import MolecularGraph


def _coords(n, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, 3))
    return x - x.mean(axis=0)


def make_methane():
    return MolecularGraph.from_atoms(
        ["C", "H", "H", "H", "H"],
        [0] * 5,
        [(0, 1, 1), (0, 2, 1), (0, 3, 1), (0, 4, 1)],
        [[0, 0, 0], [0.63, 0.63, 0.63], [-0.63, -0.63, 0.63],
         [-0.63, 0.63, -0.63], [0.63, -0.63, -0.63]],
    )


def make_ethanol():
    # C-C-O-H backbone with full hydrogens: CH3-CH2-OH
    symbols = ["C", "C", "O", "H", "H", "H", "H", "H", "H"]
    bonds = [(0, 1, 1), (1, 2, 1), (2, 8, 1),
             (0, 3, 1), (0, 4, 1), (0, 5, 1), (1, 6, 1), (1, 7, 1)]
    return MolecularGraph.from_atoms(symbols, [0] * 9, bonds, _coords(9, 1))


def make_dimethyl_ether():
    # CH3-O-CH3
    symbols = ["C", "O", "C", "H", "H", "H", "H", "H", "H"]
    bonds = [(0, 1, 1), (1, 2, 1),
             (0, 3, 1), (0, 4, 1), (0, 5, 1), (2, 6, 1), (2, 7, 1), (2, 8, 1)]
    return MolecularGraph.from_atoms(symbols, [0] * 9, bonds, _coords(9, 2))


def make_methanol():
    symbols = ["C", "O", "H", "H", "H", "H"]
    bonds = [(0, 1, 1), (1, 2, 1), (0, 3, 1), (0, 4, 1), (0, 5, 1)]
    return MolecularGraph.from_atoms(symbols, [0] * 6, bonds, _coords(6, 3))


def make_formaldehyde():
    symbols = ["C", "O", "H", "H"]
    bonds = [(0, 1, 2), (0, 2, 1), (0, 3, 1)]
    return MolecularGraph.from_atoms(symbols, [0] * 4, bonds, _coords(4, 4))


def make_ethane():
    symbols = ["C", "C", "H", "H", "H", "H", "H", "H"]
    bonds = [(0, 1, 1), (0, 2, 1), (0, 3, 1), (0, 4, 1), (1, 5, 1), (1, 6, 1), (1, 7, 1)]
    return MolecularGraph.from_atoms(symbols, [0] * 8, bonds, _coords(8, 5))


def make_benzene():
    symbols = ["C"] * 6 + ["H"] * 6
    bonds = [(i, (i + 1) % 6, 4) for i in range(6)] + [(i, i + 6, 1) for i in range(6)]
    theta = np.linspace(0, 2 * np.pi, 6, endpoint=False)
    ring = np.stack([1.39 * np.cos(theta), 1.39 * np.sin(theta), np.zeros(6)], axis=1)
    outer = np.stack([2.47 * np.cos(theta), 2.47 * np.sin(theta), np.zeros(6)], axis=1)
    return MolecularGraph.from_atoms(symbols, [0] * 12, bonds, np.vstack([ring, outer]))


def random_labeled_graph(rng, n_max=6, p_edge=0.5):
    """Small random labeled graph; not necessarily chemically valid."""
    n = int(rng.integers(2, n_max + 1))
    symbols = [str(rng.choice(["C", "N", "O"])) for _ in range(n)]
    bonds = []
    for i in range(n):
        for j in range(i + 1, n):
            if rng.random() < p_edge:
                bonds.append((i, j, int(rng.integers(1, 4))))
    return MolecularGraph.from_atoms(symbols, [0] * n, bonds, rng.normal(size=(n, 3)))


def random_rotation(rng):
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


@pytest.fixture
def methane():
    return make_methane()


@pytest.fixture
def ethanol():
    return make_ethanol()
