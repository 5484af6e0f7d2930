"""Small synthetic molecule corpora for smoke training and demos."""

import numpy as np

from .metrics import mces  # noqa: F401  (re-export convenience for demos)
from .molgraph import MolecularGraph, canonical_key
from .spectra import surrogate_spectra

_CAPS = {"C": 4, "N": 3, "O": 2, "F": 1}
_HEAVY = ("C", "C", "C", "N", "O", "F")  # carbon-weighted draw


def random_molecule(rng: np.random.Generator, n_heavy: int) -> MolecularGraph:
    """Random valence-saturated molecule: heavy-atom tree, occasional multiple
    bonds, all remaining valence filled with hydrogens."""
    symbols = [str(rng.choice(_HEAVY)) for _ in range(n_heavy)]
    remaining = [_CAPS[s] for s in symbols]
    bonds = []
    for child in range(1, n_heavy):
        parents = [p for p in range(child) if remaining[p] >= 1]
        if not parents:
            symbols[child] = "C"  # restart-free fallback; keep the tree growable
            remaining[child] = _CAPS["C"]
            parents = [child - 1]
            remaining[child - 1] += 1
        p = int(rng.choice(parents))
        bonds.append([p, child, 1])
        remaining[p] -= 1
        remaining[child] -= 1
    for b in bonds:
        i, j, _ = b
        while b[2] < 3 and remaining[i] >= 1 and remaining[j] >= 1 and rng.random() < 0.25:
            b[2] += 1
            remaining[i] -= 1
            remaining[j] -= 1
    for i in range(n_heavy):
        for _ in range(remaining[i]):
            symbols.append("H")
            bonds.append([i, len(symbols) - 1, 1])
    coords = 1.5 * rng.normal(size=(len(symbols), 3))
    coords -= coords.mean(axis=0)
    return MolecularGraph.from_atoms(symbols, [0] * len(symbols), [tuple(b) for b in bonds], coords)


def random_molecule_with_atoms(rng: np.random.Generator, n_atoms: int, max_tries: int = 2000) -> MolecularGraph:
    """Rejection-sample random_molecule until the total atom count matches."""
    for _ in range(max_tries):
        n_heavy = int(rng.integers(2, max(3, n_atoms // 2 + 1)))
        m = random_molecule(rng, n_heavy)
        if m.n_atoms == n_atoms:
            return m
    raise RuntimeError(f"could not generate a molecule with {n_atoms} atoms")


def toy_corpus(n_mols: int, n_atoms: int, seed: int, max_tries: int = None) -> list:
    """Distinct molecules (same atom count, pairwise distinct spectra) with
    surrogate spectra; returns [(MolecularGraph, SpectraSet)].

    Raises RuntimeError when the requested size is not reachable (small atom
    counts support only a limited number of distinct bond-type multisets, and
    the surrogate spectra are a function of that multiset).
    """
    rng = np.random.default_rng(seed)
    max_tries = 500 * n_mols if max_tries is None else max_tries
    seen_keys, seen_spectra, out = set(), set(), []
    tries = 0
    while len(out) < n_mols:
        tries += 1
        if tries > max_tries:
            raise RuntimeError(
                f"could not build {n_mols} molecules with {n_atoms} atoms and "
                f"distinct spectra in {max_tries} tries ({len(out)} found)"
            )
        m = random_molecule_with_atoms(rng, n_atoms)
        key = canonical_key(m)
        if key in seen_keys:
            continue
        s = surrogate_spectra(m)
        sig = s.ir.round(6).tobytes()
        if sig in seen_spectra:
            continue
        seen_keys.add(key)
        seen_spectra.add(sig)
        out.append((m, s))
    return out
