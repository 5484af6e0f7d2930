"""Molecular graph data model, discretization, alignment and validity checks."""

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

ATOM_TYPES = ("H", "C", "N", "O", "F")
BOND_CLASSES = ("none", "single", "double", "triple", "aromatic")
BOND_ORDERS = (0.0, 1.0, 2.0, 3.0, 1.5)

D_NODE = len(ATOM_TYPES) + 1  # one-hot atom type + formal-charge channel
D_EDGE = len(BOND_CLASSES)

# allowed valences keyed by (element, formal charge)
VALENCE_TABLE = {
    ("H", 0): (1,),
    ("C", 0): (4,),
    ("N", 0): (3,),
    ("N", 1): (4,),
    ("O", 0): (2,),
    ("O", -1): (1,),
    ("F", 0): (1,),
}

_BOND_ORDER_JSON = {1: 1, 2: 2, 3: 3, "ar": 4}
_BOND_ORDER_JSON_INV = {1: 1, 2: 2, 3: 3, 4: "ar"}

CANONICAL_MAX_ATOMS = 30


@dataclass
class MolecularGraph:
    """Discrete molecule: one-hot atoms + charge, one-hot bonds, 3D coordinates."""

    h: np.ndarray  # [N, D_NODE]
    a: np.ndarray  # [N, N, D_EDGE]
    x: np.ndarray  # [N, 3]

    def __post_init__(self):
        self.h = np.asarray(self.h, dtype=np.float64)
        self.a = np.asarray(self.a, dtype=np.float64)
        self.x = np.asarray(self.x, dtype=np.float64)
        n = self.h.shape[0]
        if self.h.shape != (n, D_NODE):
            raise ValueError(f"bad node feature shape {self.h.shape}")
        if self.a.shape != (n, n, D_EDGE):
            raise ValueError(f"bad edge feature shape {self.a.shape}")
        if self.x.shape != (n, 3):
            raise ValueError(f"bad coordinate shape {self.x.shape}")

    @property
    def n_atoms(self) -> int:
        return self.h.shape[0]

    @property
    def atom_indices(self) -> np.ndarray:
        return np.argmax(self.h[:, : len(ATOM_TYPES)], axis=1)

    @property
    def symbols(self) -> list:
        return [ATOM_TYPES[i] for i in self.atom_indices]

    @property
    def charges(self) -> np.ndarray:
        return np.rint(self.h[:, len(ATOM_TYPES)]).astype(int)

    @property
    def bond_classes(self) -> np.ndarray:
        """[N, N] integer bond-class matrix."""
        return np.argmax(self.a, axis=2)

    def bonds(self) -> list:
        """List of (i, j, bond_class) with i < j and class > 0."""
        bc = self.bond_classes
        out = []
        n = self.n_atoms
        for i in range(n):
            for j in range(i + 1, n):
                if bc[i, j] > 0:
                    out.append((i, j, int(bc[i, j])))
        return out

    def neighbors(self, i: int) -> list:
        """List of (j, bond_class) bonded to atom i."""
        bc = self.bond_classes[i]
        return [(j, int(bc[j])) for j in np.nonzero(bc)[0] if j != i]

    @classmethod
    def from_atoms(cls, symbols, charges, bonds, coords) -> "MolecularGraph":
        n = len(symbols)
        h = np.zeros((n, D_NODE))
        for i, (s, c) in enumerate(zip(symbols, charges)):
            if s not in ATOM_TYPES:
                raise ValueError(f"unknown element {s!r}")
            h[i, ATOM_TYPES.index(s)] = 1.0
            h[i, len(ATOM_TYPES)] = c
        a = np.zeros((n, n, D_EDGE))
        a[:, :, 0] = 1.0
        for i, j, cls_ in bonds:
            if not (0 <= i < n and 0 <= j < n) or i == j:
                raise ValueError(f"bad bond ({i}, {j})")
            a[i, j] = 0.0
            a[j, i] = 0.0
            a[i, j, cls_] = 1.0
            a[j, i, cls_] = 1.0
        return cls(h, a, np.asarray(coords, dtype=np.float64))

    @classmethod
    def from_record(cls, rec: dict) -> "MolecularGraph":
        bonds = [(i, j, _BOND_ORDER_JSON[o]) for i, j, o in rec["bonds"]]
        charges = rec.get("charges") or [0] * len(rec["atoms"])
        return cls.from_atoms(rec["atoms"], charges, bonds, rec["coords"])

    def to_record(self) -> dict:
        return {
            "atoms": self.symbols,
            "charges": [int(c) for c in self.charges],
            "bonds": [[i, j, _BOND_ORDER_JSON_INV[c]] for i, j, c in self.bonds()],
            "coords": [[float(v) for v in row] for row in self.x],
        }

    def permuted(self, perm) -> "MolecularGraph":
        p = np.asarray(perm)
        return MolecularGraph(self.h[p], self.a[np.ix_(p, p)], self.x[p])


@dataclass
class ContinuousGraph:
    """Real-valued graph in diffusion space; same shapes as MolecularGraph."""

    h: "np.ndarray | object"
    a: "np.ndarray | object"
    x: "np.ndarray | object"

    @property
    def n_atoms(self) -> int:
        return self.h.shape[-2]

    def map(self, fn) -> "ContinuousGraph":
        return ContinuousGraph(fn(self.h), fn(self.a), fn(self.x))

    @classmethod
    def from_molecular(cls, m: MolecularGraph) -> "ContinuousGraph":
        return cls(m.h.copy(), m.a.copy(), m.x.copy())


def center_coords(x):
    """Subtract the per-column mean; idempotent."""
    x = np.asarray(x, dtype=np.float64)
    return x - x.mean(axis=-2, keepdims=True)


class KabschResult(NamedTuple):
    rotation: np.ndarray
    aligned: np.ndarray
    rmsd: float
    degenerate: bool


def kabsch_align(x_ref, x_mov) -> KabschResult:
    """Optimal proper rotation of centered x_mov onto centered x_ref.

    Rank-deficient (near-collinear) point sets fall back to the identity
    rotation with degenerate=True.
    """
    x_ref = np.asarray(x_ref, dtype=np.float64)
    x_mov = np.asarray(x_mov, dtype=np.float64)
    if x_ref.shape != x_mov.shape:
        raise ValueError("point sets must have the same shape")
    cov = x_mov.T @ x_ref
    u, s, vt = np.linalg.svd(cov)
    scale = max(s[0], 1.0)
    degenerate = x_ref.shape[0] < 3 or s[1] < 1e-9 * scale
    if degenerate:
        r = np.eye(3)
    else:
        d = np.sign(np.linalg.det(vt.T @ u.T))
        r = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    aligned = x_mov @ r.T
    rmsd = float(np.sqrt(np.mean(np.sum((aligned - x_ref) ** 2, axis=1))))
    return KabschResult(r, aligned, rmsd, degenerate)


def discretize(g: ContinuousGraph) -> MolecularGraph:
    """Argmax decode of a continuous graph; ties break to the lowest class."""
    h_logits = np.asarray(g.h, dtype=np.float64)
    a_logits = np.asarray(g.a, dtype=np.float64)
    x = np.asarray(g.x, dtype=np.float64)
    n = h_logits.shape[0]

    h = np.zeros((n, D_NODE))
    atom_idx = np.argmax(h_logits[:, : len(ATOM_TYPES)], axis=1)
    h[np.arange(n), atom_idx] = 1.0
    h[:, len(ATOM_TYPES)] = np.clip(np.rint(h_logits[:, len(ATOM_TYPES)]), -1, 1)

    sym = 0.5 * (a_logits + a_logits.transpose(1, 0, 2))
    bond_idx = np.argmax(sym, axis=2)
    np.fill_diagonal(bond_idx, 0)
    a = np.zeros((n, n, D_EDGE))
    ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    a[ii, jj, bond_idx] = 1.0
    return MolecularGraph(h, a, x)


def _refine(colors, adj):
    """Iterative neighborhood color refinement; returns stable integer colors."""
    n = len(colors)
    while True:
        keys = [
            (colors[i], tuple(sorted((b, colors[j]) for j, b in adj[i])))
            for i in range(n)
        ]
        order = {k: c for c, k in enumerate(sorted(set(keys)))}
        new = [order[k] for k in keys]
        if new == colors:
            return new
        colors = new


def _certificate(order, labels, bond_mat):
    pos = {v: i for i, v in enumerate(order)}
    n = len(order)
    cells = [labels[v] for v in order]
    edges = []
    for i in range(n):
        for j in range(i + 1, n):
            b = bond_mat[order[i], order[j]]
            if b:
                edges.append((i, j, int(b)))
    return (tuple(cells), tuple(edges))


def _canonical_search(colors, adj, labels, bond_mat, best):
    colors = _refine(colors, adj)
    n = len(colors)
    cells = {}
    for v, c in enumerate(colors):
        cells.setdefault(c, []).append(v)
    target = None
    for c in sorted(cells):
        if len(cells[c]) > 1:
            target = cells[c]
            break
    if target is None:
        order = sorted(range(n), key=lambda v: colors[v])
        cert = _certificate(order, labels, bond_mat)
        if best[0] is None or cert < best[0]:
            best[0] = cert
        return
    for v in target:
        branch = list(colors)
        branch[v] = -1  # individualize in front of every other color
        _canonical_search(branch, adj, labels, bond_mat, best)


def canonical_key(m: MolecularGraph) -> str:
    """Permutation-invariant key; exact isomorphism certificate for N <= 30."""
    n = m.n_atoms
    if n > CANONICAL_MAX_ATOMS:
        raise ValueError(f"canonical_key supports at most {CANONICAL_MAX_ATOMS} atoms")
    labels = [(s, int(c)) for s, c in zip(m.symbols, m.charges)]
    adj = [m.neighbors(i) for i in range(n)]
    bond_mat = m.bond_classes
    init_order = {k: c for c, k in enumerate(sorted(set(labels)))}
    colors = [init_order[lbl] for lbl in labels]
    best = [None]
    _canonical_search(colors, adj, labels, bond_mat, best)
    return repr(best[0])


def connected_components(m: MolecularGraph) -> list:
    """List of atom-index sets, one per bond-connected component."""
    n = m.n_atoms
    seen = [False] * n
    comps = []
    for start in range(n):
        if seen[start]:
            continue
        stack, comp = [start], set()
        seen[start] = True
        while stack:
            v = stack.pop()
            comp.add(v)
            for j, _ in m.neighbors(v):
                if not seen[j]:
                    seen[j] = True
                    stack.append(j)
        comps.append(comp)
    return comps


class ValenceResult(NamedTuple):
    atom_ok: np.ndarray  # [N] bool
    valid: bool  # all atoms pass
    connected: bool
    valid_and_complete: bool


def check_valence(m: MolecularGraph) -> ValenceResult:
    """Per-atom valence check against the fixed (element, charge) table."""
    n = m.n_atoms
    atom_ok = np.zeros(n, dtype=bool)
    bc = m.bond_classes
    for i in range(n):
        sym = m.symbols[i]
        if sym not in ATOM_TYPES:
            raise ValueError(f"unknown element {sym!r}")
        allowed = VALENCE_TABLE.get((sym, int(m.charges[i])), ())
        total = sum(BOND_ORDERS[bc[i, j]] for j in range(n) if j != i)
        atom_ok[i] = any(abs(total - v) < 1e-9 for v in allowed)
    valid = bool(atom_ok.all())
    connected = len(connected_components(m)) == 1 if n > 0 else True
    return ValenceResult(atom_ok, valid, connected, valid and connected)
