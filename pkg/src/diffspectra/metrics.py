"""Generation-quality and structure-elucidation metrics."""

import hashlib
import itertools
import math
import time
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .molgraph import (
    BOND_ORDERS,
    MolecularGraph,
    canonical_key,
    check_valence,
    connected_components,
)


def _hash(obj) -> int:
    """Deterministic 64-bit hash (python's builtin is salted per process)."""
    return int.from_bytes(hashlib.blake2b(repr(obj).encode(), digest_size=8).digest(), "big")


# ---------------------------------------------------------------------------
# fingerprints and similarities


@dataclass(frozen=True)
class Fingerprint:
    bits: frozenset
    n_bits: int


def morgan_fingerprint(m: MolecularGraph, radius: int = 2, n_bits: int = 2048) -> Fingerprint:
    """ECFP-style iterative neighborhood hashing folded into n_bits."""
    n = m.n_atoms
    sym = m.symbols
    charges = m.charges
    nbrs = [m.neighbors(i) for i in range(n)]
    ids = [_hash(("atom", sym[i], int(charges[i]))) for i in range(n)]
    collected = set(ids)
    for _ in range(radius):
        ids = [
            _hash((ids[i], tuple(sorted((b, ids[j]) for j, b in nbrs[i]))))
            for i in range(n)
        ]
        collected.update(ids)
    return Fingerprint(frozenset(v % n_bits for v in collected), n_bits)


def path_fingerprint(m: MolecularGraph, max_bonds: int = 5, n_bits: int = 2048) -> Fingerprint:
    """Linear-path fingerprint (atom symbols interleaved with bond classes)."""
    n = m.n_atoms
    sym = m.symbols
    nbrs = [m.neighbors(i) for i in range(n)]
    hashes = set()

    def walk(path_atoms, path_seq):
        key = tuple(path_seq)
        hashes.add(_hash(min(key, key[::-1])))
        if (len(path_seq) - 1) // 2 >= max_bonds:
            return
        last = path_atoms[-1]
        for j, b in nbrs[last]:
            if j not in path_atoms:
                walk(path_atoms + [j], path_seq + [b, sym[j]])

    for i in range(n):
        walk([i], [sym[i]])
    return Fingerprint(frozenset(v % n_bits for v in hashes), n_bits)


def tanimoto(a: Fingerprint, b: Fingerprint) -> float:
    union = a.bits | b.bits
    if not union:
        return 0.0
    return len(a.bits & b.bits) / len(union)


def cosine(a: Fingerprint, b: Fingerprint) -> float:
    if not a.bits or not b.bits:
        return 0.0
    return len(a.bits & b.bits) / math.sqrt(len(a.bits) * len(b.bits))


# ---------------------------------------------------------------------------
# exact-match accuracy


def acc_at_k(candidates, target: MolecularGraph, k: int) -> bool:
    """True iff any of the first k candidates is label-isomorphic to target."""
    tk = canonical_key(target)
    return any(canonical_key(c) == tk for c in candidates[:k])


def acc_curve(targets, candidate_lists, ks) -> dict:
    """ACC@K aggregated over targets, for each K in ks."""
    out = {}
    target_keys = [canonical_key(t) for t in targets]
    cand_keys = [[canonical_key(c) for c in cands] for cands in candidate_lists]
    for k in ks:
        hits = sum(
            1 for tk, cks in zip(target_keys, cand_keys) if tk in cks[:k]
        )
        out[k] = hits / len(targets) if targets else 0.0
    return out


# ---------------------------------------------------------------------------
# maximum common edge subgraph


class MCESResult(NamedTuple):
    common_edges: int
    distance: int
    exact: bool  # False when the timeout truncated the search


def _atom_label(m: MolecularGraph, i: int):
    return (m.symbols[i], int(m.charges[i]))


def mces(g1: MolecularGraph, g2: MolecularGraph, timeout_s: float = 2.0) -> MCESResult:
    """Exact labeled MCES via branch-and-bound clique search on the edge-product graph."""
    e1 = g1.bonds()
    e2 = g2.bonds()
    if not e1 or not e2:
        return MCESResult(0, len(e1) + len(e2), True)

    verts = []  # (edge1 idx, edge2 idx, ((a->c), (b->d)))
    for p, (i, j, b1) in enumerate(e1):
        for q, (k, l, b2) in enumerate(e2):
            if b1 != b2:
                continue
            if _atom_label(g1, i) == _atom_label(g2, k) and _atom_label(g1, j) == _atom_label(g2, l):
                verts.append((p, q, ((i, k), (j, l))))
            if _atom_label(g1, i) == _atom_label(g2, l) and _atom_label(g1, j) == _atom_label(g2, k):
                verts.append((p, q, ((i, l), (j, k))))
    nv = len(verts)
    if nv == 0:
        return MCESResult(0, len(e1) + len(e2), True)

    def compatible(u, v):
        pu, qu, mu = verts[u]
        pv, qv, mv = verts[v]
        if pu == pv or qu == qv:
            return False
        for a, b in mu:
            for c, d in mv:
                if (a == c) != (b == d):
                    return False
        return True

    adj = [0] * nv
    for u in range(nv):
        for v in range(u + 1, nv):
            if compatible(u, v):
                adj[u] |= 1 << v
                adj[v] |= 1 << u

    deadline = time.monotonic() + timeout_s
    best = [0]
    timed_out = [False]

    def expand(size, cand):
        if timed_out[0]:
            return
        if time.monotonic() > deadline:
            timed_out[0] = True
            return
        if cand == 0:
            best[0] = max(best[0], size)
            return
        # greedy coloring upper bound, Tomita-style ordering
        order, colors = [], []
        uncolored = cand
        color = 0
        while uncolored:
            color += 1
            avail = uncolored
            while avail:
                v = (avail & -avail).bit_length() - 1
                order.append(v)
                colors.append(color)
                avail &= ~adj[v]
                avail &= ~(1 << v)
                uncolored &= ~(1 << v)
        for idx in range(len(order) - 1, -1, -1):
            v = order[idx]
            if size + colors[idx] <= best[0]:
                return
            expand(size + 1, cand & adj[v])
            if timed_out[0]:
                return
            cand &= ~(1 << v)
        best[0] = max(best[0], size)

    expand(0, (1 << nv) - 1)
    common = best[0]
    return MCESResult(common, len(e1) + len(e2) - 2 * common, not timed_out[0])


def mces_bruteforce(g1: MolecularGraph, g2: MolecularGraph) -> int:
    """Exhaustive oracle: max preserved labeled edges over injective atom maps."""
    if g1.n_atoms > g2.n_atoms:
        g1, g2 = g2, g1
    n1, n2 = g1.n_atoms, g2.n_atoms
    bonds1 = g1.bonds()
    bc2 = g2.bond_classes
    best = 0
    labels1 = [_atom_label(g1, i) for i in range(n1)]
    labels2 = [_atom_label(g2, i) for i in range(n2)]
    for perm in itertools.permutations(range(n2), n1):
        count = 0
        ok = [labels1[i] == labels2[perm[i]] for i in range(n1)]
        for i, j, b in bonds1:
            if ok[i] and ok[j] and bc2[perm[i], perm[j]] == b:
                count += 1
        best = max(best, count)
    return best


# ---------------------------------------------------------------------------
# fragments, scaffolds, functional groups


def extract_subgraph(m: MolecularGraph, atoms) -> MolecularGraph:
    idx = sorted(atoms)
    return MolecularGraph(m.h[idx], m.a[np.ix_(idx, idx)], m.x[idx])


def find_bridges(m: MolecularGraph) -> list:
    """Bonds not in any cycle, as (i, j) pairs with i < j."""
    n = m.n_atoms
    nbrs = [[j for j, _ in m.neighbors(i)] for i in range(n)]
    visited = [False] * n
    disc = [0] * n
    low = [0] * n
    bridges = []
    timer = [0]

    def dfs(root):
        stack = [(root, -1, iter(nbrs[root]))]
        visited[root] = True
        disc[root] = low[root] = timer[0]
        timer[0] += 1
        while stack:
            v, parent, it = stack[-1]
            advanced = False
            for w in it:
                if not visited[w]:
                    visited[w] = True
                    disc[w] = low[w] = timer[0]
                    timer[0] += 1
                    stack.append((w, v, iter(nbrs[w])))
                    advanced = True
                    break
                elif w != parent:
                    low[v] = min(low[v], disc[w])
            if not advanced:
                stack.pop()
                if stack:
                    p = stack[-1][0]
                    low[p] = min(low[p], low[v])
                    if low[v] > disc[p]:
                        bridges.append((min(p, v), max(p, v)))

    for root in range(n):
        if not visited[root]:
            dfs(root)
    return bridges


def _components_without_bonds(m: MolecularGraph, removed) -> list:
    n = m.n_atoms
    removed = set(removed)
    nbrs = [
        [j for j, _ in m.neighbors(i) if (min(i, j), max(i, j)) not in removed]
        for i in range(n)
    ]
    seen = [False] * n
    comps = []
    for s in range(n):
        if seen[s]:
            continue
        stack, comp = [s], set()
        seen[s] = True
        while stack:
            v = stack.pop()
            comp.add(v)
            for j in nbrs[v]:
                if not seen[j]:
                    seen[j] = True
                    stack.append(j)
        comps.append(comp)
    return comps


def cut_fragments(m: MolecularGraph, min_atoms: int = 3, max_cuts: int = 2) -> list:
    """Fragments from single and double acyclic-bond cuts, >= min_atoms atoms."""
    bridges = find_bridges(m)
    frags = []
    seen_keys = set()
    cut_sets = [(b,) for b in bridges]
    if max_cuts >= 2:
        cut_sets += list(itertools.combinations(bridges, 2))
    for cuts in cut_sets:
        for comp in _components_without_bonds(m, cuts):
            if len(comp) < min_atoms:
                continue
            sub = extract_subgraph(m, comp)
            key = canonical_key(sub)
            if key not in seen_keys:
                seen_keys.add(key)
                frags.append(sub)
    return frags


def brics_like_fragments(m: MolecularGraph) -> list:
    """Fragment multiset from cutting every acyclic single bond."""
    bc = m.bond_classes
    cuts = [b for b in find_bridges(m) if bc[b[0], b[1]] == 1]
    return [extract_subgraph(m, comp) for comp in _components_without_bonds(m, cuts)]


def murcko_scaffold(m: MolecularGraph) -> MolecularGraph:
    """Iteratively delete degree-1 atoms; what remains is the ring/linker core."""
    keep = set(range(m.n_atoms))
    while True:
        degree = {i: sum(1 for j, _ in m.neighbors(i) if j in keep) for i in keep}
        leaves = {i for i in keep if degree[i] <= 1}
        if not leaves or leaves == keep:
            if leaves == keep:
                keep = set()
            break
        keep -= leaves
    return extract_subgraph(m, keep) if keep else None


def fraggle_sim(target: MolecularGraph, candidate: MolecularGraph) -> float:
    """Max path-fingerprint Tanimoto over target fragments (and the whole molecule)."""
    cand_fp = path_fingerprint(candidate)
    scores = [tanimoto(path_fingerprint(target), cand_fp)]
    for frag in cut_fragments(target):
        scores.append(tanimoto(path_fingerprint(frag), cand_fp))
    return max(scores)


def _carbonyl_carbons(m: MolecularGraph) -> set:
    out = set()
    for i, j, b in m.bonds():
        if b == 2:
            si, sj = m.symbols[i], m.symbols[j]
            if si == "C" and sj == "O":
                out.add(i)
            if sj == "C" and si == "O":
                out.add(j)
    return out


def functional_groups(m: MolecularGraph) -> frozenset:
    """Names of functional groups present, from a fixed 15-pattern library."""
    sym = m.symbols
    bc = m.bond_classes
    nbrs = [m.neighbors(i) for i in range(m.n_atoms)]
    carbonyl = _carbonyl_carbons(m)
    found = set()

    def h_count(i):
        return sum(1 for j, _ in nbrs[i] if sym[j] == "H")

    for i, j, b in m.bonds():
        si, sj = sym[i], sym[j]
        pair = {si, sj}
        if pair == {"C"}:
            if b == 1:
                found.add("alkane")
            elif b == 2:
                found.add("alkene")
            elif b == 3:
                found.add("alkyne")
        if b == 4:
            found.add("aromatic_ring")
        if pair == {"C", "N"} and b == 3:
            found.add("nitrile")
        if pair == {"C", "F"}:
            found.add("halide_f")

    for i in range(m.n_atoms):
        if sym[i] == "O":
            heavy = [(j, b) for j, b in nbrs[i] if sym[j] != "H"]
            hs = h_count(i)
            c_single = [j for j, b in heavy if sym[j] == "C" and b == 1]
            if hs == 1 and len(c_single) == 1:
                if c_single[0] in carbonyl:
                    found.add("carboxylic_acid")
                else:
                    found.add("alcohol")
            if hs == 0 and len(c_single) == 2:
                if any(c in carbonyl for c in c_single):
                    found.add("ester")
                else:
                    found.add("ether")
        elif sym[i] == "N":
            if int(m.charges[i]) != 0:
                continue
            bonds_i = nbrs[i]
            o_nbrs = [j for j, _ in bonds_i if sym[j] == "O"]
            if len(o_nbrs) >= 2 or any(b == 2 and sym[j] == "O" for j, b in bonds_i):
                found.add("nitro_like")
                continue
            if any(j in carbonyl for j, b in bonds_i if b == 1):
                found.add("amide")
                continue
            if all(b == 1 for _, b in bonds_i) and any(sym[j] == "C" for j, _ in bonds_i):
                hs = h_count(i)
                if hs >= 2:
                    found.add("primary_amine")
                elif hs == 1:
                    found.add("secondary_amine")
                else:
                    found.add("tertiary_amine")
        elif sym[i] == "C" and i in carbonyl:
            heavy = [(j, b) for j, b in nbrs[i] if sym[j] != "H"]
            singles = [j for j, b in heavy if b == 1]
            if h_count(i) >= 1 and not any(sym[j] in ("O", "N") for j in singles):
                found.add("aldehyde")
            c_singles = [j for j in singles if sym[j] == "C"]
            if len(c_singles) == 2 and not any(sym[j] in ("O", "N") for j in singles):
                found.add("ketone")

    return frozenset(found)


def fg_sim(target: MolecularGraph, candidate: MolecularGraph) -> float:
    """Jaccard similarity of present functional-group sets."""
    a, b = functional_groups(target), functional_groups(candidate)
    if not a and not b:
        return 1.0
    union = a | b
    return len(a & b) / len(union)


# ---------------------------------------------------------------------------
# geometry distributions


def bond_lengths(mols) -> np.ndarray:
    vals = []
    for m in mols:
        for i, j, _ in m.bonds():
            vals.append(float(np.linalg.norm(m.x[i] - m.x[j])))
    return np.asarray(vals)


def bond_angles(mols) -> np.ndarray:
    vals = []
    for m in mols:
        for j in range(m.n_atoms):
            nb = [k for k, _ in m.neighbors(j)]
            for i, k in itertools.combinations(nb, 2):
                u = m.x[i] - m.x[j]
                v = m.x[k] - m.x[j]
                denom = np.linalg.norm(u) * np.linalg.norm(v)
                if denom < 1e-12:
                    continue
                vals.append(float(np.arccos(np.clip(u @ v / denom, -1.0, 1.0))))
    return np.asarray(vals)


def dihedral_angles(mols) -> np.ndarray:
    vals = []
    for m in mols:
        for j, k, _ in m.bonds():
            for i in (a for a, _ in m.neighbors(j) if a != k):
                for l in (a for a, _ in m.neighbors(k) if a != j and a != i):
                    b0 = m.x[i] - m.x[j]
                    b1 = m.x[k] - m.x[j]
                    b2 = m.x[l] - m.x[k]
                    n1 = np.cross(b0, b1)
                    n2 = np.cross(b2, b1)
                    denom = np.linalg.norm(n1) * np.linalg.norm(n2)
                    if denom < 1e-12:
                        continue
                    cosang = np.clip(n1 @ n2 / denom, -1.0, 1.0)
                    vals.append(float(np.arccos(cosang)))
    return np.asarray(vals)


_GEOMETRY_FEATURES = {"bond": bond_lengths, "angle": bond_angles, "dihedral": dihedral_angles}


def mmd_squared(x: np.ndarray, y: np.ndarray, bandwidth: float = None,
                max_samples: int = 4000) -> float:
    """Biased squared MMD with a Gaussian kernel (median-heuristic bandwidth).

    Populations larger than max_samples are deterministically subsampled to
    keep the pairwise kernel matrices tractable.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.size == 0 or y.size == 0:
        raise ValueError("empty population")
    rng = np.random.default_rng(0)
    if x.size > max_samples:
        x = x[rng.choice(x.size, size=max_samples, replace=False)]
    if y.size > max_samples:
        y = y[rng.choice(y.size, size=max_samples, replace=False)]
    if bandwidth is None:
        z = np.concatenate([x, y])
        d = np.abs(z[:, None] - z[None, :])
        med = np.median(d[np.triu_indices(z.size, k=1)]) if z.size > 1 else 0.0
        bandwidth = med if med > 0 else 1.0

    def kmean(a, b):
        return float(np.mean(np.exp(-((a[:, None] - b[None, :]) ** 2) / (2 * bandwidth**2))))

    return kmean(x, x) + kmean(y, y) - 2 * kmean(x, y)


def geometry_mmd(samples, refs, feature: str, bandwidth: float = None) -> float:
    fn = _GEOMETRY_FEATURES[feature]
    return mmd_squared(fn(samples), fn(refs), bandwidth)


# ---------------------------------------------------------------------------
# aggregate generation metrics


def _fragment_cosine(set_a, set_b, fragment_fn) -> float:
    def counts(mols):
        c = {}
        for m in mols:
            for frag in fragment_fn(m):
                if frag is None:
                    continue
                k = canonical_key(frag)
                c[k] = c.get(k, 0) + 1
        return c

    ca, cb = counts(set_a), counts(set_b)
    keys = set(ca) | set(cb)
    if not keys:
        return 1.0
    va = np.array([ca.get(k, 0) for k in keys], dtype=float)
    vb = np.array([cb.get(k, 0) for k in keys], dtype=float)
    na, nb_ = np.linalg.norm(va), np.linalg.norm(vb)
    if na == 0 or nb_ == 0:
        return 0.0
    return float(va @ vb / (na * nb_))


def generation_metrics(samples, train_refs, test_refs) -> dict:
    """Validity/stability/uniqueness/novelty plus SNN, Frag and Scaf scores."""
    n = len(samples)
    if n == 0:
        raise ValueError("empty sample set")
    checks = [check_valence(m) for m in samples]
    atom_total = sum(m.n_atoms for m in samples)
    atom_ok = sum(int(c.atom_ok.sum()) for c in checks)
    valid_idx = [i for i, c in enumerate(checks) if c.valid]
    vc_idx = [i for i, c in enumerate(checks) if c.valid_and_complete]

    keys = [canonical_key(m) for m in samples]
    train_keys = {canonical_key(m) for m in train_refs}
    unique_valid = {keys[i] for i in valid_idx}
    novel_valid = {k for k in unique_valid if k not in train_keys}

    test_fps = [morgan_fingerprint(m) for m in test_refs]
    snn_vals = [
        max((tanimoto(morgan_fingerprint(m), fp) for fp in test_fps), default=0.0)
        for m in samples
    ]

    return {
        "validity": len(valid_idx) / n,
        "v_and_c": len(vc_idx) / n,
        "v_and_u": len(unique_valid) / n,
        "v_and_u_and_n": len(novel_valid) / n,
        "atom_stability": atom_ok / atom_total if atom_total else 0.0,
        "mol_stability": len(valid_idx) / n,
        "snn": float(np.mean(snn_vals)),
        "frag": _fragment_cosine(samples, test_refs, brics_like_fragments),
        "scaf": _fragment_cosine(samples, test_refs, lambda m: [murcko_scaffold(m)]),
    }
