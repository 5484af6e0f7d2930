import itertools

import numpy as np
import pytest

from diffspectra.metrics import (
    Fingerprint,
    acc_at_k,
    acc_curve,
    brics_like_fragments,
    cosine,
    extract_subgraph,
    fg_sim,
    find_bridges,
    fraggle_sim,
    functional_groups,
    generation_metrics,
    geometry_mmd,
    mces,
    mces_bruteforce,
    mmd_squared,
    morgan_fingerprint,
    murcko_scaffold,
    path_fingerprint,
    tanimoto,
    _hash,
)
from diffspectra.molgraph import MolecularGraph, canonical_key
from conftest import (
    make_benzene,
    make_dimethyl_ether,
    make_ethane,
    make_ethanol,
    make_formaldehyde,
    make_methane,
    make_methanol,
    random_labeled_graph,
)


class TestFingerprints:
    def test_morgan_permutation_invariant(self):
        m = make_ethanol()
        perm = np.random.default_rng(0).permutation(m.n_atoms)
        assert morgan_fingerprint(m) == morgan_fingerprint(m.permuted(perm))

    def test_methane_vs_ethane_differ(self):
        assert morgan_fingerprint(make_methane()) != morgan_fingerprint(make_ethane())

    def test_radius_zero_equals_atom_hash_oracle(self):
        m = make_ethanol()
        got = morgan_fingerprint(m, radius=0, n_bits=2048)
        expect = {
            _hash(("atom", s, int(c))) % 2048
            for s, c in zip(m.symbols, m.charges)
        }
        assert set(got.bits) == expect

    def test_path_fingerprint_permutation_invariant(self):
        m = make_ethanol()
        perm = np.random.default_rng(1).permutation(m.n_atoms)
        assert path_fingerprint(m) == path_fingerprint(m.permuted(perm))


class TestSimilarities:
    def test_identity(self):
        fp = morgan_fingerprint(make_ethanol())
        assert tanimoto(fp, fp) == 1.0
        assert cosine(fp, fp) == pytest.approx(1.0)

    def test_disjoint(self):
        a = Fingerprint(frozenset({1, 2}), 16)
        b = Fingerprint(frozenset({3, 4}), 16)
        assert tanimoto(a, b) == 0.0
        assert cosine(a, b) == 0.0

    def test_bit_arithmetic(self):
        # a = 1100, b = 1010
        a = Fingerprint(frozenset({0, 1}), 4)
        b = Fingerprint(frozenset({0, 2}), 4)
        assert tanimoto(a, b) == pytest.approx(1 / 3)
        assert cosine(a, b) == pytest.approx(1 / 2)

    def test_symmetry(self):
        fa = morgan_fingerprint(make_ethanol())
        fb = morgan_fingerprint(make_methanol())
        assert tanimoto(fa, fb) == tanimoto(fb, fa)
        assert cosine(fa, fb) == cosine(fb, fa)

    def test_empty_fingerprints(self):
        e = Fingerprint(frozenset(), 16)
        assert tanimoto(e, e) == 0.0
        assert cosine(e, e) == 0.0


class TestAccAtK:
    def test_hit_at_position_three(self):
        target = make_ethanol()
        cands = [make_methane(), make_ethane(), target, make_methanol(), make_benzene()]
        assert not acc_at_k(cands, target, 1)
        assert acc_at_k(cands, target, 5)

    def test_monotone_in_k(self):
        rng = np.random.default_rng(2)
        targets = [random_labeled_graph(rng) for _ in range(5)]
        cand_lists = [[random_labeled_graph(rng) for _ in range(6)] for _ in range(5)]
        for i in (0, 2):
            cand_lists[i][rng.integers(0, 6)] = targets[i]
        curve = acc_curve(targets, cand_lists, [1, 2, 3, 4, 5, 6])
        vals = [curve[k] for k in sorted(curve)]
        assert all(a <= b for a, b in zip(vals, vals[1:]))

    def test_hand_built_pattern(self):
        t = make_methane()
        other = make_ethane()
        targets = [t] * 10
        # targets 0..3 hit at position 0, targets 4..6 hit at position 2, rest miss
        lists = []
        for i in range(10):
            if i < 4:
                lists.append([t, other, other])
            elif i < 7:
                lists.append([other, other, t])
            else:
                lists.append([other, other, other])
        curve = acc_curve(targets, lists, [1, 3])
        assert curve[1] == pytest.approx(0.4)
        assert curve[3] == pytest.approx(0.7)


def _uniform_graph(n, edges):
    """All-carbon single-bond graph for label-free MCES cases."""
    return MolecularGraph.from_atoms(
        ["C"] * n, [0] * n, [(i, j, 1) for i, j in edges], np.zeros((n, 3))
    )


class TestMCES:
    def test_identical_triangles(self):
        tri = _uniform_graph(3, [(0, 1), (1, 2), (0, 2)])
        res = mces(tri, tri)
        assert res.common_edges == 3
        assert res.distance == 0
        assert res.exact

    def test_path_vs_star(self):
        # two adjacent path edges embed into the star through its center, so
        # the maximum common edge subgraph has 2 edges (exhaustively verified)
        path = _uniform_graph(4, [(0, 1), (1, 2), (2, 3)])
        star = _uniform_graph(4, [(0, 1), (0, 2), (0, 3)])
        assert mces_bruteforce(path, star) == 2
        res = mces(path, star)
        assert res.common_edges == 2
        assert res.distance == 3 + 3 - 2 * 2

    def test_symmetric(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            g1, g2 = random_labeled_graph(rng), random_labeled_graph(rng)
            assert mces(g1, g2).common_edges == mces(g2, g1).common_edges

    def test_matches_bruteforce_random_pairs(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            g1, g2 = random_labeled_graph(rng), random_labeled_graph(rng)
            res = mces(g1, g2)
            assert res.exact
            assert res.common_edges == mces_bruteforce(g1, g2)

    def test_distance_zero_iff_isomorphic(self):
        m = make_ethanol()
        perm = np.random.default_rng(5).permutation(m.n_atoms)
        assert mces(m, m.permuted(perm)).distance == 0
        assert mces(make_ethanol(), make_dimethyl_ether()).distance > 0

    def test_labels_respected(self):
        a = _uniform_graph(2, [(0, 1)])
        b = MolecularGraph.from_atoms(["C", "O"], [0, 0], [(0, 1, 1)], np.zeros((2, 3)))
        assert mces(a, b).common_edges == 0

    def test_timeout_flagged_not_wrong(self):
        rng = np.random.default_rng(6)
        g1 = random_labeled_graph(rng, n_max=6, p_edge=0.9)
        g2 = random_labeled_graph(rng, n_max=6, p_edge=0.9)
        res = mces(g1, g2, timeout_s=0.0)
        assert not res.exact
        # best-found is a lower bound on the true optimum
        assert res.common_edges <= mces_bruteforce(g1, g2)

    def test_empty_edge_set(self):
        lone = MolecularGraph.from_atoms(["C"], [0], [], np.zeros((1, 3)))
        res = mces(lone, make_methane())
        assert res.common_edges == 0
        assert res.distance == 4
        assert res.exact


class TestFragments:
    def test_bridges_in_benzene(self):
        bridges = set(find_bridges(make_benzene()))
        # ring bonds are in a cycle; only the six C-H bonds are bridges
        assert bridges == {(i, i + 6) for i in range(6)}

    def test_brics_fragments_of_ethanol_are_atoms(self):
        frags = brics_like_fragments(make_ethanol())
        assert len(frags) == 9
        assert all(f.n_atoms == 1 for f in frags)

    def test_murcko_benzene_is_ring(self):
        scaf = murcko_scaffold(make_benzene())
        assert scaf is not None and scaf.n_atoms == 6
        assert all(s == "C" for s in scaf.symbols)

    def test_murcko_acyclic_is_none(self):
        assert murcko_scaffold(make_ethanol()) is None


class TestFraggle:
    def test_self_similarity_one(self):
        assert fraggle_sim(make_ethanol(), make_ethanol()) == 1.0

    def test_benzene_falls_back_to_whole_molecule(self):
        b = make_benzene()
        e = make_ethane()
        # C-H cuts leave no fragment with 3+ atoms besides the near-whole
        # molecule; degenerate fragmentation must still return a score
        got = fraggle_sim(b, e)
        assert 0.0 <= got <= 1.0
        assert got >= tanimoto(path_fingerprint(b), path_fingerprint(e))

    def test_ethanol_vs_ethane_hand_enumeration(self):
        target, cand = make_ethanol(), make_ethane()
        cand_fp = path_fingerprint(cand)

        # independent enumeration: remove every 1- and 2-subset of bonds,
        # collect connected components with >= 3 atoms
        bonds = [(i, j) for i, j, _ in target.bonds()]
        frag_keys, best = {}, tanimoto(path_fingerprint(target), cand_fp)
        for r in (1, 2):
            for cut in itertools.combinations(bonds, r):
                removed = set(cut)
                n = target.n_atoms
                seen = [False] * n
                for s in range(n):
                    if seen[s]:
                        continue
                    stack, comp = [s], set()
                    seen[s] = True
                    while stack:
                        v = stack.pop()
                        comp.add(v)
                        for w, _ in target.neighbors(v):
                            pair = (min(v, w), max(v, w))
                            if pair not in removed and not seen[w]:
                                seen[w] = True
                                stack.append(w)
                    if len(comp) >= 3:
                        frag = extract_subgraph(target, comp)
                        best = max(best, tanimoto(path_fingerprint(frag), cand_fp))
        assert fraggle_sim(target, cand) == pytest.approx(best)
        # the ethyl fragment matches ethane better than whole ethanol does
        assert best > tanimoto(path_fingerprint(target), cand_fp)


class TestFunctionalGroups:
    def test_ethanol(self):
        assert functional_groups(make_ethanol()) == {"alcohol", "alkane"}

    def test_ethane(self):
        assert functional_groups(make_ethane()) == {"alkane"}

    def test_fg_sim_ethanol_ethane(self):
        assert fg_sim(make_ethanol(), make_ethane()) == pytest.approx(0.5)

    def test_self_one_and_disjoint_zero(self):
        assert fg_sim(make_ethanol(), make_ethanol()) == 1.0
        assert fg_sim(make_benzene(), make_methanol()) == 0.0

    def test_ether_vs_ester(self):
        assert "ether" in functional_groups(make_dimethyl_ether())
        # methyl formate: H-C(=O)-O-CH3
        ester = MolecularGraph.from_atoms(
            ["C", "O", "O", "C", "H", "H", "H", "H"],
            [0] * 8,
            [(0, 1, 2), (0, 2, 1), (2, 3, 1), (0, 4, 1), (3, 5, 1), (3, 6, 1), (3, 7, 1)],
            np.zeros((8, 3)),
        )
        fgs = functional_groups(ester)
        assert "ester" in fgs and "ether" not in fgs

    def test_acid_vs_alcohol(self):
        # acetic acid CH3-C(=O)-OH
        acid = MolecularGraph.from_atoms(
            ["C", "C", "O", "O", "H", "H", "H", "H"],
            [0] * 8,
            [(0, 1, 1), (1, 2, 2), (1, 3, 1), (3, 4, 1), (0, 5, 1), (0, 6, 1), (0, 7, 1)],
            np.zeros((8, 3)),
        )
        fgs = functional_groups(acid)
        assert "carboxylic_acid" in fgs and "alcohol" not in fgs

    def test_carbonyl_split(self):
        assert "aldehyde" in functional_groups(make_formaldehyde())
        # acetone CH3-CO-CH3
        ketone = MolecularGraph.from_atoms(
            ["C", "C", "C", "O", "H", "H", "H", "H", "H", "H"],
            [0] * 10,
            [(0, 1, 1), (1, 2, 1), (1, 3, 2),
             (0, 4, 1), (0, 5, 1), (0, 6, 1), (2, 7, 1), (2, 8, 1), (2, 9, 1)],
            np.zeros((10, 3)),
        )
        fgs = functional_groups(ketone)
        assert "ketone" in fgs and "aldehyde" not in fgs

    def test_amines_by_hydrogen_count(self):
        def amine(n_me):
            symbols = ["N"] + ["C"] * n_me + ["H"] * (3 - n_me) + ["H"] * (3 * n_me)
            bonds = [(0, 1 + k, 1) for k in range(n_me)]
            bonds += [(0, 1 + n_me + k, 1) for k in range(3 - n_me)]
            h0 = 1 + n_me + (3 - n_me)
            for k in range(n_me):
                for t in range(3):
                    bonds.append((1 + k, h0 + 3 * k + t, 1))
            n = len(symbols)
            return MolecularGraph.from_atoms(symbols, [0] * n, bonds, np.zeros((n, 3)))

        assert "primary_amine" in functional_groups(amine(1))
        assert "secondary_amine" in functional_groups(amine(2))
        assert "tertiary_amine" in functional_groups(amine(3))

    def test_nitrile_aromatic_halide(self):
        nitrile = MolecularGraph.from_atoms(
            ["C", "C", "N", "H", "H", "H"], [0] * 6,
            [(0, 1, 1), (1, 2, 3), (0, 3, 1), (0, 4, 1), (0, 5, 1)], np.zeros((6, 3)))
        assert "nitrile" in functional_groups(nitrile)
        assert "aromatic_ring" in functional_groups(make_benzene())
        chf = MolecularGraph.from_atoms(
            ["C", "F", "H", "H", "H"], [0] * 5,
            [(0, 1, 1), (0, 2, 1), (0, 3, 1), (0, 4, 1)], np.zeros((5, 3)))
        assert "halide_f" in functional_groups(chf)

    def test_permutation_invariant(self):
        m = make_ethanol()
        perm = np.random.default_rng(7).permutation(m.n_atoms)
        assert functional_groups(m) == functional_groups(m.permuted(perm))


class TestMMD:
    def test_identical_sets_zero(self):
        mols = [make_ethanol(), make_methane()]
        for feat in ("bond", "angle", "dihedral"):
            assert geometry_mmd(mols, mols, feat) < 1e-10

    def test_hand_kernel_sum(self):
        x = np.array([1.0, 2.0, 3.0])
        y = np.array([1.0, 2.0, 4.0])
        bw = 1.0

        def k(a, b):
            return np.exp(-((a - b) ** 2) / 2.0)

        kxx = np.mean([[k(a, b) for b in x] for a in x])
        kyy = np.mean([[k(a, b) for b in y] for a in y])
        kxy = np.mean([[k(a, b) for b in y] for a in x])
        assert mmd_squared(x, y, bandwidth=bw) == pytest.approx(kxx + kyy - 2 * kxy)

    def test_distant_populations_near_max(self):
        x = np.zeros(3)
        y = np.full(3, 1000.0)
        assert mmd_squared(x, y, bandwidth=1.0) == pytest.approx(2.0)

    def test_empty_population_raises(self):
        with pytest.raises(ValueError):
            mmd_squared(np.array([]), np.array([1.0]))


class TestGenerationMetrics:
    def test_self_comparison(self):
        refs = [make_methane(), make_ethanol(), make_methanol()]
        rep = generation_metrics(refs, train_refs=[make_benzene()], test_refs=refs)
        assert rep["validity"] == 1.0
        assert rep["v_and_c"] == 1.0
        assert rep["snn"] == pytest.approx(1.0)
        assert rep["frag"] == pytest.approx(1.0)
        assert rep["scaf"] == pytest.approx(1.0)
        assert rep["v_and_u_and_n"] == 1.0  # none of the refs are in train

    def test_disconnected_sample_not_complete(self):
        symbols = ["C"] + ["H"] * 4 + ["C"] + ["H"] * 4
        bonds = [(0, i, 1) for i in range(1, 5)] + [(5, i, 1) for i in range(6, 10)]
        two_methanes = MolecularGraph.from_atoms(symbols, [0] * 10, bonds, np.zeros((10, 3)))
        rep = generation_metrics([two_methanes], [make_ethane()], [make_ethane()])
        assert rep["validity"] == 1.0
        assert rep["v_and_c"] == 0.0

    def test_uniqueness_novelty_hand_oracle(self):
        m1, m2 = make_methane(), make_ethanol()
        samples = [m1, m1, m2, m2, m2]  # 2 unique valid, m1 known from train
        rep = generation_metrics(samples, train_refs=[m1], test_refs=[m2])
        assert rep["v_and_u"] == pytest.approx(2 / 5)
        assert rep["v_and_u_and_n"] == pytest.approx(1 / 5)

    def test_atom_stability_counts_atoms(self):
        bad = MolecularGraph.from_atoms(
            ["C", "H"], [0, 0], [(0, 1, 1)], np.zeros((2, 3)))  # carbon valence 1
        rep = generation_metrics([bad], [make_methane()], [make_methane()])
        assert rep["atom_stability"] == pytest.approx(0.5)
        assert rep["mol_stability"] == 0.0

    def test_metric_ranges(self):
        rng = np.random.default_rng(8)
        samples = [random_labeled_graph(rng) for _ in range(6)]
        refs = [make_methane(), make_ethanol()]
        rep = generation_metrics(samples, refs, refs)
        for v in rep.values():
            assert 0.0 <= v <= 1.0
