"""Tour of the structure-elucidation metrics on hand-built molecules.

Run: python3 demos/metrics_tour.py
"""

import numpy as np

from diffspectra.metrics import (
    fg_sim,
    fraggle_sim,
    functional_groups,
    mces,
    morgan_fingerprint,
    tanimoto,
)
from diffspectra.molgraph import MolecularGraph


def molecule(symbols, bonds):
    rng = np.random.default_rng(0)
    n = len(symbols)
    return MolecularGraph.from_atoms(symbols, [0] * n, bonds, rng.normal(size=(n, 3)))


def main():
    ethanol = molecule(
        ["C", "C", "O", "H", "H", "H", "H", "H", "H"],
        [(0, 1, 1), (1, 2, 1), (2, 8, 1),
         (0, 3, 1), (0, 4, 1), (0, 5, 1), (1, 6, 1), (1, 7, 1)],
    )
    dimethyl_ether = molecule(
        ["C", "O", "C", "H", "H", "H", "H", "H", "H"],
        [(0, 1, 1), (1, 2, 1),
         (0, 3, 1), (0, 4, 1), (0, 5, 1), (2, 6, 1), (2, 7, 1), (2, 8, 1)],
    )
    ethane = molecule(
        ["C", "C", "H", "H", "H", "H", "H", "H"],
        [(0, 1, 1), (0, 2, 1), (0, 3, 1), (0, 4, 1), (1, 5, 1), (1, 6, 1), (1, 7, 1)],
    )

    pairs = [("ethanol vs itself", ethanol, ethanol),
             ("ethanol vs dimethyl ether", ethanol, dimethyl_ether),
             ("ethanol vs ethane", ethanol, ethane)]

    for name, a, b in pairs:
        res = mces(a, b)
        tani = tanimoto(morgan_fingerprint(a), morgan_fingerprint(b))
        print(f"{name}:")
        print(f"  MCES common edges {res.common_edges}, distance {res.distance}"
              f" (exact={res.exact})")
        print(f"  Morgan Tanimoto {tani:.3f}")
        print(f"  Fraggle {fraggle_sim(a, b):.3f}")
        print(f"  FG similarity {fg_sim(a, b):.3f}")

    print("\nfunctional groups:")
    for name, m in (("ethanol", ethanol), ("dimethyl ether", dimethyl_ether),
                    ("ethane", ethane)):
        print(f"  {name}: {sorted(functional_groups(m))}")


if __name__ == "__main__":
    main()
