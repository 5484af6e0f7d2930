"""Spectra container, QM9S-style corpus ingestion, and surrogate spectra."""

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .molgraph import ATOM_TYPES, BOND_CLASSES, MolecularGraph

UV_LEN = 601  # 1.5-13.5 eV at 0.02 eV
IR_LEN = 3501  # 500-4000 cm^-1 at 1 cm^-1
RAMAN_LEN = 3501

UV_GRID = np.linspace(1.5, 13.5, UV_LEN)
VIB_GRID = np.linspace(500.0, 4000.0, IR_LEN)

SPLIT_FRACTIONS = (0.90, 0.05, 0.05)


@dataclass
class SpectraSet:
    """Aligned UV-Vis / IR / Raman spectra for one molecule."""

    uv: np.ndarray  # [601]
    ir: np.ndarray  # [3501]
    raman: np.ndarray  # [3501]

    def __post_init__(self):
        self.uv = np.asarray(self.uv, dtype=np.float64)
        self.ir = np.asarray(self.ir, dtype=np.float64)
        self.raman = np.asarray(self.raman, dtype=np.float64)
        for name, arr, length in (
            ("uv", self.uv, UV_LEN),
            ("ir", self.ir, IR_LEN),
            ("raman", self.raman, RAMAN_LEN),
        ):
            if arr.shape != (length,):
                raise ValueError(f"{name} spectrum must have length {length}, got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} spectrum contains non-finite values")
            if np.any(arr < 0):
                raise ValueError(f"{name} spectrum contains negative intensities")

    def modality(self, name: str) -> np.ndarray:
        return {"uv": self.uv, "ir": self.ir, "raman": self.raman}[name]

    def normalized(self) -> "SpectraSet":
        """Min-max normalize each spectrum independently (flat spectra map to 0)."""

        def mm(v):
            lo, hi = v.min(), v.max()
            return (v - lo) / (hi - lo) if hi > lo else np.zeros_like(v)

        return SpectraSet(mm(self.uv), mm(self.ir), mm(self.raman))


@dataclass
class DatasetSplit:
    train: list
    val: list
    test: list

    def to_json(self) -> str:
        return json.dumps({"train": self.train, "val": self.val, "test": self.test})

    @classmethod
    def from_json(cls, s: str) -> "DatasetSplit":
        d = json.loads(s)
        return cls(d["train"], d["val"], d["test"])


def make_split(n: int, seed: int) -> DatasetSplit:
    """Deterministic 90/5/5 shuffle split of range(n)."""
    rng = np.random.default_rng(seed)
    idx = rng.permutation(n).tolist()
    n_train = int(n * SPLIT_FRACTIONS[0])
    n_val = int(n * SPLIT_FRACTIONS[1])
    return DatasetSplit(idx[:n_train], idx[n_train : n_train + n_val], idx[n_train + n_val :])


class CorpusError(Exception):
    pass


def parse_record(rec: dict) -> tuple:
    """(MolecularGraph, SpectraSet) from one JSONL record dict."""
    mol = MolecularGraph.from_record(rec)
    spec = SpectraSet(rec["uv"], rec["ir"], rec["raman"])
    return mol, spec


def load_corpus(path, split_seed: int):
    """Load a JSONL corpus; returns (records, split, diagnostics).

    records is a list of (MolecularGraph, SpectraSet); malformed lines are
    skipped and reported in diagnostics as (line_number, message).
    """
    records, diagnostics = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(parse_record(json.loads(line)))
            except (ValueError, KeyError, TypeError) as exc:
                diagnostics.append((lineno, str(exc)))
    if not records:
        raise CorpusError(f"no valid records in {path}")
    return records, make_split(len(records), split_seed), diagnostics


def write_corpus(path, records):
    """Write (MolecularGraph, SpectraSet) pairs as JSONL."""
    with open(path, "w") as fh:
        for mol, spec in records:
            rec = mol.to_record()
            rec["uv"] = [float(v) for v in spec.uv]
            rec["ir"] = [float(v) for v in spec.ir]
            rec["raman"] = [float(v) for v in spec.raman]
            fh.write(json.dumps(rec) + "\n")


# vibrational band centers (cm^-1) keyed by (sorted element pair, bond class name)
IR_BAND_TABLE = {
    (("C", "H"), "single"): 2950.0,
    (("H", "O"), "single"): 3400.0,
    (("H", "N"), "single"): 3300.0,
    (("C", "O"), "double"): 1700.0,
    (("C", "C"), "single"): 1000.0,
    (("C", "C"), "double"): 1650.0,
    (("C", "C"), "triple"): 2150.0,
    (("C", "C"), "aromatic"): 1600.0,
    (("C", "N"), "single"): 1200.0,
    (("C", "N"), "double"): 1670.0,
    (("C", "N"), "triple"): 2250.0,
    (("C", "N"), "aromatic"): 1340.0,
    (("C", "O"), "single"): 1100.0,
    (("C", "F"), "single"): 1150.0,
    (("N", "O"), "single"): 900.0,
    (("N", "O"), "double"): 1550.0,
    (("N", "N"), "single"): 950.0,
    (("N", "N"), "double"): 1575.0,
    (("O", "O"), "single"): 850.0,
}

# relative Raman activity per band (dimensionless, fixed constants)
RAMAN_WEIGHT_TABLE = {
    (("C", "H"), "single"): 0.6,
    (("H", "O"), "single"): 0.3,
    (("H", "N"), "single"): 0.4,
    (("C", "O"), "double"): 0.8,
    (("C", "C"), "single"): 1.0,
    (("C", "C"), "double"): 1.6,
    (("C", "C"), "triple"): 2.0,
    (("C", "C"), "aromatic"): 1.8,
    (("C", "N"), "single"): 0.7,
    (("C", "N"), "double"): 1.2,
    (("C", "N"), "triple"): 1.5,
    (("C", "N"), "aromatic"): 1.3,
    (("C", "O"), "single"): 0.5,
    (("C", "F"), "single"): 0.4,
    (("N", "O"), "single"): 0.5,
    (("N", "O"), "double"): 0.9,
    (("N", "N"), "single"): 0.6,
    (("N", "N"), "double"): 1.1,
    (("O", "O"), "single"): 0.7,
}

VIB_WIDTH = 20.0  # cm^-1
UV_WIDTH = 0.5  # eV
UV_BASE = 9.0  # eV
UV_SHIFT = 0.4  # eV per double/aromatic bond


def _fallback_center(pair, cls_name: str) -> float:
    """Deterministic band center for pairs outside the table, within the grid."""
    digest = hashlib.blake2b(repr((pair, cls_name)).encode(), digest_size=8).digest()
    return 600.0 + (int.from_bytes(digest, "big") % 2800)


def _band(pair, cls_name):
    center = IR_BAND_TABLE.get((pair, cls_name))
    if center is None:
        center = _fallback_center(pair, cls_name)
    weight = RAMAN_WEIGHT_TABLE.get((pair, cls_name), 0.8)
    return center, weight


def bond_type_counts(m: MolecularGraph) -> dict:
    """Multiset of (sorted element pair, bond class name) -> count."""
    counts = {}
    for i, j, cls_ in m.bonds():
        pair = tuple(sorted((m.symbols[i], m.symbols[j])))
        key = (pair, BOND_CLASSES[cls_])
        counts[key] = counts.get(key, 0) + 1
    return counts


def surrogate_spectra(m: MolecularGraph) -> SpectraSet:
    """Deterministic stand-in spectra computed from the bond-type multiset.

    IR/Raman are Gaussian bands at fixed per-bond-type centers with height
    equal to the bond count (Raman scaled by a per-band weight); UV is a
    single Gaussian whose center shifts down with the number of double and
    aromatic bonds.
    """
    counts = bond_type_counts(m)
    ir = np.zeros(IR_LEN)
    raman = np.zeros(RAMAN_LEN)
    for (pair, cls_name), count in sorted(counts.items()):
        center, weight = _band(pair, cls_name)
        profile = np.exp(-0.5 * ((VIB_GRID - center) / VIB_WIDTH) ** 2)
        ir += count * profile
        raman += count * weight * profile

    n_unsat = sum(
        count for (_, cls_name), count in counts.items() if cls_name in ("double", "aromatic")
    )
    uv_center = float(np.clip(UV_BASE - UV_SHIFT * n_unsat, UV_GRID[0], UV_GRID[-1]))
    uv = np.exp(-0.5 * ((UV_GRID - uv_center) / UV_WIDTH) ** 2)
    return SpectraSet(uv, ir, raman)
