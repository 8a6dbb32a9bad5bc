"""Robustness and utility measures for fingerprinted databases."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.special import erfc

from .keyed_randomness import Fingerprint
from .snp_model import SnpDatabase
from .synth_data import CaseControlSplit
from .vanilla_scheme import ExtractedFingerprint


def per_cmp(original: Fingerprint, extracted: ExtractedFingerprint) -> float:
    """Fraction of bits that differ or could not be determined."""
    if len(original.bits) != len(extracted.bits):
        raise ValueError("fingerprint lengths differ")
    return float(np.mean(extracted.bits != original.bits.astype(np.int8)))


def _check_aligned(a: SnpDatabase, b: SnpDatabase):
    if a.shape != b.shape or a.primary_keys != b.primary_keys or a.loci != b.loci:
        raise ValueError("databases differ in shape, row keys or loci")


def accuracy(original: SnpDatabase, other: SnpDatabase) -> float:
    _check_aligned(original, other)
    return float(np.mean(original.cells == other.cells))


def per_chg(original: SnpDatabase, other: SnpDatabase) -> float:
    _check_aligned(original, other)
    return float(np.mean(original.cells != other.cells))


@dataclass(frozen=True, eq=False)
class PValueTable:
    loci: tuple
    counts: np.ndarray  # (N, 6): C0, C1, C2, S0, S1, S2
    odds_ratio: np.ndarray
    z: np.ndarray
    p: np.ndarray
    degenerate: np.ndarray

    def __len__(self):
        return len(self.loci)

    def top(self, k: int) -> np.ndarray:
        if not 1 <= k <= len(self.loci):
            raise ValueError(f"k must lie in [1, {len(self.loci)}]")
        return np.argsort(self.p, kind="stable")[:k]

    def save(self, path) -> None:
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["locus", "C0", "C1", "C2", "S0", "S1", "S2", "or", "z", "p"])
            for j, locus in enumerate(self.loci):
                out.writerow([locus, *map(int, self.counts[j]),
                              repr(float(self.odds_ratio[j])), repr(float(self.z[j])), repr(float(self.p[j]))])


def odds_ratio_test(control: np.ndarray, case: np.ndarray):
    """Allelic odds ratio, z-score and two-sided p-value per locus.

    ``control`` and ``case`` hold per-locus counts of decoded values 0/1/2,
    shape ``(N, 3)``.  Loci with an empty cell in the 2x2 collapse are
    flagged and given ``p = 1``.
    """
    c0 = control[:, 0].astype(float)
    c12 = control[:, 1] + control[:, 2].astype(float)
    s0 = case[:, 0].astype(float)
    s12 = case[:, 1] + case[:, 2].astype(float)
    degenerate = (c0 == 0) | (c12 == 0) | (s0 == 0) | (s12 == 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = c0 * s12 / (s0 * c12)
        stderr = np.sqrt(1 / s12 + 1 / s0 + 1 / c12 + 1 / c0)
        z = np.log(ratio) / stderr
    p = erfc(np.abs(z) / np.sqrt(2))
    ratio[degenerate] = np.nan
    z[degenerate] = np.nan
    p[degenerate] = 1.0
    return ratio, z, p, degenerate


def pvalues(db: SnpDatabase, split: CaseControlSplit) -> PValueTable:
    is_case = split.case_mask(db)
    dec = db.decoded()

    def tally(rows):
        return np.stack([(dec[rows] == v).sum(axis=0) for v in range(3)], axis=1)

    control, case = tally(~is_case), tally(is_case)
    ratio, z, p, degenerate = odds_ratio_test(control, case)
    return PValueTable(db.loci, np.hstack([control, case]), ratio, z, p, degenerate)


def topk_consistency(reference: PValueTable, candidate: PValueTable, k: int = 50) -> float:
    if reference.loci != candidate.loci:
        raise ValueError("p-value tables cover different loci")
    shared = np.intersect1d(reference.top(k), candidate.top(k))
    return len(shared) / k
