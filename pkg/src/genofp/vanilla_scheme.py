"""Vanilla fingerprint insertion and majority-vote extraction."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .keyed_randomness import FINGERPRINT_BITS, Fingerprint, as_bytes, gen_fingerprint, u_select
from .snp_model import FingerprintMask, SnpDatabase

UNDETERMINED = -1


@dataclass(frozen=True)
class InsertionParams:
    gamma_r: float
    gamma_l: float
    key: bytes
    sp_id: int = 0

    def __post_init__(self):
        _check_density(self.gamma_r, "gamma_r")
        _check_density(self.gamma_l, "gamma_l")
        object.__setattr__(self, "key", as_bytes(self.key))


@dataclass(frozen=True)
class ExtractionParams:
    gamma_r: float
    gamma_l: float
    key: bytes
    tau: float = 0.7

    def __post_init__(self):
        _check_density(self.gamma_r, "gamma_r")
        _check_density(self.gamma_l, "gamma_l")
        if not 0.5 < self.tau <= 1:
            raise ValueError("tau must lie in (0.5, 1]")
        object.__setattr__(self, "key", as_bytes(self.key))


def _check_density(value, name):
    if not 0 < value <= 1:
        raise ValueError(f"{name} must lie in (0, 1]")


def modulus(gamma: float) -> int:
    # small epsilon so that e.g. 1/0.1 does not floor to 9
    return int(np.floor(1.0 / gamma + 1e-9))


class SelectedCells(NamedTuple):
    """Cells chosen by the keyed channels, in row-major order."""

    rows: np.ndarray
    cols: np.ndarray
    mask_bits: np.ndarray
    positions: np.ndarray
    bit_offsets: np.ndarray  # 0 = last bit, 1 = second-to-last bit


def select_cells(db: SnpDatabase, key: bytes, gamma_r: float, gamma_l: float,
                 length: int = FINGERPRINT_BITS) -> SelectedCells:
    row_mod, col_mod = modulus(gamma_r), modulus(gamma_l)
    loci = [as_bytes(p) for p in db.loci]
    rows, cols, xs, ls, ts = [], [], [], [], []
    for i, pk in enumerate(db.primary_keys):
        pk = as_bytes(pk)
        if u_select(1, key, pk) % row_mod:
            continue
        for j, locus in enumerate(loci):
            if u_select(2, key, pk, locus) % col_mod:
                continue
            rows.append(i)
            cols.append(j)
            xs.append(u_select(3, key, pk, locus) % 2)
            ls.append(u_select(4, key, pk, locus) % length)
            ts.append(u_select(5, key, pk, locus) % 2)
    as_int = lambda v: np.array(v, dtype=np.int64)
    return SelectedCells(as_int(rows), as_int(cols), as_int(xs), as_int(ls), as_int(ts))


def insert_fingerprint(db: SnpDatabase, params: InsertionParams) -> tuple[SnpDatabase, FingerprintMask]:
    fp = gen_fingerprint(params.key, params.sp_id)
    sel = select_cells(db, params.key, params.gamma_r, params.gamma_l)
    marks = sel.mask_bits ^ fp.bits[sel.positions].astype(np.int64)
    cells = db.cells.copy()
    old = cells[sel.rows, sel.cols].astype(np.int64)
    new = (old & ~(1 << sel.bit_offsets)) | (marks << sel.bit_offsets)
    cells[sel.rows, sel.cols] = new
    marked = np.zeros(db.shape, dtype=bool)
    marked[sel.rows, sel.cols] = True
    return db.with_cells(cells), FingerprintMask(marked)


@dataclass(frozen=True, eq=False)
class ExtractedFingerprint:
    bits: np.ndarray  # values in {0, 1, UNDETERMINED}
    votes: np.ndarray  # shape (L, 2): columns c0, c1

    @property
    def n_undetermined(self) -> int:
        return int((self.bits == UNDETERMINED).sum())

    def __len__(self):
        return len(self.bits)


def vote(c0: np.ndarray, c1: np.ndarray, tau: float) -> np.ndarray:
    total = c0 + c1
    bits = np.full(len(total), UNDETERMINED, dtype=np.int8)
    with np.errstate(invalid="ignore", divide="ignore"):
        # ratios compared with a tiny slack so 7/10 >= 0.7 holds in floating point
        bits[(total > 0) & (c1 / total >= tau - 1e-12)] = 1
        bits[(total > 0) & (c0 / total >= tau - 1e-12)] = 0
    return bits


def extract_fingerprint(db: SnpDatabase, params: ExtractionParams,
                        length: int = FINGERPRINT_BITS) -> ExtractedFingerprint:
    sel = select_cells(db, params.key, params.gamma_r, params.gamma_l, length)
    read = (db.cells[sel.rows, sel.cols].astype(np.int64) >> sel.bit_offsets) & 1
    recovered = read ^ sel.mask_bits
    c1 = np.bincount(sel.positions[recovered == 1], minlength=length)
    c0 = np.bincount(sel.positions[recovered == 0], minlength=length)
    return ExtractedFingerprint(vote(c0, c1, params.tau), np.stack([c0, c1], axis=1))


def detect_traitor(db: SnpDatabase, params: ExtractionParams,
                   registry: list[Fingerprint] | list[tuple[int, Fingerprint]]) -> list[tuple[int, int]]:
    """Rank service providers by the number of determined bits they match."""
    if not registry:
        raise ValueError("registry must not be empty")
    extracted = extract_fingerprint(db, params)
    return rank_matches(extracted, registry)


def rank_matches(extracted: ExtractedFingerprint, registry) -> list[tuple[int, int]]:
    scores = []
    for entry in registry:
        sp_id, fp = entry if isinstance(entry, tuple) else (entry.sp_id, entry)
        score = int(np.sum(extracted.bits == fp.bits.astype(np.int8)))
        scores.append((int(sp_id), score))
    return sorted(scores, key=lambda s: (-s[1], s[0]))
