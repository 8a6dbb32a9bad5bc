"""SNP database types, 2-bit code handling and CSV persistence.

A cell holds the raw 2-bit code of a SNP.  Freshly encoded values use
``00``, ``01`` and ``10`` for 0, 1 and 2 minor alleles, which means the raw
integer equals the allele count.  Fingerprint marking can leave a ``11``
code behind; it is stored as-is and decodes to 2.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np

VALID_CODES = (0b00, 0b01, 0b10, 0b11)
SEPARATOR = "|"


class DataError(ValueError):
    """Raised for malformed or inconsistent input data."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


def decode_count(code: int) -> int:
    if code not in VALID_CODES:
        raise DataError(f"invalid SNP code {code!r}")
    return min(int(code), 2)


def decode(cells: np.ndarray) -> np.ndarray:
    """Vectorised :func:`decode_count` (``11`` saturates to 2)."""
    return np.minimum(cells, 2).astype(np.int8)


def encode(counts: np.ndarray) -> np.ndarray:
    counts = np.asarray(counts)
    if counts.size and (counts.min() < 0 or counts.max() > 2):
        raise DataError("minor-allele counts must lie in {0, 1, 2}")
    return counts.astype(np.uint8)


def _check_ids(ids: Iterable[str], what: str) -> tuple[str, ...]:
    ids = tuple(str(x) for x in ids)
    seen = set()
    for x in ids:
        if x in seen:
            raise DataError(f"duplicate {what} {x!r}")
        if SEPARATOR in x:
            raise DataError(f"{what} {x!r} contains the reserved character {SEPARATOR!r}")
        seen.add(x)
    return ids


@dataclass(frozen=True, eq=False)
class SnpDatabase:
    """M individuals (rows) by N loci (columns) of raw SNP codes."""

    primary_keys: tuple[str, ...]
    loci: tuple[str, ...]
    cells: np.ndarray

    def __post_init__(self):
        keys = _check_ids(self.primary_keys, "primary key")
        loci = _check_ids(self.loci, "locus")
        cells = np.array(self.cells, dtype=np.uint8, copy=True).reshape(len(keys), len(loci))
        if cells.size and cells.max() > 3:
            raise DataError("SNP code out of range 0-3")
        cells.setflags(write=False)
        object.__setattr__(self, "primary_keys", keys)
        object.__setattr__(self, "loci", loci)
        object.__setattr__(self, "cells", cells)

    @property
    def shape(self) -> tuple[int, int]:
        return self.cells.shape

    @property
    def n_rows(self) -> int:
        return self.cells.shape[0]

    @property
    def n_loci(self) -> int:
        return self.cells.shape[1]

    def decoded(self) -> np.ndarray:
        return decode(self.cells)

    def with_cells(self, cells: np.ndarray) -> "SnpDatabase":
        return SnpDatabase(self.primary_keys, self.loci, cells)

    def row_index(self) -> dict[str, int]:
        return {k: i for i, k in enumerate(self.primary_keys)}

    def locus_index(self) -> dict[str, int]:
        return {p: j for j, p in enumerate(self.loci)}

    def __eq__(self, other):
        if not isinstance(other, SnpDatabase):
            return NotImplemented
        return (
            self.primary_keys == other.primary_keys
            and self.loci == other.loci
            and np.array_equal(self.cells, other.cells)
        )

    def __repr__(self):
        return f"SnpDatabase({self.n_rows} rows x {self.n_loci} loci)"


class Trio(NamedTuple):
    family_id: str
    mother: str
    father: str
    child: str


@dataclass(frozen=True)
class Pedigree:
    trios: tuple[Trio, ...]

    def __post_init__(self):
        trios = tuple(Trio(*map(str, t)) for t in self.trios)
        seen = set()
        for t in trios:
            for key in t[1:]:
                if key in seen:
                    raise DataError(f"individual {key!r} appears in more than one trio role")
                seen.add(key)
        object.__setattr__(self, "trios", trios)

    def __len__(self):
        return len(self.trios)

    def indices(self, db: SnpDatabase) -> np.ndarray:
        """Row indices as an ``(F, 3)`` array ordered mother, father, child."""
        index = db.row_index()
        out = np.empty((len(self.trios), 3), dtype=np.int64)
        for f, t in enumerate(self.trios):
            for r, key in enumerate(t[1:]):
                if key not in index:
                    raise DataError(f"pedigree key {key!r} not found in database")
                out[f, r] = index[key]
        return out

    def parent_child_pairs(self) -> list[tuple[str, str]]:
        pairs = []
        for t in self.trios:
            pairs.append((t.mother, t.child))
            pairs.append((t.father, t.child))
        return pairs


@dataclass(frozen=True)
class SimilarityModel:
    """Public row-wise model: inner products of parent/child allele counts."""

    entries: dict = field(default_factory=dict)

    def __getitem__(self, pair):
        return self.entries[pair]

    def __len__(self):
        return len(self.entries)


@dataclass(frozen=True)
class JointModel:
    """Public column-wise model: 3x3 joint tables for locus pairs ``(p, q)``."""

    entries: dict = field(default_factory=dict)

    def __getitem__(self, pair):
        return self.entries[pair]

    def __len__(self):
        return len(self.entries)

    def pairs(self) -> list[tuple[str, str]]:
        return list(self.entries)

    def marginal(self, locus: str) -> np.ndarray:
        """Allele-count distribution of ``locus`` from the first table holding it."""
        for (p, q), table in self.entries.items():
            if p == locus:
                return table.sum(axis=1)
            if q == locus:
                return table.sum(axis=0)
        raise DataError(f"locus {locus!r} absent from the joint model")

    def index_pairs(self, db: SnpDatabase) -> np.ndarray:
        index = db.locus_index()
        try:
            return np.array([(index[p], index[q]) for p, q in self.entries], dtype=np.int64).reshape(-1, 2)
        except KeyError as exc:
            raise DataError(f"joint model locus {exc.args[0]!r} missing from database") from None

    def stacked(self) -> np.ndarray:
        return np.array(list(self.entries.values()), dtype=float).reshape(-1, 3, 3)


@dataclass(frozen=True)
class FingerprintMask:
    marked: np.ndarray

    def __post_init__(self):
        marked = np.array(self.marked, dtype=bool, copy=True)
        marked.setflags(write=False)
        object.__setattr__(self, "marked", marked)

    @classmethod
    def empty(cls, db: SnpDatabase) -> "FingerprintMask":
        return cls(np.zeros(db.shape, dtype=bool))

    @property
    def n_marked(self) -> int:
        return int(self.marked.sum())


def locus_pairs(n_loci: int, policy: str = "adjacent") -> list[tuple[int, int]]:
    if policy == "adjacent":
        return [(j, j + 1) for j in range(n_loci - 1)]
    if policy == "all-pairs":
        return list(combinations(range(n_loci), 2))
    raise ValueError(f"unknown pair policy {policy!r}")


def joint_counts(decoded: np.ndarray, pairs: np.ndarray) -> np.ndarray:
    """Counts of decoded value pairs, shape ``(len(pairs), 3, 3)``."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    codes = decoded[:, pairs[:, 0]].astype(np.int64) * 3 + decoded[:, pairs[:, 1]]
    offsets = np.arange(len(pairs)) * 9
    flat = np.bincount((codes + offsets).ravel(), minlength=9 * len(pairs))
    return flat.reshape(len(pairs), 3, 3)


def similarity(decoded: np.ndarray, i: int, j: int) -> int:
    return int(np.dot(decoded[i].astype(np.int64), decoded[j].astype(np.int64)))


def empirical_models(
    db: SnpDatabase, ped: Pedigree, pair_policy: str = "adjacent"
) -> tuple[SimilarityModel, JointModel]:
    dec = db.decoded()
    idx = ped.indices(db)
    sims = {}
    for t, (m, f, c) in zip(ped.trios, idx):
        sims[(t.mother, t.child)] = similarity(dec, m, c)
        sims[(t.father, t.child)] = similarity(dec, f, c)
    pairs = np.array(locus_pairs(db.n_loci, pair_policy), dtype=np.int64).reshape(-1, 2)
    counts = joint_counts(dec, pairs) / max(db.n_rows, 1)
    joints = {(db.loci[p], db.loci[q]): counts[k] for k, (p, q) in enumerate(pairs)}
    return SimilarityModel(sims), JointModel(joints)


# --- CSV persistence -------------------------------------------------------

def save_database(db: SnpDatabase, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", *db.loci])
        for key, row in zip(db.primary_keys, db.cells):
            w.writerow([key, *row.tolist()])


def load_database(path) -> SnpDatabase:
    with open(path, newline="") as fh:
        rows = csv.reader(fh)
        try:
            header = next(rows)
        except StopIteration:
            raise DataError("empty file", line=1) from None
        if not header or header[0] != "id":
            raise DataError("header must start with 'id'", line=1)
        loci = header[1:]
        keys, cells = [], []
        for lineno, row in enumerate(rows, start=2):
            if not row:
                continue
            if len(row) != len(loci) + 1:
                raise DataError(f"expected {len(loci) + 1} fields, got {len(row)}", line=lineno)
            try:
                values = [int(v) for v in row[1:]]
            except ValueError:
                raise DataError("non-integer cell value", line=lineno) from None
            if any(v < 0 or v > 3 for v in values):
                raise DataError("cell value out of range 0-3", line=lineno)
            keys.append(row[0])
            cells.append(values)
    arr = np.array(cells, dtype=np.uint8).reshape(len(keys), len(loci))
    return SnpDatabase(tuple(keys), tuple(loci), arr)


def save_pedigree(ped: Pedigree, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["family_id", "mother", "father", "child"])
        w.writerows(ped.trios)


def load_pedigree(path) -> Pedigree:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["family_id", "mother", "father", "child"]:
            raise DataError("pedigree header must be family_id,mother,father,child", line=1)
        trios = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise DataError("expected 4 fields", line=lineno)
            trios.append(Trio(*row))
    return Pedigree(tuple(trios))


def save_similarity(model: SimilarityModel, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row_i", "row_j", "similarity"])
        for (i, j), s in model.entries.items():
            w.writerow([i, j, int(s)])


def load_similarity(path) -> SimilarityModel:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        if next(reader, None) != ["row_i", "row_j", "similarity"]:
            raise DataError("similarity header must be row_i,row_j,similarity", line=1)
        entries = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                i, j, s = row
                entries[(i, j)] = int(s)
            except ValueError:
                raise DataError("malformed similarity row", line=lineno) from None
    return SimilarityModel(entries)


def save_joint(model: JointModel, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["p", "q", "a", "b", "prob"])
        for (p, q), table in model.entries.items():
            for a in range(3):
                for b in range(3):
                    w.writerow([p, q, a, b, repr(float(table[a, b]))])


def load_joint(path) -> JointModel:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        if next(reader, None) != ["p", "q", "a", "b", "prob"]:
            raise DataError("joint header must be p,q,a,b,prob", line=1)
        entries: dict = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                p, q, a, b, prob = row
                a, b, prob = int(a), int(b), float(prob)
            except ValueError:
                raise DataError("malformed joint row", line=lineno) from None
            if not (0 <= a <= 2 and 0 <= b <= 2):
                raise DataError("allele counts must be 0-2", line=lineno)
            entries.setdefault((p, q), np.zeros((3, 3)))[a, b] = prob
    return JointModel(entries)


def save_mask(db: SnpDatabase, mask: FingerprintMask, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row_key", "locus"])
        for i, j in zip(*np.nonzero(mask.marked)):
            w.writerow([db.primary_keys[i], db.loci[j]])


def load_mask(db: SnpDatabase, path) -> FingerprintMask:
    rows, cols = db.row_index(), db.locus_index()
    marked = np.zeros(db.shape, dtype=bool)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        if next(reader, None) != ["row_key", "locus"]:
            raise DataError("mask header must be row_key,locus", line=1)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                marked[rows[row[0]], cols[row[1]]] = True
            except (KeyError, ValueError):
                raise DataError("mask entry does not match the database", line=lineno) from None
    return FingerprintMask(marked)
