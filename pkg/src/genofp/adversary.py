"""Attacks a dishonest recipient can mount on a fingerprinted copy.

The attacker sees only the database and the public models.  Changed cells
are written back as standard codes (``0b00``, ``0b01``, ``0b10``).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mitigation import MENDEL, mendel_violations
from .snp_model import JointModel, Pedigree, SimilarityModel, SnpDatabase, encode, joint_counts


@dataclass(frozen=True)
class AttackBudget:
    max_change_fraction: float
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.max_change_fraction <= 1:
            raise ValueError("max_change_fraction must lie in [0, 1]")

    def cells(self, db: SnpDatabase) -> int:
        return int(np.floor(self.max_change_fraction * db.n_rows * db.n_loci + 1e-9))


@dataclass(frozen=True)
class AttackReport:
    changed_cells: int
    per_chg: float
    loci_touched: int
    phase_a_cells: int = 0


def _finish(db: SnpDatabase, cells: np.ndarray, phase_a: int = 0) -> tuple[SnpDatabase, AttackReport]:
    changed = cells != db.cells
    n = int(changed.sum())
    report = AttackReport(n, n / changed.size, int(changed.any(axis=0).sum()), phase_a)
    return db.with_cells(cells), report


def _rewrite(db: SnpDatabase, dec: np.ndarray) -> np.ndarray:
    cells = db.cells.copy()
    diff = dec != db.decoded()
    cells[diff] = encode(dec[diff])
    return cells


def random_flip_attack(db: SnpDatabase, budget: AttackBudget) -> tuple[SnpDatabase, AttackReport]:
    """Flip one random bit in each of ``floor(budget * M * N)`` distinct cells."""
    rng = np.random.default_rng(budget.seed)
    n = budget.cells(db)
    flat = db.cells.reshape(-1).copy()
    picked = rng.choice(flat.size, size=n, replace=False)
    bits = rng.integers(0, 2, size=n)
    flat[picked] ^= (1 << bits).astype(np.uint8)
    return _finish(db, flat.reshape(db.shape))


# --- row-wise correlation attack -----------------------------------------------

def _restoring_edits(values) -> list[tuple[int, int]]:
    edits = []
    for member in range(3):
        for v in range(3):
            if v == values[member]:
                continue
            trial = list(values)
            trial[member] = v
            if MENDEL[trial[0], trial[1], trial[2]]:
                edits.append((member, v))
    return edits


def row_correlation_attack(db: SnpDatabase, ped: Pedigree, public_s: SimilarityModel,
                           budget: AttackBudget, epsilon_s: float = 0.0,
                           fix: str = "uniform") -> tuple[SnpDatabase, AttackReport]:
    """Clean Mendel violations, then drag parent/child similarities to ``public_s``.

    ``fix="uniform"`` picks the member to edit uniformly among those with a
    restoring single-cell edit; ``fix="child"`` always edits the child.
    Phase A is not charged against the budget; its cell count is reported
    separately as ``phase_a_cells``.
    """
    if fix not in ("uniform", "child"):
        raise ValueError("fix must be 'uniform' or 'child'")
    rng = np.random.default_rng(budget.seed)
    dec = db.decoded().astype(np.int8)
    trio_rows = ped.indices(db)

    phase_a = 0
    for fam, locus in zip(*np.nonzero(mendel_violations(dec, trio_rows))):
        rows = trio_rows[fam]
        edits = _restoring_edits(tuple(int(v) for v in dec[rows, locus]))
        if fix == "child":
            edits = [e for e in edits if e[0] == 2]
        members = sorted({m for m, _ in edits})
        member = members[rng.integers(len(members))]
        values = [v for m, v in edits if m == member]
        dec[rows[member], locus] = values[rng.integers(len(values))]
        phase_a += 1

    remaining = budget.cells(db)
    for trio, (m, f, c) in zip(ped.trios, trio_rows):
        for side, parent, parent_key in ((0, m, trio.mother), (1, f, trio.father)):
            target = public_s.entries.get((parent_key, trio.child))
            if target is None or remaining < 2:
                continue
            gap = target - int(np.dot(dec[parent].astype(np.int64), dec[c]))
            if abs(gap) <= epsilon_s:
                continue
            zero = (dec[m] == 0) & (dec[f] == 0) & (dec[c] == 0)
            other = f if side == 0 else m
            one = (dec[parent] == 1) & (dec[other] == 0) & (dec[c] == 1)
            pool = np.nonzero(zero if gap > 0 else one)[0]
            new = 1 if gap > 0 else 0
            n_moves = min(int(np.ceil(abs(gap) - epsilon_s)), len(pool), remaining // 2)
            for locus in rng.permutation(pool)[:n_moves]:
                dec[parent, locus] = new
                dec[c, locus] = new
            remaining -= 2 * n_moves

    return _finish(db, _rewrite(db, dec), phase_a)


# --- column-wise correlation attack --------------------------------------------

def _tables_by_locus(pairs: np.ndarray, n_loci: int) -> list[list[tuple[int, int]]]:
    """For each locus, the ``(table, position)`` entries of tables containing it."""
    out = [[] for _ in range(n_loci)]
    for t, (p, q) in enumerate(pairs):
        out[p].append((t, 0))
        out[q].append((t, 1))
    return out


def _greedy_col(dec, pairs, target, n_cells, eps_count, rng):
    counts = joint_counts(dec, pairs).astype(np.int64)
    by_locus = _tables_by_locus(pairs, dec.shape[1])
    changes = 0
    while changes < n_cells:
        excess = counts - target
        order = np.argsort(-excess, axis=None, kind="stable")
        step = None
        for flat in order:
            t, a, b = np.unravel_index(flat, excess.shape)
            if excess[t, a, b] <= eps_count:
                break
            # cells reachable by changing one coordinate of (a, b)
            options = [(excess[t, a2, b], 0, a2) for a2 in range(3) if a2 != a]
            options += [(excess[t, a, b2], 1, b2) for b2 in range(3) if b2 != b]
            worst = min(options)
            if worst[0] < 0:
                step = (t, a, b, worst[1], worst[2])
                break
        if step is None:
            break
        t, a, b, pos, new = step
        p, q = pairs[t]
        rows = np.nonzero((dec[:, p] == a) & (dec[:, q] == b))[0]
        row = rows[rng.integers(len(rows))]
        locus = p if pos == 0 else q
        for t2, pos2 in by_locus[locus]:
            u, v = pairs[t2]
            counts[t2, dec[row, u], dec[row, v]] -= 1
        dec[row, locus] = new
        for t2, pos2 in by_locus[locus]:
            u, v = pairs[t2]
            counts[t2, dec[row, u], dec[row, v]] += 1
        changes += 1
    return dec


def _class_col(dec, pairs, target, n_cells, eps_count, rng):
    """Blanket repair of over-represented value classes.

    A class is the set of rows sharing a value at locus ``p`` and at every
    partner of ``p``.  It is suspicious when none of its table cells is in
    deficit and their total surplus reaches ``eps_count``; its rows move to
    the value whose cells are in deficit everywhere with the largest total.
    Classes are rewritten in order of surplus per row.
    """
    M, N = dec.shape
    excess = joint_counts(dec, pairs).astype(np.int64) - target
    by_locus = _tables_by_locus(pairs, N)
    candidates = []
    for p in range(N):
        tables = by_locus[p]
        if not tables:
            continue
        partners = [pairs[t][1 - pos] for t, pos in tables]
        context = np.zeros(M, dtype=np.int64)
        for u in partners:
            context = context * 3 + dec[:, u]
        key = context * 3 + dec[:, p]
        for k in np.unique(key):
            rows = np.nonzero(key == k)[0]
            value = int(k % 3)
            ctx = [int(dec[rows[0], u]) for u in partners]

            def cells(v):
                return np.array([excess[t, v, w] if pos == 0 else excess[t, w, v]
                                 for (t, pos), w in zip(tables, ctx)])

            here = cells(value)
            if here.min() < 0 or here.sum() < eps_count:
                continue
            best, best_deficit = None, 0
            for v in range(3):
                there = cells(v)
                if v != value and there.max() <= 0 and -there.sum() > best_deficit:
                    best, best_deficit = v, -there.sum()
            if best is None:
                continue
            candidates.append((here.sum() / len(rows), rng.random(), p, best, rows))
    candidates.sort(key=lambda c: (-c[0], c[1]))
    changes = 0
    for _, _, p, new, rows in candidates:
        if changes + len(rows) > n_cells:
            continue
        dec[rows, p] = new
        changes += len(rows)
    return dec


def col_correlation_attack(db: SnpDatabase, public_j: JointModel, budget: AttackBudget,
                           epsilon_j: float | None = None,
                           strategy: str = "greedy") -> tuple[SnpDatabase, AttackReport]:
    """Push empirical pairwise joint tables back toward ``public_j``.

    ``strategy="greedy"`` moves one row at a time out of the most
    over-represented cell toward a reachable deficit cell.  ``strategy="class"``
    rewrites whole groups of rows that share a locus value and all partner
    values (see ``_class_col``).  ``epsilon_j`` is a probability; the default ``1 / M`` means a cell
    must be at least one row off.
    """
    if strategy not in ("greedy", "class"):
        raise ValueError("strategy must be 'greedy' or 'class'")
    pairs = public_j.index_pairs(db)
    M = db.n_rows
    eps_count = (1.0 if epsilon_j is None else epsilon_j * M)
    target = np.rint(public_j.stacked() * M).astype(np.int64)
    rng = np.random.default_rng(budget.seed)
    dec = db.decoded().astype(np.int8)
    run = _greedy_col if strategy == "greedy" else _class_col
    dec = run(dec, pairs, target, budget.cells(db), eps_count, rng)
    return _finish(db, _rewrite(db, dec))
