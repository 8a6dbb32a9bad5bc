"""Post-processing defenses that repair correlations without touching marks.

``mitigate_row`` restores Mendelian consistency around fingerprinted cells
and then nudges parent/child inner products back to the public model.
``mitigate_col`` moves each locus' allele-count distribution toward the
public marginal with an entropy-regularised transport plan.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np

from .snp_model import FingerprintMask, JointModel, Pedigree, SimilarityModel, SnpDatabase, encode

log = logging.getLogger(__name__)


def _transmissible(count: int) -> tuple[int, ...]:
    return {0: (0,), 1: (0, 1), 2: (1,)}[count]


def mendel_consistent(mother: int, father: int, child: int) -> bool:
    return any(a + b == child for a in _transmissible(mother) for b in _transmissible(father))


# MENDEL[m, f, c] is True when the trio genotype is consistent.
MENDEL = np.array(
    [[[mendel_consistent(m, f, c) for c in range(3)] for f in range(3)] for m in range(3)],
    dtype=bool,
)


def mendel_violations(decoded: np.ndarray, trio_rows: np.ndarray) -> np.ndarray:
    """Boolean ``(F, N)`` array of inconsistent trio loci."""
    m, f, c = (decoded[trio_rows[:, k]] for k in range(3))
    return ~MENDEL[m, f, c]


@dataclass
class MitigationReport:
    cells_changed_row_phase: int = 0
    cells_changed_col_phase: int = 0
    residual_mendel_violations: int = 0
    shortfall: int = 0
    total_cells: int = 0

    @property
    def cells_changed(self) -> int:
        return self.cells_changed_row_phase + self.cells_changed_col_phase

    @property
    def per_chg_additional(self) -> float:
        return self.cells_changed / self.total_cells if self.total_cells else 0.0

    def merge(self, other: "MitigationReport") -> "MitigationReport":
        return MitigationReport(
            self.cells_changed_row_phase + other.cells_changed_row_phase,
            self.cells_changed_col_phase + other.cells_changed_col_phase,
            self.residual_mendel_violations + other.residual_mendel_violations,
            self.shortfall + other.shortfall,
            max(self.total_cells, other.total_cells),
        )


def _write_back(db: SnpDatabase, decoded_new: np.ndarray) -> tuple[SnpDatabase, int]:
    """Re-encode changed decoded cells; untouched cells keep their raw code."""
    changed = decoded_new != db.decoded()
    cells = db.cells.copy()
    cells[changed] = encode(decoded_new[changed])
    return db.with_cells(cells), int(changed.sum())


# --- row-wise mitigation ---------------------------------------------------

def _repair_trio_locus(values, marked):
    """Cheapest Mendel-consistent reassignment of the unmarked members, or None."""
    free = [r for r in range(3) if not marked[r]]
    best, best_key = None, None
    for assignment in itertools.product(range(3), repeat=len(free)):
        trial = list(values)
        for r, v in zip(free, assignment):
            trial[r] = v
        if not MENDEL[trial[0], trial[1], trial[2]]:
            continue
        touched = tuple(r for r in range(3) if trial[r] != values[r])
        delta = sum(abs(trial[r] - values[r]) for r in touched)
        key = (len(touched), delta, touched, tuple(trial))
        if best_key is None or key < best_key:
            best, best_key = trial, key
    return best


def _pair_moves(dec, marked, m, f, c, side):
    """Eligible loci for raising/lowering one parent-child inner product.

    ``side`` 0 is the mother-child pair, 1 the father-child pair.  Returns the
    loci matching ``(0,0,0)`` (raise) and ``(1,0,1)``/``(0,1,1)`` (lower),
    restricted to loci whose three cells are all unmarked.
    """
    free = ~(marked[m] | marked[f] | marked[c])
    zero = (dec[m] == 0) & (dec[f] == 0) & (dec[c] == 0)
    if side == 0:
        one = (dec[m] == 1) & (dec[f] == 0) & (dec[c] == 1)
    else:
        one = (dec[m] == 0) & (dec[f] == 1) & (dec[c] == 1)
    return np.nonzero(free & zero)[0], np.nonzero(free & one)[0]


def mitigate_row(db: SnpDatabase, mask: FingerprintMask, ped: Pedigree, public_s: SimilarityModel,
                 seed: int = 0) -> tuple[SnpDatabase, MitigationReport]:
    if mask.marked.shape != db.shape:
        raise ValueError("mask shape does not match the database")
    rng = np.random.default_rng(seed)
    dec = db.decoded().astype(np.int8)
    marked = mask.marked
    trio_rows = ped.indices(db)

    # phase 1: Mendel repair around fingerprinted cells
    residual = 0
    bad = mendel_violations(dec, trio_rows)
    touched = marked[trio_rows[:, 0]] | marked[trio_rows[:, 1]] | marked[trio_rows[:, 2]]
    for fam, locus in zip(*np.nonzero(bad & touched)):
        rows = trio_rows[fam]
        fixed = _repair_trio_locus(tuple(int(v) for v in dec[rows, locus]), tuple(marked[rows, locus]))
        if fixed is None:
            residual += 1
            continue
        dec[rows, locus] = fixed

    # phase 2: push parent-child inner products back toward the public model
    for trio, (m, f, c) in zip(ped.trios, trio_rows):
        for side, parent, parent_key in ((0, m, trio.mother), (1, f, trio.father)):
            target = public_s.entries.get((parent_key, trio.child))
            if target is None:
                continue
            delta = target - int(np.dot(dec[parent].astype(np.int64), dec[c]))
            n_moves = int(np.floor(abs(delta)))
            if n_moves == 0:
                continue
            raise_loci, lower_loci = _pair_moves(dec, marked, m, f, c, side)
            pool = raise_loci if delta > 0 else lower_loci
            chosen = rng.permutation(pool)[:n_moves]
            new_parent, new_child = (1, 1) if delta > 0 else (0, 0)
            for locus in chosen:
                mother_v = new_parent if side == 0 else dec[m, locus]
                father_v = new_parent if side == 1 else dec[f, locus]
                if not MENDEL[mother_v, father_v, new_child]:
                    continue
                dec[parent, locus] = new_parent
                dec[c, locus] = new_child

    repaired, n_changed = _write_back(db, dec)
    report = MitigationReport(
        cells_changed_row_phase=n_changed,
        residual_mendel_violations=residual,
        total_cells=db.n_rows * db.n_loci,
    )
    return repaired, report


# --- column-wise mitigation ------------------------------------------------

SCALING_STEPS = 50


def logsumexp(x: np.ndarray, axis: int) -> np.ndarray:
    # scipy's version carries array-API overhead that dominates on 3x3 inputs
    top = x.max(axis=axis, keepdims=True)
    top = np.where(np.isfinite(top), top, 0.0)
    return np.log(np.exp(x - top).sum(axis=axis)) + np.squeeze(top, axis=axis)


def softmax(x: np.ndarray, axis: int) -> np.ndarray:
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


class SinkhornConvergenceError(RuntimeError):
    def __init__(self, residual: float, iterations: int):
        super().__init__(f"Sinkhorn did not converge after {iterations} iterations (residual {residual:.3e})")
        self.residual = residual
        self.iterations = iterations


def abs_cost(k: int = 3) -> np.ndarray:
    grid = np.arange(k)
    return np.abs(grid[:, None] - grid[None, :]).astype(float)


@dataclass(frozen=True)
class SinkhornParams:
    lam: float = 50.0
    cost: np.ndarray = field(default_factory=abs_cost)
    alpha: float = 1e-9
    max_iterations: int = 10_000

    def __post_init__(self):
        if self.lam <= 0:
            raise ValueError("lambda must be positive")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        cost = np.asarray(self.cost, dtype=float)
        off = ~np.eye(len(cost), dtype=bool)
        if not (np.allclose(cost, cost.T) and np.all(np.diag(cost) == 0) and np.all(cost[off] > 0)):
            raise ValueError("cost must be symmetric with zero diagonal and positive off-diagonal")


@dataclass(frozen=True, eq=False)
class TransportPlan:
    plan: np.ndarray
    source: np.ndarray
    target: np.ndarray
    iterations: int = 0
    residual: float = 0.0

    def cost(self, theta=None) -> float:
        theta = abs_cost(len(self.plan)) if theta is None else theta
        return float(np.sum(self.plan * theta))

    def entropy(self) -> float:
        g = self.plan[self.plan > 0]
        return float(-np.sum(g * np.log(g)))


def _check_distribution(vec, name):
    vec = np.asarray(vec, dtype=float)
    if vec.ndim != 1 or np.any(vec < 0) or abs(vec.sum() - 1) > 1e-9:
        raise ValueError(f"{name} must be a probability vector")
    return vec / vec.sum()


def _residual(f, g, log_k, a, b):
    plan = np.exp(f[:, None] + log_k + g[None, :])
    res = max(np.abs(plan.sum(axis=1) - a).max(), np.abs(plan.sum(axis=0) - b).max())
    return plan, res


def _semi_dual_newton(g, log_k, a, b, alpha, max_steps):
    """Newton descent on the semi-dual in ``g``; rows are matched exactly.

    The last coordinate of ``g`` is held fixed to remove the additive gauge.
    Once the predicted decrease falls below float resolution of the
    objective, full steps are taken without the Armijo test.
    """

    def objective(g):
        return a @ logsumexp(log_k + g[None, :], axis=1) - g @ b

    plan, residual = None, np.inf
    for step_no in range(1, max_steps + 1):
        soft = softmax(log_k + g[None, :], axis=1)
        plan = a[:, None] * soft
        grad = plan.sum(axis=0) - b
        residual = float(np.abs(grad).max())
        if residual < alpha or len(g) == 1:
            return plan, residual, step_no
        hess = np.diag(plan.sum(axis=0)) - (soft.T * a) @ soft
        h = hess[:-1, :-1]
        ridge = 1e-12 * max(1.0, np.abs(h).max())
        step = np.zeros_like(g)
        step[:-1] = -np.linalg.solve(h + ridge * np.eye(len(h)), grad[:-1])
        f0, slope, t = objective(g), grad @ step, 1.0
        if abs(slope) > 1e-13 * max(1.0, abs(f0)):
            while objective(g + t * step) > f0 + 1e-4 * t * slope and t > 1e-10:
                t /= 2
        g = g + t * step
    return plan, residual, max_steps


def sinkhorn_plan(source, target, params: SinkhornParams = SinkhornParams()) -> TransportPlan:
    """Entropy-regularised transport plan between two allele-count distributions.

    Minimises ``<G, cost> - H(G) / lam`` over couplings of ``source`` and
    ``target`` by alternating scaling in the log domain.  Large ``lam`` makes
    plain scaling crawl, so after ``SCALING_STEPS`` sweeps the same problem is
    finished by Newton steps on its semi-dual, warm-started from the scaling.
    Zero-mass entries are dropped and restored as zero rows/columns.
    """
    a = _check_distribution(source, "source")
    b = _check_distribution(target, "target")
    sa, sb = a > 0, b > 0
    a_s, b_s = a[sa], b[sb]
    log_a, log_b = np.log(a_s), np.log(b_s)
    log_k = -params.lam * np.asarray(params.cost, dtype=float)[np.ix_(sa, sb)]
    f = np.zeros(sa.sum())
    g = np.zeros(sb.sum())
    residual = np.inf
    it = 0
    while it < min(params.max_iterations, SCALING_STEPS):
        it += 1
        f = log_a - logsumexp(log_k + g[None, :], axis=1)
        g = log_b - logsumexp(log_k + f[:, None], axis=0)
        plan, residual = _residual(f, g, log_k, a_s, b_s)
        if residual < params.alpha:
            break
    if residual >= params.alpha:
        plan, residual, steps = _semi_dual_newton(
            g, log_k, a_s, b_s, params.alpha, params.max_iterations - it)
        it += steps
    if residual >= params.alpha:
        raise SinkhornConvergenceError(float(residual), it)
    full = np.zeros((len(a), len(b)))
    full[np.ix_(sa, sb)] = plan
    return TransportPlan(full, a, b, it, float(residual))


def column_distribution(decoded_column: np.ndarray) -> np.ndarray:
    return np.bincount(decoded_column.astype(np.int64), minlength=3)[:3] / max(len(decoded_column), 1)


def _transport_column(column, free, plan, rng):
    """Move rows of ``column`` per ``plan``; returns (new column, changed, shortfall)."""
    n_rows = len(column)
    new = column.copy()
    changed = shortfall = 0
    k = len(plan.plan)
    for a in range(k):
        pool = rng.permutation(np.nonzero((column == a) & free)[0])
        start = 0
        for b in range(k):
            if a == b:
                continue
            want = int(round(plan.plan[a, b] * n_rows))
            take = pool[start:start + want]
            start += len(take)
            new[take] = b
            changed += len(take)
            shortfall += want - len(take)
    return new, changed, shortfall


def apply_transport(db: SnpDatabase, mask: FingerprintMask, locus: int, plan: TransportPlan,
                    seed: int = 0) -> tuple[SnpDatabase, int]:
    if not 0 <= locus < db.n_loci:
        raise IndexError(f"locus {locus} out of range")
    dec = db.decoded()
    column = dec[:, locus]
    if np.abs(column_distribution(column) - plan.source).max() > 1e-6:
        raise ValueError("plan source does not match the column distribution")
    new, changed, shortfall = _transport_column(column, ~mask.marked[:, locus], plan, np.random.default_rng(seed))
    if shortfall:
        log.debug("locus %d: transport shortfall of %d rows", locus, shortfall)
    dec = dec.copy()
    dec[:, locus] = new
    out, _ = _write_back(db, dec)
    return out, changed


def mitigate_col(db: SnpDatabase, mask: FingerprintMask, public_j: JointModel,
                 params: SinkhornParams = SinkhornParams(), seed: int = 0) -> tuple[SnpDatabase, MitigationReport]:
    if mask.marked.shape != db.shape:
        raise ValueError("mask shape does not match the database")
    dec = db.decoded().copy()
    shortfall = 0
    for j, locus in enumerate(db.loci):
        target = public_j.marginal(locus)
        plan = sinkhorn_plan(column_distribution(dec[:, j]), target / target.sum(), params)
        rng = np.random.default_rng([seed, j])
        dec[:, j], _, short = _transport_column(dec[:, j], ~mask.marked[:, j], plan, rng)
        shortfall += short
    out, n_cells = _write_back(db, dec)
    report = MitigationReport(
        cells_changed_col_phase=n_cells,
        shortfall=shortfall,
        total_cells=db.n_rows * db.n_loci,
    )
    return out, report
