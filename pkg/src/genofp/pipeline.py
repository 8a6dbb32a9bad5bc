"""Experiment harness: datasets on disk, grid sweeps and result tables."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import astuple, dataclass, fields
from pathlib import Path

import numpy as np

from . import adversary, metrics
from .keyed_randomness import Fingerprint, as_bytes, gen_fingerprint
from .mitigation import MitigationReport, SinkhornParams, mitigate_col, mitigate_row
from .snp_model import (
    DataError,
    JointModel,
    Pedigree,
    SimilarityModel,
    SnpDatabase,
    encode,
    load_database,
    load_joint,
    load_pedigree,
    load_similarity,
    save_database,
    save_joint,
    save_pedigree,
    save_similarity,
)
from .synth_data import CaseControlSplit, GeneratorConfig, descend, generate
from .vanilla_scheme import ExtractionParams, InsertionParams, extract_fingerprint, insert_fingerprint

log = logging.getLogger(__name__)

GRID = (0.05, 0.06, 0.07, 0.08, 0.09, 0.1)
DEFAULT_KEY = b"owner-secret"
# entropic weight used by experiments; yields roughly 3% mitigation changes
EXPERIMENT_LAMBDA = 3.75
ATTACK_KINDS = ("flip", "row", "col")


# --- datasets ----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Dataset:
    db: SnpDatabase
    ped: Pedigree
    similarity: SimilarityModel
    joint: JointModel
    split: CaseControlSplit

    FILES = ("database.csv", "pedigree.csv", "similarity.csv", "joint.csv", "split.csv")

    @classmethod
    def generate(cls, config: GeneratorConfig) -> "Dataset":
        return cls(*generate(config))

    def save(self, directory, config: GeneratorConfig | None = None) -> None:
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        save_database(self.db, out / "database.csv")
        save_pedigree(self.ped, out / "pedigree.csv")
        save_similarity(self.similarity, out / "similarity.csv")
        save_joint(self.joint, out / "joint.csv")
        save_split(self.split, out / "split.csv")
        if config is not None:
            (out / "config.txt").write_text(config.describe())

    @classmethod
    def load(cls, directory) -> "Dataset":
        d = Path(directory)
        missing = [name for name in cls.FILES if not (d / name).exists()]
        if missing:
            raise FileNotFoundError(f"{d}: missing {', '.join(missing)}")
        return cls(
            load_database(d / "database.csv"),
            load_pedigree(d / "pedigree.csv"),
            load_similarity(d / "similarity.csv"),
            load_joint(d / "joint.csv"),
            load_split(d / "split.csv"),
        )


def save_split(split: CaseControlSplit, path) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["primary_key", "group"])
        groups = [(k, "case") for k in split.case_keys] + [(k, "control") for k in split.control_keys]
        for key, group in sorted(groups):
            out.writerow([key, group])
        out.writerow(["#seed", split.seed])


def load_split(path) -> CaseControlSplit:
    case, control, seed = set(), set(), 0
    with open(path, newline="") as fh:
        rows = csv.reader(fh)
        if next(rows, None) != ["primary_key", "group"]:
            raise DataError("split header must be primary_key,group", 1)
        for line, row in enumerate(rows, start=2):
            if len(row) != 2:
                raise DataError("expected 2 fields", line)
            if row[0] == "#seed":
                seed = int(row[1])
            elif row[1] == "case":
                case.add(row[0])
            elif row[1] == "control":
                control.add(row[0])
            else:
                raise DataError(f"unknown group {row[1]!r}", line)
    try:
        return CaseControlSplit(frozenset(case), frozenset(control), seed)
    except ValueError as exc:
        raise DataError(str(exc)) from None


def save_registry(fingerprints: list[Fingerprint], path) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["sp_id", "fingerprint_hex"])
        for fp in sorted(fingerprints, key=lambda f: f.sp_id):
            out.writerow([fp.sp_id, fp.hex])


def load_registry(path) -> list[Fingerprint]:
    with open(path, newline="") as fh:
        rows = csv.reader(fh)
        if next(rows, None) != ["sp_id", "fingerprint_hex"]:
            raise DataError("registry header must be sp_id,fingerprint_hex", 1)
        out = []
        for line, row in enumerate(rows, start=2):
            try:
                out.append(Fingerprint.from_hex(row[1], int(row[0])))
            except (ValueError, IndexError):
                raise DataError("malformed registry entry", line) from None
    return out


# --- experiment configuration ----------------------------------------------------

@dataclass(frozen=True)
class AttackPlan:
    """Attacks applied in order, sharing one change budget.

    Phase A of the row attack is free; every other change made by a
    correlation attack is charged, and later steps get what is left.  A flip
    step spends the whole budget on its own.
    """

    kinds: tuple[str, ...]
    budget: float = 0.08
    epsilon_s: float = 0.0
    epsilon_j: float | None = None
    col_strategy: str = "class"

    def __post_init__(self):
        bad = [k for k in self.kinds if k not in ATTACK_KINDS]
        if bad:
            raise ValueError(f"unknown attack kind(s): {', '.join(bad)}")
        if not 0 <= self.budget <= 1:
            raise ValueError("attack budget must lie in [0, 1]")

    @property
    def label(self) -> str:
        return "+".join(self.kinds) if self.kinds else "none"

    @classmethod
    def parse(cls, text: str, default_budget: float = 0.08, **kw) -> "AttackPlan":
        """``"row+col"``, ``"flip:0.15"`` or ``"none"``."""
        kinds, _, budget = text.partition(":")
        kinds = () if kinds in ("", "none") else tuple(kinds.split("+"))
        return cls(kinds, float(budget) if budget else default_budget, **kw)


@dataclass(frozen=True)
class ExperimentConfig:
    gamma_r: tuple[float, ...] = GRID
    gamma_l: tuple[float, ...] = GRID
    scheme: str = "vanilla"
    attacks: tuple[AttackPlan, ...] = (AttackPlan(("row", "col")),)
    sp_id: int = 1
    key: bytes = DEFAULT_KEY
    tau: float = 0.7
    lam: float = EXPERIMENT_LAMBDA
    split_seed: int | None = None
    seed: int = 0
    top_k: int = 50
    timing: bool = True

    def __post_init__(self):
        if not self.gamma_r or not self.gamma_l:
            raise ValueError("grids must be non-empty")
        if self.scheme not in ("vanilla", "robust"):
            raise ValueError("scheme must be 'vanilla' or 'robust'")
        key = as_bytes(self.key)
        if b"|" in key:
            raise ValueError("key must not contain '|'")
        object.__setattr__(self, "key", key)

    def points(self) -> list[tuple[float, float]]:
        return [(gr, gl) for gr in self.gamma_r for gl in self.gamma_l]


@dataclass(frozen=True)
class ExperimentRecord:
    gamma_r: float
    gamma_l: float
    scheme: str
    attack_label: str
    per_chg_attack: float
    per_chg_mitigation: float
    per_cmp: float
    accuracy: float
    pvalue_consistency: float
    wall_time_seconds: float

    @classmethod
    def header(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def row(self) -> list:
        return [repr(v) if isinstance(v, float) else v for v in astuple(self)]


def _seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1, np.uint64)[0])


# --- stages ------------------------------------------------------------------

def fingerprint(dataset: Dataset, config: ExperimentConfig, gamma_r: float, gamma_l: float):
    """Fingerprinted (and, for the robust scheme, mitigated) copy plus its mask."""
    db = dataset.db
    fp_db, mask = insert_fingerprint(db, InsertionParams(gamma_r, gamma_l, config.key, config.sp_id))
    report = MitigationReport(total_cells=db.n_rows * db.n_loci)
    if config.scheme == "robust":
        tag = (config.seed, round(gamma_r * 1e6), round(gamma_l * 1e6))
        fp_db, row_report = mitigate_row(fp_db, mask, dataset.ped, dataset.similarity, seed=_seed(*tag, 1))
        fp_db, col_report = mitigate_col(fp_db, mask, dataset.joint, SinkhornParams(lam=config.lam),
                                         seed=_seed(*tag, 2))
        report = row_report.merge(col_report)
    return fp_db, mask, report


def run_attacks(db: SnpDatabase, dataset: Dataset, plan: AttackPlan, seed: int) -> SnpDatabase:
    total = db.n_rows * db.n_loci
    remaining = plan.budget
    for step, kind in enumerate(plan.kinds):
        budget = adversary.AttackBudget(max(remaining, 0.0), _seed(seed, step))
        if kind == "flip":
            db, _ = adversary.random_flip_attack(db, adversary.AttackBudget(plan.budget, budget.seed))
            continue
        if kind == "row":
            db, report = adversary.row_correlation_attack(db, dataset.ped, dataset.similarity, budget,
                                                          plan.epsilon_s)
        else:
            db, report = adversary.col_correlation_attack(db, dataset.joint, budget, plan.epsilon_j,
                                                          plan.col_strategy)
        remaining -= (report.changed_cells - report.phase_a_cells) / total
    return db


def run_point(dataset: Dataset, config: ExperimentConfig, gamma_r: float, gamma_l: float,
              reference=None) -> list[ExperimentRecord]:
    split = dataset.split
    if config.split_seed is not None:
        split = CaseControlSplit.random_halves(dataset.db.primary_keys, config.split_seed)
    reference = reference or metrics.pvalues(dataset.db, split)
    owner_fp = gen_fingerprint(config.key, config.sp_id)
    extraction = ExtractionParams(gamma_r, gamma_l, config.key, config.tau)

    start = time.perf_counter()
    fp_db, _, mit = fingerprint(dataset, config, gamma_r, gamma_l)
    setup = time.perf_counter() - start
    records = []
    for index, plan in enumerate(config.attacks):
        t0 = time.perf_counter()
        attacked = run_attacks(fp_db, dataset, plan, _seed(config.seed, round(gamma_r * 1e6),
                                                           round(gamma_l * 1e6), index))
        extracted = extract_fingerprint(attacked, extraction)
        records.append(ExperimentRecord(
            gamma_r=gamma_r,
            gamma_l=gamma_l,
            scheme=config.scheme,
            attack_label=plan.label,
            per_chg_attack=metrics.per_chg(fp_db, attacked),
            per_chg_mitigation=mit.per_chg_additional,
            per_cmp=metrics.per_cmp(owner_fp, extracted),
            accuracy=metrics.accuracy(dataset.db, attacked),
            pvalue_consistency=metrics.topk_consistency(reference, metrics.pvalues(attacked, split), config.top_k),
            wall_time_seconds=(setup + time.perf_counter() - t0) if config.timing else 0.0,
        ))
    return records


def run_experiment(dataset: Dataset, config: ExperimentConfig) -> list[ExperimentRecord]:
    split = dataset.split
    if config.split_seed is not None:
        split = CaseControlSplit.random_halves(dataset.db.primary_keys, config.split_seed)
    reference = metrics.pvalues(dataset.db, split)
    records = []
    for gamma_r, gamma_l in config.points():
        log.info("grid point gamma_r=%s gamma_l=%s", gamma_r, gamma_l)
        records.extend(run_point(dataset, config, gamma_r, gamma_l, reference))
    return records


def write_records(records: list[ExperimentRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(ExperimentRecord.header())
        for rec in records:
            out.writerow(rec.row())


def read_records(path) -> list[ExperimentRecord]:
    with open(path, newline="") as fh:
        rows = csv.reader(fh)
        if next(rows, None) != ExperimentRecord.header():
            raise DataError(f"{path}: header does not match the experiment record layout", 1)
        out = []
        for line, row in enumerate(rows, start=2):
            try:
                gr, gl, scheme, label, *nums = row
                out.append(ExperimentRecord(float(gr), float(gl), scheme, label, *map(float, nums)))
            except (ValueError, TypeError):
                raise DataError("malformed experiment record", line) from None
    return out


# --- reports -----------------------------------------------------------------

SUCCESS_BOUNDARY = 0.5


def consistency_table(records: list[ExperimentRecord]) -> list[list]:
    """Mean top-k consistency per (scheme, attack), one column per gamma.

    Columns are the diagonal points ``gamma_r == gamma_l`` when the grid has
    any; otherwise each column averages over ``gamma_l`` for one ``gamma_r``.
    """
    diagonal = [r for r in records if r.gamma_r == r.gamma_l]
    chosen = diagonal or records
    gammas = sorted({r.gamma_r for r in chosen})
    rows = [["scheme", "attack", *map(str, gammas)]]
    for scheme, label in sorted({(r.scheme, r.attack_label) for r in chosen}):
        cells = []
        for g in gammas:
            vals = [r.pvalue_consistency for r in chosen
                    if r.scheme == scheme and r.attack_label == label and r.gamma_r == g]
            cells.append(f"{np.mean(vals):.4f}" if vals else "")
        rows.append([scheme, label, *cells])
    return rows


def mitigation_table(records: list[ExperimentRecord]) -> list[list]:
    """Mitigation change fraction over the gamma_r x gamma_l grid (robust records)."""
    chosen = [r for r in records if r.scheme == "robust"] or records
    grs = sorted({r.gamma_r for r in chosen})
    gls = sorted({r.gamma_l for r in chosen})
    rows = [["gamma_r\\gamma_l", *map(str, gls)]]
    for gr in grs:
        cells = []
        for gl in gls:
            vals = [r.per_chg_mitigation for r in chosen if r.gamma_r == gr and r.gamma_l == gl]
            cells.append(f"{np.mean(vals):.4f}" if vals else "")
        rows.append([str(gr), *cells])
    return rows


def scatter_rows(records: list[ExperimentRecord]) -> list[list]:
    rows = [["per_chg", "per_cmp", "series", "side"]]
    for r in records:
        side = "above" if r.per_cmp > SUCCESS_BOUNDARY else "below"
        rows.append([repr(r.per_chg_attack), repr(r.per_cmp), f"{r.scheme}:{r.attack_label}", side])
    return rows


def write_report(records: list[ExperimentRecord], directory) -> dict[str, Path]:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}
    for name, rows in (("consistency", consistency_table(records)),
                       ("mitigation", mitigation_table(records)),
                       ("scatter", scatter_rows(records))):
        path = out / f"{name}.csv"
        with open(path, "w", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerows(rows)
        paths[name] = path
    with open(paths["scatter"], "a") as fh:
        fh.write(f"# success boundary: per_cmp = {SUCCESS_BOUNDARY}\n")
    return paths


# --- generational similarity ------------------------------------------------------

def _cosine(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    num = (x * y).sum(axis=1)
    den = np.sqrt((x * x).sum(axis=1) * (y * y).sum(axis=1))
    return np.divide(num, den, out=np.zeros_like(num, dtype=float), where=den > 0)


@dataclass(frozen=True)
class GenerationTrend:
    density: float
    generation: int
    mean_abs_change: float


def generation_similarity(dataset: Dataset, densities=(0.1, 0.2, 0.3), generations: int = 4,
                          key: bytes = DEFAULT_KEY, sp_id: int = 1, seed: int = 0) -> list[GenerationTrend]:
    """Mean change in parent/descendant cosine similarity caused by fingerprinting.

    Generation 1 is the pedigree's own children; later generations come
    from ``descend``.  Parents and all descendants are fingerprinted together
    with every row selected and a fraction ``density`` of cells marked.
    """
    db, ped = dataset.db, dataset.ped
    idx = ped.indices(db)
    extra = descend(db, ped, generations - 1, seed) if generations > 1 else []
    parents = np.concatenate([idx[:, 0], idx[:, 1]])

    keys = list(db.primary_keys)
    blocks = [db.decoded()]
    for d in extra:
        keys.extend(d.primary_keys)
        blocks.append(d.decoded())
    extended = SnpDatabase(tuple(keys), db.loci, encode(np.vstack(blocks)))
    F = len(ped.trios)
    desc_rows = [idx[:, 2]] + [db.n_rows + g * F + np.arange(F) for g in range(len(extra))]

    out = []
    for density in densities:
        marked, _ = insert_fingerprint(extended, InsertionParams(1.0, density, key, sp_id))
        before, after = extended.decoded().astype(float), marked.decoded().astype(float)
        for g, rows in enumerate(desc_rows, start=1):
            kids = np.concatenate([rows, rows])
            delta = _cosine(before[parents], before[kids]) - _cosine(after[parents], after[kids])
            out.append(GenerationTrend(density, g, float(np.mean(np.abs(delta)))))
    return out
