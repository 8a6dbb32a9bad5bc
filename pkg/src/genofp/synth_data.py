"""Synthetic trio SNP data with Mendelian inheritance and tunable LD.

Founder haplotypes follow a copy chain on a latent uniform variable: at
locus ``j`` the latent value is copied from locus ``j - 1`` with probability
``ld_rho`` and redrawn otherwise, and the allele is ``latent < maf_j``.  Each
locus therefore keeps its drawn MAF exactly while neighbouring loci stay
correlated.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .snp_model import (
    JointModel,
    Pedigree,
    SimilarityModel,
    SnpDatabase,
    Trio,
    empirical_models,
    encode,
)


@dataclass(frozen=True)
class GeneratorConfig:
    n_families: int = 150
    n_individuals: int = 1500
    n_loci: int = 156
    maf_range: tuple[float, float] = (0.1, 0.4)
    ld_rho: float = 0.5
    mutation_rate: float = 0.0
    seed: int = 0
    pair_policy: str = "adjacent"

    def __post_init__(self):
        if self.n_families < 1:
            raise ValueError("n_families must be at least 1")
        if self.n_loci < 1:
            raise ValueError("n_loci must be at least 1")
        if self.n_individuals < 3 * self.n_families:
            raise ValueError("n_individuals must cover 3 members per family")
        lo, hi = self.maf_range
        if not 0 < lo <= hi <= 0.5:
            raise ValueError("maf_range must satisfy 0 < low <= high <= 0.5")
        if not 0 <= self.ld_rho < 1:
            raise ValueError("ld_rho must lie in [0, 1)")
        if not 0 <= self.mutation_rate <= 1:
            raise ValueError("mutation_rate must lie in [0, 1]")

    def describe(self) -> str:
        return "\n".join(f"{k}={v}" for k, v in asdict(self).items()) + "\n"


@dataclass(frozen=True)
class CaseControlSplit:
    case_keys: frozenset
    control_keys: frozenset
    seed: int = 0

    def __post_init__(self):
        if self.case_keys & self.control_keys:
            raise ValueError("case and control groups overlap")
        if not self.case_keys or not self.control_keys:
            raise ValueError("case and control groups must be non-empty")

    @classmethod
    def random_halves(cls, keys, seed: int) -> "CaseControlSplit":
        keys = sorted(keys)
        order = np.random.default_rng(seed).permutation(len(keys))
        half = len(keys) // 2
        case = frozenset(keys[i] for i in order[:half])
        control = frozenset(keys[i] for i in order[half:])
        return cls(case, control, seed)

    def case_mask(self, db: SnpDatabase) -> np.ndarray:
        covered = self.case_keys | self.control_keys
        if covered != set(db.primary_keys):
            raise ValueError("split does not cover exactly the database rows")
        return np.array([k in self.case_keys for k in db.primary_keys])


def founder_haplotypes(rng: np.random.Generator, n: int, maf: np.ndarray, ld_rho: float) -> np.ndarray:
    """``n`` haplotypes of 0/1 alleles, shape ``(n, len(maf))``."""
    n_loci = len(maf)
    latent = np.empty((n, n_loci))
    latent[:, 0] = rng.random(n)
    for j in range(1, n_loci):
        copy = rng.random(n) < ld_rho
        latent[:, j] = np.where(copy, latent[:, j - 1], rng.random(n))
    return (latent < maf).astype(np.int8)


def transmit(rng: np.random.Generator, hap_a: np.ndarray, hap_b: np.ndarray, mutation_rate: float) -> np.ndarray:
    """One gamete per row: a uniformly chosen parental haplotype, optionally mutated."""
    pick = rng.random(len(hap_a)) < 0.5
    gamete = np.where(pick[:, None], hap_a, hap_b)
    if mutation_rate > 0:
        flips = rng.random(gamete.shape) < mutation_rate
        gamete = np.where(flips, 1 - gamete, gamete)
    return gamete.astype(np.int8)


def generate(config: GeneratorConfig):
    """Return ``(db, pedigree, similarity_model, joint_model, split)``."""
    rng = np.random.default_rng(config.seed)
    F, N = config.n_families, config.n_loci
    n_single = config.n_individuals - 3 * F
    maf = rng.uniform(*config.maf_range, size=N)

    mothers = founder_haplotypes(rng, 2 * F, maf, config.ld_rho).reshape(F, 2, N)
    fathers = founder_haplotypes(rng, 2 * F, maf, config.ld_rho).reshape(F, 2, N)
    singles = founder_haplotypes(rng, 2 * n_single, maf, config.ld_rho).reshape(n_single, 2, N)
    from_mother = transmit(rng, mothers[:, 0], mothers[:, 1], config.mutation_rate)
    from_father = transmit(rng, fathers[:, 0], fathers[:, 1], config.mutation_rate)

    width = len(str(config.n_individuals))
    keys, rows, trios = [], [], []
    for f in range(F):
        base = 3 * f
        member_keys = [f"ind{base + r:0{width}d}" for r in range(3)]
        keys.extend(member_keys)
        rows.append(mothers[f].sum(axis=0))
        rows.append(fathers[f].sum(axis=0))
        rows.append(from_mother[f] + from_father[f])
        trios.append(Trio(f"fam{f:0{width}d}", *member_keys))
    for s in range(n_single):
        keys.append(f"ind{3 * F + s:0{width}d}")
        rows.append(singles[s].sum(axis=0))

    loci = tuple(f"rs{100001 + j}" for j in range(N))
    cells = encode(np.array(rows, dtype=np.int8).reshape(len(keys), N))
    db = SnpDatabase(tuple(keys), loci, cells)
    ped = Pedigree(tuple(trios))
    sim, joint = empirical_models(db, ped, config.pair_policy)
    split = CaseControlSplit.random_halves(db.primary_keys, seed=config.seed + 1)
    return db, ped, sim, joint, split


def allele_frequencies(db: SnpDatabase, rows=None) -> np.ndarray:
    dec = db.decoded() if rows is None else db.decoded()[rows]
    return dec.mean(axis=0) / 2.0


def transmit_genotype(u: np.ndarray, genotype: np.ndarray) -> np.ndarray:
    """Allele passed on by an unphased genotype, driven by uniforms ``u``."""
    return np.where(genotype == 2, 1, np.where(genotype == 1, (u < 0.5).astype(np.int8), 0)).astype(np.int8)


def descend(db: SnpDatabase, ped: Pedigree, generations: int, seed: int, maf=None) -> list[SnpDatabase]:
    """Simulate successive generations below the pedigree's children.

    Generation ``g + 1`` is the offspring of generation ``g`` with a fresh
    unrelated founder whose genotypes are Hardy-Weinberg draws from ``maf``
    (default: allele frequencies of ``db``).  Element ``k`` of the result
    holds one descendant per trio, keyed ``<child>.g<k + 1>``.  All random
    draws are made regardless of genotype values, so two databases that
    differ only in a few cells yield coupled descendants under one seed.
    """
    if generations < 1:
        raise ValueError("generations must be at least 1")
    rng = np.random.default_rng(seed)
    maf = allele_frequencies(db) if maf is None else np.asarray(maf, dtype=float)
    idx = ped.indices(db)
    current = db.decoded()[idx[:, 2]].astype(np.int8)
    child_keys = [t.child for t in ped.trios]
    out = []
    for g in range(1, generations + 1):
        shape = current.shape
        founder = (rng.random(shape) < maf).astype(np.int8) + (rng.random(shape) < maf).astype(np.int8)
        own = transmit_genotype(rng.random(shape), current)
        other = transmit_genotype(rng.random(shape), founder)
        current = own + other
        keys = tuple(f"{k}.g{g}" for k in child_keys)
        out.append(SnpDatabase(keys, db.loci, encode(current)))
    return out
