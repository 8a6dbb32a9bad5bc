"""Command-line entry point: ``genofp <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import adversary, metrics, pipeline
from .keyed_randomness import gen_fingerprint
from .mitigation import SinkhornParams, mitigate_col, mitigate_row
from .snp_model import DataError, load_database, load_joint, load_mask, load_pedigree, load_similarity, save_database, save_mask
from .synth_data import GeneratorConfig
from .vanilla_scheme import ExtractionParams, InsertionParams, detect_traitor, extract_fingerprint, insert_fingerprint

EXIT_USAGE = 1
EXIT_DATA = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _key(text: str) -> bytes:
    if not text or "|" in text:
        raise argparse.ArgumentTypeError("key must be non-empty and must not contain '|'")
    return text.encode("utf-8")


def _fraction(text: str) -> float:
    value = float(text)
    if not 0 <= value <= 1:
        raise argparse.ArgumentTypeError("value must lie in [0, 1]")
    return value


def _density(text: str) -> float:
    value = float(text)
    if not 0 < value <= 1:
        raise argparse.ArgumentTypeError("density must lie in (0, 1]")
    return value


def _add_fp_args(p, with_sp=True):
    p.add_argument("--key", type=_key, default=pipeline.DEFAULT_KEY.decode())
    p.add_argument("--gamma-r", type=_density, required=True)
    p.add_argument("--gamma-l", type=_density, required=True)
    if with_sp:
        p.add_argument("--sp-id", type=int, default=1)


# --- subcommands -------------------------------------------------------------

def cmd_gen(args) -> int:
    if args.families < 1 or args.loci < 1:
        raise UsageError("--families and --loci must be at least 1")
    individuals = args.individuals if args.individuals is not None else 10 * args.families
    try:
        config = GeneratorConfig(
            n_families=args.families, n_individuals=individuals, n_loci=args.loci,
            maf_range=(args.maf_low, args.maf_high), ld_rho=args.ld_rho,
            mutation_rate=args.mutation_rate, seed=args.seed, pair_policy=args.pair_policy,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    dataset = pipeline.Dataset.generate(config)
    dataset.save(args.out, config)
    print(f"wrote {dataset.db.n_rows} x {dataset.db.n_loci} database, {len(dataset.ped)} trios to {args.out}")
    return 0


def cmd_insert(args) -> int:
    db = load_database(args.data)
    out, mask = insert_fingerprint(db, InsertionParams(args.gamma_r, args.gamma_l, args.key, args.sp_id))
    save_database(out, args.out)
    if args.mask:
        save_mask(out, mask, args.mask)
    if args.registry:
        path = Path(args.registry)
        registry = pipeline.load_registry(path) if path.exists() else []
        registry = [fp for fp in registry if fp.sp_id != args.sp_id] + [gen_fingerprint(args.key, args.sp_id)]
        pipeline.save_registry(registry, path)
    print(f"marked {mask.n_marked} cells; wrote {args.out}")
    return 0


def cmd_extract(args) -> int:
    db = load_database(args.data)
    extracted = extract_fingerprint(db, ExtractionParams(args.gamma_r, args.gamma_l, args.key, args.tau))
    print("".join("?" if b < 0 else str(b) for b in extracted.bits))
    print(f"undetermined {extracted.n_undetermined}")
    if args.sp_id is not None:
        print(f"per_cmp {metrics.per_cmp(gen_fingerprint(args.key, args.sp_id), extracted):.6f}")
    return 0


def cmd_attack(args) -> int:
    db = load_database(args.data)
    budget = adversary.AttackBudget(args.budget, args.seed)
    if args.kind == "flip":
        out, report = adversary.random_flip_attack(db, budget)
    elif args.kind == "row":
        if not (args.pedigree and args.similarity):
            raise UsageError("row attack needs --pedigree and --similarity")
        out, report = adversary.row_correlation_attack(
            db, load_pedigree(args.pedigree), load_similarity(args.similarity), budget, args.epsilon_s)
    else:
        if not args.joint:
            raise UsageError("col attack needs --joint")
        out, report = adversary.col_correlation_attack(db, load_joint(args.joint), budget, args.epsilon_j,
                                                       args.strategy)
    save_database(out, args.out)
    print(f"changed {report.changed_cells} cells (per_chg {report.per_chg:.6f}, "
          f"phase A {report.phase_a_cells}, loci {report.loci_touched})")
    return 0


def cmd_mitigate(args) -> int:
    db = load_database(args.data)
    mask = load_mask(db, args.mask)
    db, row = mitigate_row(db, mask, load_pedigree(args.pedigree), load_similarity(args.similarity), args.seed)
    db, col = mitigate_col(db, mask, load_joint(args.joint), SinkhornParams(lam=args.lam), args.seed)
    save_database(db, args.out)
    report = row.merge(col)
    print(f"row phase {report.cells_changed_row_phase}, column phase {report.cells_changed_col_phase}, "
          f"residual violations {report.residual_mendel_violations}, shortfall {report.shortfall}, "
          f"per_chg_additional {report.per_chg_additional:.6f}")
    return 0


def cmd_run(args) -> int:
    dataset = pipeline.Dataset.load(args.dataset)
    plans = [pipeline.AttackPlan.parse(text, args.budget, epsilon_s=args.epsilon_s,
                                       epsilon_j=args.epsilon_j, col_strategy=args.strategy)
             for text in (args.attack or ["row+col"])]
    config = pipeline.ExperimentConfig(
        gamma_r=args.gamma_r, gamma_l=args.gamma_l, scheme=args.scheme, attacks=tuple(plans),
        sp_id=args.sp_id, key=args.key, tau=args.tau, lam=args.lam, split_seed=args.split_seed,
        seed=args.seed, top_k=args.top_k, timing=not args.no_timing,
    )
    records = pipeline.run_experiment(dataset, config)
    pipeline.write_records(records, args.out)
    above = sum(r.per_cmp > pipeline.SUCCESS_BOUNDARY for r in records)
    print(f"wrote {len(records)} records to {args.out}; {above} above the 0.5 boundary")
    return 0


def cmd_report(args) -> int:
    records = [rec for path in args.csv for rec in pipeline.read_records(path)]
    paths = pipeline.write_report(records, args.out)
    for name in ("consistency", "mitigation"):
        print(f"[{name}]")
        print(paths[name].read_text(), end="")
    print(f"scatter data: {paths['scatter']}")
    return 0


def cmd_detect(args) -> int:
    db = load_database(args.data)
    registry = pipeline.load_registry(args.registry)
    if not registry:
        raise DataError("registry is empty")
    ranking = detect_traitor(db, ExtractionParams(args.gamma_r, args.gamma_l, args.key, args.tau), registry)
    for sp_id, score in ranking:
        print(f"{sp_id},{score}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="genofp", description="Fingerprinting experiments on SNP databases.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    p.add_argument("--families", type=int, default=150)
    p.add_argument("--individuals", type=int, help="total rows (default: 10 per family)")
    p.add_argument("--loci", type=int, default=156)
    p.add_argument("--maf-low", type=float, default=0.1)
    p.add_argument("--maf-high", type=float, default=0.4)
    p.add_argument("--ld-rho", type=float, default=0.5)
    p.add_argument("--mutation-rate", type=float, default=0.0)
    p.add_argument("--pair-policy", choices=["adjacent", "all-pairs"], default="adjacent")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("insert", help="insert a fingerprint")
    p.add_argument("--data", required=True)
    _add_fp_args(p)
    p.add_argument("--out", required=True)
    p.add_argument("--mask")
    p.add_argument("--registry", help="CSV of sp_id,fingerprint_hex to update")
    p.set_defaults(func=cmd_insert)

    p = sub.add_parser("extract", help="extract a fingerprint")
    p.add_argument("--data", required=True)
    _add_fp_args(p, with_sp=False)
    p.add_argument("--tau", type=float, default=0.7)
    p.add_argument("--sp-id", type=int, help="report per_cmp against this provider")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("attack", help="run one attack")
    p.add_argument("--data", required=True)
    p.add_argument("--kind", choices=list(pipeline.ATTACK_KINDS), required=True)
    p.add_argument("--budget", type=_fraction, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--pedigree")
    p.add_argument("--similarity")
    p.add_argument("--joint")
    p.add_argument("--epsilon-s", type=float, default=0.0)
    p.add_argument("--epsilon-j", type=float)
    p.add_argument("--strategy", choices=["class", "greedy"], default="class")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("mitigate", help="row then column mitigation")
    p.add_argument("--data", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--pedigree", required=True)
    p.add_argument("--similarity", required=True)
    p.add_argument("--joint", required=True)
    p.add_argument("--lam", type=float, default=pipeline.EXPERIMENT_LAMBDA)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_mitigate)

    p = sub.add_parser("run", help="sweep a density grid")
    p.add_argument("--dataset", required=True, help="directory written by gen")
    p.add_argument("--gamma-r", type=_floats, default=pipeline.GRID)
    p.add_argument("--gamma-l", type=_floats, default=pipeline.GRID)
    p.add_argument("--scheme", choices=["vanilla", "robust"], default="vanilla")
    p.add_argument("--attack", action="append",
                   help="attack plan such as row+col, flip:0.15 or none (repeatable)")
    p.add_argument("--budget", type=_fraction, default=0.08)
    p.add_argument("--epsilon-s", type=float, default=0.0)
    p.add_argument("--epsilon-j", type=float)
    p.add_argument("--strategy", choices=["class", "greedy"], default="class")
    p.add_argument("--key", type=_key, default=pipeline.DEFAULT_KEY.decode())
    p.add_argument("--sp-id", type=int, default=1)
    p.add_argument("--tau", type=float, default=0.7)
    p.add_argument("--lam", type=float, default=pipeline.EXPERIMENT_LAMBDA)
    p.add_argument("--split-seed", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--top-k", type=int, default=50)
    p.add_argument("--no-timing", action="store_true", help="write 0 for wall time (byte-stable output)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="summary tables and scatter data")
    p.add_argument("csv", nargs="+")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("detect", help="rank providers against a leaked copy")
    p.add_argument("--data", required=True)
    _add_fp_args(p, with_sp=False)
    p.add_argument("--tau", type=float, default=0.7)
    p.add_argument("--registry", required=True)
    p.set_defaults(func=cmd_detect)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"genofp: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FileNotFoundError, ValueError) as exc:
        print(f"genofp: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
