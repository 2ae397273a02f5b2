"""Command-line entry point: ``run``, ``verify`` and ``replicate``.

Exit codes: 0 success, 1 usage or configuration error, 2 failed verification.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from fp_bandits import rng as rngs
from fp_bandits.environments import EnvConfig
from fp_bandits.harness import (ConfigError, ExperimentConfig, emit_aggregate_csv, load_config, override,
                                run_experiment, run_single)
from fp_bandits.links import linear_link
from fp_bandits.perturbation import PerturbationScheme
from fp_bandits.policies import PolicyConfig
from fp_bandits.presets import PRESETS, get_preset
from fp_bandits import verification as V

log = logging.getLogger("fp_bandits")

EXIT_OK, EXIT_CONFIG, EXIT_VERIFY = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None, help="base seed (run r uses seed + r)")
    p.add_argument("--runs", type=int, default=None, help="override the number of runs")
    p.add_argument("--out", default=None, help="output CSV path")
    p.add_argument("--threads", type=int, default=None,
                   help="worker processes (FP_BANDITS_THREADS overrides)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fp-bandits", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p_run = sub.add_parser("run", help="run an experiment from a JSON or key=value config")
    p_run.add_argument("config")
    _common(p_run)

    p_ver = sub.add_parser("verify", help="run the Monte-Carlo oracle checks")
    p_ver.add_argument("--check", choices=sorted(CHECKS), default=None)
    _common(p_ver)

    p_rep = sub.add_parser("replicate", help="run a built-in preset")
    p_rep.add_argument("preset", choices=sorted(PRESETS))
    p_rep.add_argument("--desk", action="store_true", help="desk-scale horizon and run count")
    _common(p_rep)
    return parser


# ------------------------------------------------------------------ verify

def _verify_anti(seed: int, runs: int | None) -> V.OracleReport:
    n = runs or 1_000_000
    return V.check_anti_concentration(PerturbationScheme.gaussian(), 5, n, rngs.stream(seed, rngs.ORACLE), seed=seed)


def _verify_conc(seed: int, runs: int | None) -> V.OracleReport:
    n = runs or 1_000_000
    return V.check_concentration(PerturbationScheme.gaussian(), 0.1, n, rngs.stream(seed, rngs.ORACLE), seed=seed)


def _verify_marginal(seed: int, runs: int | None) -> V.OracleReport:
    from fp_bandits.estimation import History, fit_mle

    g = rngs.stream(seed, rngs.ORACLE)
    d = 4
    hist = History(d)
    theta = V.random_unit(d, g)
    for _ in range(30):
        x = g.standard_normal(d)
        x /= max(1.0, np.linalg.norm(x))
        hist.append(x, float(x @ theta + g.standard_normal()))
    state = fit_mle(linear_link(), hist, 1.0)
    x = g.standard_normal(d)
    return V.check_score_marginal(x / np.linalg.norm(x), state, 1.0, runs or 100_000, g, seed=seed)


def _verify_beta(seed: int, runs: int | None) -> V.OracleReport:
    cfg = EnvConfig(link=linear_link(), d=2, K=10, T=500, S=1.0, noise_sigma=1.0)
    return V.check_beta_coverage(linear_link(), cfg, runs or 200, seed=seed, delta=0.1, lam=1.0)


def _verify_epl(seed: int, runs: int | None) -> V.OracleReport:
    link = linear_link()
    env = EnvConfig(link=link, d=5, K=20, T=500, S=1.0)
    policy = PolicyConfig("fp", link=link, lam=1.0)
    res = run_single(ExperimentConfig(env, [policy], base_seed=seed), policy, 0)
    return V.check_epl(res.trace, 1.0, env.d, env.T, seed=seed)


CHECKS = {
    "anti_concentration": _verify_anti,
    "concentration": _verify_conc,
    "score_marginal": _verify_marginal,
    "beta_coverage": _verify_beta,
    "epl": _verify_epl,
}


def _write_reports(reports, out) -> None:
    rows = [V.REPORT_HEADER] + [r.row() for r in reports]
    if out:
        with open(out, "w", newline="", encoding="utf-8") as fh:
            csv.writer(fh, lineterminator="\n").writerows(rows)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerows(rows)


def cmd_verify(args) -> int:
    seed = 0 if args.seed is None else args.seed
    names = [args.check] if args.check else sorted(CHECKS)
    reports = [CHECKS[n](seed, args.runs) for n in names]
    _write_reports(reports, args.out)
    return EXIT_OK if all(r.passed for r in reports) else EXIT_VERIFY


# ------------------------------------------------------------------ run / replicate

def _summary(tag: str, agg) -> None:
    for name in agg.policies:
        m, se = agg.final_mean_se(name)
        print(f"{tag:>6} {name:>12}  final regret {m:12.3f} +/- {se:.3f} (se, n={agg.n_runs})")


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    out = args.out or cfg.output_path or "results.csv"
    cfg = override(cfg, seed=args.seed, runs=args.runs, out=out)
    agg = run_experiment(cfg, threads=args.threads)
    _summary("", agg)
    return EXIT_OK


def cmd_replicate(args) -> int:
    seed = 0 if args.seed is None else args.seed
    configs = get_preset(args.preset, desk=args.desk, seed=seed)
    default = f"{args.preset}{'-desk' if args.desk else ''}-seed{seed}.csv"
    out = Path(args.out or default)
    for tag, cfg in configs:
        path = out if len(configs) == 1 else out.with_name(f"{out.stem}_{tag}{out.suffix}")
        cfg = override(cfg, runs=args.runs, out=str(path))
        agg = run_experiment(cfg, threads=args.threads)
        _summary(tag, agg)
    return EXIT_OK


def cli_main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_CONFIG
    try:
        if args.command == "run":
            return cmd_run(args)
        if args.command == "verify":
            return cmd_verify(args)
        return cmd_replicate(args)
    except (ConfigError, KeyError) as exc:
        print(f"fp-bandits: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"fp-bandits: I/O error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
