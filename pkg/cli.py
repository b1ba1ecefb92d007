#!/usr/bin/env python3
"""
Command-line frontend: estimate | table | sweep | augment | distill

Exit codes: 0 success, 1 usage or configuration error, 2 I/O error,
3 oracle failure, 4 numerical failure.
"""
import argparse
import logging
import sys
import time
from dataclasses import replace
from datetime import datetime, timezone
from typing import Any, Dict, List, Optional

from dotenv import load_dotenv

from augment import AugmentConfig, TokenSequence, augment, sampled_operation
from core import (ConfigError, ContractViolation, DecisionDistribution, DecompositionError, EstimationError,
                  LookupMiss, NoiseScale, ProtocolError, TrainingDivergenceError, TransportError)
from database import get_decision_log
from distill import (METHODS, SWEEP_PARAMETERS, ToyScenario, compare_methods, export_soft_labels,
                     make_soft_label_record, sweep_toy)
from solver import SolverConfig, build_lookup_table, load_table, lookup, save_table, solve_logits
from teacher import (BowTextTeacher, GaussianSimTeacher, RemoteConfig, RemoteDecisionClient,
                     estimate_empirical)
from utils.data_loader import load_inputs, load_lexicon, load_stopwords, write_jsonl, write_tsv
from utils.helpers import (config_section, format_seconds, load_config, setup_logging,
                           write_manifest)

logger = logging.getLogger("cli")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_ORACLE = 3
EXIT_NUMERIC = 4

DEFAULT_METHODS = "hard,smooth,noisy,standard,dbkd"


class UsageError(Exception):
    """Bad command-line usage"""


class UsageErrorParser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def exit_code_for(error: BaseException) -> int:
    if isinstance(error, (UsageError, ContractViolation, ConfigError)):
        return EXIT_USAGE
    if isinstance(error, (TransportError, ProtocolError, EstimationError)):
        return EXIT_ORACLE
    if isinstance(error, (DecompositionError, LookupMiss, TrainingDivergenceError, FloatingPointError)):
        return EXIT_NUMERIC
    if isinstance(error, OSError):
        return EXIT_IO
    raise error


def build_parser() -> argparse.ArgumentParser:
    common = UsageErrorParser(add_help=False)
    common.add_argument('--config', default=None, help='YAML config file (default config/config.yaml)')
    common.add_argument('--seed', type=int, default=None)
    common.add_argument('--jobs', type=int, default=None)
    common.add_argument('--sigma', type=float, default=None, help='logit noise scale')
    common.add_argument('--epsilon', type=float, default=None, help='solver error bound')
    common.add_argument('--max-iter', type=int, default=None, help='solver iteration cap')
    common.add_argument('--n-augment', type=int, default=None, help='augmented samples N per input')
    common.add_argument('--output', required=True)
    common.add_argument('--log-level', default=None)
    common.add_argument('--log-file', default=None)

    parser = UsageErrorParser(prog='dbkd', description='Decision-based logits estimation')
    sub = parser.add_subparsers(dest='command', parser_class=UsageErrorParser)
    sub.required = True

    p = sub.add_parser('estimate', parents=[common], help='estimate soft labels for input texts')
    p.add_argument('--input', required=True, help='text file or JSON lines of {id, text}')
    p.add_argument('--oracle', required=True, help='sim:model.json | bow:model.json | remote:URL')
    p.add_argument('--labels', type=int, default=None, help='label count (required for remote oracles)')
    p.add_argument('--tau', type=float, default=None)
    p.add_argument('--table', default=None, help='pre-built lookup table')
    p.add_argument('--decision-log', default=None, help='JSON-lines path or database URL')
    p.add_argument('--include-original', action='store_true')
    p.add_argument('--lexicon', default=None)
    p.add_argument('--stopwords', default=None)

    p = sub.add_parser('table', parents=[common], help='pre-build the counts -> logits lookup table')
    p.add_argument('--labels', type=int, required=True)

    p = sub.add_parser('sweep', parents=[common], help='toy-scenario sweep over N, epsilon or sigma')
    p.add_argument('--parameter', required=True, choices=SWEEP_PARAMETERS)
    p.add_argument('--grid', required=True, help='comma-separated values')
    p.add_argument('--method', default='dbkd', choices=sorted(METHODS))

    p = sub.add_parser('augment', parents=[common], help='write augmented variants of each input')
    p.add_argument('--input', required=True)
    p.add_argument('--lexicon', default=None)
    p.add_argument('--stopwords', default=None)

    p = sub.add_parser('distill', parents=[common], help='compare soft-label methods on the toy scenario')
    p.add_argument('--methods', default=DEFAULT_METHODS, help='comma-separated method names')
    return parser


def solver_config(args, config: Dict[str, Any]) -> SolverConfig:
    section = dict(config_section(config, 'solver'))
    if args.sigma is not None:
        section['sigma'] = args.sigma
    if args.epsilon is not None:
        section['epsilon'] = args.epsilon
    if args.max_iter is not None:
        section['max_iterations'] = args.max_iter
    return SolverConfig.from_dict(section, config_section(config, 'quadrature'))


def augment_config(args, config: Dict[str, Any]) -> AugmentConfig:
    section = config_section(config, 'augment')
    lexicon_path = getattr(args, 'lexicon', None) or section.get('lexicon')
    stopwords_path = getattr(args, 'stopwords', None) or section.get('stopwords')
    cfg = AugmentConfig.from_dict(section, lexicon=load_lexicon(lexicon_path) if lexicon_path else None,
                                  stopwords=load_stopwords(stopwords_path))
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def scenario_config(args, config: Dict[str, Any]) -> ToyScenario:
    scenario = ToyScenario.from_dict(config_section(config, 'scenario'), config_section(config, 'quadrature'),
                                     config_section(config, 'distill'))
    changes = {}
    if args.seed is not None:
        changes['seed'] = args.seed
    if args.sigma is not None:
        changes['sigma'] = args.sigma
    if args.epsilon is not None:
        changes['epsilon'] = args.epsilon
    if args.max_iter is not None:
        changes['max_iterations'] = args.max_iter
    if args.n_augment is not None:
        changes['sample_count'] = args.n_augment
    return scenario.replace(**changes) if changes else scenario


def sample_count(args, config: Dict[str, Any]) -> int:
    n = args.n_augment if args.n_augment is not None else int(config_section(config, 'estimate').get('n_augment', 10))
    if n < 1:
        raise UsageError(f"--n-augment must be at least 1, got {n}")
    return n


def jobs(args, config: Dict[str, Any]) -> int:
    value = args.jobs if args.jobs is not None else int(config_section(config, 'estimate').get('jobs', 1))
    if value < 1:
        raise UsageError(f"--jobs must be at least 1, got {value}")
    return value


def build_oracle(spec: str, labels: Optional[int], sigma: float, seed: int, config: Dict[str, Any]):
    kind, _, target = spec.partition(':')
    if not target:
        raise UsageError(f"oracle spec {spec!r} must look like sim:FILE, bow:FILE or remote:URL")
    if kind == 'sim':
        return GaussianSimTeacher.from_bow(BowTextTeacher.from_json(target), NoiseScale(sigma), seed)
    if kind == 'bow':
        return BowTextTeacher.from_json(target)
    if kind == 'remote':
        if labels is None:
            raise UsageError("--labels is required with a remote oracle")
        remote = RemoteConfig.from_dict({**config_section(config, 'remote'), 'endpoint': target})
        return RemoteDecisionClient(labels, remote)
    raise UsageError(f"unknown oracle kind {kind!r}")


def cmd_estimate(args, config: Dict[str, Any], manifest: Dict[str, Any]) -> int:
    estimate = config_section(config, 'estimate')
    records = load_inputs(args.input)
    cfg = solver_config(args, config)
    aug = augment_config(args, config)
    n = sample_count(args, config)
    seed = args.seed if args.seed is not None else aug.seed
    tau = args.tau if args.tau is not None else float(estimate.get('tau', 1.0))
    include_original = args.include_original or bool(estimate.get('include_original', False))
    oracle = build_oracle(args.oracle, args.labels, cfg.sigma.sigma, seed, config)
    if args.labels is not None and args.labels != oracle.label_space.size:
        raise UsageError(f"--labels {args.labels} does not match the oracle's {oracle.label_space.size} labels")
    log_target = args.decision_log or config_section(config, 'database').get('decision_log')
    log = get_decision_log(log_target)

    table = None
    if args.table:
        table = load_table(args.table)
        effective = n + 1 if include_original else n
        if table.label_count != oracle.label_space.size or table.sample_count != effective:
            raise ConfigError(f"table covers L={table.label_count}, N={table.sample_count}; "
                              f"this run needs L={oracle.label_space.size}, N={effective}")

    manifest.update({
        'config': {'solver': cfg.to_dict(), 'augment': aug.to_dict(), 'n_augment': n, 'tau': tau,
                   'include_original': include_original, 'oracle': oracle.identity,
                   'table': args.table, 'decision_log': log_target},
        'inputs': [args.input] + ([args.table] if args.table else []),
        'seed': seed,
    })

    soft_labels = []
    errors: List[Dict[str, Any]] = []
    for input_id, text in records:
        x = TokenSequence.from_text(text, aug.stopwords)
        if len(x) == 0:
            errors.append({'id': input_id, 'error': 'empty input'})
            continue
        try:
            p_tilde: DecisionDistribution = estimate_empirical(
                x, oracle, n, aug, input_id=input_id, log=log, jobs=jobs(args, config),
                include_original=include_original)
        except EstimationError as e:
            logger.error("input %s: %s", input_id, e)
            errors.append({'id': input_id, 'draw_index': e.draw_index, 'error': str(e.cause)})
            continue
        result = lookup(table, p_tilde) if table is not None else solve_logits(p_tilde, cfg)
        soft_labels.append(make_soft_label_record(input_id, result, tau, p_tilde.counts()))
        logger.info("input %s: counts %s, converged %s", input_id, p_tilde.counts().tolist(), result.converged)

    export_soft_labels(soft_labels, args.output)
    manifest['outputs'] = [args.output]
    manifest['partial'] = bool(errors)
    manifest['errors'] = errors
    manifest['queries'] = oracle.query_count
    print(f"wrote {len(soft_labels)} soft labels to {args.output} ({oracle.query_count} oracle queries)")
    if errors:
        print(f"{len(errors)} inputs failed; see {args.output}.manifest.json", file=sys.stderr)
        return EXIT_ORACLE
    return EXIT_OK


def cmd_table(args, config: Dict[str, Any], manifest: Dict[str, Any]) -> int:
    cfg = solver_config(args, config)
    n = sample_count(args, config)
    if args.labels < 2:
        raise UsageError(f"--labels must be at least 2, got {args.labels}")
    started = time.perf_counter()
    table = build_lookup_table(args.labels, n, cfg, jobs=jobs(args, config))
    elapsed = time.perf_counter() - started
    save_table(table, args.output)
    manifest.update({'config': {'solver': cfg.to_dict(), 'L': args.labels, 'N': n},
                     'inputs': [], 'outputs': [args.output], 'build_seconds': elapsed})
    print(f"{len(table)} entries built in {format_seconds(elapsed)} -> {args.output}")
    return EXIT_OK


def parse_grid(text: str) -> List[float]:
    try:
        values = [float(v) for v in text.split(',') if v.strip()]
    except ValueError as e:
        raise UsageError(f"--grid must be comma-separated numbers: {e}") from e
    if not values:
        raise UsageError("--grid is empty")
    return values


def cmd_sweep(args, config: Dict[str, Any], manifest: Dict[str, Any]) -> int:
    grid = parse_grid(args.grid)
    if args.parameter == 'N':
        if any(v != int(v) or v < 1 for v in grid):
            raise UsageError("N grid values must be positive integers")
        grid = [int(v) for v in grid]
    scenario = scenario_config(args, config)
    table = sweep_toy(args.parameter, grid, scenario, args.method)
    write_tsv(table, args.output)
    manifest.update({'config': {'scenario': scenario.to_dict(), 'parameter': args.parameter,
                                'grid': grid, 'method': args.method},
                     'inputs': [], 'outputs': [args.output], 'seed': scenario.seed})
    print(f"wrote {len(table)} sweep rows to {args.output}")
    return EXIT_OK


def cmd_augment(args, config: Dict[str, Any], manifest: Dict[str, Any]) -> int:
    n = sample_count(args, config)
    records = load_inputs(args.input)
    cfg = augment_config(args, config)
    rows = []
    for input_id, text in records:
        x = TokenSequence.from_text(text, cfg.stopwords)
        if len(x) == 0:
            continue
        for draw in range(1, n + 1):
            operation, alpha, _ = sampled_operation(draw, cfg)
            rows.append({'id': input_id, 'n': draw, 'operation': operation, 'alpha': alpha,
                         'text': augment(x, draw, cfg).text})
    write_jsonl(rows, args.output)
    manifest.update({'config': {'augment': cfg.to_dict(), 'n_augment': n},
                     'inputs': [args.input], 'outputs': [args.output], 'seed': cfg.seed})
    print(f"wrote {len(rows)} augmented variants to {args.output}")
    return EXIT_OK


def cmd_distill(args, config: Dict[str, Any], manifest: Dict[str, Any]) -> int:
    methods = [m.strip() for m in args.methods.split(',') if m.strip()]
    unknown = [m for m in methods if m not in METHODS]
    if not methods or unknown:
        raise UsageError(f"--methods must name methods from {sorted(METHODS)}, got {args.methods!r}")
    scenario = scenario_config(args, config)
    table = compare_methods(methods, scenario)
    write_tsv(table, args.output)
    manifest.update({'config': {'scenario': scenario.to_dict(), 'methods': methods},
                     'inputs': [], 'outputs': [args.output], 'seed': scenario.seed})
    print(table.to_string(index=False))
    return EXIT_OK


COMMANDS = {
    'estimate': cmd_estimate,
    'table': cmd_table,
    'sweep': cmd_sweep,
    'augment': cmd_augment,
    'distill': cmd_distill,
}


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE

    manifest: Dict[str, Any] = {'command': args.command, 'argv': list(argv if argv is not None else sys.argv[1:]),
                                'partial': False, 'errors': []}
    started = time.perf_counter()
    manifest['started_at'] = datetime.now(timezone.utc).isoformat()
    try:
        config = load_config(args.config)
        logging_section = config_section(config, 'logging')
        setup_logging(args.log_level or logging_section.get('level', 'INFO'),
                      args.log_file or logging_section.get('file'))
        code = COMMANDS[args.command](args, config, manifest)
    except Exception as e:
        code = exit_code_for(e)
        logger.error("%s failed: %s", args.command, e)
        print(f"error: {e}", file=sys.stderr)
        return code
    manifest['elapsed_seconds'] = time.perf_counter() - started
    try:
        write_manifest(args.output, manifest)
    except OSError as e:
        print(f"error: cannot write manifest: {e}", file=sys.stderr)
        return EXIT_IO
    return code


if __name__ == "__main__":
    sys.exit(main())
