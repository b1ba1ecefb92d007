"""
Fixed-point estimation of teacher logits from an empirical decision distribution
and the pre-built lookup table from count vectors to logits
"""
import itertools
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, Iterator, Optional, Tuple

import numpy as np

from core import (ConfigError, ContractViolation, DecisionDistribution, LabelSpace,
                  LogitsVector, LookupMiss, NoiseScale, as_label_space)
from decision_model import DecisionModelConfig, label_probabilities
from orthant import QuadratureConfig
from utils.helpers import atomic_write_text

logger = logging.getLogger(__name__)

TABLE_FORMAT_VERSION = 1

THEORIES = ('orthant', 'softmax')


@dataclass(frozen=True)
class SolverConfig:
    epsilon: float = 1e-3
    max_iterations: int = 100
    damping: float = 1.0
    sigma: NoiseScale = field(default_factory=NoiseScale)
    quadrature: QuadratureConfig = field(default_factory=QuadratureConfig)
    smoothing: bool = False
    theory: str = 'orthant'
    labels: Optional[int] = None

    def __post_init__(self):
        if not isinstance(self.sigma, NoiseScale):
            object.__setattr__(self, 'sigma', NoiseScale(self.sigma))
        if not self.epsilon > 0:
            raise ConfigError(f"epsilon must be positive, got {self.epsilon}")
        if isinstance(self.max_iterations, bool) or int(self.max_iterations) != self.max_iterations \
                or self.max_iterations < 1:
            raise ConfigError(f"max_iterations must be a positive integer, got {self.max_iterations}")
        if not 0.0 < self.damping <= 1.0:
            raise ConfigError(f"damping must lie in (0, 1], got {self.damping}")
        if self.theory not in THEORIES:
            raise ConfigError(f"unknown theory {self.theory!r}, expected one of {THEORIES}")
        if self.labels is not None:
            object.__setattr__(self, 'labels', as_label_space(self.labels).size)

    @classmethod
    def from_dict(cls, section: Optional[Dict[str, Any]],
                  quadrature: Optional[Dict[str, Any]] = None) -> 'SolverConfig':
        section = section or {}
        defaults = cls()
        return cls(
            epsilon=float(section.get('epsilon', defaults.epsilon)),
            max_iterations=int(section.get('max_iterations', defaults.max_iterations)),
            damping=float(section.get('damping', defaults.damping)),
            sigma=NoiseScale(float(section.get('sigma', defaults.sigma.sigma))),
            quadrature=QuadratureConfig.from_dict(quadrature),
            smoothing=bool(section.get('smoothing', defaults.smoothing)),
            theory=str(section.get('theory', defaults.theory)),
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            'epsilon': self.epsilon,
            'max_iterations': int(self.max_iterations),
            'damping': self.damping,
            'sigma': self.sigma.sigma,
            'smoothing': self.smoothing,
            'theory': self.theory,
            'quadrature': self.quadrature.to_dict(),
        }

    def decision_model(self) -> DecisionModelConfig:
        return DecisionModelConfig(sigma=self.sigma, quadrature=self.quadrature)


@dataclass(frozen=True, eq=False)
class SolveResult:
    """Outcome of one fixed-point solve.

    residual_linf is measured on the iterate before the final update, so it
    bounds the model distribution of the previous z, not of the returned z_hat.
    """
    z_hat: LogitsVector
    converged: bool
    iterations: int
    residual_linf: float
    initial_residual: float = math.nan

    def permuted(self, order: np.ndarray) -> 'SolveResult':
        """Result for the composition whose i-th largest count sits at order[i]"""
        values = np.empty(self.z_hat.size)
        values[order] = self.z_hat.values
        return SolveResult(LogitsVector(values), self.converged, self.iterations,
                           self.residual_linf, self.initial_residual)


def smooth_counts(p_tilde: DecisionDistribution, delta: Optional[float] = None) -> DecisionDistribution:
    """Add delta pseudo-counts to every label (default 1/(2N)) and renormalise"""
    if p_tilde.sample_count is None:
        raise ContractViolation("count smoothing needs a distribution with a sample count")
    n = p_tilde.sample_count
    delta = 1.0 / (2 * n) if delta is None else float(delta)
    if delta < 0:
        raise ContractViolation(f"delta must be non-negative, got {delta}")
    counts = p_tilde.counts().astype(float)
    return DecisionDistribution((counts + delta) / (n + p_tilde.size * delta))


def _softmax_theory(values: np.ndarray) -> np.ndarray:
    # fsum keeps the normaliser independent of label order
    e = np.exp(values - np.max(values))
    return e / math.fsum(e)


def model_distribution(z_hat: LogitsVector, cfg: SolverConfig) -> np.ndarray:
    """The distribution p the iteration matches against the target"""
    if cfg.theory == 'softmax':
        return _softmax_theory(z_hat.values)
    raw = label_probabilities(z_hat, cfg.decision_model())
    total = math.fsum(raw)
    if abs(total - 1.0) > 10 * cfg.quadrature.tolerance:
        logger.warning("orthant probabilities sum to %.3g before renormalisation", total)
    return raw / total


def solve_logits(p_tilde: DecisionDistribution, cfg: Optional[SolverConfig] = None) -> SolveResult:
    cfg = cfg or SolverConfig()
    if cfg.labels is not None and p_tilde.size != cfg.labels:
        raise ContractViolation(
            f"distribution has {p_tilde.size} labels, solver is configured for {cfg.labels}")
    target = p_tilde
    if cfg.smoothing and p_tilde.sample_count is not None:
        target = smooth_counts(p_tilde)
    target_probs = target.probs

    z = np.zeros(p_tilde.size)
    initial_residual = math.nan
    residual = math.inf
    converged = False
    iterations = 0
    while iterations < cfg.max_iterations:
        p = model_distribution(LogitsVector(z), cfg)
        residual = float(np.max(np.abs(p - target_probs)))
        iterations += 1
        if iterations == 1:
            initial_residual = residual
        logger.debug("iteration %d residual %.3e", iterations, residual)
        z = z + cfg.damping * (target_probs - p)
        if residual <= cfg.epsilon:
            converged = True
            break

    if not converged:
        logger.warning("fixed-point iteration stopped after %d iterations, residual %.3e > %.1e",
                       iterations, residual, cfg.epsilon)
    return SolveResult(LogitsVector(z), converged, iterations, residual, initial_residual)


def compositions(n: int, parts: int) -> Iterator[Tuple[int, ...]]:
    """All tuples of `parts` non-negative integers summing to n (stars and bars)"""
    if parts < 1 or n < 0:
        return
    slots = n + parts - 1
    for bars in itertools.combinations(range(slots), parts - 1):
        edges = (-1,) + bars + (slots,)
        yield tuple(edges[k + 1] - edges[k] - 1 for k in range(parts))


def composition_count(n: int, parts: int) -> int:
    return math.comb(n + parts - 1, parts - 1)


def canonical_order(counts) -> np.ndarray:
    """Indices that sort counts in descending order, ties kept in label order"""
    return np.argsort(-np.asarray(counts), kind='stable')


@dataclass(frozen=True, eq=False)
class LogitsLookupTable:
    label_count: int
    sample_count: int
    sigma: NoiseScale
    config: SolverConfig
    entries: Dict[Tuple[int, ...], SolveResult]

    def __len__(self):
        return len(self.entries)

    def __contains__(self, counts):
        return tuple(int(c) for c in counts) in self.entries


def _solve_counts(args) -> SolveResult:
    counts, cfg = args
    return solve_logits(DecisionDistribution.from_counts(counts), cfg)


def solve_compositions(count_vectors, cfg: Optional[SolverConfig] = None,
                       jobs: int = 1) -> Dict[Tuple[int, ...], SolveResult]:
    """Solve each distinct count vector once per multiset and permute the rest.

    Every count vector is mapped to its descending-sorted representative; the
    permuted representative logits are bit-identical to a direct solve.
    """
    cfg = cfg or SolverConfig()
    keys = list(dict.fromkeys(tuple(int(c) for c in counts) for counts in count_vectors))
    representatives = sorted({tuple(sorted(k, reverse=True)) for k in keys}, reverse=True)

    work = [(rep, cfg) for rep in representatives]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            solved = list(pool.map(_solve_counts, work, chunksize=max(1, len(work) // (4 * jobs))))
    else:
        solved = [_solve_counts(item) for item in work]
    by_rep = dict(zip(representatives, solved))

    not_converged = sum(1 for r in solved if not r.converged)
    if not_converged:
        logger.warning("%d of %d representative solves did not converge", not_converged, len(solved))

    results = {}
    for counts in keys:
        order = canonical_order(counts)
        rep = tuple(int(c) for c in np.asarray(counts)[order])
        results[counts] = by_rep[rep].permuted(order)
    return results


def build_lookup_table(label_space, sample_count: int, cfg: Optional[SolverConfig] = None,
                       jobs: int = 1) -> LogitsLookupTable:
    """Solve every count vector of sample_count draws over the label space"""
    cfg = cfg or SolverConfig()
    size = as_label_space(label_space).size
    if isinstance(sample_count, bool) or int(sample_count) != sample_count or sample_count < 1:
        raise ContractViolation(f"sample count must be a positive integer, got {sample_count!r}")
    sample_count = int(sample_count)

    grid = list(compositions(sample_count, size))
    logger.info("building lookup table L=%d N=%d: %d entries", size, sample_count, len(grid))
    entries = solve_compositions(grid, cfg, jobs)
    return LogitsLookupTable(size, sample_count, cfg.sigma, cfg, entries)


def lookup(table: LogitsLookupTable, p_tilde: DecisionDistribution) -> SolveResult:
    if p_tilde.size != table.label_count:
        raise ContractViolation(
            f"distribution has {p_tilde.size} labels, table covers {table.label_count}")
    if p_tilde.sample_count != table.sample_count:
        raise LookupMiss(f"distribution sample count {p_tilde.sample_count} does not match the "
                         f"table's N={table.sample_count}; call solve_logits instead")
    key = tuple(int(c) for c in p_tilde.counts())
    try:
        return table.entries[key]
    except KeyError:
        raise LookupMiss(f"counts {key} are not on the table grid; call solve_logits instead") from None


def table_to_dict(table: LogitsLookupTable) -> Dict[str, Any]:
    cfg = table.config
    return {
        'version': TABLE_FORMAT_VERSION,
        'L': table.label_count,
        'N': table.sample_count,
        'sigma': table.sigma.sigma,
        'epsilon': cfg.epsilon,
        'max_iterations': int(cfg.max_iterations),
        'damping': cfg.damping,
        'smoothing': cfg.smoothing,
        'theory': cfg.theory,
        'quadrature': cfg.quadrature.to_dict(),
        'entries': [
            {
                'counts': list(counts),
                'z_hat': result.z_hat.to_list(),
                'converged': result.converged,
                'iterations': result.iterations,
                'residual': result.residual_linf,
            }
            for counts, result in sorted(table.entries.items())
        ],
    }


def save_table(table: LogitsLookupTable, path) -> None:
    # json writes floats with repr, which round-trips exactly
    text = json.dumps(table_to_dict(table), sort_keys=True, allow_nan=True)
    atomic_write_text(path, text + "\n")
    logger.info("wrote lookup table with %d entries to %s", len(table), path)


def load_table(path) -> LogitsLookupTable:
    try:
        with open(path, 'r', encoding='utf-8') as fh:
            data = json.load(fh)
    except json.JSONDecodeError as e:
        raise ConfigError(f"lookup table {path} is not valid JSON: {e}") from e
    if data.get('version') != TABLE_FORMAT_VERSION:
        raise ConfigError(f"unsupported lookup table version {data.get('version')!r}")
    cfg = SolverConfig(
        epsilon=float(data['epsilon']),
        max_iterations=int(data['max_iterations']),
        damping=float(data.get('damping', 1.0)),
        sigma=NoiseScale(float(data['sigma'])),
        quadrature=QuadratureConfig.from_dict(data.get('quadrature')),
        smoothing=bool(data.get('smoothing', False)),
        theory=str(data.get('theory', 'orthant')),
    )
    size = LabelSpace(int(data['L'])).size
    entries = {}
    for item in data['entries']:
        counts = tuple(int(c) for c in item['counts'])
        if len(counts) != size or sum(counts) != int(data['N']):
            raise ConfigError(f"lookup table entry {counts} does not fit L={size}, N={data['N']}")
        entries[counts] = SolveResult(LogitsVector(np.array(item['z_hat'], dtype=float)),
                                      bool(item['converged']), int(item['iterations']),
                                      float(item['residual']))
    expected = composition_count(int(data['N']), size)
    if len(entries) != expected:
        raise ConfigError(f"lookup table has {len(entries)} entries, expected {expected}")
    return LogitsLookupTable(size, int(data['N']), cfg.sigma, cfg, entries)
