"""
Test-time text augmentation F(x, n)

Synonym replacement, random insertion, random swap and random deletion over
whitespace tokens. The edit strength alpha is half-normal with a configurable
mean; each draw n gets its own generator, numpy PCG64 seeded from
SeedSequence([seed, n]), so F is a pure function of (x, n, cfg).
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, FrozenSet, Iterable, Mapping, Optional, Sequence, Tuple

import numpy as np

from core import ConfigError, ContractViolation

logger = logging.getLogger(__name__)

OPERATIONS = ('synonym_replacement', 'random_insertion', 'random_swap', 'random_deletion')

DEFAULT_STOPWORDS = frozenset("""
a about above after again against all am an and any are as at be because been before being
below between both but by can did do does doing down during each few for from further had has
have having he her here hers herself him himself his how i if in into is it its itself just me
more most my myself no nor not now of off on once only or other our ours ourselves out over own
same she should so some such than that the their theirs them themselves then there these they
this those through to too under until up very was we were what when where which while who whom
why will with you your yours yourself yourselves
""".split())


@dataclass(frozen=True)
class TokenSequence:
    tokens: Tuple[str, ...]
    is_stopword: Tuple[bool, ...] = ()

    def __post_init__(self):
        tokens = tuple(str(t) for t in self.tokens)
        flags = tuple(bool(f) for f in self.is_stopword) or (False,) * len(tokens)
        if len(flags) != len(tokens):
            raise ContractViolation("one stopword flag is needed per token")
        object.__setattr__(self, 'tokens', tokens)
        object.__setattr__(self, 'is_stopword', flags)

    @classmethod
    def from_tokens(cls, tokens: Iterable[str], stopwords: FrozenSet[str] = DEFAULT_STOPWORDS) -> 'TokenSequence':
        tokens = tuple(tokens)
        return cls(tokens, tuple(t.lower() in stopwords for t in tokens))

    @classmethod
    def from_text(cls, text: str, stopwords: FrozenSet[str] = DEFAULT_STOPWORDS) -> 'TokenSequence':
        # whitespace split, punctuation stays attached
        return cls.from_tokens(text.split(), stopwords)

    @property
    def text(self) -> str:
        return " ".join(self.tokens)

    def __len__(self):
        return len(self.tokens)


@dataclass(frozen=True)
class SynonymLexicon:
    entries: Mapping[str, Tuple[str, ...]] = field(default_factory=dict)

    def __post_init__(self):
        cleaned = {}
        for word, synonyms in dict(self.entries).items():
            key = word.strip().lower()
            options = tuple(dict.fromkeys(s.strip() for s in synonyms
                                          if s.strip() and s.strip().lower() != key))
            if key and options:
                cleaned[key] = options
        object.__setattr__(self, 'entries', cleaned)

    def synonyms(self, word: str) -> Tuple[str, ...]:
        return self.entries.get(word.lower(), ())

    def __len__(self):
        return len(self.entries)

    def __hash__(self):
        return hash(tuple(sorted(self.entries.items())))


@dataclass(frozen=True)
class AugmentConfig:
    alpha_expectation: float = 0.1
    seed: int = 0
    lexicon: SynonymLexicon = field(default_factory=SynonymLexicon)
    stopwords: FrozenSet[str] = DEFAULT_STOPWORDS
    operations: Tuple[str, ...] = OPERATIONS

    def __post_init__(self):
        if not 0.0 < self.alpha_expectation <= 0.5:
            raise ConfigError(f"alpha_expectation must lie in (0, 0.5], got {self.alpha_expectation}")
        if isinstance(self.seed, bool) or int(self.seed) != self.seed or self.seed < 0:
            raise ConfigError(f"seed must be a non-negative integer, got {self.seed!r}")
        operations = tuple(self.operations)
        unknown = [op for op in operations if op not in OPERATIONS]
        if unknown or not operations:
            raise ConfigError(f"operations must be a non-empty subset of {OPERATIONS}, got {operations}")
        object.__setattr__(self, 'operations', operations)
        object.__setattr__(self, 'stopwords', frozenset(w.lower() for w in self.stopwords))

    @classmethod
    def from_dict(cls, section: Optional[Dict[str, Any]], lexicon: Optional[SynonymLexicon] = None,
                  stopwords: Optional[Iterable[str]] = None) -> 'AugmentConfig':
        section = section or {}
        defaults = cls()
        return cls(
            alpha_expectation=float(section.get('alpha_expectation', defaults.alpha_expectation)),
            seed=int(section.get('seed', defaults.seed)),
            lexicon=lexicon or defaults.lexicon,
            stopwords=frozenset(stopwords) if stopwords is not None else defaults.stopwords,
            operations=tuple(section.get('operations') or defaults.operations),
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            'alpha_expectation': self.alpha_expectation,
            'seed': int(self.seed),
            'operations': list(self.operations),
            'lexicon_size': len(self.lexicon),
            'stopword_count': len(self.stopwords),
        }


def alpha_from_normal(g, expectation: float):
    """Half-normal alpha with mean `expectation`, capped at 1"""
    return np.minimum(1.0, np.abs(g) * expectation * math.sqrt(math.pi / 2.0))


def sample_alpha(cfg: AugmentConfig, rng: np.random.Generator) -> float:
    return float(alpha_from_normal(rng.standard_normal(), cfg.alpha_expectation))


def edit_count(alpha: float, length: int) -> int:
    """round(alpha * length), half up, at least one edit whenever alpha > 0"""
    if alpha <= 0.0 or length == 0:
        return 0
    return max(1, int(math.floor(alpha * length + 0.5)))


def _rebuild(tokens: Sequence[str], cfg: AugmentConfig) -> TokenSequence:
    return TokenSequence.from_tokens(tokens, cfg.stopwords)


def _require_tokens(x: TokenSequence):
    if len(x) == 0:
        raise ContractViolation("cannot augment an empty token sequence")


def _replaceable(tokens: Sequence[str], cfg: AugmentConfig):
    return [i for i, t in enumerate(tokens)
            if t.lower() not in cfg.stopwords and cfg.lexicon.synonyms(t)]


def synonym_replacement(x: TokenSequence, alpha: float, cfg: AugmentConfig,
                        rng: np.random.Generator) -> TokenSequence:
    _require_tokens(x)
    k = edit_count(alpha, len(x))
    candidates = _replaceable(x.tokens, cfg)
    if k == 0 or not candidates:
        return x
    tokens = list(x.tokens)
    for i in rng.permutation(candidates)[:k]:
        options = cfg.lexicon.synonyms(tokens[i])
        tokens[i] = options[int(rng.integers(len(options)))]
    return _rebuild(tokens, cfg)


def random_insertion(x: TokenSequence, alpha: float, cfg: AugmentConfig,
                     rng: np.random.Generator) -> TokenSequence:
    _require_tokens(x)
    k = edit_count(alpha, len(x))
    tokens = list(x.tokens)
    for _ in range(k):
        candidates = _replaceable(tokens, cfg)
        if not candidates:
            break
        source = tokens[candidates[int(rng.integers(len(candidates)))]]
        options = cfg.lexicon.synonyms(source)
        word = options[int(rng.integers(len(options)))]
        tokens.insert(int(rng.integers(0, len(tokens) + 1)), word)
    if len(tokens) == len(x):
        return x
    return _rebuild(tokens, cfg)


def random_swap(x: TokenSequence, alpha: float, cfg: AugmentConfig,
                rng: np.random.Generator) -> TokenSequence:
    _require_tokens(x)
    k = edit_count(alpha, len(x))
    if k == 0 or len(x) < 2:
        return x
    tokens = list(x.tokens)
    for _ in range(k):
        i, j = rng.choice(len(tokens), size=2, replace=False)
        tokens[i], tokens[j] = tokens[j], tokens[i]
    return _rebuild(tokens, cfg)


def random_deletion(x: TokenSequence, alpha: float, cfg: AugmentConfig,
                    rng: np.random.Generator) -> TokenSequence:
    _require_tokens(x)
    if alpha <= 0.0:
        return x
    keep = rng.random(len(x)) >= alpha
    if not keep.any():
        keep[int(rng.integers(len(x)))] = True
    return _rebuild([t for t, kept in zip(x.tokens, keep) if kept], cfg)


_OPERATION_FUNCS: Dict[str, Callable[..., TokenSequence]] = {
    'synonym_replacement': synonym_replacement,
    'random_insertion': random_insertion,
    'random_swap': random_swap,
    'random_deletion': random_deletion,
}


def draw_generator(n: int, cfg: AugmentConfig) -> np.random.Generator:
    if isinstance(n, bool) or int(n) != n or n < 0:
        raise ContractViolation(f"draw index must be a non-negative integer, got {n!r}")
    return np.random.default_rng(np.random.SeedSequence([int(cfg.seed), int(n)]))


def sampled_operation(n: int, cfg: AugmentConfig) -> Tuple[str, float, np.random.Generator]:
    """Operation name and alpha chosen for draw n, plus the generator positioned after them"""
    rng = draw_generator(n, cfg)
    alpha = sample_alpha(cfg, rng)
    name = cfg.operations[int(rng.integers(len(cfg.operations)))]
    return name, alpha, rng


def augment(x: TokenSequence, n: int, cfg: Optional[AugmentConfig] = None) -> TokenSequence:
    cfg = cfg or AugmentConfig()
    _require_tokens(x)
    name, alpha, rng = sampled_operation(n, cfg)
    logger.debug("draw %d: %s with alpha %.3f", n, name, alpha)
    return _OPERATION_FUNCS[name](x, alpha, cfg, rng)
