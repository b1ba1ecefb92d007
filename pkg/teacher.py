"""
Decision oracles and the empirical decision-distribution estimator

An oracle returns only the top-1 label for a text. The estimator queries it
on N augmented copies of an input and counts the answers.
"""
import json
import logging
import threading
import time
from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional, Union

import numpy as np
import requests

from auth import DEFAULT_TOKEN_ENV, auth_headers, get_api_token, redact
from augment import AugmentConfig, TokenSequence, augment
from core import (ConfigError, ContractViolation, DecisionDistribution, EstimationError, LabelSpace,
                  LogitsVector, NoiseScale, ProtocolError, TransportError, argmax_decision,
                  as_label_space)
from database import decision_key, text_hash

logger = logging.getLogger(__name__)


class DecisionOracle(ABC):
    """Black-box classifier that exposes only its top-1 decision"""

    def __init__(self, label_space, identity: str, concurrency: int = 1):
        self.label_space: LabelSpace = as_label_space(label_space)
        self.identity = identity
        self.concurrency = max(1, int(concurrency))
        self._count_lock = threading.Lock()
        self._query_count = 0

    @property
    def query_count(self) -> int:
        with self._count_lock:
            return self._query_count

    def query(self, text: str) -> int:
        label = self._decide(text)
        label = self.label_space.check_label(label)
        with self._count_lock:
            self._query_count += 1
        return label

    @abstractmethod
    def _decide(self, text: str) -> int:
        ...


class BowTextTeacher(DecisionOracle):
    """Linear bag-of-words classifier over lowercase whitespace tokens"""

    def __init__(self, vocab: Dict[str, int], weights, bias, identity: Optional[str] = None):
        weights = np.asarray(weights, dtype=float)
        bias = np.asarray(bias, dtype=float)
        if weights.ndim != 2 or bias.shape != (weights.shape[0],):
            raise ContractViolation(f"weights {weights.shape} and bias {bias.shape} do not agree")
        bad = [w for w, i in vocab.items() if not 0 <= int(i) < weights.shape[1]]
        if bad:
            raise ContractViolation(f"vocabulary indices outside 0..{weights.shape[1] - 1}: {bad[:5]}")
        self.vocab = {w.lower(): int(i) for w, i in vocab.items()}
        self.weights = weights
        self.bias = bias
        digest = text_hash(json.dumps([sorted(self.vocab.items()), weights.tolist(), bias.tolist()]))
        super().__init__(weights.shape[0], identity or f"bow:{digest[:16]}")

    @classmethod
    def from_dict(cls, data: Dict[str, Any], identity: Optional[str] = None) -> 'BowTextTeacher':
        try:
            return cls(data['vocab'], data['weights'], data['bias'], identity=identity)
        except KeyError as e:
            raise ConfigError(f"bag-of-words model is missing field {e}") from e

    @classmethod
    def from_json(cls, path: str) -> 'BowTextTeacher':
        with open(path, 'r', encoding='utf-8') as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as e:
                raise ConfigError(f"bag-of-words model {path} is not valid JSON: {e}") from e
        return cls.from_dict(data)

    def features(self, text: str) -> np.ndarray:
        counts = np.zeros(self.weights.shape[1])
        for token in text.lower().split():
            index = self.vocab.get(token)
            if index is not None:
                counts[index] += 1.0
        return counts

    def logits(self, text: str) -> LogitsVector:
        return LogitsVector(self.weights @ self.features(text) + self.bias)

    def _decide(self, text: str) -> int:
        return argmax_decision(self.logits(text))


class GaussianSimTeacher(DecisionOracle):
    """Argmax of hidden logits plus fresh N(0, sigma^2) noise per query.

    true_logits is either a fixed LogitsVector or a function text -> LogitsVector.
    """

    def __init__(self, true_logits: Union[LogitsVector, Callable[[str], LogitsVector]],
                 sigma: NoiseScale = NoiseScale(), seed: int = 0,
                 label_space=None, identity: Optional[str] = None):
        if isinstance(true_logits, LogitsVector):
            fixed = true_logits
            self._logits_for = lambda _text: fixed
            label_space = label_space or fixed.label_space
        elif callable(true_logits):
            if label_space is None:
                raise ContractViolation("a label space is needed when logits come from a function")
            self._logits_for = true_logits
        else:
            raise ContractViolation("true_logits must be a LogitsVector or a callable")
        self.sigma = sigma if isinstance(sigma, NoiseScale) else NoiseScale(sigma)
        self.seed = int(seed)
        self._rng = np.random.default_rng(self.seed)
        self._rng_lock = threading.Lock()
        super().__init__(label_space, identity or f"sim:sigma={self.sigma.sigma:g}:seed={self.seed}")

    @classmethod
    def from_bow(cls, bow: BowTextTeacher, sigma: NoiseScale = NoiseScale(), seed: int = 0) -> 'GaussianSimTeacher':
        return cls(bow.logits, sigma, seed, label_space=bow.label_space,
                   identity=f"sim:{bow.identity}:sigma={sigma.sigma:g}:seed={int(seed)}")

    def true_logits(self, text: str = '') -> LogitsVector:
        return self._logits_for(text)

    def _decide(self, text: str) -> int:
        z = self._logits_for(text).values
        with self._rng_lock:
            noise = self._rng.standard_normal(z.shape[0])
        return argmax_decision(LogitsVector(z + self.sigma.sigma * noise))

    def sample_decisions(self, count: int, text: str = '') -> np.ndarray:
        """count decisions in one vectorized draw; each one counts as a query"""
        z = self._logits_for(text).values
        with self._rng_lock:
            noise = self._rng.standard_normal((count, z.shape[0]))
        with self._count_lock:
            self._query_count += count
        return np.argmax(z + self.sigma.sigma * noise, axis=1)


def simulate_decision_counts(logits: np.ndarray, sigma: NoiseScale, draws: int,
                             rng: np.random.Generator) -> np.ndarray:
    """Label counts of `draws` noisy argmax decisions for every row of a logits matrix"""
    logits = np.atleast_2d(np.asarray(logits, dtype=float))
    rows, size = logits.shape
    noise = rng.standard_normal((rows, draws, size))
    decisions = np.argmax(logits[:, None, :] + sigma.sigma * noise, axis=2)
    counts = np.zeros((rows, size), dtype=np.int64)
    for label in range(size):
        counts[:, label] = np.count_nonzero(decisions == label, axis=1)
    return counts


@dataclass(frozen=True)
class RemoteConfig:
    endpoint: str = ''
    timeout: float = 30.0
    retries: int = 3
    backoff: float = 0.5
    concurrency: int = 4
    token_env: str = DEFAULT_TOKEN_ENV

    def __post_init__(self):
        if self.timeout <= 0:
            raise ConfigError(f"timeout must be positive, got {self.timeout}")
        if self.retries < 0:
            raise ConfigError(f"retries must be non-negative, got {self.retries}")
        if self.backoff < 0:
            raise ConfigError(f"backoff must be non-negative, got {self.backoff}")
        if self.concurrency < 1:
            raise ConfigError(f"concurrency must be at least 1, got {self.concurrency}")

    @classmethod
    def from_dict(cls, section: Optional[Dict[str, Any]]) -> 'RemoteConfig':
        section = section or {}
        defaults = cls()
        return cls(
            endpoint=str(section.get('endpoint', defaults.endpoint) or ''),
            timeout=float(section.get('timeout', defaults.timeout)),
            retries=int(section.get('retries', defaults.retries)),
            backoff=float(section.get('backoff', defaults.backoff)),
            concurrency=int(section.get('concurrency', defaults.concurrency)),
            token_env=str(section.get('token_env', defaults.token_env)),
        )


class RemoteDecisionClient(DecisionOracle):
    """HTTP decision API: POST {endpoint}/decide {"text": ...} -> {"label": int}"""

    def __init__(self, label_space, cfg: RemoteConfig, session: Optional[requests.Session] = None,
                 token: Optional[str] = None):
        if not cfg.endpoint:
            raise ConfigError("remote oracle needs an endpoint URL")
        self.cfg = cfg
        self.url = cfg.endpoint.rstrip('/') + '/decide'
        self.session = session or requests.Session()
        token = token if token is not None else get_api_token(cfg.token_env)
        self._headers = auth_headers(token)
        super().__init__(label_space, f"remote:{cfg.endpoint.rstrip('/')}", cfg.concurrency)
        logger.info("remote oracle %s, token %s", self.url, redact(token))

    def _decide(self, text: str) -> int:
        last_error = None
        for attempt in range(self.cfg.retries + 1):
            if attempt:
                delay = self.cfg.backoff * 2 ** (attempt - 1)
                logger.debug("retrying %s in %.2fs (attempt %d)", self.url, delay, attempt + 1)
                time.sleep(delay)
            try:
                response = self.session.post(self.url, json={'text': text}, headers=self._headers,
                                             timeout=self.cfg.timeout)
            except (requests.ConnectionError, requests.Timeout) as e:
                last_error = e
                logger.warning("decision API unreachable: %s", e)
                continue
            if response.status_code >= 500:
                last_error = f"HTTP {response.status_code}"
                logger.warning("decision API returned HTTP %d", response.status_code)
                continue
            if response.status_code >= 400:
                raise TransportError(f"decision API rejected the request: HTTP {response.status_code}")
            return self._parse(response)
        raise TransportError(f"decision API failed after {self.cfg.retries + 1} attempts: {last_error}")

    def _parse(self, response) -> int:
        try:
            payload = response.json()
        except ValueError as e:
            raise ProtocolError(f"decision API returned invalid JSON: {e}") from e
        if not isinstance(payload, dict) or 'label' not in payload:
            raise ProtocolError(f"decision API response has no label: {payload!r}")
        label = payload['label']
        if isinstance(label, bool) or not isinstance(label, int):
            raise ProtocolError(f"decision API label is not an integer: {label!r}")
        return label


def query_remote(client: RemoteDecisionClient, text: str) -> int:
    return client.query(text)


def augmented_draws(x: TokenSequence, sample_count: int, cfg: AugmentConfig,
                    include_original: bool = False) -> List[tuple]:
    """(draw index, augmented sequence) pairs; the original input is draw 0 when included"""
    draws = [(0, x)] if include_original else []
    draws.extend((n, augment(x, n, cfg)) for n in range(1, sample_count + 1))
    return draws


def estimate_decisions(x: TokenSequence, oracle: DecisionOracle, sample_count: int,
                       cfg: Optional[AugmentConfig] = None, input_id: Optional[str] = None,
                       log=None, jobs: int = 1, include_original: bool = False) -> List[int]:
    """Teacher decisions on every augmented draw, in draw order"""
    cfg = cfg or AugmentConfig()
    if isinstance(sample_count, bool) or int(sample_count) != sample_count or sample_count < 1:
        raise ContractViolation(f"sample count must be a positive integer, got {sample_count!r}")
    if len(x) == 0:
        raise ContractViolation("cannot estimate decisions for an empty input")
    input_id = input_id if input_id is not None else text_hash(x.text)[:16]
    draws = augmented_draws(x, int(sample_count), cfg, include_original)

    def decide(draw):
        n, sequence = draw
        key = decision_key(oracle.identity, input_id, n, sequence.text)
        if log is not None:
            cached = log.get_decision(key)
            if cached is not None:
                logger.debug("cache hit for %s draw %d", input_id, n)
                return cached
        try:
            label = oracle.query(sequence.text)
        except Exception as e:
            raise EstimationError(n, e) from e
        if log is not None:
            log.record_decision(key, label)
        return label

    workers = min(max(1, int(jobs)), oracle.concurrency)
    if workers == 1:
        return [decide(d) for d in draws]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(decide, d) for d in draws]
        # results in draw order; the first failing draw is reported
        return [f.result() for f in futures]


def estimate_empirical(x: TokenSequence, oracle: DecisionOracle, sample_count: int,
                       cfg: Optional[AugmentConfig] = None, input_id: Optional[str] = None,
                       log=None, jobs: int = 1, include_original: bool = False) -> DecisionDistribution:
    labels = estimate_decisions(x, oracle, sample_count, cfg, input_id, log, jobs, include_original)
    counts = np.bincount(np.asarray(labels, dtype=np.int64), minlength=oracle.label_space.size)
    distribution = DecisionDistribution.from_counts(counts)
    logger.debug("empirical decision counts for %s: %s", input_id, counts.tolist())
    return distribution
