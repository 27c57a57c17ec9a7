"""Pluggable model scoring.

Real training is deliberately out of process: the external evaluator
pipes the graph IR JSON to a user command and reads back one decimal
score. For desk-scale experiments two deterministic synthetic
benchmarks stand in for training: ``linear_ngram`` scores the same
n-gram features the SMBO surrogate can learn, ``prefix_tree`` attaches
a seeded bonus to every (site, value) decision so tree searchers have
exploitable locality. A table evaluator replays frozen score fixtures.

All scores live in [0, 1]. ``deterministic`` promises equal scores for
equal inputs; ``cacheable`` additionally promises the score is a
function of the canonical signature alone, which is what the cache
keys on. The prefix benchmark is deterministic but not cacheable:
distinct paths may share a signature in degenerate spaces.
"""

from __future__ import annotations

import hashlib
import json
import math
import random
import shlex
import subprocess

from .errors import ArchspaceError, EvaluationFailed, UnknownModel
from .graph import GraphIR, signature_hash, to_json
from .nav import Path
from .search import featurize


def clip01(x: float) -> float:
    return 0.0 if x < 0.0 else 1.0 if x > 1.0 else x


def sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    z = math.exp(x)
    return z / (1.0 + z)


def _hash_unit(text: str) -> float:
    """Stable uniform draw in [0, 1) keyed by text."""
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big") / 2.0**64


class Evaluator:
    """Interface: ``evaluate(g) -> score in [0, 1]``."""

    deterministic = False
    cacheable = False

    def evaluate(self, g: GraphIR) -> float:
        raise NotImplementedError


class FunctionEvaluator(Evaluator):
    """Adapter for plain callables (used heavily in tests)."""

    def __init__(self, fn, deterministic: bool = True, cacheable: bool = False):
        self.fn = fn
        self.deterministic = deterministic
        self.cacheable = cacheable

    def evaluate(self, g: GraphIR) -> float:
        return self.fn(g)


# ---------------------------------------------------------------------------
# Synthetic benchmarks


class LinearNgramEvaluator(Evaluator):
    """sigmoid of a fixed random linear function of n-gram counts.

    Each feature weight is drawn uniformly from [-1, 1] by hashing
    (seed, feature key). Optional Gaussian noise is seeded per
    (seed, signature), so equal models always score equally and the
    evaluator stays cacheable.
    """

    deterministic = True
    cacheable = True

    def __init__(self, seed: int, noise_sigma: float = 0.0, ngram_max: int = 3):
        if noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        self.seed = seed
        self.noise_sigma = noise_sigma
        self.ngram_max = ngram_max
        self._weights: dict[str, float] = {}

    def weight(self, key: str) -> float:
        w = self._weights.get(key)
        if w is None:
            w = 2.0 * _hash_unit(f"linear:{self.seed}:{key}") - 1.0
            self._weights[key] = w
        return w

    def evaluate(self, g: GraphIR) -> float:
        features = featurize(g, self.ngram_max)
        z = sum(self.weight(key) * count for key, count in features.items())
        score = sigmoid(z)
        if self.noise_sigma > 0:
            rng = random.Random(f"{self.seed}:{signature_hash(g)}")
            score += rng.gauss(0.0, self.noise_sigma)
        return clip01(score)


def linear_ngram_score(
    g: GraphIR, seed: int, noise_sigma: float = 0.0, ngram_max: int = 3
) -> float:
    return LinearNgramEvaluator(seed, noise_sigma, ngram_max).evaluate(g)


def prefix_step_bonus(seed: int, site: str, value) -> float:
    """Seeded bonus in [-0.05, 0.05] for one (site, value) decision."""
    u = _hash_unit(f"prefix:{seed}|{site}|{json.dumps(value)}")
    return (2.0 * u - 1.0) * 0.05


def prefix_tree_score(path: Path, seed: int) -> float:
    """0.5 plus the sum of per-step bonuses, clipped to [0, 1]. The
    additive structure rewards searchers that learn good subtrees."""
    total = 0.5
    for step in path.steps:
        total += prefix_step_bonus(seed, step.site, step.value)
    return clip01(total)


class PrefixTreeEvaluator(Evaluator):
    deterministic = True
    cacheable = False  # score is a function of the path, not the signature

    def __init__(self, seed: int):
        self.seed = seed

    def evaluate(self, g: GraphIR) -> float:
        return prefix_tree_score(g.source_path, self.seed)


# ---------------------------------------------------------------------------
# Table lookup


class TableEvaluator(Evaluator):
    """Exact lookup by canonical signature hash (hex)."""

    deterministic = True
    cacheable = True

    def __init__(self, table: dict[str, float]):
        self.table = dict(table)

    @classmethod
    def from_file(cls, path) -> "TableEvaluator":
        with open(path, "r", encoding="utf-8") as fh:
            return cls(json.load(fh))

    def evaluate(self, g: GraphIR) -> float:
        key = signature_hash(g)
        try:
            return float(self.table[key])
        except KeyError:
            raise UnknownModel(f"no table entry for signature {key}") from None


def table_evaluate(g: GraphIR, table: dict[str, float]) -> float:
    return TableEvaluator(table).evaluate(g)


# ---------------------------------------------------------------------------
# External command protocol


class ExternalEvaluator(Evaluator):
    """One process per evaluation: graph IR JSON plus newline on stdin,
    a single decimal in [0, 1] plus newline on stdout, exit code 0.

    Everything else (nonzero exit, timeout, unparseable or out-of-range
    output) raises EvaluationFailed with the corresponding reason.
    """

    deterministic = False
    cacheable = False

    def __init__(self, command: str, timeout_s: float | None = None):
        self.command = command
        self.args = shlex.split(command)
        self.timeout_s = timeout_s

    def evaluate(self, g: GraphIR) -> float:
        try:
            proc = subprocess.run(
                self.args,
                input=to_json(g) + "\n",
                capture_output=True,
                text=True,
                timeout=self.timeout_s,
            )
        except subprocess.TimeoutExpired:
            raise EvaluationFailed("timeout", f"after {self.timeout_s}s") from None
        except OSError as exc:
            raise EvaluationFailed("exit_code", str(exc)) from exc
        if proc.returncode != 0:
            raise EvaluationFailed("exit_code", f"exit {proc.returncode}")
        text = proc.stdout.strip()
        try:
            score = float(text)
        except ValueError:
            raise EvaluationFailed("parse", f"output {text!r}") from None
        if not 0.0 <= score <= 1.0:
            raise EvaluationFailed("parse", f"score {score} outside [0, 1]")
        return score


def external_evaluate(g: GraphIR, command: str, timeout_s: float | None = None) -> float:
    return ExternalEvaluator(command, timeout_s).evaluate(g)


# ---------------------------------------------------------------------------
# Memoization


class CachedEvaluator(Evaluator):
    """Memoizes a cacheable evaluator by signature hash; exposes hit
    counts so tests can observe the memoization."""

    deterministic = True
    cacheable = True

    def __init__(self, inner: Evaluator):
        if not inner.cacheable:
            raise ArchspaceError(
                "only evaluators whose score is a function of the signature can be cached"
            )
        self.inner = inner
        self.store: dict[str, float] = {}
        self.hits = 0
        self.misses = 0

    def evaluate(self, g: GraphIR) -> float:
        key = signature_hash(g)
        if key in self.store:
            self.hits += 1
            return self.store[key]
        self.misses += 1
        score = self.inner.evaluate(g)
        self.store[key] = score
        return score


def cached(e: Evaluator) -> CachedEvaluator:
    return CachedEvaluator(e)


def maybe_cached(e: Evaluator) -> Evaluator:
    if isinstance(e, CachedEvaluator) or not e.cacheable:
        return e
    return CachedEvaluator(e)


# ---------------------------------------------------------------------------
# CLI spec strings


def make_evaluator(spec: str) -> Evaluator:
    """Build an evaluator from a CLI spec string.

    Forms: ``linear:<seed>[:<sigma>]``, ``prefix:<seed>``,
    ``table:<file>``, ``cmd:<program>[:<timeout_s>]``.
    """
    kind, _, rest = spec.partition(":")
    try:
        if kind == "linear":
            seed, _, sigma = rest.partition(":")
            return LinearNgramEvaluator(int(seed), float(sigma) if sigma else 0.0)
        if kind == "prefix":
            return PrefixTreeEvaluator(int(rest))
        if kind == "table":
            if not rest:
                raise ValueError("table evaluator needs a file path")
            return TableEvaluator.from_file(rest)
        if kind == "cmd":
            if not rest:
                raise ValueError("cmd evaluator needs a program")
            program, _, timeout = rest.rpartition(":")
            if program and _is_float(timeout):
                return ExternalEvaluator(program, float(timeout))
            return ExternalEvaluator(rest)
    except (ValueError, OSError) as exc:
        raise ArchspaceError(f"bad evaluator spec {spec!r}: {exc}") from exc
    raise ArchspaceError(f"unknown evaluator kind {kind!r} in {spec!r}")


def _is_float(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True
