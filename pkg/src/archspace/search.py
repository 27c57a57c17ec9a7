"""Search algorithms over the decision tree: random, UCB tree search
(optionally over the bisected tree) and surrogate-guided SMBO.

All searchers consume the cursor interface from :mod:`archspace.nav`
and an evaluator from :mod:`archspace.evaluators`; they never look
inside the space. Every searcher is a deterministic function of its
config seed plus the evaluator, and every evaluation (including failed
ones) consumes one unit of budget and yields one :class:`EvalRecord`.
"""

from __future__ import annotations

import json
import math
import random
import time
from dataclasses import dataclass, field

import numpy as np

from .dsl import SpaceExpr
from .errors import ArchspaceError, EvaluationFailed, ShapeIncompatible, ShapeUnderflow
from .graph import GraphIR, basic_module_sequence, build_graph, signature_hash
from .nav import Path, cursor_factory, path_to_obj, wrap_bisected

SEARCHER_KINDS = ("random", "mcts", "mcts_bisect", "smbo")

BIAS_KEY = "(BIAS)"

_FAILURE_ERRORS = (EvaluationFailed, ShapeIncompatible, ShapeUnderflow)


@dataclass(frozen=True)
class SearcherConfig:
    """Knobs shared by all searchers.

    The numeric defaults (c, epsilon, rollout_pool, ngram_max,
    ridge_lambda, branch_factor) are this package's own choices; every
    one is overridable from the CLI.
    """

    kind: str = "random"
    c: float = 0.25
    branch_factor: int = 2
    epsilon: float = 0.1
    rollout_pool: int = 512
    ngram_max: int = 3
    ridge_lambda: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in SEARCHER_KINDS:
            raise ValueError(f"unknown searcher kind {self.kind!r}")
        if self.c < 0:
            raise ValueError("c must be >= 0")
        if self.branch_factor < 2:
            raise ValueError("branch_factor must be >= 2")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must be in [0, 1]")
        if self.rollout_pool < 1:
            raise ValueError("rollout_pool must be >= 1")
        if self.ngram_max < 1:
            raise ValueError("ngram_max must be >= 1")
        if self.ridge_lambda <= 0:
            raise ValueError("ridge_lambda must be > 0")


@dataclass
class EvalRecord:
    """One evaluated model with searcher bookkeeping."""

    step: int
    path: Path
    signature: str | None
    score: float
    best_so_far: float
    failed: bool = False
    meta: dict = field(default_factory=dict)
    wall_ms: float | None = None


def record_to_obj(rec: EvalRecord) -> dict:
    obj = {
        "step": rec.step,
        "path": path_to_obj(rec.path),
        "signature": rec.signature,
        "score": rec.score,
        "best": rec.best_so_far,
        "failed": rec.failed,
        "meta": rec.meta,
    }
    if rec.wall_ms is not None:
        obj["wall_ms"] = rec.wall_ms
    return obj


def record_to_json(rec: EvalRecord) -> str:
    return json.dumps(record_to_obj(rec), sort_keys=True, separators=(",", ":"))


# ---------------------------------------------------------------------------
# UCB


def ucb_score(mean: float, n_parent: int, n_child: int, c: float) -> float:
    """Upper confidence bound ``mean + 2c*sqrt(2*ln(n_parent)/n_child)``;
    unvisited children score infinite so they always take precedence."""
    if n_child == 0:
        return math.inf
    return mean + 2.0 * c * math.sqrt(2.0 * math.log(n_parent) / n_child)


@dataclass
class UCBStats:
    """Visit statistics of one node of the incrementally expanded tree.

    ``n_options`` is filled in the first time the tree policy reaches
    the node as an internal position; terminal nodes keep it None.
    """

    n: int = 0
    score_sum: float = 0.0
    children: dict[int, "UCBStats"] = field(default_factory=dict)
    n_options: int | None = None

    @property
    def mean(self) -> float:
        return self.score_sum / self.n


# ---------------------------------------------------------------------------
# Surrogate features and ridge regression


def featurize(g: GraphIR, ngram_max: int) -> dict[str, int]:
    """Counts of contiguous n-grams (1..ngram_max) over the basic-module
    op sequence; hyperparameter values are disregarded and plumbing
    nodes are excluded."""
    seq = basic_module_sequence(g)
    feats: dict[str, int] = {}
    for n in range(1, ngram_max + 1):
        for i in range(len(seq) - n + 1):
            key = ",".join(seq[i : i + n])
            feats[key] = feats.get(key, 0) + 1
    return feats


@dataclass
class SurrogateModel:
    """Ridge regressor over sparse feature counts.

    Weights solve the regularized normal equations exactly over the
    union of feature keys seen in the training set (plus the always-on
    bias feature unless disabled).
    """

    weights: dict[str, float]
    training_set: list[tuple[dict[str, int], float]]
    bias: bool = True

    def predict(self, features: dict[str, int]) -> float:
        total = self.weights.get(BIAS_KEY, 0.0) if self.bias else 0.0
        for key, count in features.items():
            total += self.weights.get(key, 0.0) * count
        return total


def ridge_fit(
    samples: list[tuple[dict[str, int], float]],
    ridge_lambda: float,
    bias: bool = True,
) -> SurrogateModel:
    """Closed-form ridge solve: (X^T X + lambda I) w = X^T y."""
    if ridge_lambda <= 0:
        raise ValueError("ridge_lambda must be > 0")
    if not samples:
        return SurrogateModel({}, [], bias)
    keys: set[str] = set()
    for features, _ in samples:
        keys.update(features)
    keys.discard(BIAS_KEY)
    ordered = ([BIAS_KEY] if bias else []) + sorted(keys)
    if not ordered:
        return SurrogateModel({}, list(samples), bias)
    index = {k: i for i, k in enumerate(ordered)}
    X = np.zeros((len(samples), len(ordered)))
    y = np.zeros(len(samples))
    for row, (features, score) in enumerate(samples):
        if bias:
            X[row, 0] = 1.0
        for key, count in features.items():
            if key in index:
                X[row, index[key]] = count
        y[row] = score
    gram = X.T @ X + ridge_lambda * np.eye(len(ordered))
    w = np.linalg.solve(gram, X.T @ y)
    return SurrogateModel(dict(zip(ordered, w.tolist())), list(samples), bias)


# ---------------------------------------------------------------------------
# Searchers


@dataclass
class _Outcome:
    path: Path
    signature: str | None
    score: float
    failed: bool
    meta: dict = field(default_factory=dict)


class _SearcherBase:
    def __init__(self, space: SpaceExpr, in_shape, config: SearcherConfig, evaluator):
        self.config = config
        self.rng = random.Random(config.seed)
        factory = cursor_factory(space, in_shape)
        if config.kind == "mcts_bisect":
            factory = wrap_bisected(factory, config.branch_factor)
        self.factory = factory
        self.evaluator = evaluator

    def _rollout(self):
        """Fresh cursor walked randomly to a validated leaf; returns
        (cursor, graph). Shape failures propagate."""
        cursor = self.factory()
        cursor.finish_random(self.rng)
        return cursor, self._graph_of(cursor)

    def _graph_of(self, cursor) -> GraphIR:
        cursor.validate_leaf()
        return build_graph(cursor.instance, cursor.path())

    def step(self) -> _Outcome:
        raise NotImplementedError


class RandomSearcher(_SearcherBase):
    """Uniform choice at every surfaced site, independently per step."""

    def step(self) -> _Outcome:
        cursor = self.factory()
        try:
            cursor.finish_random(self.rng)
            g = self._graph_of(cursor)
        except _FAILURE_ERRORS:
            return _Outcome(cursor.path(), None, 0.0, failed=True)
        signature = signature_hash(g)
        try:
            score = self.evaluator.evaluate(g)
        except EvaluationFailed:
            return _Outcome(cursor.path(), signature, 0.0, failed=True)
        return _Outcome(cursor.path(), signature, score, failed=False)


class MctsSearcher(_SearcherBase):
    """UCB tree policy over the incrementally expanded tree, uniform
    random rollouts past the frontier, one expansion per simulation.

    With ``kind="mcts_bisect"`` the same policy runs over the bisected
    traversal, so no site ever branches wider than ``branch_factor``.
    """

    def __init__(self, space, in_shape, config, evaluator):
        super().__init__(space, in_shape, config, evaluator)
        self.root = UCBStats()
        self.expanded = 1  # the root

    def _select(self, node: UCBStats, n_options: int) -> tuple[int, bool]:
        """(option index, is_expansion). Unexpanded children take
        precedence, picked uniformly at random; otherwise max UCB with
        ties broken toward the lowest index."""
        unexpanded = [i for i in range(n_options) if i not in node.children]
        if unexpanded:
            return unexpanded[self.rng.randrange(len(unexpanded))], True
        best_index, best_score = 0, -math.inf
        for i in range(n_options):
            child = node.children[i]
            score = ucb_score(child.mean, node.n, child.n, self.config.c)
            if score > best_score:
                best_index, best_score = i, score
        return best_index, False

    def step(self) -> _Outcome:
        cursor = self.factory()
        node = self.root
        visited = [self.root]
        score, failed, signature = 0.0, False, None
        try:
            while not cursor.done:
                node.n_options = len(cursor.site().options)
                index, expanding = self._select(node, node.n_options)
                if expanding:
                    child = UCBStats()
                    node.children[index] = child
                    self.expanded += 1
                    cursor.choose(index)
                    visited.append(child)
                    cursor.finish_random(self.rng)  # rollout policy
                    break
                cursor.choose(index)
                node = node.children[index]
                visited.append(node)
            g = self._graph_of(cursor)
            signature = signature_hash(g)
            score = self.evaluator.evaluate(g)
        except _FAILURE_ERRORS:
            failed = True
            score = 0.0
        for stats in visited:
            stats.n += 1
            stats.score_sum += score
        return _Outcome(
            cursor.path(), signature, score, failed, meta={"expanded": self.expanded}
        )


class SmboSearcher(_SearcherBase):
    """Surrogate-guided search: with probability epsilon take a uniform
    rollout, otherwise draw ``rollout_pool`` rollout leaves and evaluate
    the surrogate argmax (ties to the lowest signature hash). The ridge
    surrogate is refit after every evaluation."""

    def __init__(self, space, in_shape, config, evaluator):
        super().__init__(space, in_shape, config, evaluator)
        self.samples: list[tuple[dict[str, int], float]] = []
        self.model = ridge_fit([], config.ridge_lambda)

    def next_candidate(self):
        """(cursor, graph or None): the model to evaluate this step."""
        if self.rng.random() < self.config.epsilon:
            return self._uniform_candidate()
        best = None
        for _ in range(self.config.rollout_pool):
            try:
                cursor, g = self._rollout()
            except _FAILURE_ERRORS:
                continue
            prediction = self.model.predict(featurize(g, self.config.ngram_max))
            tiebreak = signature_hash(g)
            if (
                best is None
                or prediction > best[0]
                or (prediction == best[0] and tiebreak < best[1])
            ):
                best = (prediction, tiebreak, cursor, g)
        if best is None:
            return self._uniform_candidate()
        return best[2], best[3]

    def _uniform_candidate(self):
        cursor = self.factory()
        try:
            cursor.finish_random(self.rng)
            g = self._graph_of(cursor)
        except _FAILURE_ERRORS:
            return cursor, None
        return cursor, g

    def step(self) -> _Outcome:
        cursor, g = self.next_candidate()
        if g is None:
            features: dict[str, int] = {}
            outcome = _Outcome(cursor.path(), None, 0.0, failed=True)
        else:
            features = featurize(g, self.config.ngram_max)
            signature = signature_hash(g)
            try:
                score = self.evaluator.evaluate(g)
                outcome = _Outcome(cursor.path(), signature, score, failed=False)
            except EvaluationFailed:
                outcome = _Outcome(cursor.path(), signature, 0.0, failed=True)
        # Failed evaluations still inform the surrogate, at score zero.
        self.samples.append((features, outcome.score))
        self.model = ridge_fit(self.samples, self.config.ridge_lambda)
        outcome.meta = {"surrogate_n": len(self.samples)}
        return outcome


_SEARCHERS = {
    "random": RandomSearcher,
    "mcts": MctsSearcher,
    "mcts_bisect": MctsSearcher,
    "smbo": SmboSearcher,
}


def make_searcher(space: SpaceExpr, in_shape, config: SearcherConfig, evaluator):
    return _SEARCHERS[config.kind](space, in_shape, config, evaluator)


def run_search(
    space: SpaceExpr,
    in_shape,
    evaluator,
    config: SearcherConfig,
    budget: int,
    timing: bool = False,
) -> list[EvalRecord]:
    """Run one searcher for exactly ``budget`` evaluations.

    Returns one record per step, failures included and flagged, with
    the running best attached. Deterministic given (config, space,
    evaluator); ``timing`` adds wall-clock milliseconds per record.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    from .evaluators import maybe_cached  # deferred: evaluators import featurize

    searcher = make_searcher(space, in_shape, config, maybe_cached(evaluator))
    records: list[EvalRecord] = []
    best = 0.0
    for step in range(1, budget + 1):
        started = time.perf_counter()
        outcome = searcher.step()
        elapsed_ms = (time.perf_counter() - started) * 1000.0
        best = outcome.score if step == 1 else max(best, outcome.score)
        records.append(
            EvalRecord(
                step=step,
                path=outcome.path,
                signature=outcome.signature,
                score=outcome.score,
                best_so_far=best,
                failed=outcome.failed,
                meta=outcome.meta,
                wall_ms=elapsed_ms if timing else None,
            )
        )
    return records
