"""Tree-level view of a search space: paths, sampling, enumeration and
bisection restructuring.

Every fully specified model corresponds one-to-one with a root-to-leaf
path of decisions, recorded as :class:`Path`. A :class:`SpaceCursor`
performs one such walk over a live instance; :func:`wrap_bisected`
adapts any cursor factory so that wide decision sites are taken as a
cascade of contiguous range splits instead of one flat choice, without
changing the set of reachable models.
"""

from __future__ import annotations

import copy
import json
import random
from dataclasses import dataclass, field

from .catalogue import Literal
from .core import (
    Choice,
    HyperparamDomain,
    ModuleInstance,
    Shape,
    instantiate,
)
from .dsl import SpaceExpr
from .errors import (
    ArchspaceError,
    IndexOutOfRange,
    PathMismatch,
    SampleFailed,
    ShapeIncompatible,
    ShapeUnderflow,
)


@dataclass(frozen=True)
class PathStep:
    site: str
    index: int
    value: Literal


@dataclass(frozen=True)
class Path:
    """Ordered decisions from the root to one fully specified model."""

    steps: tuple[PathStep, ...] = ()

    def __len__(self) -> int:
        return len(self.steps)


def path_to_obj(path: Path) -> list[dict]:
    return [{"site": s.site, "index": s.index, "value": s.value} for s in path.steps]


def path_to_json(path: Path) -> str:
    return json.dumps(path_to_obj(path), sort_keys=True, separators=(",", ":"))


def path_from_obj(obj) -> Path:
    try:
        steps = tuple(
            PathStep(str(d["site"]), int(d["index"]), d["value"]) for d in obj
        )
    except (TypeError, KeyError, ValueError) as exc:
        raise PathMismatch(f"malformed path object: {exc}") from exc
    return Path(steps)


def path_from_json(text: str) -> Path:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise PathMismatch(f"malformed path JSON: {exc}") from exc
    return path_from_obj(obj)


# ---------------------------------------------------------------------------
# Cursors


_SHAPE_ERRORS = (ShapeIncompatible, ShapeUnderflow)


class SpaceCursor:
    """One mutable root-to-leaf walk; single-threaded like the instance
    it drives. Deep-copying a cursor snapshots the walk."""

    def __init__(self, space: SpaceExpr, in_shape):
        self.root: ModuleInstance = instantiate(space)
        self.root.initialize(in_shape)
        self.steps: list[PathStep] = []
        self._attempted: str | None = None  # for error attribution

    @property
    def done(self) -> bool:
        return self.root.is_specified()

    @property
    def instance(self) -> ModuleInstance:
        return self.root

    def site(self) -> Choice:
        return self.root.get_choices()

    def choose(self, index: int) -> None:
        site = self.site()
        if not 0 <= index < len(site.options):
            raise IndexOutOfRange(
                f"{site.site_id}: index {index} not in [0, {len(site.options)})"
            )
        self._attempted = site.site_id
        self.root.choose(index)
        self.steps.append(PathStep(site.site_id, index, site.options[index]))

    def path(self) -> Path:
        return Path(tuple(self.steps))

    def validate_leaf(self) -> None:
        """Force full shape computation; raises on shape-invalid leaves."""
        self.root.get_outdim()

    def finish_random(self, rng: random.Random) -> None:
        while not self.done:
            self.choose(rng.randrange(len(self.site().options)))

    def last_site(self) -> str:
        return self._attempted if self._attempted is not None else "<initialize>"


@dataclass(frozen=True)
class MetaChoiceNode:
    """A contiguous slice [lo, hi) of a domain's ordered values; leaves
    are single values, internal nodes partition their range in order."""

    lo: int
    hi: int
    children: tuple["MetaChoiceNode", ...] = ()

    @property
    def is_leaf(self) -> bool:
        return self.hi - self.lo == 1


def restructure_bisect(domain: HyperparamDomain, branch_factor: int) -> MetaChoiceNode:
    """Recursively split the ordered values into ``branch_factor``
    contiguous parts, earlier parts taking the ceiling share, until
    every leaf holds a single value. With ``branch_factor >= len(values)``
    the result is a single level identical to the original branching."""
    if branch_factor < 2:
        raise ValueError("branch_factor must be >= 2")

    def build(lo: int, hi: int) -> MetaChoiceNode:
        size = hi - lo
        if size == 1:
            return MetaChoiceNode(lo, hi)
        parts = min(branch_factor, size)
        quotient, remainder = divmod(size, parts)
        children = []
        start = lo
        for i in range(parts):
            width = quotient + (1 if i < remainder else 0)
            children.append(build(start, start + width))
            start += width
        return MetaChoiceNode(lo, hi, tuple(children))

    return build(0, len(domain.values))


class BisectedCursor:
    """Traversal adapter: sites wider than ``branch_factor`` are taken
    as a cascade of range decisions; narrow sites pass through
    unchanged, so all-binary spaces behave identically to the raw
    cursor. The recorded :class:`Path` is always the raw one."""

    def __init__(self, inner: SpaceCursor, branch_factor: int):
        if branch_factor < 2:
            raise ValueError("branch_factor must be >= 2")
        self.inner = inner
        self.branch_factor = branch_factor
        self._raw_site: Choice | None = None
        self._node: MetaChoiceNode | None = None

    @property
    def done(self) -> bool:
        return self._node is None and self.inner.done

    @property
    def instance(self) -> ModuleInstance:
        return self.inner.root

    def _pending(self) -> tuple[Choice, MetaChoiceNode] | None:
        if self._node is not None:
            return self._raw_site, self._node
        raw = self.inner.site()
        if len(raw.options) <= self.branch_factor:
            return None
        domain = HyperparamDomain(raw.site_id, raw.options)
        self._raw_site = raw
        self._node = restructure_bisect(domain, self.branch_factor)
        return raw, self._node

    def site(self) -> Choice:
        pending = self._pending()
        if pending is None:
            return self.inner.site()
        raw, node = pending
        options = []
        for child in node.children:
            if child.is_leaf:
                options.append(raw.options[child.lo])
            else:
                options.append(f"{raw.options[child.lo]}..{raw.options[child.hi - 1]}")
        return Choice(f"{raw.site_id}@{node.lo}:{node.hi}", tuple(options))

    def choose(self, index: int) -> None:
        pending = self._pending()
        if pending is None:
            self.inner.choose(index)
            return
        raw, node = pending
        if not 0 <= index < len(node.children):
            raise IndexOutOfRange(
                f"{raw.site_id}: index {index} not in [0, {len(node.children)})"
            )
        child = node.children[index]
        if child.is_leaf:
            self._raw_site = None
            self._node = None
            self.inner.choose(child.lo)
        else:
            self._node = child

    def path(self) -> Path:
        return self.inner.path()

    def validate_leaf(self) -> None:
        self.inner.validate_leaf()

    def finish_random(self, rng: random.Random) -> None:
        while not self.done:
            self.choose(rng.randrange(len(self.site().options)))

    def last_site(self) -> str:
        return self.inner.last_site()


def cursor_factory(space: SpaceExpr, in_shape):
    """Factory of fresh raw cursors over (space, in_shape)."""
    return lambda: SpaceCursor(space, in_shape)


def wrap_bisected(factory, branch_factor: int):
    """Wrap a cursor factory so every wide site is taken by bisection.

    The set of reachable fully specified models is unchanged; only the
    decision structure differs.
    """
    return lambda: BisectedCursor(factory(), branch_factor)


# ---------------------------------------------------------------------------
# Sampling, enumeration, replay


def sample_uniform(space: SpaceExpr, in_shape, rng_seed: int) -> Path:
    """Walk to a leaf choosing uniformly at every surfaced site.

    Deterministic for a given seed. Shape errors along the walk are
    wrapped in SampleFailed carrying the offending site.
    """
    rng = random.Random(rng_seed)
    return sample_with(cursor_factory(space, in_shape), rng)


def sample_with(factory, rng: random.Random) -> Path:
    try:
        cursor = factory()
    except _SHAPE_ERRORS as exc:
        raise SampleFailed("<initialize>", exc) from exc
    try:
        cursor.finish_random(rng)
        cursor.validate_leaf()
    except _SHAPE_ERRORS as exc:
        raise SampleFailed(cursor.last_site(), exc) from exc
    return cursor.path()


@dataclass
class EnumerationResult:
    paths: list[Path] = field(default_factory=list)
    truncated: bool = False
    pruned: list[tuple[str, str]] = field(default_factory=list)  # (site, reason)


def enumerate_paths(space: SpaceExpr, in_shape, limit: int | None = None) -> EnumerationResult:
    """Depth-first, left-to-right enumeration of all leaves.

    Shape errors prune only the offending subtree and are recorded as
    diagnostics; ``limit`` stops the walk after that many leaves and
    sets the truncation flag. A space whose root cannot even be
    initialized raises instead (there is nothing to enumerate).
    """
    return enumerate_cursors(cursor_factory(space, in_shape), limit)


def enumerate_cursors(factory, limit: int | None = None) -> EnumerationResult:
    if limit is not None and limit < 1:
        raise ValueError("limit must be >= 1")
    result = EnumerationResult()
    stack = [factory()]
    while stack:
        cursor = stack.pop()
        if cursor.done:
            try:
                cursor.validate_leaf()
            except _SHAPE_ERRORS as exc:
                result.pruned.append((cursor.last_site(), str(exc)))
                continue
            result.paths.append(cursor.path())
            if limit is not None and len(result.paths) >= limit:
                result.truncated = bool(stack)
                break
            continue
        options = cursor.site().options
        branches = [cursor] + [copy.deepcopy(cursor) for _ in range(len(options) - 1)]
        for index in reversed(range(len(options))):
            branch = branches[index]
            try:
                branch.choose(index)
            except _SHAPE_ERRORS as exc:
                result.pruned.append((branch.last_site(), str(exc)))
                continue
            stack.append(branch)
    return result


def replay(space: SpaceExpr, in_shape, path: Path) -> ModuleInstance:
    """Re-apply a recorded path on a fresh instance, verifying every
    step against the live choice sequence; returns the fully specified
    instance. Site or value disagreement means the path came from a
    different space version and raises PathMismatch."""
    inst = instantiate(space)
    inst.initialize(in_shape)
    for step in path.steps:
        if inst.is_specified():
            raise PathMismatch(f"path continues past full specification at {step.site}")
        site = inst.get_choices()
        if site.site_id != step.site:
            raise PathMismatch(f"expected site {site.site_id}, path has {step.site}")
        if not 0 <= step.index < len(site.options):
            raise PathMismatch(
                f"{site.site_id}: index {step.index} not in [0, {len(site.options)})"
            )
        if site.options[step.index] != step.value:
            raise PathMismatch(
                f"{site.site_id}: option {step.index} is {site.options[step.index]!r}, "
                f"path recorded {step.value!r}"
            )
        inst.choose(step.index)
    if not inst.is_specified():
        raise PathMismatch("path ends before the model is fully specified")
    inst.get_outdim()  # surface shape errors hiding in the terminal module
    return inst


# ---------------------------------------------------------------------------
# Structural model count (independent of the traversal machinery)


def count_models(expr: SpaceExpr) -> int:
    """Number of leaves of the search tree, by structural recursion over
    the declaration. Counts every leaf, including ones enumeration would
    prune for shape validity (no input shape is involved)."""
    kind = expr.kind
    if kind == "Concat":
        total = 1
        for child in expr.children:
            total *= count_models(child)
        return total
    if kind == "Or":
        return sum(count_models(c) for c in expr.children)
    if kind == "Optional":
        return 1 + count_models(expr.children[0])
    if kind == "MaybeSwap":
        return 2 * count_models(expr.children[0]) * count_models(expr.children[1])
    if kind == "Residual":
        return count_models(expr.children[0])
    if kind == "Repeat":
        child = count_models(expr.children[0])
        return sum(child**k for k in expr.value_lists[0])
    if kind == "RepeatTied":
        return len(expr.value_lists[0]) * count_models(expr.children[0])
    # basic modules: one leaf per combination of domain values
    total = 1
    if kind == "UserHyperparams":
        for _, values in expr.user_hyperparam_pairs():
            total *= len(values)
    else:
        for values in expr.value_lists:
            total *= len(values)
    return total
