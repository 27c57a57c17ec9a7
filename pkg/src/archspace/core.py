"""Live module instances: sequential specification and dimension rules.

``instantiate`` turns a parsed :class:`~archspace.dsl.SpaceExpr` into a
tree of module instances. An instance is a small state machine driven
through six operations: ``initialize`` (tell it its input shape),
``is_specified``, ``get_choices``, ``choose``, ``get_outdim`` and
``param_count``. Composite instances implement the same interface by
delegating to their submodules, so any composition is automatically
sequentially specifiable.

Specification order is depth-first and left-to-right, with a module's
own hyperparameters before its submodules' ones; the structural
hyperparameter of Or/Optional/MaybeSwap/Repeat/RepeatTied always comes
first because it decides which other decision sites exist at all.
Decision sites with a single option are applied internally and never
surfaced, so searchers only ever see real branching.

Instances are driven from the root and are single-threaded; hand an
instance between threads, never share it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .catalogue import CATALOGUE, Literal
from .dsl import SpaceExpr
from .errors import (
    AlreadySpecified,
    ArchspaceError,
    IndexOutOfRange,
    NotInitialized,
    NotSpecified,
    ShapeIncompatible,
    ShapeUnderflow,
)

Shape = tuple[int, ...]

MAX_SHAPE_ORDER = 4


def check_shape(dims) -> Shape:
    """Validate and normalize a tensor shape (order 1..4, dims >= 1)."""
    shape = tuple(int(d) for d in dims)
    if not 1 <= len(shape) <= MAX_SHAPE_ORDER:
        raise ShapeIncompatible(f"shape order must be 1..{MAX_SHAPE_ORDER}, got {shape}")
    if any(d < 1 for d in shape):
        raise ShapeIncompatible(f"shape dimensions must be >= 1, got {shape}")
    return shape


def flat_size(shape: Shape) -> int:
    return math.prod(shape)


@dataclass(frozen=True)
class HyperparamDomain:
    """Ordered, duplicate-free values one hyperparameter may take."""

    name: str
    values: tuple[Literal, ...]

    def __post_init__(self):
        if not self.values:
            raise ArchspaceError(f"domain {self.name} has no values")


@dataclass(frozen=True)
class Choice:
    """The decision site an unspecified module is currently exposing.

    ``site_id`` is stable across instances of the same space: the chain
    of submodule indices and kinds from the root plus the hyperparameter
    name, e.g. ``Concat.0.Conv2D.filters``.
    """

    site_id: str
    options: tuple[Literal, ...]


def _conv_spatial(in_dim: int, kernel: int, stride: int, padding: str, where: str) -> int:
    if padding == "SAME":
        return -(-in_dim // stride)  # ceil(in/stride)
    out = (in_dim - kernel) // stride + 1
    if out <= 0:
        raise ShapeUnderflow(
            f"{where}: VALID window {kernel} stride {stride} exhausts dimension {in_dim}"
        )
    return out


class ModuleInstance:
    """Base of all instances; see the module docstring for the protocol."""

    kind: str

    def __init__(self, expr: SpaceExpr, address: str):
        self.expr = expr  # immutable template, shared with clones
        self.kind = expr.kind
        self.address = address
        self.in_shape: Shape | None = None

    # -- public, cascading interface ---------------------------------------

    def initialize(self, in_shape) -> None:
        if self.in_shape is not None:
            raise ArchspaceError(f"{self.address}: already initialized")
        self._initialize_raw(check_shape(in_shape))
        self._settle()

    def get_choices(self) -> Choice:
        self._require_init()
        site = self._current_site()
        if site is None:
            raise AlreadySpecified(f"{self.address}: fully specified")
        return site

    def choose(self, option_index: int) -> None:
        site = self.get_choices()
        if not 0 <= option_index < len(site.options):
            raise IndexOutOfRange(
                f"{site.site_id}: index {option_index} not in [0, {len(site.options)})"
            )
        self._choose_raw(option_index)
        self._settle()

    def is_specified(self) -> bool:
        self._require_init()
        return self._specified()

    def get_outdim(self) -> Shape:
        self._require_specified()
        return self._outdim()

    def param_count(self) -> int:
        self._require_specified()
        return self._params()

    # -- shared plumbing -----------------------------------------------------

    def _settle(self) -> None:
        # Apply single-option sites internally; stop at real branching.
        while True:
            site = self._current_site()
            if site is None or len(site.options) > 1:
                return
            self._choose_raw(0)

    def _require_init(self) -> None:
        if self.in_shape is None:
            raise NotInitialized(f"{self.address}: initialize first")

    def _require_specified(self) -> None:
        self._require_init()
        if not self._specified():
            raise NotSpecified(f"{self.address}: not fully specified")

    def _check_index(self, index: int, options) -> None:
        if not 0 <= index < len(options):
            raise IndexOutOfRange(
                f"{self.address}: index {index} not in [0, {len(options)})"
            )

    # -- raw protocol, implemented per kind ----------------------------------

    def _initialize_raw(self, shape: Shape) -> None:
        raise NotImplementedError

    def _current_site(self) -> Choice | None:
        raise NotImplementedError

    def _choose_raw(self, index: int) -> None:
        raise NotImplementedError

    def _specified(self) -> bool:
        raise NotImplementedError

    def _outdim(self) -> Shape:
        raise NotImplementedError

    def _params(self) -> int:
        raise NotImplementedError


class _Chain:
    """Series connection with lazy initialization.

    Submodule ``i + 1`` is initialized with the output shape of
    submodule ``i`` the moment ``i`` becomes fully specified; that is
    the only order that is always well defined, because output shapes
    depend on chosen hyperparameter values.
    """

    def __init__(self, subs: list[ModuleInstance]):
        self.subs = subs
        self.pos = 0

    def start(self, shape: Shape) -> None:
        self.subs[0]._initialize_raw(shape)
        self.advance()

    def advance(self) -> None:
        while self.pos < len(self.subs) and self.subs[self.pos]._specified():
            if self.pos + 1 < len(self.subs):
                nxt = self.subs[self.pos + 1]
                nxt._initialize_raw(self.subs[self.pos]._outdim())
            self.pos += 1

    @property
    def done(self) -> bool:
        return self.pos >= len(self.subs)

    def site(self) -> Choice | None:
        if self.done:
            return None
        return self.subs[self.pos]._current_site()

    def choose(self, index: int) -> None:
        if self.done:
            raise AlreadySpecified("chain fully specified")
        self.subs[self.pos]._choose_raw(index)
        self.advance()

    def outdim(self) -> Shape:
        return self.subs[-1]._outdim()

    def params(self) -> int:
        return sum(s._params() for s in self.subs)


# ---------------------------------------------------------------------------
# Basic modules


class BasicInstance(ModuleInstance):
    """Shared machinery: local hyperparameters assigned in declaration order."""

    def __init__(self, expr: SpaceExpr, address: str):
        super().__init__(expr, address)
        self.domains = self._build_domains(expr)
        self.assignments: dict[str, Literal] = {}

    def _build_domains(self, expr: SpaceExpr) -> list[HyperparamDomain]:
        names = [ls.name for ls in CATALOGUE[expr.kind].lists]
        return [
            HyperparamDomain(name, values)
            for name, values in zip(names, expr.value_lists)
        ]

    def _initialize_raw(self, shape: Shape) -> None:
        self._check_input(shape)
        self.in_shape = shape

    def _current_site(self) -> Choice | None:
        for d in self.domains:
            if d.name not in self.assignments:
                return Choice(f"{self.address}.{d.name}", d.values)
        return None

    def _choose_raw(self, index: int) -> None:
        for d in self.domains:
            if d.name not in self.assignments:
                self._check_index(index, d.values)
                self.assignments[d.name] = d.values[index]
                return
        raise AlreadySpecified(f"{self.address}: fully specified")

    def _specified(self) -> bool:
        return len(self.assignments) == len(self.domains)

    # identity defaults, overridden where shapes or parameters differ
    def _check_input(self, shape: Shape) -> None:
        pass

    def _outdim(self) -> Shape:
        return self.in_shape

    def _params(self) -> int:
        return 0


class EmptyInstance(BasicInstance):
    pass


class ReLUInstance(BasicInstance):
    pass


class DropoutInstance(BasicInstance):
    pass


class BatchNormalizationInstance(BasicInstance):
    def _params(self) -> int:
        # One translation and one scaling coefficient per channel of the
        # innermost dimension.
        return 2 * self.in_shape[-1]


class AffineInstance(BasicInstance):
    """Dense affine map; order-N input is implicitly flattened."""

    def _outdim(self) -> Shape:
        return (self.assignments["units"],)

    def _params(self) -> int:
        n = flat_size(self.in_shape)
        return (n + 1) * self.assignments["units"]


class _WindowedInstance(BasicInstance):
    """Common shape handling for 2-D convolution and pooling."""

    def _check_input(self, shape: Shape) -> None:
        if len(shape) != 3:
            raise ShapeIncompatible(
                f"{self.address}: needs [height, width, channels], got {shape}"
            )

    def _spatial(self) -> tuple[int, int]:
        k = self.assignments["kernel_size"]
        s = self.assignments["stride"]
        padding = self.assignments.get("padding", "SAME")
        h = _conv_spatial(self.in_shape[0], k, s, padding, self.address)
        w = _conv_spatial(self.in_shape[1], k, s, padding, self.address)
        return h, w


class Conv2DInstance(_WindowedInstance):
    def _outdim(self) -> Shape:
        h, w = self._spatial()
        return (h, w, self.assignments["filters"])

    def _params(self) -> int:
        k = self.assignments["kernel_size"]
        f = self.assignments["filters"]
        channels = self.in_shape[2]
        return k * k * channels * f + f


class MaxPooling2DInstance(_WindowedInstance):
    def _outdim(self) -> Shape:
        h, w = self._spatial()
        return (h, w, self.in_shape[2])


class UserHyperparamsInstance(BasicInstance):
    """Identity for shapes; assignments surface as training metadata."""

    def _build_domains(self, expr: SpaceExpr) -> list[HyperparamDomain]:
        return [
            HyperparamDomain(name, values)
            for name, values in expr.user_hyperparam_pairs()
        ]

    def training_assignments(self) -> dict[str, Literal]:
        return dict(self.assignments)


# ---------------------------------------------------------------------------
# Composite modules


def _sub_address(parent: str, index: int, kind: str) -> str:
    return f"{parent}.{index}.{kind}"


class ConcatInstance(ModuleInstance):
    def __init__(self, expr: SpaceExpr, address: str):
        super().__init__(expr, address)
        self.subs = [
            instantiate(child, _sub_address(address, i, child.kind))
            for i, child in enumerate(expr.children)
        ]
        self.chain = _Chain(self.subs)

    def _initialize_raw(self, shape: Shape) -> None:
        self.in_shape = shape
        self.chain.start(shape)

    def _current_site(self) -> Choice | None:
        return self.chain.site()

    def _choose_raw(self, index: int) -> None:
        self.chain.choose(index)

    def _specified(self) -> bool:
        return self.chain.done

    def _outdim(self) -> Shape:
        return self.chain.outdim()

    def _params(self) -> int:
        return self.chain.params()


class OrInstance(ModuleInstance):
    """Chooses one submodule; only that branch's sites ever activate."""

    def __init__(self, expr: SpaceExpr, address: str):
        super().__init__(expr, address)
        self.subs = [
            instantiate(child, _sub_address(address, i, child.kind))
            for i, child in enumerate(expr.children)
        ]
        self.which: int | None = None

    def _initialize_raw(self, shape: Shape) -> None:
        self.in_shape = shape

    def _site_options(self) -> tuple[int, ...]:
        return tuple(range(len(self.subs)))

    def _current_site(self) -> Choice | None:
        if self.which is None:
            return Choice(f"{self.address}.which", self._site_options())
        return self.subs[self.which]._current_site()

    def _choose_raw(self, index: int) -> None:
        if self.which is None:
            self._check_index(index, self.subs)
            self.which = index
            self.subs[index]._initialize_raw(self.in_shape)
            return
        self.subs[self.which]._choose_raw(index)

    def _specified(self) -> bool:
        return self.which is not None and self.subs[self.which]._specified()

    def _outdim(self) -> Shape:
        return self.subs[self.which]._outdim()

    def _params(self) -> int:
        return self.subs[self.which]._params()


class OptionalInstance(ModuleInstance):
    OPTIONS = ("exclude", "include")

    def __init__(self, expr: SpaceExpr, address: str):
        super().__init__(expr, address)
        child = expr.children[0]
        self.child = instantiate(child, _sub_address(address, 0, child.kind))
        self.include: bool | None = None

    def _initialize_raw(self, shape: Shape) -> None:
        self.in_shape = shape

    def _current_site(self) -> Choice | None:
        if self.include is None:
            return Choice(f"{self.address}.include", self.OPTIONS)
        if self.include:
            return self.child._current_site()
        return None

    def _choose_raw(self, index: int) -> None:
        if self.include is None:
            self._check_index(index, self.OPTIONS)
            self.include = self.OPTIONS[index] == "include"
            if self.include:
                self.child._initialize_raw(self.in_shape)
            return
        if not self.include:
            raise AlreadySpecified(f"{self.address}: fully specified")
        self.child._choose_raw(index)

    def _specified(self) -> bool:
        if self.include is None:
            return False
        return (not self.include) or self.child._specified()

    def _outdim(self) -> Shape:
        return self.child._outdim() if self.include else self.in_shape

    def _params(self) -> int:
        return self.child._params() if self.include else 0


class MaybeSwapInstance(ModuleInstance):
    """Connects two submodules in series, choosing which comes first."""

    OPTIONS = ("first-second", "second-first")

    def __init__(self, expr: SpaceExpr, address: str):
        super().__init__(expr, address)
        self.subs = [
            instantiate(child, _sub_address(address, i, child.kind))
            for i, child in enumerate(expr.children)
        ]
        self.order: int | None = None
        self.chain: _Chain | None = None

    def _initialize_raw(self, shape: Shape) -> None:
        self.in_shape = shape

    def _current_site(self) -> Choice | None:
        if self.order is None:
            return Choice(f"{self.address}.order", self.OPTIONS)
        return self.chain.site()

    def _choose_raw(self, index: int) -> None:
        if self.order is None:
            self._check_index(index, self.OPTIONS)
            self.order = index
            first, second = (0, 1) if index == 0 else (1, 0)
            self.chain = _Chain([self.subs[first], self.subs[second]])
            self.chain.start(self.in_shape)
            return
        self.chain.choose(index)

    def _specified(self) -> bool:
        return self.chain is not None and self.chain.done

    def _outdim(self) -> Shape:
        return self.chain.outdim()

    def _params(self) -> int:
        return self.chain.params()


class RepeatInstance(ModuleInstance):
    """Repeats the template in series; every repetition is specified
    independently."""

    def __init__(self, expr: SpaceExpr, address: str):
        super().__init__(expr, address)
        self.counts = expr.value_lists[0]
        self.template = expr.children[0]
        self.count: int | None = None
        self.chain: _Chain | None = None

    def _initialize_raw(self, shape: Shape) -> None:
        self.in_shape = shape

    def _make_clone(self, index: int) -> ModuleInstance:
        return instantiate(
            self.template, _sub_address(self.address, index, self.template.kind)
        )

    def _current_site(self) -> Choice | None:
        if self.count is None:
            return Choice(f"{self.address}.count", self.counts)
        return self.chain.site()

    def _choose_raw(self, index: int) -> None:
        if self.count is None:
            self._check_index(index, self.counts)
            self.count = self.counts[index]
            self.chain = _Chain([self._make_clone(j) for j in range(self.count)])
            self.chain.start(self.in_shape)
            return
        self.chain.choose(index)

    def _specified(self) -> bool:
        return self.chain is not None and self.chain.done

    def _outdim(self) -> Shape:
        return self.chain.outdim()

    def _params(self) -> int:
        return self.chain.params()


class RepeatTiedInstance(RepeatInstance):
    """Like Repeat, but hyperparameter values are chosen once and applied
    to every repetition.

    The first clone is specified interactively; once it is complete the
    remaining clones are built by replaying the same option indices down
    the series, each initialized with its predecessor's output shape
    (so per-repetition shapes and parameter counts still differ).
    """

    def __init__(self, expr: SpaceExpr, address: str):
        super().__init__(expr, address)
        self.shared: ModuleInstance | None = None
        self.clones: list[ModuleInstance] | None = None
        self._choice_log: list[int] = []

    def _current_site(self) -> Choice | None:
        if self.count is None:
            return Choice(f"{self.address}.count", self.counts)
        if self.clones is None:
            return self.shared._current_site()
        return None

    def _choose_raw(self, index: int) -> None:
        if self.count is None:
            self._check_index(index, self.counts)
            self.count = self.counts[index]
            self.shared = self._make_clone(0)
            self.shared._initialize_raw(self.in_shape)
            self._maybe_build()
            return
        if self.clones is not None:
            raise AlreadySpecified(f"{self.address}: fully specified")
        self.shared._choose_raw(index)
        self._choice_log.append(index)
        self._maybe_build()

    def _maybe_build(self) -> None:
        if self.clones is not None or not self.shared._specified():
            return
        clones = [self.shared]
        for j in range(1, self.count):
            clone = self._make_clone(j)
            clone._initialize_raw(clones[-1]._outdim())
            for idx in self._choice_log:
                clone._choose_raw(idx)
            clones.append(clone)
        self.clones = clones

    def _specified(self) -> bool:
        return self.clones is not None

    def _outdim(self) -> Shape:
        return self.clones[-1]._outdim()

    def _params(self) -> int:
        return sum(c._params() for c in self.clones)


class ResidualInstance(ModuleInstance):
    """Skip connection around the body, merged by element-wise addition.

    When skip and body shapes differ, the smaller tensor is zero-padded
    at the high-index end of every dimension, so each output dimension
    is the maximum of the two. Shapes of different order cannot be
    merged and raise ShapeIncompatible.
    """

    def __init__(self, expr: SpaceExpr, address: str):
        super().__init__(expr, address)
        child = expr.children[0]
        self.body = instantiate(child, _sub_address(address, 0, child.kind))

    def _initialize_raw(self, shape: Shape) -> None:
        self.in_shape = shape
        self.body._initialize_raw(shape)

    def _current_site(self) -> Choice | None:
        return self.body._current_site()

    def _choose_raw(self, index: int) -> None:
        self.body._choose_raw(index)

    def _specified(self) -> bool:
        return self.body._specified()

    def merge_shape(self) -> Shape:
        body = self.body._outdim()
        if len(body) != len(self.in_shape):
            raise ShapeIncompatible(
                f"{self.address}: cannot add shapes {self.in_shape} and {body}"
            )
        return tuple(max(a, b) for a, b in zip(self.in_shape, body))

    def _outdim(self) -> Shape:
        return self.merge_shape()

    def _params(self) -> int:
        return self.body._params()


_CLASSES: dict[str, type[ModuleInstance]] = {
    "Affine": AffineInstance,
    "ReLU": ReLUInstance,
    "Dropout": DropoutInstance,
    "Conv2D": Conv2DInstance,
    "MaxPooling2D": MaxPooling2DInstance,
    "BatchNormalization": BatchNormalizationInstance,
    "UserHyperparams": UserHyperparamsInstance,
    "Empty": EmptyInstance,
    "Concat": ConcatInstance,
    "Or": OrInstance,
    "Repeat": RepeatInstance,
    "RepeatTied": RepeatTiedInstance,
    "Optional": OptionalInstance,
    "Residual": ResidualInstance,
    "MaybeSwap": MaybeSwapInstance,
}


def instantiate(expr: SpaceExpr, address: str | None = None) -> ModuleInstance:
    """Build the unspecified, uninitialized instance tree for ``expr``."""
    return _CLASSES[expr.kind](expr, address if address is not None else expr.kind)
