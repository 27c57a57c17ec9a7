"""Catalogue of module kinds: names, arities, and per-list value rules.

This is the single registry the parser validates against and the
instance layer dispatches on. Basic kinds take positional value lists
(hyperparameter domains) and no children; composite kinds take children
and, for the repeat kinds, one list of counts.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

Literal = int | float | str

PADDING_NAMES = ("SAME", "VALID")


@dataclass(frozen=True)
class ListSpec:
    """One positional value list a kind accepts."""

    name: str
    literal_type: type
    required: bool = True
    check: Callable[[Literal], bool] | None = None
    check_desc: str = ""


@dataclass(frozen=True)
class KindSpec:
    name: str
    composite: bool
    lists: tuple[ListSpec, ...] = ()
    min_children: int = 0
    max_children: int | None = 0
    # Name of the structural hyperparameter specified before anything
    # else (it gates which sites are active), or None.
    structural: str | None = None


def _positive_int(v: Literal) -> bool:
    return isinstance(v, int) and v >= 1


def _keep_prob(v: Literal) -> bool:
    return isinstance(v, float) and 0.0 < v <= 1.0


def _padding(v: Literal) -> bool:
    return v in PADDING_NAMES


_pos = "must be a positive integer"

CATALOGUE: dict[str, KindSpec] = {
    spec.name: spec
    for spec in [
        # -- basic ----------------------------------------------------------
        KindSpec(
            "Affine",
            composite=False,
            lists=(
                ListSpec("units", int, check=_positive_int, check_desc=_pos),
                ListSpec("initializer", str, required=False),
            ),
        ),
        KindSpec("ReLU", composite=False),
        KindSpec(
            "Dropout",
            composite=False,
            lists=(
                ListSpec(
                    "keep_prob",
                    float,
                    check=_keep_prob,
                    check_desc="must be a keep probability in (0, 1]",
                ),
            ),
        ),
        KindSpec(
            "Conv2D",
            composite=False,
            lists=(
                ListSpec("filters", int, check=_positive_int, check_desc=_pos),
                ListSpec("kernel_size", int, check=_positive_int, check_desc=_pos),
                ListSpec("stride", int, check=_positive_int, check_desc=_pos),
                ListSpec(
                    "padding",
                    str,
                    required=False,
                    check=_padding,
                    check_desc="must be 'SAME' or 'VALID'",
                ),
                ListSpec("initializer", str, required=False),
            ),
        ),
        KindSpec(
            "MaxPooling2D",
            composite=False,
            lists=(
                ListSpec("kernel_size", int, check=_positive_int, check_desc=_pos),
                ListSpec("stride", int, check=_positive_int, check_desc=_pos),
                ListSpec(
                    "padding",
                    str,
                    required=False,
                    check=_padding,
                    check_desc="must be 'SAME' or 'VALID'",
                ),
            ),
        ),
        KindSpec("BatchNormalization", composite=False),
        # UserHyperparams is validated specially: it takes named pairs,
        # not positional lists.
        KindSpec("UserHyperparams", composite=False),
        KindSpec("Empty", composite=False),
        # -- composite ------------------------------------------------------
        KindSpec("Concat", composite=True, min_children=1, max_children=None),
        KindSpec(
            "Or",
            composite=True,
            min_children=2,
            max_children=None,
            structural="which",
        ),
        KindSpec(
            "Repeat",
            composite=True,
            lists=(ListSpec("count", int, check=_positive_int, check_desc=_pos),),
            min_children=1,
            max_children=1,
            structural="count",
        ),
        KindSpec(
            "RepeatTied",
            composite=True,
            lists=(ListSpec("count", int, check=_positive_int, check_desc=_pos),),
            min_children=1,
            max_children=1,
            structural="count",
        ),
        KindSpec(
            "Optional",
            composite=True,
            min_children=1,
            max_children=1,
            structural="include",
        ),
        KindSpec("Residual", composite=True, min_children=1, max_children=1),
        KindSpec(
            "MaybeSwap",
            composite=True,
            min_children=2,
            max_children=2,
            structural="order",
        ),
    ]
}

BASIC_KINDS = tuple(k for k, s in CATALOGUE.items() if not s.composite)
COMPOSITE_KINDS = tuple(k for k, s in CATALOGUE.items() if s.composite)
