"""Seeded random generators for property tests.

``gen_ast`` produces arbitrary parser-valid declarations over the whole
catalogue (used for round-trip tests). ``gen_safe_space`` restricts
itself to modules that are shape-valid for an order-1 input, so every
leaf of the generated space enumerates and compiles cleanly.
"""

from __future__ import annotations

import random

from archspace.dsl import SpaceExpr
from archspace.nav import count_models

INITIALIZERS = ["kaiming", "xavier", "trunc0.1", "naïve \"quoted\"", "back\\slash"]
PADDINGS = ["SAME", "VALID"]
KEEP_POOL = [0.1, 0.25, 0.5, 0.75, 0.9, 1.0]
UNIT_POOL = [2, 3, 4, 5, 8, 10, 16, 32]
FILTER_POOL = [4, 8, 16, 24, 32, 64]
KERNEL_POOL = [1, 2, 3, 5, 7]
STRIDE_POOL = [1, 2, 3]
COUNT_POOL = [1, 2, 3, 4]
UH_NAME_POOL = ["lr", "optimizer", "decay", "patience", "warmup"]


def _values(rng: random.Random, pool, max_n=3):
    n = rng.randint(1, min(max_n, len(pool)))
    return tuple(rng.sample(pool, n))


def _gen_user_hyperparams(rng: random.Random) -> SpaceExpr:
    names = rng.sample(UH_NAME_POOL, rng.randint(1, 3))
    lists = []
    for name in names:
        pool = rng.choice(
            [
                [1, 2, 4, 8, 16],
                [0.001, 0.01, 0.1, 0.5],
                ["adam", "sgd", "rmsprop"],
            ]
        )
        lists.append((name,))
        lists.append(_values(rng, pool))
    return SpaceExpr("UserHyperparams", tuple(lists))


def _gen_basic(rng: random.Random, safe: bool) -> SpaceExpr:
    kinds = ["ReLU", "Empty", "BatchNormalization", "Dropout", "Affine", "UserHyperparams"]
    if not safe:
        kinds += ["Conv2D", "MaxPooling2D"]
    kind = rng.choice(kinds)
    if kind in ("ReLU", "Empty", "BatchNormalization"):
        return SpaceExpr(kind)
    if kind == "Dropout":
        return SpaceExpr(kind, (_values(rng, KEEP_POOL),))
    if kind == "Affine":
        lists = [_values(rng, UNIT_POOL)]
        if rng.random() < 0.3:
            lists.append(_values(rng, INITIALIZERS, max_n=2))
        return SpaceExpr(kind, tuple(lists))
    if kind == "UserHyperparams":
        return _gen_user_hyperparams(rng)
    if kind == "Conv2D":
        lists = [
            _values(rng, FILTER_POOL),
            _values(rng, KERNEL_POOL),
            _values(rng, STRIDE_POOL),
        ]
        if rng.random() < 0.5:
            lists.append(_values(rng, PADDINGS, max_n=2))
            if rng.random() < 0.3:
                lists.append(_values(rng, INITIALIZERS, max_n=2))
        return SpaceExpr(kind, tuple(lists))
    lists = [_values(rng, KERNEL_POOL), _values(rng, STRIDE_POOL)]
    if rng.random() < 0.5:
        lists.append(_values(rng, PADDINGS, max_n=2))
    return SpaceExpr("MaxPooling2D", tuple(lists))


def gen_ast(rng: random.Random, depth: int = 3, safe: bool = False) -> SpaceExpr:
    """Random parser-valid declaration; ``safe`` keeps every leaf
    shape-valid for order-1 input."""
    if depth <= 0 or rng.random() < 0.35:
        return _gen_basic(rng, safe)
    kind = rng.choice(
        ["Concat", "Or", "Optional", "MaybeSwap", "Repeat", "RepeatTied", "Residual"]
    )
    child = lambda: gen_ast(rng, depth - 1, safe)  # noqa: E731
    if kind == "Concat":
        return SpaceExpr(kind, (), tuple(child() for _ in range(rng.randint(1, 3))))
    if kind == "Or":
        return SpaceExpr(kind, (), tuple(child() for _ in range(rng.randint(2, 3))))
    if kind in ("Optional", "Residual"):
        return SpaceExpr(kind, (), (child(),))
    if kind == "MaybeSwap":
        return SpaceExpr(kind, (), (child(), child()))
    counts = tuple(sorted(_values(rng, COUNT_POOL, max_n=3)))
    return SpaceExpr(kind, (counts,), (child(),))


def gen_safe_space(rng: random.Random, depth: int = 3, max_leaves: int = 512) -> SpaceExpr:
    """Safe-mode space with a bounded number of models."""
    while True:
        expr = gen_ast(rng, depth, safe=True)
        if count_models(expr) <= max_leaves:
            return expr


def _bench_block(rng: random.Random) -> SpaceExpr:
    """One stage of the benchmark space: a structural decision over
    distinct shape-safe modules, or a wide numeric domain."""
    kind = rng.randrange(6)
    relu = SpaceExpr("ReLU")
    bn = SpaceExpr("BatchNormalization")
    empty = SpaceExpr("Empty")
    drop = SpaceExpr("Dropout", (_values(rng, KEEP_POOL, max_n=2),))
    if kind == 0:
        branches = rng.sample([relu, bn, empty, drop], rng.randint(2, 3))
        return SpaceExpr("Or", (), tuple(branches))
    if kind == 1:
        return SpaceExpr("Optional", (), (rng.choice([drop, bn, relu]),))
    if kind == 2:
        first, second = rng.sample([relu, bn, drop], 2)
        return SpaceExpr("MaybeSwap", (), (first, second))
    if kind == 3:
        block = SpaceExpr(
            "Concat", (), (SpaceExpr("Affine", (_values(rng, UNIT_POOL, max_n=2),)), relu)
        )
        counts = tuple(sorted(rng.sample(COUNT_POOL, 3)))
        repeat = rng.choice(["Repeat", "RepeatTied"])
        return SpaceExpr(repeat, (counts,), (block,))
    if kind == 4:
        # wide ordered numeric domain: bisection territory
        width = rng.choice([8, 12, 16])
        lo = rng.randint(1, 5)
        values = tuple(lo * (2**i) if i < 10 else lo * 1000 + i for i in range(width))
        return SpaceExpr("Affine", (values,))
    name = rng.choice(UH_NAME_POOL)
    width = rng.choice([8, 16])
    values = tuple(round(0.5**i, 10) for i in range(width))
    return SpaceExpr("UserHyperparams", ((name,), values))


def gen_bench_space(seed: int, stages: int = 8, min_leaves: int = 10_000) -> SpaceExpr:
    """Structure-heavy benchmark space used by the acceptance suite.

    Stages mix structural choices (visible to n-gram features) with wide
    ordered numeric domains (where bisection restructuring matters); all
    modules are shape-safe for order-1 input, so every leaf is valid.
    """
    rng = random.Random(seed)
    while True:
        blocks = [_bench_block(rng) for _ in range(stages)]
        expr = SpaceExpr("Concat", (), tuple(blocks))
        if count_models(expr) >= min_leaves:
            return expr
