import copy
import json
import math
import random
from collections import Counter

import pytest

from archspace.core import HyperparamDomain
from archspace.dsl import parse
from archspace.errors import PathMismatch, SampleFailed
from archspace.graph import compile_model, signature_hash
from archspace.nav import (
    Path,
    PathStep,
    SpaceCursor,
    count_models,
    cursor_factory,
    enumerate_cursors,
    enumerate_paths,
    path_from_json,
    path_to_json,
    replay,
    restructure_bisect,
    sample_uniform,
    wrap_bisected,
)

from conftest import IMAGE_SHAPE
from space_gen import gen_safe_space


def leaf_probabilities(space, shape):
    """Exact leaf distribution of the uniform walk: enumerate the tree
    and multiply branch probabilities."""
    probs = {}

    def descend(cursor, p):
        if cursor.done:
            probs[tuple(cursor.steps)] = p
            return
        options = cursor.site().options
        for i in range(len(options)):
            branch = copy.deepcopy(cursor)
            branch.choose(i)
            descend(branch, p / len(options))

    descend(SpaceCursor(space, shape), 1.0)
    return probs


def signature_multiset(space, shape, factory=None):
    result = (
        enumerate_paths(space, shape)
        if factory is None
        else enumerate_cursors(factory)
    )
    return Counter(
        signature_hash(compile_model(space, shape, p)) for p in result.paths
    )


class TestSampling:
    def test_zero_step_space(self):
        path = sample_uniform(parse("(ReLU)"), (4,), 123)
        assert path == Path(())

    def test_determinism(self, space24):
        a = sample_uniform(space24, IMAGE_SHAPE, 99)
        b = sample_uniform(space24, IMAGE_SHAPE, 99)
        assert a == b

    def test_empirical_frequencies_match_exact_probabilities(self, space24):
        probs = leaf_probabilities(space24, IMAGE_SHAPE)
        assert len(probs) == 24
        assert math.isclose(sum(probs.values()), 1.0)
        n = 10_000
        counts = Counter(
            sample_uniform(space24, IMAGE_SHAPE, seed).steps for seed in range(n)
        )
        for leaf, p in probs.items():
            sigma = math.sqrt(n * p * (1 - p))
            assert abs(counts[leaf] - n * p) <= 5 * sigma

    def test_sample_failed_carries_site(self):
        # every leaf underflows: 5x5 VALID window on a 3x3 input
        space = parse('(Conv2D [8, 16] [5] [1] ["VALID"])')
        with pytest.raises(SampleFailed) as info:
            sample_uniform(space, (3, 3, 2), 0)
        assert "Conv2D" in info.value.site_id


class TestEnumerate:
    def test_running_example_has_24_models(self, space24):
        result = enumerate_paths(space24, IMAGE_SHAPE)
        assert len(result.paths) == 24
        assert not result.truncated
        assert not result.pruned

    def test_two_way_or(self):
        assert len(enumerate_paths(parse("(Or (ReLU) (ReLU))"), (4,)).paths) == 2

    def test_repeat_counts_add_independent_sequences(self):
        result = enumerate_paths(parse("(Repeat (Dropout [0.5, 0.9]) [1, 2])"), (4,))
        assert len(result.paths) == 2 + 4

    def test_limit_and_truncation_flag(self, space24):
        result = enumerate_paths(space24, IMAGE_SHAPE, limit=5)
        assert len(result.paths) == 5
        assert result.truncated

    def test_pruning_records_diagnostics(self):
        # kernel 4 fits a 4x4 VALID input once, kernel 5 underflows
        space = parse('(Concat (Conv2D [8] [4, 5] [1] ["VALID"]) (ReLU))')
        result = enumerate_paths(space, (4, 4, 2), limit=100)
        assert len(result.paths) == 1
        assert len(result.pruned) == 1
        assert "Conv2D" in result.pruned[0][0]

    def test_leaf_order_is_depth_first_left_to_right(self):
        space = parse("(Concat (Or (ReLU) (Empty)) (Dropout [0.5, 0.9]))")
        result = enumerate_paths(space, (4,))
        picks = [[s.index for s in p.steps] for p in result.paths]
        assert picks == [[0, 0], [0, 1], [1, 0], [1, 1]]

    def test_count_oracle_matches_enumeration(self):
        rng = random.Random(31)
        for _ in range(40):
            expr = gen_safe_space(rng, depth=3, max_leaves=400)
            assert len(enumerate_paths(expr, (8,)).paths) == count_models(expr)


class TestReplay:
    def test_replay_all_enumerated(self, space24):
        for path in enumerate_paths(space24, IMAGE_SHAPE).paths:
            inst = replay(space24, IMAGE_SHAPE, path)
            assert inst.is_specified()

    def test_swapped_steps_mismatch(self, space24):
        path = enumerate_paths(space24, IMAGE_SHAPE).paths[-1]
        swapped = Path((path.steps[1], path.steps[0]) + path.steps[2:])
        with pytest.raises(PathMismatch):
            replay(space24, IMAGE_SHAPE, swapped)

    def test_value_drift_mismatch(self, space24):
        path = enumerate_paths(space24, IMAGE_SHAPE).paths[0]
        first = path.steps[0]
        tweaked = Path((PathStep(first.site, first.index, 999),) + path.steps[1:])
        with pytest.raises(PathMismatch):
            replay(space24, IMAGE_SHAPE, tweaked)

    def test_short_path_mismatch(self, space24):
        path = enumerate_paths(space24, IMAGE_SHAPE).paths[0]
        with pytest.raises(PathMismatch):
            replay(space24, IMAGE_SHAPE, Path(path.steps[:-1]))

    def test_reference_model_node_sequence(self, space24):
        wanted = [64, 3, "first-second", "exclude"]
        paths = [
            p
            for p in enumerate_paths(space24, IMAGE_SHAPE).paths
            if [s.value for s in p.steps] == wanted
        ]
        assert len(paths) == 1
        g = compile_model(space24, IMAGE_SHAPE, paths[0])
        assert [n.op for n in g.nodes] == ["Conv2D", "BatchNorm", "ReLU", "Flatten", "Affine"]

    def test_replay_of_samples_is_total(self):
        rng = random.Random(5)
        for _ in range(30):
            expr = gen_safe_space(rng, depth=3)
            for seed in range(5):
                path = sample_uniform(expr, (8,), seed)
                replay(expr, (8,), path)

    def test_path_json_round_trip(self, space24):
        path = enumerate_paths(space24, IMAGE_SHAPE).paths[3]
        assert path_from_json(path_to_json(path)) == path
        obj = json.loads(path_to_json(path))
        assert set(obj[0]) == {"site", "index", "value"}


class TestBisection:
    def test_five_values_factor_two(self):
        domain = HyperparamDomain("filters", (16, 32, 48, 64, 80))
        node = restructure_bisect(domain, 2)
        assert (node.lo, node.hi) == (0, 5)
        left, right = node.children
        assert (left.lo, left.hi) == (0, 3)
        assert (right.lo, right.hi) == (3, 5)
        left_left, left_right = left.children
        assert (left_left.lo, left_left.hi) == (0, 2)
        assert (left_right.lo, left_right.hi) == (2, 3)
        assert left_right.is_leaf
        assert [c.lo for c in right.children] == [3, 4]

    def test_wide_factor_flattens(self):
        domain = HyperparamDomain("filters", (16, 32, 48, 64, 80))
        node = restructure_bisect(domain, 5)
        assert len(node.children) == 5
        assert all(c.is_leaf for c in node.children)

    def test_single_value_is_leaf(self):
        node = restructure_bisect(HyperparamDomain("x", (1,)), 2)
        assert node.is_leaf

    def test_partition_properties(self):
        rng = random.Random(11)
        for _ in range(200):
            size = rng.randint(1, 40)
            bf = rng.randint(2, 6)
            domain = HyperparamDomain("d", tuple(range(size)))
            leaves = []

            def walk(node):
                if node.is_leaf:
                    leaves.append(node.lo)
                    return
                assert len(node.children) <= bf
                edges = [c.lo for c in node.children] + [node.children[-1].hi]
                assert edges[0] == node.lo and edges[-1] == node.hi
                assert all(a < b for a, b in zip(edges, edges[1:]))
                for child in node.children:
                    walk(child)

            walk(restructure_bisect(domain, bf))
            assert leaves == list(range(size))  # original order preserved

    def test_wrapped_leaf_set_unchanged(self, space24):
        raw = signature_multiset(space24, IMAGE_SHAPE)
        factory = wrap_bisected(cursor_factory(space24, IMAGE_SHAPE), 2)
        wrapped = signature_multiset(space24, IMAGE_SHAPE, factory)
        assert sum(wrapped.values()) == 24
        assert wrapped == raw

    def test_five_value_site_depth_three(self):
        space = parse("(Affine [8, 16, 24, 32, 40])")
        cursor = wrap_bisected(cursor_factory(space, (4,)), 2)()
        depth = 0
        while not cursor.done:
            assert len(cursor.site().options) == 2
            cursor.choose(0)
            depth += 1
        assert depth == 3

    def test_binary_space_passthrough(self):
        space = parse("(Concat (Or (ReLU) (Empty)) (Dropout [0.5, 0.9]))")
        raw = SpaceCursor(space, (4,))
        wrapped = wrap_bisected(cursor_factory(space, (4,)), 2)()
        while not raw.done:
            assert wrapped.site() == raw.site()
            raw.choose(1)
            wrapped.choose(1)
        assert wrapped.done
        assert wrapped.path() == raw.path()

    def test_wrapped_generated_spaces_keep_leaf_multiset(self):
        rng = random.Random(17)
        for _ in range(25):
            expr = gen_safe_space(rng, depth=3, max_leaves=200)
            raw = signature_multiset(expr, (8,))
            factory = wrap_bisected(cursor_factory(expr, (8,)), 2)
            assert signature_multiset(expr, (8,), factory) == raw
