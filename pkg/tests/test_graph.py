import json
import random
from collections import Counter

import pytest

from archspace.dsl import parse
from archspace.errors import InconsistentShapes, MalformedGraph, PathMismatch
from archspace.graph import (
    basic_module_sequence,
    compile_model,
    from_json,
    signature_hash,
    signature_json,
    to_json,
    total_params,
)
from archspace.nav import Path, PathStep, enumerate_paths

from conftest import IMAGE_SHAPE
from space_gen import gen_safe_space

GOLDEN_IDENTITY = (
    '{"input_shape":[7],"ir_version":1,"nodes":[{"attrs":{},"id":0,"in_shape":[7],'
    '"inputs":[],"op":"Identity","out_shape":[7],"param_count":0,"train_only":false}],'
    '"output_shape":[7],"source_path":[],"training_config":{}}'
)


def reference_graph(space24):
    wanted = [64, 3, "first-second", "exclude"]
    path = next(
        p
        for p in enumerate_paths(space24, IMAGE_SHAPE).paths
        if [s.value for s in p.steps] == wanted
    )
    return compile_model(space24, IMAGE_SHAPE, path)


class TestCompile:
    def test_reference_model(self, space24):
        g = reference_graph(space24)
        assert [(n.op, n.param_count) for n in g.nodes] == [
            ("Conv2D", 1792),
            ("BatchNorm", 128),
            ("ReLU", 0),
            ("Flatten", 0),
            ("Affine", 655370),
        ]
        assert g.nodes[0].attrs == {
            "filters": 64,
            "kernel_size": 3,
            "stride": 1,
            "padding": "SAME",
        }
        assert g.nodes[3].in_shape == (32, 32, 64)
        assert g.nodes[3].out_shape == (65536,)
        assert g.output_shape == (10,)
        assert total_params(g) == 657290

    def test_empty_space_identity_graph(self):
        g = compile_model(parse("(Empty)"), (7,), Path(()))
        assert len(g.nodes) == 1
        assert g.nodes[0].op == "Identity"
        assert total_params(g) == 0
        assert g.output_shape == (7,)

    def test_residual_pads_skip_branch(self):
        space = parse("(Residual (Conv2D [8] [3] [1]))")
        g = compile_model(space, (8, 8, 3), Path(()))
        ops = [n.op for n in g.nodes]
        assert ops == ["Identity", "Conv2D", "PadZeros", "Add"]
        pad = g.nodes[2]
        assert pad.in_shape == (8, 8, 3)
        assert pad.out_shape == (8, 8, 8)
        assert pad.attrs == {"pad_to": [8, 8, 8]}
        add = g.nodes[3]
        assert sorted(add.inputs) == [1, 2]
        assert add.out_shape == (8, 8, 8)

    def test_residual_after_a_predecessor_forks_from_it(self):
        space = parse("(Concat (ReLU) (Residual (Conv2D [8] [3] [1])))")
        g = compile_model(space, (8, 8, 3), Path(()))
        assert [n.op for n in g.nodes] == ["ReLU", "Conv2D", "PadZeros", "Add"]
        assert g.nodes[1].inputs == [0]
        assert g.nodes[2].inputs == [0]

    def test_mismatched_path(self, space24):
        bogus = Path((PathStep("nowhere", 0, 1),))
        with pytest.raises(PathMismatch):
            compile_model(space24, IMAGE_SHAPE, bogus)

    def test_single_chain_shapes_connect(self):
        rng = random.Random(23)
        for _ in range(20):
            expr = gen_safe_space(rng, depth=2, max_leaves=64)
            for path in enumerate_paths(expr, (8,)).paths[:8]:
                g = compile_model(expr, (8,), path)
                if any(n.op in ("Add", "PadZeros") for n in g.nodes):
                    continue  # side branches excluded from chain checks
                for left, right in zip(g.nodes, g.nodes[1:]):
                    assert left.out_shape == right.in_shape
                    assert right.inputs == [left.id]

    def test_dropout_marked_train_only(self):
        g = compile_model(parse("(Dropout [0.5])"), (4,), Path(()))
        assert g.nodes[0].train_only
        assert g.nodes[0].attrs == {"keep_p": 0.5}
        obj = json.loads(to_json(g))
        assert obj["nodes"][0]["train_only"] is True

    def test_user_hyperparams_to_training_config(self):
        space = parse('(Concat (UserHyperparams ["lr" [0.1, 0.01]]) (ReLU))')
        path = enumerate_paths(space, (4,)).paths[1]
        g = compile_model(space, (4,), path)
        assert g.training_config == {"lr": 0.01}
        assert [n.op for n in g.nodes] == ["ReLU"]  # metadata only, no node


class TestJson:
    def test_golden_identity(self):
        g = compile_model(parse("(Empty)"), (7,), Path(()))
        assert to_json(g) == GOLDEN_IDENTITY

    def test_byte_identical_across_compiles(self, space24):
        a = to_json(reference_graph(space24))
        b = to_json(reference_graph(space24))
        assert a == b

    def test_injective_on_corpus(self, space24):
        blobs = {
            to_json(compile_model(space24, IMAGE_SHAPE, p))
            for p in enumerate_paths(space24, IMAGE_SHAPE).paths
        }
        assert len(blobs) == 24

    def test_round_trip(self, space24):
        g = reference_graph(space24)
        again = from_json(to_json(g))
        assert to_json(again) == to_json(g)
        assert again == g

    def test_corrupted_shape_detected(self, space24):
        obj = json.loads(to_json(reference_graph(space24)))
        obj["nodes"][0]["out_shape"] = [32, 32, 63]
        with pytest.raises(InconsistentShapes):
            from_json(json.dumps(obj))

    def test_corrupted_params_detected(self, space24):
        obj = json.loads(to_json(reference_graph(space24)))
        obj["nodes"][0]["param_count"] = 1
        with pytest.raises(InconsistentShapes):
            from_json(json.dumps(obj))

    def test_bad_version_rejected(self):
        obj = json.loads(GOLDEN_IDENTITY)
        obj["ir_version"] = 2
        with pytest.raises(MalformedGraph):
            from_json(json.dumps(obj))

    def test_missing_key_rejected(self):
        obj = json.loads(GOLDEN_IDENTITY)
        del obj["nodes"][0]["op"]
        with pytest.raises(MalformedGraph):
            from_json(json.dumps(obj))

    def test_forward_reference_rejected(self, space24):
        obj = json.loads(to_json(reference_graph(space24)))
        obj["nodes"][0]["inputs"] = [1]
        with pytest.raises(MalformedGraph):
            from_json(json.dumps(obj))

    def test_not_json_rejected(self):
        with pytest.raises(MalformedGraph):
            from_json("nope{")


class TestParams:
    def test_identity_zero(self):
        assert total_params(compile_model(parse("(Empty)"), (7,), Path(()))) == 0

    def test_reference_total(self, space24):
        assert total_params(reference_graph(space24)) == 657290

    def test_independent_recount_from_attrs(self, space24):
        # recount with local formulas, ignoring stored param_count
        def recount(node):
            if node.op == "Conv2D":
                k, f = node.attrs["kernel_size"], node.attrs["filters"]
                return k * k * node.in_shape[2] * f + f
            if node.op == "Affine":
                n = 1
                for d in node.in_shape:
                    n *= d
                return (n + 1) * node.attrs["units"]
            if node.op == "BatchNorm":
                return 2 * node.in_shape[-1]
            return 0

        for path in enumerate_paths(space24, IMAGE_SHAPE).paths:
            g = compile_model(space24, IMAGE_SHAPE, path)
            assert total_params(g) == sum(recount(n) for n in g.nodes)


class TestSignature:
    def test_plumbing_excluded(self, space24):
        g = reference_graph(space24)
        assert basic_module_sequence(g) == ["Conv2D", "BatchNorm", "ReLU", "Affine"]

    def test_optional_equals_or_empty(self):
        base = "(Concat (Affine [4, 8]) %s (ReLU))"
        optional = parse(base % "(Optional (Dropout [0.5, 0.9]))")
        desugared = parse(base % "(Or (Empty) (Dropout [0.5, 0.9]))")

        def leaf_multiset(expr):
            return Counter(
                signature_hash(compile_model(expr, (6,), p))
                for p in enumerate_paths(expr, (6,)).paths
            )

        assert leaf_multiset(optional) == leaf_multiset(desugared)

    def test_maybe_swap_equals_or_of_concats(self):
        swap = parse("(MaybeSwap (Affine [4, 8]) (ReLU))")
        desugared = parse("(Or (Concat (Affine [4, 8]) (ReLU)) (Concat (ReLU) (Affine [4, 8])))")

        def leaf_multiset(expr):
            return Counter(
                signature_hash(compile_model(expr, (6,), p))
                for p in enumerate_paths(expr, (6,)).paths
            )

        assert leaf_multiset(swap) == leaf_multiset(desugared)

    def test_training_config_distinguishes_models(self):
        space = parse('(Concat (UserHyperparams ["lr" [0.1, 0.01]]) (ReLU))')
        paths = enumerate_paths(space, (4,)).paths
        sigs = {signature_hash(compile_model(space, (4,), p)) for p in paths}
        assert len(sigs) == 2

    def test_signature_json_mentions_attrs(self, space24):
        g = reference_graph(space24)
        obj = json.loads(signature_json(g))
        assert obj["modules"][0]["attrs"]["filters"] == 64
