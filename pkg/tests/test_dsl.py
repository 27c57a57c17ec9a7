import random

import pytest

from archspace.dsl import SpaceExpr, parse, pretty_print
from archspace.errors import (
    ArityMismatch,
    DepthExceeded,
    EmptyValueList,
    HeterogeneousValueList,
    InvalidValue,
    SyntaxViolation,
    UnbalancedParens,
    UnknownModuleKind,
)

from conftest import SPACE_24
from space_gen import gen_ast


class TestParse:
    def test_optional_dropout(self):
        expr = parse("(Optional (Dropout [0.5, 0.9]))")
        assert expr == SpaceExpr(
            "Optional", (), (SpaceExpr("Dropout", ((0.5, 0.9),)),)
        )

    def test_zero_hyperparameter_module(self):
        assert parse("(ReLU)") == SpaceExpr("ReLU")

    def test_conv_value_lists(self):
        expr = parse("(Conv2D [32, 64] [3, 5] [1])")
        assert expr.kind == "Conv2D"
        assert expr.value_lists == ((32, 64), (3, 5), (1,))
        assert expr.children == ()

    def test_bare_identifier_children(self):
        expr = parse("(MaybeSwap BatchNormalization ReLU)")
        assert [c.kind for c in expr.children] == ["BatchNormalization", "ReLU"]
        assert all(c.value_lists == () for c in expr.children)

    def test_running_example(self):
        expr = parse(SPACE_24)
        assert expr.kind == "Concat"
        assert [c.kind for c in expr.children] == [
            "Conv2D",
            "MaybeSwap",
            "Optional",
            "Affine",
        ]

    def test_comments_and_crlf(self):
        text = "; leading comment\r\n(Optional ; trailing\r\n (ReLU))\r\n"
        assert parse(text) == SpaceExpr("Optional", (), (SpaceExpr("ReLU"),))

    def test_commas_optional(self):
        assert parse("(Conv2D [32 64] [3 5] [1])") == parse(
            "(Conv2D [32, 64] [3, 5] [1])"
        )

    def test_user_hyperparams(self):
        expr = parse('(UserHyperparams ["opt" ["adam", "sgd"]] ["lr" [0.1, 0.01]])')
        assert expr.user_hyperparam_pairs() == [
            ("opt", ("adam", "sgd")),
            ("lr", (0.1, 0.01)),
        ]

    def test_scientific_notation(self):
        expr = parse('(UserHyperparams ["lr" [1e-3, 2.5e-2]])')
        assert expr.user_hyperparam_pairs() == [("lr", (0.001, 0.025))]

    def test_determinism(self):
        text = SPACE_24
        assert parse(text) == parse(text)


class TestParseErrors:
    def test_empty_value_list(self):
        with pytest.raises(EmptyValueList) as info:
            parse("(Dropout [])")
        assert info.value.span.line == 1
        assert info.value.span.column == 10  # at the '['
        assert info.value.span.length == 2

    def test_unknown_kind(self):
        with pytest.raises(UnknownModuleKind):
            parse("(Convolution [3])")

    def test_unbalanced_open(self):
        with pytest.raises(UnbalancedParens):
            parse("(Concat (ReLU)")

    def test_unbalanced_close(self):
        with pytest.raises(UnbalancedParens):
            parse("(ReLU))")

    def test_heterogeneous_list(self):
        with pytest.raises(HeterogeneousValueList):
            parse("(Dropout [0.5, 1])")

    def test_arity_too_few_lists(self):
        with pytest.raises(ArityMismatch):
            parse("(Conv2D [32])")

    def test_arity_children_on_basic(self):
        with pytest.raises(ArityMismatch):
            parse("(ReLU (ReLU))")

    def test_arity_optional_two_children(self):
        with pytest.raises(ArityMismatch):
            parse("(Optional (ReLU) (ReLU))")

    def test_bare_module_needs_its_lists(self):
        with pytest.raises(ArityMismatch):
            parse("(Optional Dropout)")

    def test_depth_limit(self):
        deep = "(Optional " * 300 + "(ReLU)" + ")" * 300
        with pytest.raises(DepthExceeded):
            parse(deep)

    def test_keep_probability_range(self):
        with pytest.raises(InvalidValue):
            parse("(Dropout [1.5])")

    def test_repeat_count_positive(self):
        with pytest.raises(InvalidValue):
            parse("(Repeat (ReLU) [0, 1])")

    def test_padding_names(self):
        with pytest.raises(InvalidValue):
            parse('(Conv2D [32] [3] [1] ["same"])')

    def test_duplicate_values(self):
        with pytest.raises(InvalidValue):
            parse("(Affine [10, 10])")

    def test_trailing_input(self):
        with pytest.raises(SyntaxViolation):
            parse("(ReLU) (ReLU)")

    def test_nested_list_outside_user_hyperparams(self):
        with pytest.raises(SyntaxViolation):
            parse("(Affine [[10]])")


class TestPrettyPrint:
    def test_relu(self):
        assert pretty_print(SpaceExpr("ReLU")) == "(ReLU)"

    def test_running_example_canonical(self):
        # Whitespace collapses and bare identifiers gain parentheses.
        assert pretty_print(parse(SPACE_24)) == (
            "(Concat (Conv2D [32, 64] [3, 5] [1]) "
            "(MaybeSwap (BatchNormalization) (ReLU)) "
            "(Optional (Dropout [0.5, 0.9])) "
            "(Affine [10]))"
        )

    def test_user_hyperparams_pairs(self):
        text = '(UserHyperparams ["lr" [0.1, 0.01]] ["opt" ["adam"]])'
        assert pretty_print(parse(text)) == text

    def test_round_trip_fixed_corpus(self):
        rng = random.Random(20240811)
        for _ in range(1000):
            expr = gen_ast(rng, depth=3)
            assert parse(pretty_print(expr)) == expr
