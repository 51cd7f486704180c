"""
Tests for the expression language: grammar, evaluation, printing and
symbolic differentiation
"""
import os
import sys

import numpy as np
import pytest
from hypothesis import given, settings as hypothesis_settings, strategies as st

# Add the app directory to the path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from app.core.exceptions import (
    DifferentiationError,
    EvaluationDomainError,
    ExprSyntaxError,
    UnknownIdentifierError,
    VariableIndexError,
)
from app.core.exprparse import (
    BINARY_FUNCTIONS,
    UNARY_FUNCTIONS,
    Binary,
    Call2,
    Const,
    Unary,
    Var,
    diff_expr,
    eval_expr,
    nonsmooth_mask,
    parse_expr,
    print_expr,
)
from app.services.catalog_service import catalog_service


def value(source: str, *point: float, n: int = 2) -> float:
    return eval_expr(parse_expr(source, n), point)


def central_difference(source: str, point, i: int, n: int = 2, h: float = 1e-5) -> float:
    e = parse_expr(source, n)
    up = list(point)
    down = list(point)
    up[i - 1] += h
    down[i - 1] -= h
    return (eval_expr(e, up) - eval_expr(e, down)) / (2 * h)


class TestGrammar:
    """Precedence, associativity and literals"""

    @pytest.mark.parametrize(
        "source,expected",
        [
            ("1 + 2 * 3", 7.0),
            ("(1 + 2) * 3", 9.0),
            ("10 - 3 - 2", 5.0),
            ("8 / 2 / 2", 2.0),
            ("2^3^2", 64.0),
            ("2^(3^2)", 512.0),
            ("-2^2", -4.0),
            ("(-2)^2", 4.0),
            ("2^-1", 0.5),
            ("--3", 3.0),
            ("2 * -3", -6.0),
            ("1e-3 * 1000", 1.0),
            ("2.5E+1", 25.0),
            (".5 + 0.25", 0.75),
            ("3.", 3.0),
            ("max(1, 2) + min(1, 2)", 3.0),
            ("max(-1, min(4, 2))", 2.0),
            ("abs(-3)", 3.0),
            ("sign(0)", 0.0),
            ("sign(-2)", -1.0),
            ("step(0)", 1.0),
            ("step(-1e-9)", 0.0),
            ("sqrt(16)", 4.0),
            ("exp(0) + log(1)", 1.0),
            ("sin(0) + cos(0)", 1.0),
            ("  1   +\t2  ", 3.0),
        ],
    )
    def test_constant_expressions(self, source, expected):
        """Constant sources evaluate to the expected number"""
        assert value(source) == pytest.approx(expected, abs=1e-14)

    @pytest.mark.parametrize(
        "source,point,expected",
        [
            ("x1 * x2", (2.0, 3.0), 6.0),
            ("x1^2 + x2^2", (3.0, 4.0), 25.0),
            ("x2 - x1 * x2", (2.0, 3.0), -3.0),
            ("x1 / x2 * x2", (2.0, 4.0), 2.0),
            ("-x1^2", (3.0, 0.0), -9.0),
            ("max(0, x1)^2", (-1.0, 0.0), 0.0),
            ("max(0, x1)^2", (1.5, 0.0), 2.25),
            ("1 + abs(x1)", (-0.5, 0.0), 1.5),
            ("x2^(-2)", (0.0, 2.0), 0.25),
        ],
    )
    def test_variable_expressions(self, source, point, expected):
        """Variables bind to point coordinates"""
        assert value(source, *point) == pytest.approx(expected)

    def test_vectorised_evaluation(self):
        """Array coordinates evaluate elementwise with broadcasting"""
        e = parse_expr("x1 + 2 * x2", 2)
        out = eval_expr(e, (np.array([1.0, 2.0, 3.0]), 0.5))
        assert out.shape == (3,)
        np.testing.assert_allclose(out, [2.0, 3.0, 4.0])

    def test_constant_broadcasts_to_grid_shape(self):
        """A constant evaluated on arrays takes the array shape"""
        x = np.zeros((4, 5))
        out = eval_expr(parse_expr("7", 2), (x, x))
        assert out.shape == (4, 5)
        assert np.all(out == 7.0)


class TestSyntaxErrors:
    """Malformed sources report their byte offset"""

    @pytest.mark.parametrize(
        "source,offset",
        [
            ("1 +", 3),
            ("1 $ 2", 2),
            ("max(1)", 5),
            ("sin 1", 0),
            ("(1 + 2", 6),
            ("1 2", 2),
            ("", 0),
            ("   ", 0),
            ("*2", 0),
        ],
    )
    def test_offsets(self, source, offset):
        """The error carries the byte offset of the offending token"""
        with pytest.raises(ExprSyntaxError) as info:
            parse_expr(source, 2)
        assert info.value.offset == offset
        assert info.value.code == "EXPR_SYNTAX"

    def test_offset_counts_bytes(self):
        """Offsets are byte offsets, not character offsets"""
        with pytest.raises(ExprSyntaxError) as info:
            parse_expr("1 + é", 2)
        assert info.value.offset == 4

    def test_unknown_identifier(self):
        """Unknown names are rejected by name"""
        with pytest.raises(UnknownIdentifierError) as info:
            parse_expr("foo(x1)", 2)
        assert info.value.name == "foo"

    @pytest.mark.parametrize("source", ["x3", "x0", "x1 + x10"])
    def test_variable_index_out_of_range(self, source):
        """Variables must lie in x1..xn"""
        with pytest.raises(VariableIndexError):
            parse_expr(source, 2)

    def test_exit_status_of_errors(self):
        """Every parse error maps to exit status 2"""
        with pytest.raises(ExprSyntaxError) as info:
            parse_expr("(", 1)
        assert info.value.exit_status == 2


class TestEvaluationDomain:
    """Domain failures are reported with the offending coordinates"""

    @pytest.mark.parametrize("source", ["log(0)", "log(-1)", "sqrt(-1)", "1/0", "(-8)^(1/3)", "0^(-1)"])
    def test_domain_errors(self, source):
        with pytest.raises(EvaluationDomainError):
            value(source)

    def test_coordinates_of_first_bad_node(self):
        """The error names a node where the domain fails"""
        e = parse_expr("log(x1)", 1)
        with pytest.raises(EvaluationDomainError) as info:
            eval_expr(e, (np.array([1.0, 0.0, 2.0]),))
        assert info.value.details["coordinates"] == [0.0]
        assert info.value.details["operation"] == "log"

    def test_negative_base_with_integer_power(self):
        """Integer exponents of negative bases are fine"""
        assert value("(-2)^3") == -8.0


class TestPrinter:
    """Canonical printing"""

    @pytest.mark.parametrize(
        "source,printed",
        [
            ("1+2*3", "1 + 2*3"),
            ("(1+2)*3", "(1 + 2)*3"),
            ("x1-(x2-x1)", "x1 - (x2 - x1)"),
            ("(x1-x2)-x1", "x1 - x2 - x1"),
            ("-x1^2", "-x1^2"),
            ("(-x1)^2", "(-x1)^2"),
            ("2^3^2", "2^3^2"),
            ("2^(3^2)", "2^(3^2)"),
            ("max(x1,0.5)", "max(x1, 0.5)"),
            ("sin(x1)", "sin(x1)"),
        ],
    )
    def test_canonical_text(self, source, printed):
        assert print_expr(parse_expr(source, 2)) == printed


leaves = st.one_of(
    st.floats(min_value=0.0, max_value=1e6, allow_nan=False, allow_infinity=False).map(Const),
    st.integers(min_value=1, max_value=3).map(Var),
)


def _extend(children):
    return st.one_of(
        st.tuples(st.sampled_from(UNARY_FUNCTIONS + ("neg",)), children).map(lambda t: Unary(*t)),
        st.tuples(st.sampled_from(["add", "sub", "mul", "div", "pow"]), children, children).map(
            lambda t: Binary(*t)
        ),
        st.tuples(st.sampled_from(BINARY_FUNCTIONS), children, children).map(lambda t: Call2(*t)),
    )


trees = st.recursive(leaves, _extend, max_leaves=12)

SMOOTH_SOURCES = [
    "sin(x1)*x2^2",
    "exp(x1/3)*cos(x2)",
    "x1^3 - 2*x1*x2 + sqrt(x2)",
    "log(x1 + x2^2)",
    "1/(1 + x1^2 + x2^2)",
    "(x1*x2)^(-1)",
]


class TestProperties:
    """Property checks over generated trees and points"""

    @hypothesis_settings(max_examples=200, deadline=None)
    @given(trees)
    def test_print_parse_round_trip(self, tree):
        """parse(print(e)) reproduces the tree"""
        assert parse_expr(print_expr(tree), 3) == tree

    @hypothesis_settings(max_examples=100, deadline=None)
    @given(
        st.sampled_from(SMOOTH_SOURCES),
        st.floats(min_value=0.5, max_value=1.5),
        st.floats(min_value=0.5, max_value=1.5),
    )
    def test_evaluation_is_deterministic(self, source, a, b):
        e = parse_expr(source, 2)
        assert eval_expr(e, (a, b)) == eval_expr(parse_expr(source, 2), (a, b))

    @hypothesis_settings(max_examples=100, deadline=None)
    @given(
        st.sampled_from(SMOOTH_SOURCES),
        st.floats(min_value=0.5, max_value=1.5),
        st.floats(min_value=0.5, max_value=1.5),
        st.sampled_from([1, 2]),
    )
    def test_derivative_matches_central_differences(self, source, a, b, i):
        exact = eval_expr(diff_expr(parse_expr(source, 2), i), (a, b))
        approx = central_difference(source, (a, b), i)
        assert abs(exact - approx) <= 1e-6 * (1.0 + abs(exact))


class TestDifferentiation:
    """Symbolic derivatives"""

    def test_polynomial(self):
        d = diff_expr(parse_expr("x1^3 + x1*x2", 2), 1)
        assert eval_expr(d, (2.0, 5.0)) == pytest.approx(17.0)

    def test_independent_variable_gives_zero(self):
        d = diff_expr(parse_expr("sin(x1)", 2), 2)
        assert d == Const(0.0)

    def test_kinks_take_the_right_branch(self):
        """abs, max and min use the right derivative at their kink"""
        assert eval_expr(diff_expr(parse_expr("abs(x1)", 1), 1), (0.0,)) == 1.0
        assert eval_expr(diff_expr(parse_expr("max(0, x1)", 1), 1), (0.0,)) == 1.0
        assert eval_expr(diff_expr(parse_expr("abs(x1)", 1), 1), (-0.5,)) == -1.0
        assert eval_expr(diff_expr(parse_expr("min(0, x1)", 1), 1), (0.5,)) == 0.0

    def test_sign_and_step_have_zero_derivative(self):
        for source in ("sign(x1)", "step(x1)"):
            assert eval_expr(diff_expr(parse_expr(source, 1), 1), (0.3,)) == 0.0

    def test_variable_exponent_is_rejected(self):
        with pytest.raises(DifferentiationError):
            diff_expr(parse_expr("x1^x2", 2), 1)

    def test_derivative_prints_and_reparses(self):
        """Derivatives stay inside the grammar"""
        d = diff_expr(parse_expr("abs(x1)*max(x2, 0)", 2), 1)
        again = parse_expr(print_expr(d), 2)
        point = (0.3, 0.7)
        assert eval_expr(again, point) == eval_expr(d, point)

    def test_catalog_components(self):
        """Symbolic derivatives of every catalog source match central differences"""
        for model in catalog_service.models(2):
            point = [a + 0.37 * (b - a) for a, b in zip(model.lower, model.upper)]
            sources = [src for row in model.metric for src in row]
            if model.V is not None:
                sources.append(model.V)
            for source in sources:
                for i in (1, 2):
                    exact = eval_expr(diff_expr(parse_expr(source, 2), i), point)
                    approx = central_difference(source, point, i)
                    assert abs(exact - approx) <= 1e-6 * (1.0 + abs(exact)), (model.name, source, i)


class TestNonsmoothMask:
    """Kink detection"""

    def test_abs_kink(self):
        mask = nonsmooth_mask(parse_expr("abs(x1)", 1), (np.array([-1.0, 0.0, 1.0]),))
        assert mask.tolist() == [False, True, False]

    def test_max_tie(self):
        x = np.array([-0.5, 0.0, 0.5])
        mask = nonsmooth_mask(parse_expr("1 + max(0, x1)^2", 1), (x,))
        assert mask.tolist() == [False, True, False]

    def test_smooth_expression_has_no_kinks(self):
        x = np.linspace(-1.0, 1.0, 5)
        assert not np.any(nonsmooth_mask(parse_expr("sin(x1)", 1), (x,)))

    def test_tolerance_widens_the_mask(self):
        x = np.array([-0.1, 0.05, 0.3])
        mask = nonsmooth_mask(parse_expr("abs(x1)", 1), (x,), atol=0.1)
        assert mask.tolist() == [True, True, False]
