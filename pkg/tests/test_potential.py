import numpy as np
import pytest

from gpeadapt.potential import PotentialSyntaxError, parse_potential


@pytest.mark.parametrize("text,point,value", [
    ("0.5*(x^2+9*y^2)", (1, 1), 5.0),
    ("1/(2*sqrt(x^2+y^2))", (0.5, 0), 1.0),
    ("(x^2+y^2)/2+20+20*sin(2*pi*x)*sin(2*pi*y)", (0, 0), 20.0),
])
def test_examples(text, point, value):
    assert parse_potential(text)(*point) == pytest.approx(value, rel=1e-15)


@pytest.mark.parametrize("text,value", [
    ("2+3*4", 14.0),
    ("2*3+4", 10.0),
    ("8/4/2", 1.0),
    ("2^3^2", 512.0),
    ("-2^2", -4.0),
    ("(-2)^2", 4.0),
    ("2^-1", 0.5),
    ("-x*y", -6.0),
    ("--x", 2.0),
    ("+x - -y", 5.0),
    ("1e2 + .5 + 2.", 102.5),
    ("2.5E-1*4", 1.0),
    ("abs(-x) + exp(0) + cos(pi)", 2.0),
    ("x - y - 1", -2.0),
])
def test_precedence(text, value):
    assert parse_potential(text)(2.0, 3.0) == pytest.approx(value, rel=1e-15)


def test_vectorized():
    V = parse_potential("x^2 + y")
    x = np.linspace(0, 1, 5)
    np.testing.assert_allclose(V(x, 2 * x), x**2 + 2 * x)
    const = parse_potential("3")
    assert const(np.zeros((2, 3)), np.zeros((2, 3))).shape == (2, 3)


def test_deterministic():
    V = parse_potential("sin(x)*exp(-y^2)")
    x = np.random.default_rng(1).random(100)
    np.testing.assert_array_equal(V(x, x), V(x, x))


@pytest.mark.parametrize("text,offset", [
    ("x + * y", 4),
    ("(x + 1", 6),
    ("x + 1)", 5),
    ("2 $ x", 2),
    ("sin x", 4),
    ("3 x", 2),
    ("", 0),
    ("   ", 0),
])
def test_syntax_errors(text, offset):
    with pytest.raises(PotentialSyntaxError) as info:
        parse_potential(text)
    assert info.value.offset == offset
    assert f"offset {offset}" in str(info.value)


@pytest.mark.parametrize("text,offset", [("z + 1", 0), ("x + tan(y)", 4), ("2*Pi", 2)])
def test_unknown_identifier(text, offset):
    with pytest.raises(PotentialSyntaxError, match="unknown identifier") as info:
        parse_potential(text)
    assert info.value.offset == offset
