import math

import numpy as np
import pytest

from dyadiclab.errors import InputError, SelfMapError
from dyadiclab.symbols import Expression, SymbolPair, TestFunction, Weight, default_test_family


def test_expression_grammar(disc, ball2):
    z = np.array([[0.5 + 0.5j]])
    assert Expression.parse("(1-z)**2 + 0.5j", 1)(z)[0] == pytest.approx((0.5 - 0.5j) ** 2 + 0.5j)
    w = np.array([[0.3, 0.4j]])
    assert Expression.parse("norm(z)", 2)(w)[0] == pytest.approx(0.5)
    assert Expression.parse("dot(1, 0)", 2)(w)[0] == pytest.approx(0.3)
    v = Expression.parse("[z2, z1]", 2)(w)
    assert np.allclose(v, [[0.4j, 0.3]])


@pytest.mark.parametrize(
    "src,n",
    [("__import__('os')", 1), ("z3", 2), ("exp(z)", 1), ("[z1]", 2), ("z.real", 1), ("z +", 1)],
)
def test_expression_rejects(src, n):
    with pytest.raises(InputError):
        Expression.parse(src, n)


def test_symbol_pair_validation(disc, ball2):
    with pytest.raises(InputError):
        SymbolPair(disc, "1", "z", 3, 2)
    with pytest.raises(InputError):
        SymbolPair(disc, "1", "w")
    with pytest.raises(InputError):
        SymbolPair(ball2, "1", "z1").phi(np.zeros((1, 2)))


def test_disc_polynomial(disc):
    assert np.allclose(SymbolPair(disc, "1", "z**2").disc_polynomial, [0, 0, 1])
    assert np.allclose(SymbolPair(disc, "1", "(1+z)/2").disc_polynomial, [0.5, 0.5])
    assert SymbolPair(disc, "1", "z/(2-z)").disc_polynomial is None


def test_apply_and_self_map(disc):
    sym = SymbolPair(disc, "1+z", "z/2")
    z = np.array([[0.4]])
    f = TestFunction.monomial([2])
    assert sym.apply(f, z)[0] == pytest.approx(1.4 * 0.04)
    assert sym.certify_self_map() <= 0.5
    with pytest.raises(SelfMapError):
        SymbolPair(disc, "1", "z+0.5").certify_self_map()


def test_kernel_closed_form(disc, ball2):
    w = 0.6
    k = TestFunction.kernel(w)
    z = np.array([[0.2j]])
    expected = math.sqrt(1 / math.pi) * (1 - w**2) / (1 - 0.2j * w) ** 2
    assert k(z)[0] == pytest.approx(expected)
    k2 = TestFunction.kernel([0.0, 0.0])
    assert abs(k2(np.zeros((1, 2)))[0]) == pytest.approx(math.sqrt(2 / math.pi**2))


def test_weights(disc):
    om = Weight(disc, "(1-norm(z)**2)**0.5")
    assert om(np.array([[0.6]]))[0] == pytest.approx(0.8)
    assert om.scaled(7)(np.array([[0.6]]))[0] == pytest.approx(5.6)
    with pytest.raises(InputError):
        Weight(disc, "re(z)")(np.array([[-0.5]]))


def test_default_family_contents(disc, ball2):
    fam = default_test_family(disc)
    kinds = [f.kind for f in fam]
    assert kinds.count("kernel") == 4
    assert len(default_test_family(ball2, degree=2)) == 4 + 6
