"""Holomorphic symbols, self-maps and test functions.

Symbols are parsed from a small arithmetic grammar: numbers (including
complex literals such as ``0.5j``), the coordinates ``z`` (the whole
vector) and ``z1 .. zn``, the operators ``+ - * / **``, lists for
vector-valued maps and ``dot(a1, ..., an)`` for the inner product
<z, a>.  Weights may also use ``abs``, ``conj``, ``re``, ``im`` and
``norm`` (Euclidean norm of the coordinate vector).  Anything else is
rejected before evaluation.
"""

from __future__ import annotations

import ast
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from ._mc import rng_for, uniform_ball, uniform_sphere
from .domain import DomainModel, inner
from .errors import InputError, SelfMapError

_BINOPS = {
    ast.Add: np.add,
    ast.Sub: np.subtract,
    ast.Mult: np.multiply,
    ast.Div: np.divide,
    ast.Pow: np.power,
}


def _norm(v):
    v = np.asarray(v)
    return np.sqrt(np.sum(np.abs(v) ** 2, axis=-1)) if v.ndim > 1 else np.abs(v)


# non-holomorphic helpers, meant for weights rather than symbols
_FUNCS = {"abs": np.abs, "conj": np.conj, "re": np.real, "im": np.imag, "norm": _norm}


@dataclass(frozen=True)
class Expression:
    """A parsed expression over the coordinates of C^n."""

    source: str
    dimension: int
    tree: ast.Expression = field(repr=False, compare=False)

    @classmethod
    def parse(cls, source: str, dimension: int) -> "Expression":
        try:
            tree = ast.parse(str(source).strip(), mode="eval")
        except SyntaxError as exc:
            raise InputError(f"cannot parse expression {source!r}: {exc.msg}") from None
        _check(tree.body, dimension, source)
        return cls(str(source), dimension, tree)

    def __call__(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=complex).reshape(-1, self.dimension)
        with np.errstate(all="ignore"):
            out = _eval(self.tree.body, z)
        return np.asarray(out, dtype=complex)


def _check(node, n, source):
    if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
        _check(node.left, n, source)
        _check(node.right, n, source)
    elif isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        _check(node.operand, n, source)
    elif isinstance(node, ast.Constant) and isinstance(node.value, (int, float, complex)):
        pass
    elif isinstance(node, ast.Name):
        if node.id == "z":
            return
        if node.id.startswith("z") and node.id[1:].isdigit() and 1 <= int(node.id[1:]) <= n:
            return
        raise InputError(f"unknown name {node.id!r} in {source!r}")
    elif isinstance(node, (ast.List, ast.Tuple)):
        if len(node.elts) != n:
            raise InputError(f"vector expression {source!r} needs {n} components")
        for e in node.elts:
            _check(e, n, source)
    elif isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and node.func.id == "dot":
        if len(node.args) != n or node.keywords:
            raise InputError(f"dot() takes {n} coordinates in {source!r}")
        for e in node.args:
            _check(e, n, source)
    elif isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and node.func.id in _FUNCS:
        if len(node.args) != 1 or node.keywords:
            raise InputError(f"{node.func.id}() takes one argument in {source!r}")
        _check(node.args[0], n, source)
    else:
        raise InputError(f"unsupported syntax in {source!r}")


def _eval(node, z):
    if isinstance(node, ast.BinOp):
        return _BINOPS[type(node.op)](_eval(node.left, z), _eval(node.right, z))
    if isinstance(node, ast.UnaryOp):
        v = _eval(node.operand, z)
        return -v if isinstance(node.op, ast.USub) else v
    if isinstance(node, ast.Constant):
        return complex(node.value)
    if isinstance(node, ast.Name):
        if node.id == "z":
            return z[:, 0] if z.shape[1] == 1 else z
        return z[:, int(node.id[1:]) - 1]
    if isinstance(node, (ast.List, ast.Tuple)):
        parts = [np.broadcast_to(_eval(e, z), (len(z),)) for e in node.elts]
        return np.stack(parts, axis=1)
    if node.func.id in _FUNCS:
        return _FUNCS[node.func.id](_eval(node.args[0], z))
    # dot(a1, ..., an) = <z, a>
    a = np.array([complex(_eval(e, z[:1])) for e in node.args])
    return inner(z, a)


@dataclass(frozen=True)
class SymbolPair:
    """Weighted composition data W_{u, phi} f = u * (f o phi) with exponents p, q."""

    model: DomainModel
    u_source: str = "1"
    phi_source: str = "z"
    p: float = 2.0
    q: float = 2.0

    def __post_init__(self):
        if not 1.0 <= self.p <= self.q:
            raise InputError(f"need 1 <= p <= q, got p={self.p}, q={self.q}")
        # parse eagerly so bad input fails at construction
        _ = self._u, self._phi

    @cached_property
    def _u(self) -> Expression:
        return Expression.parse(self.u_source, self.model.dimension)

    @cached_property
    def _phi(self) -> Expression:
        return Expression.parse(self.phi_source, self.model.dimension)

    @property
    def label(self) -> str:
        return f"u={self.u_source}; phi={self.phi_source}; p={self.p:g}; q={self.q:g}"

    def u(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=complex).reshape(-1, self.model.dimension)
        out = self._u(z)
        if out.ndim > 1:
            raise InputError(f"u must be scalar-valued, got {self.u_source!r}")
        return np.broadcast_to(out, (len(z),)).copy()

    def phi(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=complex).reshape(-1, self.model.dimension)
        out = self._phi(z)
        if out.ndim == 1:
            if self.model.dimension != 1:
                raise InputError(f"phi must have {self.model.dimension} components")
            out = out[:, None]
        return np.broadcast_to(out, z.shape).copy()

    def apply(self, f, z) -> np.ndarray:
        """(W_{u, phi} f)(z) = u(z) f(phi(z))."""
        return self.u(z) * f(self.phi(z))

    def certify_self_map(self, count: int = 20000, seed: int = 0) -> float:
        """Check |phi(z)| < 1 on uniform and near-boundary samples; return the max."""
        rng = rng_for(seed, "self-map", self.phi_source)
        n = self.model.dimension
        z = uniform_ball(rng, count // 2, n)
        t = 10.0 ** rng.uniform(-9, 0, size=count - count // 2)
        z = np.concatenate([z, uniform_sphere(rng, len(t), n) * (1 - t)[:, None]])
        r = np.linalg.norm(self.phi(z), axis=1)
        worst = float(np.nanmax(r)) if np.all(np.isfinite(r)) else math.inf
        if not worst < 1.0:
            raise SelfMapError(f"phi={self.phi_source!r} leaves the ball (max |phi| = {worst})")
        return worst

    @cached_property
    def disc_polynomial(self) -> np.ndarray | None:
        """Taylor coefficients (ascending) when phi is a polynomial on the disc, else None."""
        if self.model.dimension != 1:
            return None
        m, rho = 64, 0.5
        nodes = rho * np.exp(2j * np.pi * np.arange(m) / m)
        vals = self.phi(nodes[:, None])[:, 0]
        if not np.all(np.isfinite(vals)):
            return None
        raw = np.fft.fft(vals) / m
        raw = np.where(np.abs(raw) < 1e-13 * max(1.0, np.abs(raw).max()), 0.0, raw)
        coef = raw / rho ** np.arange(m)
        nz = np.flatnonzero(coef)
        if nz.size == 0 or nz[-1] > 16:
            return None
        coef = coef[: nz[-1] + 1]
        probe = uniform_ball(rng_for(0, "poly", self.phi_source), 32, 1)[:, 0]
        if not np.allclose(np.polyval(coef[::-1], probe), self.phi(probe[:, None])[:, 0], atol=1e-10):
            return None
        return coef

    def pushforward_density(self):
        """Density of mu_{u,phi,q} w.r.t. dV when it is computable, else None.

        Disc with polynomial phi: sum over preimages x in the disc of
        |u(x)|^q / |phi'(x)|^2.  Ball with phi(z) = a z: |u(w/a)|^q |a|^(-2n).
        """
        n = self.model.dimension
        coef = self.disc_polynomial
        if coef is not None and len(coef) >= 2:
            deriv = coef[1:] * np.arange(1, len(coef))

            def density(w):
                w = np.asarray(w, dtype=complex).reshape(-1)
                roots = _poly_roots(coef, w)
                dp = np.polyval(deriv[::-1], roots)
                ok = np.abs(roots) < 1.0
                uu = np.abs(self.u(np.where(ok, roots, 0.0).reshape(-1, 1)).reshape(roots.shape)) ** self.q
                with np.errstate(divide="ignore", invalid="ignore"):
                    terms = np.where(ok, uu / np.abs(dp) ** 2, 0.0)
                return terms.sum(axis=1)

            return density
        a = self.linear_scale
        if a is None or a == 0:
            return None
        scale = abs(a) ** (-2 * n)

        def density(w):
            w = np.asarray(w, dtype=complex).reshape(-1, n)
            inside = np.sqrt(np.sum(np.abs(w) ** 2, axis=1)) < abs(a)
            out = np.zeros(len(w))
            if np.any(inside):
                out[inside] = np.abs(self.u(w[inside] / a)) ** self.q * scale
            return out

        return density

    @cached_property
    def linear_scale(self) -> complex | None:
        """``a`` when phi(z) = a z identically (checked at random points), else None."""
        rng = rng_for(0, "linear", self.phi_source, self.model.dimension)
        z = uniform_ball(rng, 16, self.model.dimension)
        w = self.phi(z)
        a = w[0, 0] / z[0, 0]
        if np.allclose(w, a * z, rtol=1e-12, atol=1e-14):
            return complex(a)
        return None


@dataclass(frozen=True)
class TestFunction:
    """A holomorphic test function on the ball.

    kinds: ``constant`` (value), ``monomial`` (exponents, coefficient),
    ``kernel`` (normalised kernel k_w), ``product`` (factors).
    """

    __test__ = False  # not a pytest class

    kind: str
    params: tuple = ()

    @staticmethod
    def constant(value: complex = 1.0) -> "TestFunction":
        return TestFunction("constant", (complex(value),))

    @staticmethod
    def monomial(exponents, coefficient: complex = 1.0) -> "TestFunction":
        return TestFunction("monomial", (tuple(int(e) for e in exponents), complex(coefficient)))

    @staticmethod
    def kernel(w) -> "TestFunction":
        return TestFunction("kernel", (tuple(complex(x) for x in np.atleast_1d(w)),))

    @staticmethod
    def product(*factors: "TestFunction") -> "TestFunction":
        return TestFunction("product", tuple(factors))

    @property
    def label(self) -> str:
        if self.kind == "constant":
            return f"const({self.params[0].real:g})"
        if self.kind == "monomial":
            return "z^" + ",".join(map(str, self.params[0]))
        if self.kind == "kernel":
            w = self.params[0]
            return "k_w(|w|=%.4g)" % math.sqrt(sum(abs(x) ** 2 for x in w))
        return "*".join(f.label for f in self.params)

    def __call__(self, z, model: DomainModel | None = None) -> np.ndarray:
        z = np.asarray(z, dtype=complex)
        z = z.reshape(-1, z.shape[-1] if z.ndim > 1 else 1)
        if self.kind == "constant":
            return np.full(len(z), self.params[0])
        if self.kind == "monomial":
            exps, coeff = self.params
            out = np.full(len(z), coeff)
            for j, e in enumerate(exps):
                if e:
                    out = out * z[:, j] ** e
            return out
        if self.kind == "kernel":
            w = np.asarray(self.params[0])
            n = len(w)
            # k_w(z) = K(z, w) / sqrt(K(w, w)) = c^(1/2) (1-|w|^2)^((n+1)/2) / (1-<z,w>)^(n+1)
            c = math.factorial(n) / math.pi**n
            s = 1.0 - float(np.sum(np.abs(w) ** 2))
            return math.sqrt(c) * s ** ((n + 1) / 2) / (1.0 - inner(z, w)) ** (n + 1)
        out = np.ones(len(z), dtype=complex)
        for f in self.params:
            out = out * f(z)
        return out


def _poly_roots(coef: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Roots x of sum coef[j] x^j = w for every w, shape (len(w), degree)."""
    d = len(coef) - 1
    lead = coef[-1]
    if d == 1:
        return ((w - coef[0]) / coef[1])[:, None]
    comp = np.zeros((len(w), d, d), dtype=complex)
    comp[:, 1:, :-1] = np.eye(d - 1)
    comp[:, :, -1] = -np.asarray(coef[:-1]) / lead
    comp[:, 0, -1] += w / lead
    return np.linalg.eigvals(comp)


@dataclass(frozen=True)
class Weight:
    """Non-negative weight omega on the ball, given as an expression."""

    model: DomainModel
    source: str = "1"
    scale: float = 1.0

    @cached_property
    def _expr(self) -> Expression:
        return Expression.parse(self.source, self.model.dimension)

    def __call__(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=complex).reshape(-1, self.model.dimension)
        v = np.broadcast_to(self._expr(z), (len(z),)).real * self.scale
        if np.any(v < -1e-12):
            raise InputError(f"weight {self.source!r} is negative somewhere")
        return np.maximum(v, 0.0)

    def scaled(self, factor: float) -> "Weight":
        return Weight(self.model, self.source, self.scale * factor)

    @property
    def label(self) -> str:
        return self.source if self.scale == 1.0 else f"{self.scale:g}*({self.source})"


KERNEL_RADII = (0.0, 0.5, 0.9, 0.99)


def default_test_family(model: DomainModel, radii=KERNEL_RADII, degree: int = 3) -> list[TestFunction]:
    """Normalised kernels on a boundary-approaching sweep plus monomials up to ``degree``."""
    n = model.dimension
    e1 = np.zeros(n, dtype=complex)
    e1[0] = 1.0
    family = [TestFunction.kernel(r * e1) for r in radii]
    for total in range(degree + 1):
        for exps in _multi_indices(n, total):
            family.append(TestFunction.monomial(exps))
    return family


def kernel_sequence(model: DomainModel, m_max: int = 10, direction=None) -> list[TestFunction]:
    """k_{w_m} with |w_m| = 1 - 2^-m, m = 1..m_max."""
    n = model.dimension
    if direction is None:
        direction = np.zeros(n, dtype=complex)
        direction[0] = 1.0
    direction = np.asarray(direction, dtype=complex)
    direction = direction / np.linalg.norm(direction)
    return [TestFunction.kernel((1 - 2.0**-m) * direction) for m in range(1, m_max + 1)]


def _multi_indices(n, total):
    if n == 1:
        yield (total,)
        return
    for first in range(total, -1, -1):
        for rest in _multi_indices(n - 1, total - first):
            yield (first,) + rest
