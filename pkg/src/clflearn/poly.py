"""Sparse multivariate polynomials over float coefficients.

A polynomial is a mapping from exponent tuples to coefficients together with
its ambient dimension.  Monomials are enumerated in graded lexicographic order:
by total degree first, then lexicographically with x1 dominating, so the
degree-two block in two variables reads x1², x1x2, x2².
"""

from __future__ import annotations

import itertools
from functools import lru_cache
from typing import Dict, Iterable, List, Mapping, Sequence, Tuple, Union

import numpy as np

Exponent = Tuple[int, ...]
Number = Union[int, float]


@lru_cache(maxsize=None)
def _exponents_of_degree(dimension: int, degree: int) -> Tuple[Exponent, ...]:
    """Exponents of exact total ``degree``, lexicographically descending."""
    if dimension == 1:
        return ((degree,),)
    out = []
    for first in range(degree, -1, -1):
        for rest in _exponents_of_degree(dimension - 1, degree - first):
            out.append((first,) + rest)
    return tuple(out)


@lru_cache(maxsize=None)
def monomial_exponents(dimension: int, max_degree: int, min_degree: int = 0) -> Tuple[Exponent, ...]:
    """All exponent tuples with ``min_degree <= |e| <= max_degree`` in graded lex order."""
    if dimension < 1:
        raise ValueError("dimension must be at least 1")
    if max_degree < 0:
        raise ValueError("max_degree must be non-negative")
    out: List[Exponent] = []
    for d in range(max(min_degree, 0), max_degree + 1):
        out.extend(_exponents_of_degree(dimension, d))
    return tuple(out)


def grlex_key(e: Exponent) -> Tuple[int, Tuple[int, ...]]:
    """Sort key realising the graded lexicographic order used throughout."""
    return (sum(e), tuple(-k for k in e))


class Polynomial:
    """Immutable sparse polynomial ``Σ coeff · x^exp`` in ``dimension`` variables."""

    __slots__ = ("_terms", "_dim", "_hash")

    def __init__(self, terms: Mapping[Exponent, Number], dimension: int):
        if dimension < 1:
            raise ValueError("dimension must be at least 1")
        clean: Dict[Exponent, float] = {}
        for exp, c in terms.items():
            exp = tuple(int(k) for k in exp)
            if len(exp) != dimension:
                raise ValueError(f"exponent {exp} does not match dimension {dimension}")
            if any(k < 0 for k in exp):
                raise ValueError(f"negative exponent in {exp}")
            c = float(c)
            if c != 0.0:
                clean[exp] = clean.get(exp, 0.0) + c
                if clean[exp] == 0.0:
                    del clean[exp]
        self._terms = clean
        self._dim = dimension
        self._hash = None

    # construction helpers
    @classmethod
    def zero(cls, dimension: int) -> "Polynomial":
        return cls({}, dimension)

    @classmethod
    def constant(cls, value: Number, dimension: int) -> "Polynomial":
        return cls({(0,) * dimension: value}, dimension)

    @classmethod
    def variable(cls, index: int, dimension: int) -> "Polynomial":
        """The coordinate polynomial x_{index+1} (``index`` is zero based)."""
        if not 0 <= index < dimension:
            raise ValueError("variable index out of range")
        e = [0] * dimension
        e[index] = 1
        return cls({tuple(e): 1.0}, dimension)

    @classmethod
    def monomial(cls, exponent: Sequence[int], coeff: Number = 1.0) -> "Polynomial":
        return cls({tuple(exponent): coeff}, len(exponent))

    # accessors
    @property
    def dimension(self) -> int:
        return self._dim

    @property
    def terms(self) -> Dict[Exponent, float]:
        return dict(self._terms)

    def items(self) -> List[Tuple[Exponent, float]]:
        """Terms sorted in graded lex order (deterministic)."""
        return sorted(self._terms.items(), key=lambda kv: grlex_key(kv[0]))

    @property
    def degree(self) -> int:
        """Total degree; the zero polynomial has degree -1."""
        return max((sum(e) for e in self._terms), default=-1)

    def is_zero(self) -> bool:
        return not self._terms

    def coefficient(self, exponent: Sequence[int]) -> float:
        return self._terms.get(tuple(exponent), 0.0)

    def __len__(self) -> int:
        return len(self._terms)

    # arithmetic
    def _coerce(self, other) -> "Polynomial":
        if isinstance(other, Polynomial):
            if other._dim != self._dim:
                raise ValueError(f"dimension mismatch: {self._dim} vs {other._dim}")
            return other
        if isinstance(other, (int, float, np.floating, np.integer)):
            return Polynomial.constant(float(other), self._dim)
        return NotImplemented

    def __add__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        t = dict(self._terms)
        for e, c in other._terms.items():
            t[e] = t.get(e, 0.0) + c
        return Polynomial(t, self._dim)

    __radd__ = __add__

    def __neg__(self) -> "Polynomial":
        return Polynomial({e: -c for e, c in self._terms.items()}, self._dim)

    def __sub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, (int, float, np.floating, np.integer)):
            return Polynomial({e: c * float(other) for e, c in self._terms.items()}, self._dim)
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        t: Dict[Exponent, float] = {}
        for (e1, c1), (e2, c2) in itertools.product(self._terms.items(), other._terms.items()):
            e = tuple(a + b for a, b in zip(e1, e2))
            t[e] = t.get(e, 0.0) + c1 * c2
        return Polynomial(t, self._dim)

    __rmul__ = __mul__

    def __pow__(self, k: int) -> "Polynomial":
        if k < 0:
            raise ValueError("negative power")
        out = Polynomial.constant(1.0, self._dim)
        base = self
        while k:
            if k & 1:
                out = out * base
            base = base * base
            k >>= 1
        return out

    def __eq__(self, other) -> bool:
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self._dim == other._dim and self._terms == other._terms

    def __hash__(self) -> int:
        if self._hash is None:
            self._hash = hash((self._dim, frozenset(self._terms.items())))
        return self._hash

    def allclose(self, other: "Polynomial", atol: float = 1e-12) -> bool:
        if self._dim != other._dim:
            return False
        keys = set(self._terms) | set(other._terms)
        return all(abs(self._terms.get(k, 0.0) - other._terms.get(k, 0.0)) <= atol for k in keys)

    # evaluation
    def __call__(self, x) -> Union[float, np.ndarray]:
        return evaluate(self, x)

    # calculus
    def diff(self, i: int) -> "Polynomial":
        """Partial derivative with respect to x_{i+1}."""
        if not 0 <= i < self._dim:
            raise ValueError("variable index out of range")
        t: Dict[Exponent, float] = {}
        for e, c in self._terms.items():
            if e[i] > 0:
                ne = list(e)
                ne[i] -= 1
                t[tuple(ne)] = t.get(tuple(ne), 0.0) + c * e[i]
        return Polynomial(t, self._dim)

    def embed(self, dimension: int, positions: Sequence[int] | None = None) -> "Polynomial":
        """Re-express in ``dimension`` variables; variable k maps to ``positions[k]``."""
        if positions is None:
            positions = range(self._dim)
        positions = list(positions)
        if len(positions) != self._dim or dimension < max(positions, default=-1) + 1:
            raise ValueError("bad embedding")
        t = {}
        for e, c in self._terms.items():
            ne = [0] * dimension
            for k, p in enumerate(positions):
                ne[p] = e[k]
            t[tuple(ne)] = c
        return Polynomial(t, dimension)

    def substitute(self, index: int, value: float) -> "Polynomial":
        """Fix x_{index+1} = value, keeping the ambient dimension."""
        t: Dict[Exponent, float] = {}
        for e, c in self._terms.items():
            ne = list(e)
            k = ne[index]
            ne[index] = 0
            ne = tuple(ne)
            t[ne] = t.get(ne, 0.0) + c * value ** k
        return Polynomial(t, self._dim)

    # serialization
    def to_records(self) -> List[dict]:
        return [{"coeff": c, "exp": list(e)} for e, c in self.items()]

    @classmethod
    def from_records(cls, records: Iterable[Mapping], dimension: int) -> "Polynomial":
        t: Dict[Exponent, float] = {}
        for rec in records:
            if "coeff" not in rec or "exp" not in rec:
                raise ValueError("polynomial record needs 'coeff' and 'exp'")
            e = tuple(int(k) for k in rec["exp"])
            t[e] = t.get(e, 0.0) + float(rec["coeff"])
        return cls(t, dimension)

    def __repr__(self) -> str:
        if not self._terms:
            return "0"
        parts = []
        for e, c in self.items():
            mono = "·".join(
                f"x{i + 1}" + (f"^{k}" if k > 1 else "") for i, k in enumerate(e) if k
            )
            parts.append(f"{c:+.6g}" + (f"·{mono}" if mono else ""))
        return " ".join(parts)


def evaluate(p: Polynomial, x) -> Union[float, np.ndarray]:
    """Evaluate at one point (shape (n,)) or a batch (shape (k, n))."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if X.shape[1] != p.dimension:
        raise ValueError(f"point has dimension {X.shape[1]}, polynomial has {p.dimension}")
    if p.is_zero():
        out = np.zeros(X.shape[0])
    else:
        exps = np.array(list(p._terms.keys()), dtype=int)
        coeffs = np.array(list(p._terms.values()))
        out = np.prod(X[:, None, :] ** exps[None, :, :], axis=2) @ coeffs
    return float(out[0]) if single else out


def monomial_basis(dimension: int, max_degree: int, min_degree: int = 0) -> List[Polynomial]:
    """Monomials with degree in ``[min_degree, max_degree]``, graded lex, constant first."""
    return [Polynomial.monomial(e) for e in monomial_exponents(dimension, max_degree, min_degree)]


def gradient(p: Polynomial) -> List[Polynomial]:
    return [p.diff(i) for i in range(p.dimension)]


def lie_derivative(V: Polynomial, field: Sequence[Polynomial]) -> Polynomial:
    """Σ_i ∂V/∂x_i · field_i."""
    if len(field) != V.dimension:
        raise ValueError(f"field has {len(field)} components, V has dimension {V.dimension}")
    out = Polynomial.zero(V.dimension)
    for i, fi in enumerate(field):
        if fi.dimension != V.dimension:
            raise ValueError("field component dimension mismatch")
        d = V.diff(i)
        if not d.is_zero() and not fi.is_zero():
            out = out + d * fi
    return out


def linear_combination(c: Sequence[float], basis: Sequence[Polynomial]) -> Polynomial:
    if len(c) != len(basis):
        raise ValueError(f"{len(c)} coefficients for {len(basis)} basis elements")
    if not basis:
        raise ValueError("empty basis")
    dim = basis[0].dimension
    t: Dict[Exponent, float] = {}
    for ck, g in zip(c, basis):
        if g.dimension != dim:
            raise ValueError("basis elements have different dimensions")
        ck = float(ck)
        if ck == 0.0:
            continue
        for e, v in g._terms.items():
            t[e] = t.get(e, 0.0) + ck * v
    return Polynomial(t, dim)


class CompiledMap:
    """Vectorised evaluator for a list of polynomials sharing one dimension.

    Evaluates all components at a batch of points with a single monomial table,
    which is what the simulation and MPC inner loops need.
    """

    def __init__(self, polys: Sequence[Polynomial]):
        if not polys:
            raise ValueError("empty polynomial list")
        self.dimension = polys[0].dimension
        exps = sorted({e for p in polys for e in p._terms}, key=grlex_key)
        if not exps:
            exps = [(0,) * self.dimension]
        index = {e: k for k, e in enumerate(exps)}
        self.exps = np.array(exps, dtype=int)
        self.coeffs = np.zeros((len(polys), len(exps)))
        for j, p in enumerate(polys):
            if p.dimension != self.dimension:
                raise ValueError("dimension mismatch in compiled map")
            for e, c in p._terms.items():
                self.coeffs[j, index[e]] = c
        self._maxdeg = int(self.exps.max(initial=0))

    def __call__(self, X: np.ndarray) -> np.ndarray:
        """Values with shape (k, len(polys)) for X of shape (k, n), or (len(polys),) for one point."""
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        X2 = np.atleast_2d(X)
        # powers[k, i, d] = X[k, i] ** d, reused across monomials
        powers = X2[:, :, None] ** np.arange(self._maxdeg + 1)[None, None, :]
        mons = np.ones((X2.shape[0], self.exps.shape[0]))
        for i in range(self.dimension):
            mons *= powers[:, i, self.exps[:, i]]
        out = mons @ self.coeffs.T
        return out[0] if single else out
