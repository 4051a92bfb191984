"""多元多项式：以指数元组为键的系数表

系数可以是 Python 整数（离线模板生成时做精确/有限域运算）或浮点数（在线求解）。
"""

import itertools
from typing import Dict, Iterable, List, Sequence, Tuple, Union

import numpy as np

Monomial = Tuple[int, ...]
Scalar = Union[int, float, complex]


def add_monomials(a: Monomial, b: Monomial) -> Monomial:
    return tuple(x + y for x, y in zip(a, b))


def unit_monomial(nvars: int, index: int) -> Monomial:
    return tuple(1 if k == index else 0 for k in range(nvars))


def grevlex_key(m: Monomial) -> Tuple:
    """分级反字典序的排序键，键越大单项式越大"""
    return (sum(m), tuple(-e for e in reversed(m)))


def monomials_up_to(nvars: int, degree: int) -> List[Monomial]:
    """全部次数 ≤ degree 的单项式，按 grevlex 升序"""
    result = []
    for d in range(degree + 1):
        for combo in itertools.combinations_with_replacement(range(nvars), d):
            exps = [0] * nvars
            for v in combo:
                exps[v] += 1
            result.append(tuple(exps))
    return sorted(result, key=grevlex_key)


def monomial_values(points: np.ndarray, monomials: Sequence[Monomial]) -> np.ndarray:
    """在 (k, nvars) 个点上求单项式取值，返回 (k, len(monomials))；支持复数"""
    points = np.atleast_2d(points)
    exps = np.array(monomials, dtype=int).reshape(len(monomials), points.shape[1])
    return np.prod(points[:, None, :] ** exps[None, :, :], axis=2)


class Poly:
    __slots__ = ("nvars", "terms")

    def __init__(self, nvars: int, terms: Dict[Monomial, Scalar] = None):
        self.nvars = nvars
        self.terms: Dict[Monomial, Scalar] = {}
        for m, c in (terms or {}).items():
            if c != 0:
                self.terms[tuple(m)] = c

    @classmethod
    def constant(cls, nvars: int, value: Scalar) -> "Poly":
        return cls(nvars, {(0,) * nvars: value})

    def _coerce(self, other) -> "Poly":
        if isinstance(other, Poly):
            if other.nvars != self.nvars:
                raise ValueError("变量个数不一致")
            return other
        return Poly.constant(self.nvars, other)

    def __add__(self, other) -> "Poly":
        other = self._coerce(other)
        out = dict(self.terms)
        for m, c in other.terms.items():
            out[m] = out.get(m, 0) + c
        return Poly(self.nvars, out)

    __radd__ = __add__

    def __neg__(self) -> "Poly":
        return Poly(self.nvars, {m: -c for m, c in self.terms.items()})

    def __sub__(self, other) -> "Poly":
        return self + (-self._coerce(other))

    def __rsub__(self, other) -> "Poly":
        return self._coerce(other) - self

    def __mul__(self, other) -> "Poly":
        if not isinstance(other, Poly):
            return Poly(self.nvars, {m: c * other for m, c in self.terms.items()})
        other = self._coerce(other)
        out: Dict[Monomial, Scalar] = {}
        for ma, ca in self.terms.items():
            for mb, cb in other.terms.items():
                m = add_monomials(ma, mb)
                out[m] = out.get(m, 0) + ca * cb
        return Poly(self.nvars, out)

    __rmul__ = __mul__

    def degree(self) -> int:
        return max((sum(m) for m in self.terms), default=0)

    def coefficients(self, monomials: Iterable[Monomial]) -> List[Scalar]:
        return [self.terms.get(m, 0) for m in monomials]

    def evaluate(self, x: Sequence[Scalar]) -> Scalar:
        total = 0
        for m, c in self.terms.items():
            term = c
            for xi, e in zip(x, m):
                if e:
                    term = term * xi ** e
            total = total + term
        return total

    def __eq__(self, other) -> bool:
        if not isinstance(other, Poly):
            return NotImplemented
        return self.nvars == other.nvars and self.terms == other.terms

    def __repr__(self) -> str:
        if not self.terms:
            return f"Poly({self.nvars}, 0)"
        parts = [f"{c}*{m}" for m, c in sorted(self.terms.items(), key=lambda kv: grevlex_key(kv[0]), reverse=True)]
        return f"Poly({self.nvars}, " + " + ".join(parts) + ")"
