"""Matrix-free linear operators.

Operators are immutable values: everything needed for application is
captured at construction time, so instances can be shared freely across
threads.  Each operator provides a forward application and an adjoint
application; compositions, sums and scalings stay lazy.  Dense
materialization exists only as a small-instance oracle and is gated
behind an explicit size cap to keep accidental quadratic blowups loud.
"""

from __future__ import annotations

import os
from typing import Callable, Sequence

import numpy as np

DENSE_CAP_ENV = "MGVI_DENSE_CAP"
DEFAULT_DENSE_CAP = 512


class ShapeError(ValueError):
    """Raised when vector or operator dimensions do not line up."""


class DenseCapError(RuntimeError):
    """Raised when a dense materialization would exceed the size cap."""


def _as_vector(v, dim: int, what: str) -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1 or arr.shape[0] != dim:
        raise ShapeError(f"{what} expects a vector of length {dim}, got shape {arr.shape}")
    return arr


class LinearOperator:
    """Base class: a linear map given by forward and adjoint routines."""

    kind = "external"

    def __init__(self, domain_dim: int, codomain_dim: int):
        if domain_dim <= 0 or codomain_dim <= 0:
            raise ShapeError("operator dimensions must be positive")
        self.domain_dim = int(domain_dim)
        self.codomain_dim = int(codomain_dim)

    def _apply(self, v: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _adjoint(self, w: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def apply(self, v) -> np.ndarray:
        v = _as_vector(v, self.domain_dim, f"{type(self).__name__}.apply")
        return np.asarray(self._apply(v), dtype=np.float64)

    def adjoint_apply(self, w) -> np.ndarray:
        w = _as_vector(w, self.codomain_dim, f"{type(self).__name__}.adjoint_apply")
        return np.asarray(self._adjoint(w), dtype=np.float64)

    def adjoint_operator(self) -> "LinearOperator":
        return FunctionOperator(
            self.codomain_dim, self.domain_dim, self.adjoint_apply, self.apply
        )

    def __matmul__(self, other: "LinearOperator") -> "Composition":
        return Composition(self, other)

    def __add__(self, other: "LinearOperator") -> "SumOperator":
        return SumOperator([self, other])

    def __mul__(self, scalar: float) -> "Scaled":
        return Scaled(self, scalar)

    __rmul__ = __mul__

    def __repr__(self) -> str:
        return (
            f"<{type(self).__name__} {self.codomain_dim}x{self.domain_dim}"
            f" kind={self.kind}>"
        )


class Identity(LinearOperator):
    kind = "identity"

    def __init__(self, dim: int):
        super().__init__(dim, dim)

    def _apply(self, v):
        return v.copy()

    _adjoint = _apply


class Diagonal(LinearOperator):
    kind = "diagonal"

    def __init__(self, diag):
        diag = np.asarray(diag, dtype=np.float64)
        if diag.ndim != 1:
            raise ShapeError("diagonal must be one-dimensional")
        super().__init__(diag.size, diag.size)
        self.diag = diag.copy()
        self.diag.flags.writeable = False

    def _apply(self, v):
        return self.diag * v

    _adjoint = _apply


class Dense(LinearOperator):
    kind = "dense"

    def __init__(self, matrix):
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.ndim != 2:
            raise ShapeError("dense operator needs a 2-d matrix")
        super().__init__(matrix.shape[1], matrix.shape[0])
        self.matrix = matrix.copy()
        self.matrix.flags.writeable = False

    def _apply(self, v):
        return self.matrix @ v

    def _adjoint(self, w):
        return self.matrix.T @ w


class ZeroOperator(LinearOperator):
    kind = "external"

    def __init__(self, domain_dim: int, codomain_dim: int):
        super().__init__(domain_dim, codomain_dim)

    def _apply(self, v):
        return np.zeros(self.codomain_dim)

    def _adjoint(self, w):
        return np.zeros(self.domain_dim)


class Composition(LinearOperator):
    """outer @ inner, applied as outer(inner(v))."""

    kind = "composition"

    def __init__(self, outer: LinearOperator, inner: LinearOperator):
        if outer.domain_dim != inner.codomain_dim:
            raise ShapeError(
                f"cannot compose: outer domain {outer.domain_dim} != "
                f"inner codomain {inner.codomain_dim}"
            )
        super().__init__(inner.domain_dim, outer.codomain_dim)
        self.outer = outer
        self.inner = inner

    def _apply(self, v):
        return self.outer.apply(self.inner.apply(v))

    def _adjoint(self, w):
        return self.inner.adjoint_apply(self.outer.adjoint_apply(w))


class SumOperator(LinearOperator):
    kind = "sum"

    def __init__(self, terms: Sequence[LinearOperator]):
        terms = list(terms)
        if not terms:
            raise ShapeError("sum needs at least one term")
        d, c = terms[0].domain_dim, terms[0].codomain_dim
        for t in terms[1:]:
            if t.domain_dim != d or t.codomain_dim != c:
                raise ShapeError("sum terms must share dimensions")
        super().__init__(d, c)
        self.terms = tuple(terms)

    def _apply(self, v):
        out = self.terms[0].apply(v)
        for t in self.terms[1:]:
            out = out + t.apply(v)
        return out

    def _adjoint(self, w):
        out = self.terms[0].adjoint_apply(w)
        for t in self.terms[1:]:
            out = out + t.adjoint_apply(w)
        return out


class Scaled(LinearOperator):
    kind = "scaled"

    def __init__(self, op: LinearOperator, alpha: float):
        super().__init__(op.domain_dim, op.codomain_dim)
        self.op = op
        self.alpha = float(alpha)

    def _apply(self, v):
        return self.alpha * self.op.apply(v)

    def _adjoint(self, w):
        return self.alpha * self.op.adjoint_apply(w)


class FunctionOperator(LinearOperator):
    """Operator defined by caller-supplied forward/adjoint callables."""

    kind = "external"

    def __init__(
        self,
        domain_dim: int,
        codomain_dim: int,
        forward: Callable[[np.ndarray], np.ndarray],
        adjoint: Callable[[np.ndarray], np.ndarray],
        kind: str = "external",
    ):
        super().__init__(domain_dim, codomain_dim)
        self._forward = forward
        self._adj = adjoint
        self.kind = kind

    def _apply(self, v):
        return self._forward(v)

    def _adjoint(self, w):
        return self._adj(w)


class SandwichMetric(LinearOperator):
    """v -> J^T (M (J v)) + v for a Jacobian J and PSD diagonal-like M.

    Self-adjoint and strictly positive definite: the identity term puts a
    floor of one on every eigenvalue, so the operator is always safely
    invertible regardless of how degenerate the data term is.
    """

    kind = "sandwich-metric"

    def __init__(self, jac: LinearOperator, middle: LinearOperator):
        if middle.domain_dim != middle.codomain_dim:
            raise ShapeError("middle operator must be square")
        if middle.domain_dim != jac.codomain_dim:
            raise ShapeError(
                f"middle dimension {middle.domain_dim} must match "
                f"Jacobian codomain {jac.codomain_dim}"
            )
        super().__init__(jac.domain_dim, jac.domain_dim)
        self.jac = jac
        self.middle = middle

    def _apply(self, v):
        return self.jac.adjoint_apply(self.middle.apply(self.jac.apply(v))) + v

    _adjoint = _apply


def sandwich_metric(jac: LinearOperator, middle: LinearOperator) -> SandwichMetric:
    return SandwichMetric(jac, middle)


def dense_cap() -> int:
    raw = os.environ.get(DENSE_CAP_ENV)
    if raw is None:
        return DEFAULT_DENSE_CAP
    return int(raw)


def to_dense(op: LinearOperator, max_dim: int | None = None) -> np.ndarray:
    """Materialize ``op`` column by column.  Oracle use only.

    Refuses dimensions above the cap (default 512, overridable through the
    ``MGVI_DENSE_CAP`` environment variable or the ``max_dim`` argument).
    """
    cap = dense_cap() if max_dim is None else int(max_dim)
    largest = max(op.domain_dim, op.codomain_dim)
    if largest > cap:
        raise DenseCapError(
            f"refusing to materialize a {op.codomain_dim}x{op.domain_dim} "
            f"operator (cap {cap}); raise {DENSE_CAP_ENV} if this is intended"
        )
    out = np.empty((op.codomain_dim, op.domain_dim))
    basis = np.zeros(op.domain_dim)
    for i in range(op.domain_dim):
        basis[i] = 1.0
        out[:, i] = op.apply(basis)
        basis[i] = 0.0
    return out
