"""
Symbolic tensor helpers over expression tables (analytic derivative mode)
"""
from functools import lru_cache
from typing import Any, Callable, Sequence, Tuple

import numpy as np

from app.core.exprparse import (
    ZERO,
    Const,
    Expr,
    add,
    const,
    diff_expr,
    div,
    eval_expr,
    mul,
    neg,
    sub,
    sum_of,
)

Table = Tuple[Tuple[Expr, ...], ...]


def map_nested(provider: Any, fn: Callable[[Expr], Any]) -> Any:
    """Apply ``fn`` to every Expr of a nested tuple provider"""
    if isinstance(provider, Expr):
        return fn(provider)
    return tuple(map_nested(p, fn) for p in provider)


def rank_of(provider: Any) -> int:
    if isinstance(provider, Expr):
        return 0
    return 1 + rank_of(provider[0])


def stack_nested(nested: Any) -> np.ndarray:
    if isinstance(nested, np.ndarray):
        return nested
    return np.stack([stack_nested(item) for item in nested])


def evaluate_nested(provider: Any, coords: Sequence[np.ndarray]) -> np.ndarray:
    """Evaluate a nested provider on grid coordinates into one array"""
    return stack_nested(map_nested(provider, lambda e: eval_expr(e, coords)))


def _is_zero(e: Expr) -> bool:
    return isinstance(e, Const) and e.value == 0.0


def determinant_expr(table: Table) -> Expr:
    """Laplace expansion along the first row"""
    n = len(table)
    if n == 1:
        return table[0][0]
    terms = []
    for col in range(n):
        entry = table[0][col]
        if _is_zero(entry):
            continue
        minor = tuple(tuple(row[c] for c in range(n) if c != col) for row in table[1:])
        term = mul(entry, determinant_expr(minor))
        terms.append(neg(term) if col % 2 else term)
    return sum_of(terms)


@lru_cache(maxsize=256)
def inverse_exprs(table: Table) -> Table:
    """Inverse of a symmetric expression table by cofactors (diagonal tables stay diagonal)"""
    n = len(table)
    if all(_is_zero(table[i][j]) for i in range(n) for j in range(n) if i != j):
        return tuple(
            tuple(div(const(1.0), table[i][i]) if i == j else ZERO for j in range(n))
            for i in range(n)
        )
    det = determinant_expr(table)
    rows = []
    for i in range(n):
        row = []
        for j in range(n):
            minor = tuple(
                tuple(table[r][c] for c in range(n) if c != i)
                for r in range(n) if r != j
            )
            cofactor = determinant_expr(minor) if n > 1 else const(1.0)
            if (i + j) % 2:
                cofactor = neg(cofactor)
            row.append(div(cofactor, det))
        rows.append(tuple(row))
    return tuple(rows)


@lru_cache(maxsize=256)
def metric_partials(table: Table) -> Tuple[Table, ...]:
    """d[m][i][j] = d_m g_ij"""
    n = len(table)
    return tuple(
        tuple(tuple(diff_expr(table[i][j], m + 1) for j in range(n)) for i in range(n))
        for m in range(n)
    )


@lru_cache(maxsize=256)
def christoffel_exprs(table: Table) -> Tuple[Table, ...]:
    """Second-kind symbols G[k][i][j] of a metric table"""
    n = len(table)
    ginv = inverse_exprs(table)
    d = metric_partials(table)
    first = [
        [
            [
                mul(const(0.5), sub(add(d[j][l][i], d[i][j][l]), d[l][i][j]))
                for l in range(n)
            ]
            for j in range(n)
        ]
        for i in range(n)
    ]
    return tuple(
        tuple(
            tuple(
                sum_of([mul(ginv[k][l], first[i][j][l]) for l in range(n)])
                for j in range(n)
            )
            for i in range(n)
        )
        for k in range(n)
    )


@lru_cache(maxsize=256)
def log_volume_partials(table: Table) -> Tuple[Expr, ...]:
    """d_i log sqrt|g| = (1/2) tr(g^{-1} d_i g)"""
    n = len(table)
    ginv = inverse_exprs(table)
    d = metric_partials(table)
    return tuple(
        mul(const(0.5), sum_of([mul(ginv[j][k], d[i][k][j]) for j in range(n) for k in range(n)]))
        for i in range(n)
    )


def contract(table: Table, a: Sequence[Expr], b: Sequence[Expr]) -> Expr:
    """sum_ij T_ij a_i b_j"""
    n = len(table)
    return sum_of([mul(mul(table[i][j], a[i]), b[j]) for i in range(n) for j in range(n)])


def matvec(table: Table, a: Sequence[Expr]) -> Tuple[Expr, ...]:
    n = len(table)
    return tuple(sum_of([mul(table[i][j], a[j]) for j in range(n)]) for i in range(n))
