"""Slow dense reference implementations for tests and ``selftest``.

Nothing here reuses the FFT paths or the cached weights of
:mod:`hankel_pgd.hankel_core`: weights are recounted by scattering ones over
the lifted index grid, and every operator is built entry by entry.
"""
from __future__ import annotations

import math

import numpy as np

from .factor_linalg import FactorPair

SIZE_GUARD = 2**22


class OracleSizeError(ValueError):
    pass


def _guard(shape):
    if shape.rows * shape.cols > SIZE_GUARD:
        raise OracleSizeError(f"{shape.rows}x{shape.cols} lift too large for the oracle")


def lift_index(shape) -> np.ndarray:
    """Flat signal index ``i (+) j`` for every lifted entry, shape ``(R, Cl)``."""
    _guard(shape)
    rows = np.array(np.unravel_index(np.arange(shape.rows), shape.pencil)).T
    cols = np.array(np.unravel_index(np.arange(shape.cols), shape.col_pencil)).T
    tot = rows[:, None, :] + cols[None, :, :]
    return np.ravel_multi_index(tuple(np.moveaxis(tot, -1, 0)), shape.dims)


def dense_weights(shape) -> np.ndarray:
    """Skew-diagonal counts obtained by direct counting."""
    w = np.zeros(shape.n)
    np.add.at(w, lift_index(shape).ravel(), 1.0)
    return w


def dense_h(shape, z) -> np.ndarray:
    """Unweighted Hankel lifting ``H z``."""
    z = np.asarray(z).reshape(-1)
    return z[lift_index(shape)]


def dense_hstar(shape, A) -> np.ndarray:
    out = np.zeros(shape.n, dtype=complex)
    np.add.at(out, lift_index(shape).ravel(), np.asarray(A).ravel())
    return out


def dense_g(shape, z) -> np.ndarray:
    z = np.asarray(z, dtype=complex).reshape(-1)
    return dense_h(shape, z / np.sqrt(dense_weights(shape)))


def dense_gstar(shape, A) -> np.ndarray:
    return dense_hstar(shape, A) / np.sqrt(dense_weights(shape))


def dense_svd(A):
    """Thin SVD ``(U, s, V)`` with ``A = U diag(s) V^*``."""
    U, s, Vh = np.linalg.svd(np.asarray(A), full_matrices=False)
    return U, s, Vh.conj().T


def best_rank_approx(A, r: int) -> np.ndarray:
    U, s, V = dense_svd(A)
    return (U[:, :r] * s[:r]) @ V[:, :r].conj().T


def naive_F(ctx, Z: FactorPair) -> float:
    """Objective with the lifted product materialized."""
    shape = ctx.shape
    A = Z.U @ Z.V.conj().T
    s = dense_gstar(shape, A)
    gap = np.linalg.norm(A - dense_g(shape, s)) ** 2
    diff = s - np.asarray(ctx.y_obs).reshape(-1)
    data = 0.0
    for a in ctx.samples.indices:
        data += abs(diff[a]) ** 2
    data /= ctx.samples.m / shape.n
    reg = 0.5 * np.linalg.norm(Z.U.conj().T @ Z.U - Z.V.conj().T @ Z.V) ** 2
    return float(gap + data + ctx.lam * reg)


def dense_grad(ctx, Z: FactorPair) -> FactorPair:
    """The four displayed gradient blocks, computed with dense matrices."""
    shape = ctx.shape
    U, V = Z.U, Z.V
    A = U @ V.conj().T
    s = dense_gstar(shape, A)
    proj = A - dense_g(shape, s)
    pr = np.zeros(shape.n, dtype=complex)
    diff = s - np.asarray(ctx.y_obs).reshape(-1)
    for a in ctx.samples.indices:
        pr[a] += diff[a]
    data = dense_g(shape, pr) / (ctx.samples.m / shape.n)
    UU, VV = U.conj().T @ U, V.conj().T @ V
    fU = proj @ V + data @ V
    fV = proj.conj().T @ U + data.conj().T @ U
    return FactorPair(fU + ctx.lam * U @ (UU - VV), fV + ctx.lam * V @ (VV - UU))


def naive_grad(ctx, Z: FactorPair, h: float = 1e-6, F=None) -> FactorPair:
    """Central differences of ``F`` over every real and imaginary coordinate,
    combined as ``(dF/dRe + i dF/dIm) / 2``."""
    F = F or naive_F
    Zs = Z.stacked()
    rows = Z.U.shape[0]
    G = np.zeros_like(Zs)
    for idx in np.ndindex(Zs.shape):
        parts = []
        for step in (h, 1j * h):
            Zp, Zm = Zs.copy(), Zs.copy()
            Zp[idx] += step
            Zm[idx] -= step
            parts.append(
                (F(ctx, FactorPair.from_stacked(Zp, rows)) - F(ctx, FactorPair.from_stacked(Zm, rows)))
                / (2 * h)
            )
        G[idx] = 0.5 * (parts[0] + 1j * parts[1])
    return FactorPair.from_stacked(G, rows)


def lemma_key_sides(z, w, indices, n: int):
    """Both sides of the skew-diagonal sampling bound for real ``z, w``.

    Left: ``p^{-1} sum_k sum_{i+j=a_k} z_i w_j``; right:
    ``||z||_1 ||w||_1 + sqrt(24 n log n / p) ||z||_2 ||w||_2``.
    """
    indices = np.asarray(indices)
    p = indices.size / n
    conv = np.zeros(n)
    for i, zi in enumerate(z):
        conv[i : i + len(w)] += zi * np.asarray(w)
    lhs = conv[indices].sum() / p
    rhs = np.abs(z).sum() * np.abs(w).sum() + math.sqrt(24 * n * math.log(n) / p) * (
        np.linalg.norm(z) * np.linalg.norm(w)
    )
    return float(lhs), float(rhs)


def lemma_key_check(n: int, m: int, trials: int, seed=0, n1: int | None = None) -> dict:
    """Monte Carlo violation rate of the skew-diagonal sampling bound.

    Each trial draws ``m`` indices uniformly with replacement and fresh
    standard normal ``z`` (length ``n1``) and ``w`` (length ``n + 1 - n1``).
    """
    if m < math.ceil(8 / 3 * math.log(n)):
        raise ValueError("m below the bound's sample-size hypothesis")
    n1 = (n + 2) // 2 if n1 is None else n1
    n2 = n + 1 - n1
    rng = np.random.default_rng(seed)
    violations = 0
    for _ in range(trials):
        idx = rng.integers(0, n, size=m)
        z = rng.standard_normal(n1)
        w = rng.standard_normal(n2)
        lhs, rhs = lemma_key_sides(z, w, idx, n)
        violations += lhs > rhs
    return {"violation_rate": violations / trials, "trials": trials, "n": n, "m": m}
