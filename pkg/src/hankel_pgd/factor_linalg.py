"""Factor-space linear algebra: partial SVD, Procrustes alignment and the
row-trimming projection onto the incoherence set."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.sparse.linalg import LinearOperator, aslinearoperator


class ConvergenceError(RuntimeError):
    """Partial SVD failed to reach the requested residual."""

    def __init__(self, message, residual):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True)
class FactorPair:
    """Low-rank factors with ``U @ V^*`` approximating the lifted matrix."""

    U: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        U = np.asarray(self.U, dtype=complex)
        V = np.asarray(self.V, dtype=complex)
        if U.ndim != 2 or V.ndim != 2 or U.shape[1] != V.shape[1]:
            raise ValueError(f"incompatible factor shapes {U.shape} and {V.shape}")
        object.__setattr__(self, "U", U)
        object.__setattr__(self, "V", V)

    @property
    def r(self) -> int:
        return self.U.shape[1]

    def stacked(self) -> np.ndarray:
        return np.vstack([self.U, self.V])

    @classmethod
    def from_stacked(cls, Z, rows: int) -> "FactorPair":
        Z = np.asarray(Z)
        return cls(Z[:rows], Z[rows:])

    def __matmul__(self, Q) -> "FactorPair":
        return FactorPair(self.U @ Q, self.V @ Q)

    def __add__(self, other: "FactorPair") -> "FactorPair":
        return FactorPair(self.U + other.U, self.V + other.V)

    def __sub__(self, other: "FactorPair") -> "FactorPair":
        return FactorPair(self.U - other.U, self.V - other.V)

    def __rmul__(self, alpha) -> "FactorPair":
        return FactorPair(alpha * self.U, alpha * self.V)

    def norm(self) -> float:
        return math.hypot(np.linalg.norm(self.U), np.linalg.norm(self.V))

    def inner(self, other: "FactorPair") -> complex:
        """``<self, other> = trace(self^* other)``."""
        return np.vdot(self.U, other.U) + np.vdot(self.V, other.V)


@dataclass(frozen=True)
class ProjectionParams:
    """Parameters of the row-norm bound ``sqrt(mu * c_s * r * sigma / n)``."""

    mu: float
    sigma: float
    c_s: float
    r: int
    n: int

    def __post_init__(self):
        if min(self.mu, self.sigma, self.c_s, self.r, self.n) <= 0:
            raise ValueError(f"projection parameters must be positive: {self}")

    @property
    def bound(self) -> float:
        return math.sqrt(self.mu * self.c_s * self.r * self.sigma / self.n)


def _phase_fix(U, V):
    # first nonzero entry of each U column real-positive
    for k in range(U.shape[1]):
        col = U[:, k]
        nz = np.flatnonzero(np.abs(col) > 1e-14 * max(np.abs(col).max(), 1e-300))
        if nz.size:
            ph = col[nz[0]] / abs(col[nz[0]])
            U[:, k] *= ph.conjugate()
            V[:, k] *= ph.conjugate()
    return U, V


def _orth_against(x, Q, k):
    # two passes of classical Gram-Schmidt against the first k columns
    for _ in range(2):
        if k:
            x = x - Q[:, :k] @ (Q[:, :k].conj().T @ x)
    return x


def truncated_svd(A, r: int, tol: float = 1e-10, max_iter: int | None = None,
                  max_restarts: int = 3, seed=0):
    """Top-``r`` singular triplets by Golub-Kahan-Lanczos bidiagonalization.

    Full reorthogonalization is applied to both Lanczos bases.  A triplet is
    converged when its residual ``||A^* u - s v||`` is at most
    ``tol * s_1``.  If ``max_iter`` steps (default ``30 r``) do not suffice,
    the iteration restarts from the sum of the current leading Ritz vectors.

    Parameters
    ----------
    A : ndarray or LinearOperator
        Operator of shape ``(R, Cl)`` providing ``matvec`` and ``rmatvec``.
    r : int
        Number of triplets, ``r <= min(R, Cl)``.

    Returns
    -------
    U : ndarray, shape (R, r)
    s : ndarray, shape (r,)
        Nonnegative, decreasing.
    V : ndarray, shape (Cl, r)

    Raises
    ------
    ConvergenceError
        When the residual criterion is not met after all restarts.
    """
    op = A if isinstance(A, LinearOperator) else aslinearoperator(np.asarray(A))
    R, C = op.shape
    kdim = min(R, C)
    if not 1 <= r <= kdim:
        raise ValueError(f"rank {r} outside [1, {kdim}]")
    if max_iter is None:
        max_iter = 30 * r
    kmax = min(kdim, max(max_iter, r + 1))
    rng = np.random.default_rng(seed)

    def randvec(size):
        return rng.standard_normal(size) + 1j * rng.standard_normal(size)

    v0 = randvec(C)
    resid = np.inf
    for _ in range(max_restarts + 1):
        U, s, V, resid = _gkl(op, r, tol, kmax, v0, randvec)
        if resid <= tol * max(s[0], np.finfo(float).tiny):
            U, V = _phase_fix(U.copy(), V.copy())
            return U, s, V
        v0 = V.sum(axis=1)
    raise ConvergenceError(
        f"partial SVD did not converge: residual {resid:.3e} > {tol:.1e} * {s[0]:.3e}", resid
    )


def _gkl(op, r, tol, kmax, v0, randvec):
    R, C = op.shape
    Uk = np.zeros((R, kmax), dtype=complex)
    Vk = np.zeros((C, kmax + 1), dtype=complex)
    alpha = np.zeros(kmax)
    beta = np.zeros(kmax)
    Vk[:, 0] = v0 / np.linalg.norm(v0)
    scale = 0.0
    for j in range(kmax):
        u = op.matvec(Vk[:, j])
        if j:
            u = u - beta[j - 1] * Uk[:, j - 1]
        u = _orth_against(u, Uk, j)
        a = np.linalg.norm(u)
        scale = max(scale, a)
        if a <= 1e-13 * scale or a == 0.0:
            # invariant subspace: continue from a fresh orthogonal direction
            alpha[j] = 0.0
            u = _orth_against(randvec(R), Uk, j)
            u /= np.linalg.norm(u)
        else:
            alpha[j] = a
            u /= a
        Uk[:, j] = u

        v = op.rmatvec(u) - alpha[j] * Vk[:, j]
        v = _orth_against(v, Vk, j + 1)
        b = np.linalg.norm(v)
        scale = max(scale, b)
        k = j + 1
        v_full = k >= C
        u_full = k >= R
        if v_full or b <= 1e-13 * scale:
            beta[j] = 0.0
            if not v_full:
                v = _orth_against(randvec(C), Vk, k)
                v /= np.linalg.norm(v)
        else:
            beta[j] = b
            v /= b
        if not v_full:
            Vk[:, k] = v

        if k < r and not (u_full or v_full):
            continue
        B = np.diag(alpha[:k]) + np.diag(beta[: k - 1], 1)
        if u_full and not v_full:
            # U spans the whole row space: A = U [B | beta e_k] [V v]^*
            Bt = np.zeros((k, k + 1))
            Bt[:, :k] = B
            Bt[k - 1, k] = beta[j]
            P, s, Qh = np.linalg.svd(Bt)
            return Uk[:, :k] @ P[:, :r], s[:r], Vk[:, : k + 1] @ Qh[:r].conj().T, 0.0
        P, s, Qh = np.linalg.svd(B)
        res = 0.0 if v_full else beta[j] * np.abs(P[k - 1, :r]).max()
        if res <= tol * max(s[0], np.finfo(float).tiny) or k == kmax:
            return Uk[:, :k] @ P[:, :r], s[:r], Vk[:, :k] @ Qh[:r].conj().T, res
    raise AssertionError("unreachable")  # pragma: no cover


def procrustes(Z, M):
    """Align ``M`` to ``Z`` by a unitary ``Q`` minimizing ``||Z - M Q||_F``.

    ``Q = Q1 @ Q2^*`` from the SVD ``M^* Z = Q1 diag(s) Q2^*``; the full
    (square) SVD keeps ``Q`` unitary even when ``M^* Z`` is rank deficient.

    Returns
    -------
    Q : ndarray, shape (r, r)
    dist : float
    """
    Z = Z.stacked() if isinstance(Z, FactorPair) else np.asarray(Z)
    M = M.stacked() if isinstance(M, FactorPair) else np.asarray(M)
    if Z.shape != M.shape:
        raise ValueError(f"shape mismatch {Z.shape} vs {M.shape}")
    Q1, _, Q2h = np.linalg.svd(M.conj().T @ Z)
    Q = Q1 @ Q2h
    return Q, float(np.linalg.norm(Z - M @ Q))


def project_feasible(Z: FactorPair, params: ProjectionParams) -> FactorPair:
    """Row-wise trimming of the stacked factors to ``params.bound``."""
    bound = params.bound
    out = []
    for X in (Z.U, Z.V):
        norms = np.linalg.norm(X, axis=1)
        over = norms > bound
        if over.any():
            X = X.copy()
            X[over] *= (bound / norms[over])[:, None]
        out.append(X)
    return FactorPair(*out)
