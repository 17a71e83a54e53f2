"""Dense linear-algebra kernels shared by the rest of the package.

Everything here works on plain numpy arrays of float64.  Inputs are
validated to be finite; rank decisions go through an SVD with a relative
cutoff so that the integer ranks of the bundled models come out exact.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.signal


@dataclass(frozen=True)
class Tolerance:
    """Numerical cutoffs used across the package.

    rank_tol is relative to the largest singular value of the matrix at
    hand; residual_tol is an absolute bound on defect norms.
    """

    rank_tol: float = 1e-9
    residual_tol: float = 1e-8

    def __post_init__(self):
        if self.rank_tol <= 0 or self.residual_tol <= 0:
            raise ValueError("tolerances must be strictly positive")


DEFAULT_TOL = Tolerance()


def _as_matrix(M, name="matrix"):
    M = np.asarray(M, dtype=float)
    if M.ndim == 1:
        M = M.reshape(1, -1)
    if M.ndim != 2:
        raise ValueError(f"{name} must be 2-dimensional, got shape {M.shape}")
    if M.size and not np.all(np.isfinite(M)):
        raise ValueError(f"{name} contains non-finite entries")
    return M


def operator_norm(M):
    """Largest singular value (spectral norm). Zero for empty matrices."""
    M = _as_matrix(M)
    if M.size == 0:
        return 0.0
    return float(np.linalg.norm(M, 2))


def matrix_exponential(A, t=1.0):
    """exp(A*t) for a square matrix, by scaling-and-squaring Pade."""
    A = _as_matrix(A, "A")
    if A.shape[0] != A.shape[1]:
        raise ValueError(f"matrix exponential needs a square matrix, got {A.shape}")
    if not np.isfinite(t):
        raise ValueError("time must be finite")
    if A.shape[0] == 0:
        return np.zeros((0, 0))
    return scipy.linalg.expm(A * t)


def noise_gramian(Ac, N, tau):
    """Integral of exp(Ac*u) @ N @ N.T @ exp(Ac.T*u) for u in [0, tau].

    Computed with the augmented-exponential construction: exponentiate
        [[-Ac, N N^T], [0, Ac^T]] * tau
    and read the integral off the top-right block.  One matrix exponential,
    accurate to machine precision; no quadrature.
    """
    Ac = _as_matrix(Ac, "Ac")
    N = _as_matrix(N, "N")
    p = Ac.shape[0]
    if Ac.shape[0] != Ac.shape[1]:
        raise ValueError("Ac must be square")
    if N.shape[0] != p:
        raise ValueError(f"row mismatch: Ac is {p}x{p}, N has {N.shape[0]} rows")
    if tau <= 0:
        raise ValueError("tau must be positive")
    if N.shape[1] == 0 or not np.any(N):
        return np.zeros((p, p))
    blk = np.zeros((2 * p, 2 * p))
    blk[:p, :p] = -Ac
    blk[:p, p:] = N @ N.T
    blk[p:, p:] = Ac.T
    E = scipy.linalg.expm(blk * tau)
    V = E[p:, p:].T @ E[:p, p:]
    return 0.5 * (V + V.T)


def _ackermann(A, B, poles):
    """Single-input pole placement via Ackermann's formula."""
    n = A.shape[0]
    ctrb = np.hstack([np.linalg.matrix_power(A, k) @ B for k in range(n)])
    coeffs = np.real(np.poly(poles))
    phi = np.zeros_like(A)
    for c in coeffs:
        phi = phi @ A + c * np.eye(n)
    last = np.zeros(n)
    last[-1] = 1.0
    return (last @ np.linalg.solve(ctrb, phi)).reshape(1, n)


def place_poles(A22, C2, desired, tol=DEFAULT_TOL):
    """Observer gain L with eig(A22 - L C2) equal to `desired`.

    Solved as state-feedback placement on the dual pair (A22^T, C2^T).
    Uses the robust eigenstructure-assignment algorithm; single-output
    pairs fall back to Ackermann when that algorithm declines the request.
    Requested poles must be closed under conjugation and, per the design
    rules of this package, distinct.
    """
    A22 = _as_matrix(A22, "A22")
    C2 = _as_matrix(C2, "C2")
    p = A22.shape[0]
    if A22.shape[0] != A22.shape[1]:
        raise ValueError("A22 must be square")
    if C2.shape[1] != p:
        raise ValueError("C2 column count must match A22")
    desired = np.atleast_1d(np.asarray(desired, dtype=complex))
    if len(desired) != p:
        raise ValueError(f"need exactly {p} poles, got {len(desired)}")
    if not np.allclose(np.sort_complex(desired), np.sort_complex(desired.conj())):
        raise ValueError("pole list must be closed under conjugation")
    if len(np.unique(np.round(desired, 10))) != len(desired):
        raise ValueError("repeated poles are not supported; request distinct poles")
    W = observability_stack(C2, A22)
    if np.linalg.matrix_rank(W, tol=tol.rank_tol * max(operator_norm(W), 1.0)) < p:
        raise ValueError("(C2, A22) is not observable; poles cannot be placed")
    B = C2.T
    # real pole lists go in as real arrays: the assignment algorithm's
    # complex branch pairs poles up and is noticeably less accurate
    request = desired.real if np.all(desired.imag == 0) else desired
    # the default iteration budget stops well short of the achievable
    # accuracy on multi-output problems
    kwargs = {"rtol": 1e-11, "maxiter": 300} if B.shape[1] > 1 else {}
    try:
        with warnings.catch_warnings():
            # the robustness optimiser may stop on its iteration cap; pole
            # accuracy is what matters here and is verified below
            warnings.filterwarnings("ignore", message="Convergence was not")
            res = scipy.signal.place_poles(A22.T, B, request, **kwargs)
        K = res.gain_matrix
    except ValueError:
        if B.shape[1] != 1:
            raise
        K = _ackermann(A22.T, B, desired)
    L = K.T
    got = np.linalg.eigvals(A22 - L @ C2)
    if np.max(np.abs(np.sort_complex(got) - np.sort_complex(desired))) > 1e-6:
        raise ValueError("placement did not reach the requested poles")
    return L


def observability_stack(C, A):
    """Stacked [C; CA; ...; CA^(n-1)] with n = dim(A)."""
    A = _as_matrix(A, "A")
    n = A.shape[0]
    C = np.asarray(C, dtype=float).reshape(-1, n)
    rows = [C]
    for _ in range(n - 1):
        rows.append(rows[-1] @ A)
    return np.vstack(rows)


def kernel_base(M, tol=DEFAULT_TOL):
    """Orthonormal basis of ker(M) as columns; may have zero columns.

    Rank is decided by SVD with the relative cutoff in `tol`.  Columns are
    sign-normalised so the first nonzero entry is positive, which keeps the
    basis deterministic across BLAS builds.
    """
    M = _as_matrix(M)
    b = M.shape[1]
    if M.shape[0] == 0:
        return np.eye(b)
    _, s, Vt = np.linalg.svd(M)
    cutoff = tol.rank_tol * (s[0] if s.size else 0.0)
    rank = int(np.sum(s > cutoff))
    K = Vt[rank:].T
    for j in range(K.shape[1]):
        nz = np.flatnonzero(np.abs(K[:, j]) > 1e-12)
        if nz.size and K[nz[0], j] < 0:
            K[:, j] = -K[:, j]
    if K.shape[1] and operator_norm(M @ K) > tol.residual_tol * max(operator_norm(M), 1.0):
        raise AssertionError("kernel residual exceeds tolerance")
    return K


def psd_sqrt(M, tol=DEFAULT_TOL):
    """Symmetric PSD square root S with S @ S = M.

    Eigenvalues in [-rank_tol*||M||, 0) are clamped to zero; anything more
    negative means the input is genuinely indefinite and is rejected.
    """
    M = _as_matrix(M)
    if M.shape[0] != M.shape[1]:
        raise ValueError("psd_sqrt needs a square matrix")
    if M.shape[0] == 0:
        return np.zeros((0, 0))
    nrm = operator_norm(M)
    if operator_norm(M - M.T) > tol.residual_tol * (1.0 + nrm):
        raise ValueError("matrix is not symmetric")
    Msym = 0.5 * (M + M.T)
    w, U = np.linalg.eigh(Msym)
    floor = -tol.rank_tol * max(nrm, 1.0)
    if np.min(w) < 1e6 * floor:
        raise ValueError(f"matrix is indefinite (min eigenvalue {np.min(w):.3e})")
    w = np.clip(w, 0.0, None)
    S = (U * np.sqrt(w)) @ U.T
    return 0.5 * (S + S.T)


# Above this size the Kronecker system for the Stein solve gets large; the
# doubling series is used instead.
_STEIN_VEC_LIMIT = 60


def solve_symmetric_stein(S, Psi, tol=DEFAULT_TOL):
    """Solve S W S - W + Psi = 0 for symmetric S with spectral radius < 1.

    Small systems go through the vectorised Kronecker solve; larger ones
    use the convergent series sum_k S^k Psi S^k with squaring-based
    doubling.  The residual is checked either way.
    """
    S = _as_matrix(S, "S")
    Psi = _as_matrix(Psi, "Psi")
    n = S.shape[0]
    if S.shape != (n, n) or Psi.shape != (n, n):
        raise ValueError("S and Psi must be square and same size")
    rho = max(np.abs(np.linalg.eigvals(S))) if n else 0.0
    if rho >= 1.0:
        raise ValueError(
            f"unstable error dynamics (spectral radius {rho:.6f} >= 1); "
            "steady-state variance undefined"
        )
    if n == 0:
        return np.zeros((0, 0))
    if n <= _STEIN_VEC_LIMIT:
        K = np.kron(S.T, S)
        W = np.linalg.solve(np.eye(n * n) - K, Psi.flatten(order="F"))
        W = W.reshape((n, n), order="F")
    else:
        W = Psi.copy()
        P = S.copy()
        for _ in range(200):
            inc = P @ W @ P
            W = W + inc
            P = P @ P
            if operator_norm(inc) < 1e-16 * (1.0 + operator_norm(W)):
                break
    W = 0.5 * (W + W.T)
    resid = operator_norm(S @ W @ S - W + Psi)
    if resid > tol.residual_tol * (1.0 + operator_norm(Psi)):
        raise AssertionError(f"Stein residual {resid:.3e} exceeds tolerance")
    return W


def solve_switched_covariance(maps, weights, Psi, tol=DEFAULT_TOL):
    """Fixed point of W = sum_j w_j M_j W M_j^T + Psi.

    This is the stationary second moment of a linear recursion whose map is
    drawn i.i.d. from `maps` with probabilities `weights` and driven by
    noise of covariance Psi.  Solved by vectorisation for moderate sizes,
    by fixed-point iteration beyond that.  Requires mean-square stability.
    """
    maps = [np.asarray(M, dtype=float) for M in maps]
    weights = np.asarray(weights, dtype=float)
    Psi = _as_matrix(Psi, "Psi")
    n = Psi.shape[0]
    if n <= _STEIN_VEC_LIMIT:
        T = sum(w * np.kron(M, M) for w, M in zip(weights, maps))
        rho = max(np.abs(np.linalg.eigvals(T)))
        if rho >= 1.0:
            raise ValueError(
                f"mean-square unstable switching (second-moment radius {rho:.4f} >= 1)"
            )
        W = np.linalg.solve(np.eye(n * n) - T, Psi.flatten(order="F"))
        W = W.reshape((n, n), order="F")
    else:
        W = Psi.copy()
        for _ in range(100000):
            Wn = sum(w * M @ W @ M.T for w, M in zip(weights, maps)) + Psi
            if operator_norm(Wn - W) < 1e-14 * (1.0 + operator_norm(Wn)):
                W = Wn
                break
            W = Wn
    W = 0.5 * (W + W.T)
    resid = operator_norm(
        sum(w * M @ W @ M.T for w, M in zip(weights, maps)) + Psi - W
    )
    if resid > tol.residual_tol * (1.0 + operator_norm(Psi)):
        raise AssertionError(f"covariance residual {resid:.3e} exceeds tolerance")
    return W
