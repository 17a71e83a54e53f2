"""Coordinated observer: per-scenario observability split, gains, assembly.

For each sensing scenario the state space splits into an observable
sub-state and its unobservable complement via the kernel of the scenario's
observability matrix.  A fixed-gain filter runs on the observable part of
whichever scenario is active during a sampling interval; the complement
rides along open loop through the model, and the interval ends by mapping
the transformed estimate back to state coordinates.  The per-scenario
one-interval error maps realised by that procedure drive all convergence
and variance analysis downstream.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numerics
from .numerics import DEFAULT_TOL, operator_norm


class ObserverError(Exception):
    pass


def observability_matrix(C, A):
    """Stacked [C; CA; ...; CA^(n-1)]."""
    return numerics.observability_stack(C, A)


@dataclass
class ObservabilityReport:
    ranks: dict                   # scenario index -> rank of W(i)
    combined_rank: int
    n: int

    @property
    def ok(self):
        return self.combined_rank == self.n


def check_combined_observability(scenario_set, A, tol=DEFAULT_TOL):
    """Ranks of all scenario observability matrices and of their stack."""
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    ranks = {}
    blocks = []
    for s in scenario_set:
        if s.r == 0:
            ranks[s.index] = 0
            continue
        W = observability_matrix(s.C, A)
        ranks[s.index] = int(np.linalg.matrix_rank(
            W, tol.rank_tol * max(operator_norm(W), 1.0)))
        blocks.append(W)
    if blocks:
        Ws = np.vstack(blocks)
        combined = int(np.linalg.matrix_rank(
            Ws, tol.rank_tol * max(operator_norm(Ws), 1.0)))
    else:
        combined = 0
    return ObservabilityReport(ranks, combined, n)


@dataclass
class SubsystemDecomposition:
    index: int
    W: np.ndarray
    n_i: int
    M: np.ndarray                 # kernel base, n x (n - n_i)
    N: np.ndarray                 # completion, n x n_i
    T: np.ndarray
    G: np.ndarray                 # top rows of T^-1
    F: np.ndarray                 # bottom rows of T^-1
    A11: np.ndarray
    A12: np.ndarray
    A22: np.ndarray
    C2: np.ndarray
    L: np.ndarray = None          # set by design_gains
    Ac: np.ndarray = None

    @property
    def needs_gain(self):
        return self.n_i > 0 and self.C2.shape[0] > 0


def _identity_completion(M):
    """Standard-basis completion: skip one row per kernel column pivot."""
    n, k = M.shape
    taken = set()
    for j in range(k):
        nz = np.flatnonzero(np.abs(M[:, j]) > 1e-12)
        for row in nz:
            if row not in taken:
                taken.add(int(row))
                break
    cols = [i for i in range(n) if i not in taken]
    N = np.zeros((n, n - k))
    for j, i in enumerate(cols):
        N[i, j] = 1.0
    return N


def decompose(A, scenario, completion="orthonormal", tol=DEFAULT_TOL):
    """Observability decomposition of one scenario (gain left unset).

    completion = "orthonormal" takes the orthogonal complement of the
    kernel, so T is orthogonal and perfectly conditioned.  completion =
    "paper_identity" completes with standard basis columns (and flips the
    kernel sign so its first nonzero entry is negative), which reproduces
    handbook-style printed transforms exactly.
    """
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    C = np.asarray(scenario.C, dtype=float).reshape(-1, n)
    if C.shape[0] == 0:
        return SubsystemDecomposition(
            scenario.index, np.zeros((0, n)), 0, np.eye(n), np.zeros((n, 0)),
            np.eye(n), np.eye(n), np.zeros((0, n)), A.copy(), np.zeros((n, 0)),
            np.zeros((0, 0)), np.zeros((0, 0)))
    W = observability_matrix(C, A)
    M = numerics.kernel_base(W, tol)
    n_i = n - M.shape[1]
    if n_i == n:
        # fully observable: skip the transform entirely
        return SubsystemDecomposition(
            scenario.index, W, n, np.zeros((n, 0)), np.eye(n), np.eye(n),
            np.zeros((0, n)), np.eye(n), np.zeros((0, 0)), np.zeros((0, n)),
            A.copy(), C.copy())
    if completion == "orthonormal":
        # kernel_base returns orthonormal columns; complete orthogonally
        _, _, Vt = np.linalg.svd(W)
        N = Vt[:n_i].T
        T = np.hstack([M, N])
        Tinv = T.T
    elif completion == "paper_identity":
        M = M.copy()
        for j in range(M.shape[1]):
            nz = np.flatnonzero(np.abs(M[:, j]) > 1e-12)
            if nz.size and M[nz[0], j] > 0:
                M[:, j] = -M[:, j]
        N = _identity_completion(M)
        T = np.hstack([M, N])
        Tinv = np.linalg.inv(T)
    else:
        raise ObserverError(f"unknown completion mode {completion!r}")
    if operator_norm(Tinv @ T - np.eye(n)) > 1e-10:
        raise ObserverError("transformation inverse check failed")
    G = Tinv[: n - n_i]
    F = Tinv[n - n_i:]
    At = Tinv @ A @ T
    A11 = At[: n - n_i, : n - n_i]
    A12 = At[: n - n_i, n - n_i:]
    A22 = At[n - n_i:, n - n_i:]
    lower = At[n - n_i:, : n - n_i]
    if operator_norm(lower) > 1e-8 * max(operator_norm(A), 1.0):
        raise ObserverError("decomposition lost the block-triangular structure")
    Ct = C @ T
    if operator_norm(Ct[:, : n - n_i]) > 1e-8 * max(operator_norm(C), 1.0):
        raise ObserverError("output matrix keeps weight on the unobservable part")
    C2 = Ct[:, n - n_i:]
    return SubsystemDecomposition(scenario.index, W, n_i, M, N, T, G, F,
                                  A11, A12, A22, C2)


def design_gains(decomps, poles, tol=DEFAULT_TOL):
    """Place the filter poles for every scenario that admits a gain.

    `poles` is either a mapping scenario index -> pole list of length n_i,
    or a single list.  A single list longer than some scenario's n_i is
    truncated to its first n_i entries (the standard shortcut when one
    pole set is quoted for every scenario); the truncation is recorded on
    the returned report.
    """
    truncated = {}
    for d in decomps.values():
        if not d.needs_gain:
            d.L = None
            d.Ac = None
            continue
        if isinstance(poles, dict):
            want = poles[d.index]
        else:
            want = list(poles)
        if len(want) > d.n_i:
            truncated[d.index] = (len(want), d.n_i)
            want = want[: d.n_i]
        if len(want) != d.n_i:
            raise ObserverError(
                f"scenario {d.index}: need {d.n_i} poles, got {len(want)}")
        d.L = numerics.place_poles(d.A22, d.C2, want, tol)
        d.Ac = d.A22 - d.L @ d.C2
        if np.max(np.linalg.eigvals(d.Ac).real) >= 0:
            raise ObserverError(f"scenario {d.index}: closed-loop poles not in the left half-plane")
    return truncated


@dataclass
class CoordinatedObserver:
    A: np.ndarray
    tau: float
    n_sub: int
    decomps: dict                 # scenario index -> SubsystemDecomposition
    scenario_set: object
    F: np.ndarray                 # stacked F_i blocks, n_s x n
    Phi: np.ndarray               # (F^T F)^-1 F^T, n x n_s
    Lam: dict                     # scenario index -> realised n x n error map
    Q: dict                       # scenario index -> n x n noise factor (V^(1/2))
    V: dict                       # scenario index -> interval noise covariance
    exp_Ac_tau: dict              # scenario index -> filter-block map over tau
    exp_A_tau: np.ndarray
    exp_mix_h: dict = field(default_factory=dict)
    exp_A_h: np.ndarray = None
    block_slices: dict = field(default_factory=dict)
    pole_truncations: dict = field(default_factory=dict)

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def n_s(self):
        return self.F.shape[0]

    def open_loop_gain(self, tau=None):
        """h(t) = ||F exp(A t) Phi||, the open-loop one-interval gain."""
        t = self.tau if tau is None else tau
        return operator_norm(self.F @ numerics.matrix_exponential(self.A, t) @ self.Phi)


def _mix(d, closed=True):
    """Upper-triangular generator [[A11, A12], [0, .]] in T coordinates.

    The lower-right block is the closed-loop Ac for the realised error map
    and the open A22 for the substep propagation (the innovation term
    supplies the feedback there).
    """
    k = d.A11.shape[0]
    n = k + d.n_i
    mix = np.zeros((n, n))
    mix[:k, :k] = d.A11
    mix[:k, k:] = d.A12
    if d.n_i:
        mix[k:, k:] = (d.Ac if closed and d.Ac is not None else d.A22)
    return mix


def build(A, scenario_set, decomps, tau, n_sub=64, tol=DEFAULT_TOL):
    """Assemble the coordinated observer for a designed decomposition set.

    Produces the realised one-interval error maps in state coordinates:
    the active scenario's filter block closes the loop on its observable
    sub-state while the complement (and, for the no-sensor scenario, the
    whole state) propagates through the model.  Noise factors are matrix
    square roots of the per-interval error covariance lifted back to state
    coordinates.
    """
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    if tau <= 0:
        raise ObserverError("tau must be positive")
    for d in decomps.values():
        if d.needs_gain and d.Ac is None:
            raise ObserverError(f"scenario {d.index}: gain not designed yet")
    blocks = []
    slices = {}
    row = 0
    for s in scenario_set:
        d = decomps[s.index]
        if d.n_i:
            blocks.append(d.F)
            slices[s.index] = slice(row, row + d.n_i)
            row += d.n_i
    if not blocks:
        raise ObserverError("no scenario contributes an observable sub-state")
    F = np.vstack(blocks)
    if np.linalg.matrix_rank(F, tol.rank_tol * operator_norm(F)) < n:
        raise ObserverError(
            "stacked sub-state maps are rank deficient; the scenario set "
            "cannot reconstruct the full state")
    Phi = np.linalg.solve(F.T @ F, F.T)
    if operator_norm(Phi @ F - np.eye(n)) > 1e-10:
        raise ObserverError("reconstruction map is not a left inverse")
    exp_A_tau = numerics.matrix_exponential(A, tau)
    h = tau / n_sub
    Lam, Q, V, exp_Ac, exp_mix_h = {}, {}, {}, {}, {}
    for s in scenario_set:
        d = decomps[s.index]
        if d.n_i == 0:
            Lam[s.index] = exp_A_tau.copy()
            V[s.index] = np.zeros((n, n))
            Q[s.index] = np.zeros((n, n))
            exp_Ac[s.index] = np.zeros((0, 0))
            exp_mix_h[s.index] = None
            continue
        mix = _mix(d)
        E = numerics.matrix_exponential(mix, tau)
        Tinv = np.vstack([d.G, d.F])
        Lam[s.index] = d.T @ E @ Tinv
        k = n - d.n_i
        exp_Ac[s.index] = E[k:, k:]
        if d.L is not None and s.sigma.size:
            Nf = np.zeros((n, s.r))
            Nf[k:, :] = d.L @ s.sigma
            Vmix = numerics.noise_gramian(mix, Nf, tau)
            Vs = d.T @ Vmix @ d.T.T
        else:
            Vs = np.zeros((n, n))
        V[s.index] = 0.5 * (Vs + Vs.T)
        Q[s.index] = numerics.psd_sqrt(V[s.index], tol)
        exp_mix_h[s.index] = numerics.matrix_exponential(_mix(d, closed=False), h)
    return CoordinatedObserver(
        A=A, tau=tau, n_sub=n_sub, decomps=decomps, scenario_set=scenario_set,
        F=F, Phi=Phi, Lam=Lam, Q=Q, V=V, exp_Ac_tau=exp_Ac,
        exp_A_tau=exp_A_tau, exp_mix_h=exp_mix_h,
        exp_A_h=numerics.matrix_exponential(A, h), block_slices=slices)


def design(A, scenario_set, poles, tau, completion="orthonormal", n_sub=64,
           tol=DEFAULT_TOL):
    """decompose + design_gains + build in one call."""
    report = check_combined_observability(scenario_set, A, tol)
    if not report.ok:
        raise ObserverError(
            f"combined observability rank {report.combined_rank} < {report.n}; "
            "no convergent coordinated observer exists for this scenario set")
    decomps = {s.index: decompose(A, s, completion, tol) for s in scenario_set}
    truncated = design_gains(decomps, poles, tol)
    obs = build(A, scenario_set, decomps, tau, n_sub, tol)
    obs.pole_truncations = truncated
    return obs


def step_estimate(obs, xhat, alpha, dy):
    """Advance the estimate across one sampling interval.

    `dy` holds the measurement increments of the active scenario, shaped
    (n_sub, r_alpha).  The active scenario's observable sub-state is
    filtered against the increments with exponential-Euler substeps (exact
    linear propagation plus innovation correction); everything unobservable
    to it follows the model.  With alpha the no-sensor scenario this is
    pure model propagation.
    """
    xhat = np.asarray(xhat, dtype=float)
    d = obs.decomps.get(alpha)
    if d is None:
        raise ObserverError(f"unknown scenario index {alpha}")
    s = obs.scenario_set.by_index(alpha)
    if d.n_i == 0 or d.L is None:
        if dy is not None and np.size(dy):
            raise ObserverError("no-sensor scenario takes no measurements")
        return obs.exp_A_tau @ xhat
    dy = np.asarray(dy, dtype=float).reshape(obs.n_sub, s.r)
    h = obs.tau / obs.n_sub
    k = obs.n - d.n_i
    E = obs.exp_mix_h[alpha]
    z = np.concatenate([d.G @ xhat, d.F @ xhat])
    gain = np.zeros((obs.n, s.r))
    gain[k:, :] = d.L
    C2 = d.C2
    for j in range(obs.n_sub):
        innov = dy[j] - (C2 @ z[k:]) * h
        z = E @ z + gain @ innov
    return d.T @ z
