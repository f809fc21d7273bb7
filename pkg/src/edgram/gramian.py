"""Differential reachability and observability Gramians along a trajectory.

For a fixed base trajectory the variational system is linear time-varying,
and with a constant input matrix its impulse response from channel ``i``
is ``Phi(t, t1) B[:, i]``.  The impulse is therefore realised as the state
jump ``dx(t1+) = B[:, i]`` rather than as a tall pulse.  The Gramians are

    W_R = int_{t1}^{t2} Phi(t, t1) B B' Phi(t, t1)' dt
    W_O = int_{t1}^{t2} Phi(t, t1)' H(t)' H(t) Phi(t, t1) dt,   H = dh/dx

assembled from the samples on the simulation grid, by default with the
trapezoid rule plus Gregory end corrections (``quadrature="trapezoid"``
gives the plain composite rule).

Two ways to get the integrands are provided:

``exact_variational``
    propagate the variational system (needs Jacobians);
``frechet_approx``
    difference quotients ``(x(x0 + s v) - x(x0)) / s`` of the nonlinear
    system only, ``n + m + 1`` simulations for both Gramians.
"""

from __future__ import annotations

import contextvars
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg

from .errors import ConfigError, GramianError
from .sim import (
    InputSignal, TimeGrid, Trajectory, VariationalTrajectory, integrate,
    integrate_variational, propagate_blocks,
)
from .system import SystemModel

__all__ = [
    "Gramian", "PDReport", "REACHABILITY", "OBSERVABILITY", "DUAL_REACHABILITY",
    "EXACT", "FRECHET", "LTI_ANALYTIC", "reachability_gramian",
    "observability_gramian", "differential_gramians", "frechet_impulse_response",
    "frechet_initial_state_response", "lti_gramian_oracle", "pd_probe",
    "common_nullspace_probe", "finalize_gramian", "trapezoid_weights", "quadrature_weights",
    "TRAPEZOID", "GREGORY",
]

REACHABILITY = "reachability"
OBSERVABILITY = "observability"
DUAL_REACHABILITY = "dual_reachability"
KINDS = (REACHABILITY, OBSERVABILITY, DUAL_REACHABILITY)

EXACT = "exact_variational"
FRECHET = "frechet_approx"
LTI_ANALYTIC = "lti_analytic"
METHODS = (EXACT, FRECHET, LTI_ANALYTIC)

DEFAULT_S = 0.01
PD_THRESHOLD = 1e-9
PSD_TOL = 1e-8

TRAPEZOID = "trapezoid"
GREGORY = "gregory"
QUADRATURES = (GREGORY, TRAPEZOID)


@dataclass(frozen=True, eq=False)
class Gramian:
    """Symmetric positive semi-definite Gramian in the original coordinates."""

    W: np.ndarray
    kind: str
    interval: Tuple[float, float]
    method: str
    base_id: str = ""
    quadrature: str = "trapezoid"
    meta: dict = field(default_factory=dict, repr=False)

    @property
    def n(self) -> int:
        return self.W.shape[0]

    def eigenvalues(self) -> np.ndarray:
        """Eigenvalues in descending order."""
        return np.linalg.eigvalsh(self.W)[::-1]

    def sidecar(self) -> dict:
        return {
            "kind": self.kind,
            "interval": [float(self.interval[0]), float(self.interval[1])],
            "method": self.method,
            "quadrature": self.quadrature,
            "eigenvalues": [float(v) for v in self.eigenvalues()],
            "base_id": self.base_id,
            "meta": dict(self.meta),
        }


def finalize_gramian(W, kind, interval, method, base_id="", check=True, meta=None,
                     quadrature: str = TRAPEZOID) -> Gramian:
    """Symmetrise ``W`` and enforce ``lambda_min >= -1e-8 lambda_max``."""
    if kind not in KINDS:
        raise ConfigError(f"unknown Gramian kind {kind!r}")
    if method not in METHODS:
        raise ConfigError(f"unknown Gramian method {method!r}")
    W = np.asarray(W, dtype=float)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise GramianError(f"Gramian must be square, got {W.shape}")
    if not np.all(np.isfinite(W)):
        raise GramianError("Gramian has non-finite entries")
    W = 0.5 * (W + W.T)
    if check and W.size:
        lam = np.linalg.eigvalsh(W)
        if lam[0] < -PSD_TOL * max(lam[-1], 0.0):
            raise GramianError(
                f"{kind} Gramian is not positive semi-definite: "
                f"lambda_min = {lam[0]:.3e}, lambda_max = {lam[-1]:.3e}")
    return Gramian(W, kind, (float(interval[0]), float(interval[1])), method, base_id,
                   quadrature=quadrature, meta=dict(meta or {}))


def trapezoid_weights(count: int, dt: float) -> np.ndarray:
    """Composite trapezoid weights for ``count`` equally spaced samples."""
    if count <= 1:
        return np.zeros(max(count, 0))
    w = np.full(count, dt)
    w[0] = w[-1] = 0.5 * dt
    return w


_GREGORY_END = np.array([3.0 / 8.0, 7.0 / 6.0, 23.0 / 24.0])


def quadrature_weights(count: int, dt: float, rule: str = GREGORY) -> Tuple[np.ndarray, str]:
    """Sample weights for ``count`` equally spaced points and the rule used.

    ``"gregory"`` is the trapezoid rule with third-order end corrections,
    weights ``3/8, 7/6, 23/24, 1, ..., 1, 23/24, 7/6, 3/8`` times ``dt``.  It
    uses the same samples as the trapezoid rule but is fourth-order accurate
    for smooth integrands.  With fewer than six samples the end corrections
    would overlap and the trapezoid rule is used instead.
    """
    if rule not in QUADRATURES:
        raise ConfigError(f"quadrature must be one of {QUADRATURES}, got {rule!r}")
    if rule == TRAPEZOID or count < 6:
        return trapezoid_weights(count, dt), TRAPEZOID
    w = np.full(count, dt)
    w[:3] = dt * _GREGORY_END
    w[-3:] = dt * _GREGORY_END[::-1]
    return w, GREGORY


def _interval(base, interval):
    k1, k2 = base.grid.interval_indices(interval)
    times = base.grid.times
    return k1, k2, (float(times[k1]), float(times[k2]))


# -- exact variational path --------------------------------------------------

def _exact_pair(sys, base, k1, k2, want_r, want_o, scheme=None, quadrature=GREGORY):
    n = sys.n
    w, rule = quadrature_weights(k2 - k1 + 1, base.grid.dt, quadrature)
    WR = np.zeros((n, n)) if want_r else None
    WO = np.zeros((n, n)) if want_o else None
    if k2 == k1:
        return WR, WO, rule
    if want_o:
        # one propagation of Phi serves both Gramians
        for k, Phis in propagate_blocks(sys, base, np.eye(n), k1, k2, scheme):
            wk = w[k - k1:k - k1 + Phis.shape[0]]
            if want_r:
                R = Phis @ sys.B
                WR += np.einsum("k,kim,kjm->ij", wk, R, R)
            Y = sys.jac_h_many(base.X[k:k + Phis.shape[0]]) @ Phis
            WO += np.einsum("k,kpi,kpj->ij", wk, Y, Y)
    else:
        for k, R in propagate_blocks(sys, base, sys.B, k1, k2, scheme):
            wk = w[k - k1:k - k1 + R.shape[0]]
            WR += np.einsum("k,kim,kjm->ij", wk, R, R)
    return WR, WO, rule


def _impulse_pulse_reachability(sys, base, k1, k2, quadrature=GREGORY):
    """Diagnostic: impulse as a pulse of height ``1/dt`` over the first step."""
    seg = _segment(base, k1, k2)
    n = sys.n
    WR = np.zeros((n, n))
    w, rule = quadrature_weights(k2 - k1 + 1, base.grid.dt, quadrature)
    for i in range(sys.m):
        U = np.zeros((seg.grid.N + 1, sys.m))
        U[0, i] = 1.0 / seg.grid.dt
        resp = integrate_variational(sys, seg, np.zeros(n), InputSignal.sampled(seg.grid, U))
        WR += (resp.dX * w[:, None]).T @ resp.dX
    return WR, rule


# -- Frechet path ------------------------------------------------------------

def _segment(base: Trajectory, k1: int, k2: int) -> Trajectory:
    if k1 == 0 and k2 == base.grid.N:
        return base
    grid = base.grid.sub(k1, k2)
    return Trajectory(grid, base.X[k1:k2 + 1], base.U[k1:k2 + 1], base.Y[k1:k2 + 1],
                      base.model_id, base.scheme, base.u)


def _run_all(tasks, workers):
    """Run zero-argument callables, results in submission order."""
    if workers is None or workers <= 1 or len(tasks) <= 1:
        return [task() for task in tasks]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(contextvars.copy_context().run, task) for task in tasks]
        return [fut.result() for fut in futures]


def _perturbed(sys, seg, v, s):
    if seg.u is None:
        raise ConfigError("base trajectory carries no input signal; cannot re-simulate it")
    return integrate(sys, seg.X[0] + s * v, seg.u, seg.grid, seg.scheme)


def _check_s(s):
    if not (s > 0 and math.isfinite(s)):
        raise ConfigError(f"perturbation size s must be positive, got {s}")


def _frechet_pair(sys, base, k1, k2, want_r, want_o, s, workers=1, quadrature=GREGORY):
    _check_s(s)
    n = sys.n
    w, rule = quadrature_weights(k2 - k1 + 1, base.grid.dt, quadrature)
    WR = np.zeros((n, n)) if want_r else None
    WO = np.zeros((n, n)) if want_o else None
    if k2 == k1:
        return WR, WO, rule
    seg = _segment(base, k1, k2)
    if want_r:
        tasks = [lambda v=sys.B[:, i]: _perturbed(sys, seg, v, s) for i in range(sys.m)]
        for traj in _run_all(tasks, workers):
            D = (traj.X - seg.X) / s
            WR += (D * w[:, None]).T @ D
    if want_o:
        eye = np.eye(n)
        tasks = [lambda v=eye[i]: _perturbed(sys, seg, v, s) for i in range(n)]
        Ys = np.empty((k2 - k1 + 1, sys.p, n))
        for i, traj in enumerate(_run_all(tasks, workers)):
            Ys[:, :, i] = (traj.Y - seg.Y) / s
        WO += np.einsum("k,kpi,kpj->ij", w, Ys, Ys)
    return WR, WO, rule


def frechet_impulse_response(sys: SystemModel, x0, u: Optional[InputSignal], grid: TimeGrid,
                             i: int, s: float = DEFAULT_S, scheme: str = "rk4",
                             base: Optional[Trajectory] = None) -> VariationalTrajectory:
    """Approximate impulse response of input channel ``i`` (0-based).

    ``(x2 - x1) / s`` where ``x1`` is the base simulation and ``x2`` starts
    from ``x0 + s B[:, i]``.  Pass ``base`` to reuse an existing ``x1``.
    """
    _check_s(s)
    if not 0 <= i < sys.m:
        raise ConfigError(f"input channel {i} out of range 0..{sys.m - 1}")
    if base is None:
        base = integrate(sys, x0, u, grid, scheme)
    x2 = integrate(sys, base.X[0] + s * sys.B[:, i], base.u, base.grid, base.scheme)
    return VariationalTrajectory(base, (x2.X - base.X) / s, (x2.Y - base.Y) / s, approximate=True)


def frechet_initial_state_response(sys: SystemModel, x0, u: Optional[InputSignal], grid: TimeGrid,
                                   i: int, s: float = DEFAULT_S, scheme: str = "rk4",
                                   base: Optional[Trajectory] = None) -> np.ndarray:
    """Approximate output response to the initial variation ``e_i`` (0-based).

    Returns ``(h(x2) - h(x1)) / s`` sampled on the grid, shape ``(N + 1, p)``.
    """
    _check_s(s)
    if not 0 <= i < sys.n:
        raise ConfigError(f"state index {i} out of range 0..{sys.n - 1}")
    if base is None:
        base = integrate(sys, x0, u, grid, scheme)
    e = np.zeros(sys.n)
    e[i] = 1.0
    x2 = integrate(sys, base.X[0] + s * e, base.u, base.grid, base.scheme)
    return (x2.Y - base.Y) / s


# -- public assembly ---------------------------------------------------------

def _pair(sys, base, k1, k2, want_r, want_o, method, s, workers, quadrature):
    if method == EXACT:
        return _exact_pair(sys, base, k1, k2, want_r, want_o, quadrature=quadrature)
    if method == FRECHET:
        return _frechet_pair(sys, base, k1, k2, want_r, want_o, s, workers, quadrature)
    raise ConfigError(f"method must be {EXACT!r} or {FRECHET!r}, got {method!r}")


def differential_gramians(sys: SystemModel, base: Trajectory, interval=None, method: str = EXACT,
                          s: float = DEFAULT_S, workers: int = 1,
                          quadrature: str = GREGORY) -> Tuple[Gramian, Gramian]:
    """Reachability and observability Gramians sharing one propagation.

    With ``method="frechet_approx"`` this costs ``n + m`` simulations on top
    of ``base``.
    """
    k1, k2, span = _interval(base, interval)
    WR, WO, rule = _pair(sys, base, k1, k2, True, True, method, s, workers, quadrature)
    meta = {"s": s} if method == FRECHET else {}
    return (finalize_gramian(WR, REACHABILITY, span, method, base.base_id, meta=meta, quadrature=rule),
            finalize_gramian(WO, OBSERVABILITY, span, method, base.base_id, meta=meta, quadrature=rule))


def reachability_gramian(sys: SystemModel, base: Trajectory, interval=None, method: str = EXACT,
                         s: float = DEFAULT_S, impulse: str = "jump", workers: int = 1,
                         quadrature: str = GREGORY) -> Gramian:
    """Differential reachability Gramian of ``sys`` along ``base``.

    ``impulse="pulse"`` replaces the exact state jump by a pulse of height
    ``1/dt`` over one step; it exists to measure the pulse-width error and
    only applies to the exact method.
    """
    k1, k2, span = _interval(base, interval)
    if impulse not in ("jump", "pulse"):
        raise ConfigError(f"impulse must be 'jump' or 'pulse', got {impulse!r}")
    if impulse == "pulse":
        if method != EXACT:
            raise ConfigError("impulse='pulse' is only available with the exact method")
        if k2 > k1:
            WR, rule = _impulse_pulse_reachability(sys, base, k1, k2, quadrature)
        else:
            WR, rule = np.zeros((sys.n, sys.n)), TRAPEZOID
    else:
        WR, _, rule = _pair(sys, base, k1, k2, True, False, method, s, workers, quadrature)
    meta = {"s": s} if method == FRECHET else {"impulse": impulse}
    return finalize_gramian(WR, REACHABILITY, span, method, base.base_id, meta=meta, quadrature=rule)


def observability_gramian(sys: SystemModel, base: Trajectory, interval=None, method: str = EXACT,
                          s: float = DEFAULT_S, workers: int = 1,
                          quadrature: str = GREGORY) -> Gramian:
    """Differential observability Gramian of ``sys`` along ``base``."""
    k1, k2, span = _interval(base, interval)
    _, WO, rule = _pair(sys, base, k1, k2, False, True, method, s, workers, quadrature)
    meta = {"s": s} if method == FRECHET else {}
    return finalize_gramian(WO, OBSERVABILITY, span, method, base.base_id, meta=meta, quadrature=rule)


def _van_loan(A, Q, T):
    """``int_0^T exp(A t) Q exp(A' t) dt`` via Van Loan's block exponential.

    The block exponential contains ``exp(-A t)``, which loses accuracy when
    ``|A| T`` is large, so it is applied on ``T / 2^j`` with
    ``|A| T / 2^j <= 1/2`` and the result doubled back up using
    ``W(2t) = W(t) + exp(A t) W(t) exp(A' t)``.
    """
    n = A.shape[0]
    norm = float(np.linalg.norm(A, 1)) * T
    j = max(0, int(math.ceil(math.log2(norm / 0.5)))) if norm > 0.5 else 0
    tau = T / 2 ** j
    M = np.zeros((2 * n, 2 * n))
    M[:n, :n] = -A
    M[:n, n:] = Q
    M[n:, n:] = A.T
    E = scipy.linalg.expm(M * tau)
    W = E[n:, n:].T @ E[:n, n:]
    F = E[n:, n:].T  # exp(A tau)
    for _ in range(j):
        W = W + F @ W @ F.T
        F = F @ F
    return W


def lti_gramian_oracle(A, B, C, interval) -> Tuple[Gramian, Gramian]:
    """Finite-horizon controllability/observability Gramians of ``(A, B, C)``.

    Uses Van Loan's block exponential, so no time stepping is involved and
    ``A`` need not be stable.  Only the interval length matters.
    """
    A = np.array(A, dtype=float, ndmin=2)
    n = A.shape[0]
    B = np.array(B, dtype=float).reshape(n, -1)
    C = np.array(C, dtype=float, ndmin=2).reshape(-1, n)
    t1, t2 = float(interval[0]), float(interval[1])
    T = t2 - t1
    if T < 0:
        raise ConfigError("interval end precedes start")
    Wc = _van_loan(A, B @ B.T, T)
    Wo = _van_loan(A.T, C.T @ C, T)
    span = (t1, t2)
    return (finalize_gramian(Wc, REACHABILITY, span, LTI_ANALYTIC),
            finalize_gramian(Wo, OBSERVABILITY, span, LTI_ANALYTIC))


# -- positive-definiteness probes --------------------------------------------

@dataclass(frozen=True)
class PDReport:
    """Smallest/largest eigenvalue per probed subinterval and the verdicts."""

    kind: str
    threshold: float
    entries: List[dict]

    @property
    def verdict(self) -> bool:
        return all(e["verdict"] for e in self.entries)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "threshold": self.threshold,
                "verdict": self.verdict, "subintervals": self.entries}


def _gramian_for_kind(sys, base, k1, k2, kind, method, s, quadrature=GREGORY):
    WR, WO, _ = _pair(sys, base, k1, k2, kind == REACHABILITY, kind == OBSERVABILITY,
                      method, s, 1, quadrature)
    return WR if kind == REACHABILITY else WO


def pd_probe(sys: SystemModel, base: Trajectory, kind: str, subinterval_count: int = 1,
             threshold: float = PD_THRESHOLD, method: str = EXACT, s: float = DEFAULT_S) -> PDReport:
    """Check positive definiteness of a Gramian on dyadic subintervals.

    Probes the whole interval, its halves, quarters, ... down to the
    largest power of two not exceeding ``subinterval_count`` pieces.  A
    subinterval is positive when ``lambda_min > threshold * lambda_max``.
    """
    if kind not in (REACHABILITY, OBSERVABILITY):
        raise ConfigError(f"kind must be {REACHABILITY!r} or {OBSERVABILITY!r}")
    if int(subinterval_count) < 1:
        raise ConfigError("subinterval_count must be >= 1")
    N = base.grid.N
    levels = int(math.floor(math.log2(int(subinterval_count))))
    if 2 ** levels > N:
        raise ConfigError(f"{2 ** levels} subintervals need at least that many grid steps, have {N}")
    times = base.grid.times
    entries = []
    for level in range(levels + 1):
        pieces = 2 ** level
        cuts = [int(round(j * N / pieces)) for j in range(pieces + 1)]
        for a, b in zip(cuts[:-1], cuts[1:]):
            W = _gramian_for_kind(sys, base, a, b, kind, method, s)
            lam = np.linalg.eigvalsh(0.5 * (W + W.T))
            lo, hi = float(lam[0]), float(lam[-1])
            entries.append({"t1": float(times[a]), "t2": float(times[b]),
                            "lambda_min": lo, "lambda_max": hi,
                            "verdict": bool(hi > 0 and lo > threshold * hi)})
    return PDReport(kind, float(threshold), entries)


def _fix_signs(V):
    """Make the largest-magnitude entry of every column positive."""
    V = np.array(V, dtype=float)
    if V.size == 0:
        return V
    idx = np.argmax(np.abs(V), axis=0)
    signs = np.sign(V[idx, np.arange(V.shape[1])])
    signs[signs == 0] = 1.0
    return V * signs


def common_nullspace_probe(sys: SystemModel, x0, inputs: Sequence[InputSignal], grid: TimeGrid,
                           kind: str = REACHABILITY, scheme: str = "rk4",
                           threshold: float = PD_THRESHOLD, method: str = EXACT,
                           s: float = DEFAULT_S) -> np.ndarray:
    """Directions annihilated by the Gramians of every probing input.

    Sums the Gramians obtained along the trajectories driven by each input
    and returns the eigenvectors of the sum whose eigenvalue is at most
    ``threshold * lambda_max``, as columns of an ``(n, r)`` array.  ``r = 0``
    means no shared near-null direction was found; it does not certify
    accessibility or observability.
    """
    if kind not in (REACHABILITY, OBSERVABILITY):
        raise ConfigError(f"kind must be {REACHABILITY!r} or {OBSERVABILITY!r}")
    inputs = list(inputs)
    if not inputs:
        raise ConfigError("need at least one probing input")
    total = np.zeros((sys.n, sys.n))
    for u in inputs:
        base = integrate(sys, x0, u, grid, scheme)
        total += _gramian_for_kind(sys, base, 0, grid.N, kind, method, s)
    lam, V = np.linalg.eigh(0.5 * (total + total.T))
    keep = lam <= threshold * max(lam[-1], 0.0)
    return _fix_signs(V[:, keep])
