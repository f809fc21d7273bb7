"""Variational symmetry with a constant matrix ``S`` and the dual system.

A model is variationally symmetric with respect to a constant nonsingular
``S`` when, along the states of interest,

    S df/dx(x) = df/dx(x)' S    and    S B = dh/dx(x)'.

The dual variational system then reads

    dz' = df/dx' dz + dh/dx' du,    dy = B' dz

and its transition matrix is ``S Phi S^-1``, so its reachability Gramian is
the congruence ``S W_R S'`` of the primal one.  For ``S = I`` both
Gramians coincide and reduction needs only one of them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .errors import ConfigError, GramianError
from .gramian import (
    DUAL_REACHABILITY, EXACT, GREGORY, Gramian, _exact_pair, _interval, _segment,
    finalize_gramian, quadrature_weights,
)
from .sim import Trajectory, VariationalTrajectory, propagate_blocks
from .system import SystemModel

__all__ = [
    "SymmetryCertificate", "TAU_SYM", "check_variational_symmetry", "default_samples",
    "dual_variational_response", "dual_reachability_gramian", "resolve_S",
]

TAU_SYM = 1e-9
MAX_SAMPLES = 100
_COND_LIMIT = 1e12


def resolve_S(S, n: int) -> np.ndarray:
    """``S`` as an ``(n, n)`` array; the string ``"identity"`` gives ``I``."""
    if isinstance(S, str):
        if S != "identity":
            raise ConfigError(f"S must be a matrix or 'identity', got {S!r}")
        return np.eye(n)
    S = np.array(S, dtype=float, ndmin=2)
    if S.shape != (n, n):
        raise ConfigError(f"S must be {n} x {n}, got {S.shape}")
    if not np.all(np.isfinite(S)):
        raise ConfigError("S has non-finite entries")
    return S


def _condition(S):
    cond = float(np.linalg.cond(S))
    if not np.isfinite(cond) or cond > _COND_LIMIT:
        raise ConfigError(f"S is singular to working precision (condition number {cond:.3e})")
    return cond


def default_samples(base: Trajectory, max_samples: int = MAX_SAMPLES) -> np.ndarray:
    """Up to ``max_samples`` evenly spaced trajectory states plus the origin."""
    X = base.X
    idx = np.unique(np.linspace(0, len(X) - 1, min(max_samples, len(X))).round().astype(int))
    return np.vstack([X[idx], np.zeros((1, X.shape[1]))])


@dataclass(frozen=True, eq=False)
class SymmetryCertificate:
    """Residuals of the constant-``S`` symmetry conditions over sample states.

    ``res_dyn`` is the largest ``||S J - J' S||_F`` and ``res_out`` the
    largest ``||S B - dh/dx'||_F``.  The verdict is positive when at every
    sample both residuals are at most ``tau * (1 + ||J||_F)``.
    """

    S: np.ndarray
    sample_states: np.ndarray
    res_dyn: float
    res_out: float
    verdict: bool
    cond_S: float
    tau: float
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"res_dyn": self.res_dyn, "res_out": self.res_out, "verdict": self.verdict,
                "cond_S": self.cond_S, "tau": self.tau, "samples": int(len(self.sample_states)),
                "notes": list(self.notes)}


def check_variational_symmetry(sys: SystemModel, S, samples: Optional[Sequence] = None,
                               tau: float = TAU_SYM, base: Optional[Trajectory] = None) -> SymmetryCertificate:
    """Certify variational symmetry of ``sys`` with respect to constant ``S``.

    ``samples`` defaults to :func:`default_samples` of ``base``.
    """
    n = sys.n
    S = resolve_S(S, n)
    cond = _condition(S)
    if samples is None:
        if base is None:
            raise ConfigError("need sample states or a base trajectory")
        samples = default_samples(base)
    X = np.array(samples, dtype=float, ndmin=2)
    if X.shape[0] < 1 or X.shape[1] != n:
        raise ConfigError(f"sample states must be a non-empty K x {n} array")
    notes = []
    SB = S @ sys.B
    shape_ok = sys.m == sys.p
    if not shape_ok:
        notes.append(f"S B is {n} x {sys.m} but dh/dx' is {n} x {sys.p}; output condition cannot hold")
    res_dyn = res_out = 0.0
    verdict = shape_ok
    for x in X:
        J = sys.jac_f(x)
        rd = float(np.linalg.norm(S @ J - J.T @ S))
        ro = float(np.linalg.norm(SB - sys.jac_h(x).T)) if shape_ok else float("inf")
        bound = tau * (1.0 + float(np.linalg.norm(J)))
        verdict = verdict and rd <= bound and ro <= bound
        res_dyn = max(res_dyn, rd)
        res_out = max(res_out, ro)
    return SymmetryCertificate(S, X, res_dyn, res_out, bool(verdict), cond, float(tau), notes)


def _require(sys, S, base, certificate, tau):
    if certificate is None:
        certificate = check_variational_symmetry(sys, S, base=base, tau=tau)
    if not certificate.verdict:
        raise GramianError(
            "model is not variationally symmetric for the given S: "
            f"res_dyn = {certificate.res_dyn:.3e}, res_out = {certificate.res_out:.3e}")
    return certificate


def dual_variational_response(sys: SystemModel, S, base: Trajectory, i: int,
                              certificate: Optional[SymmetryCertificate] = None,
                              tau: float = TAU_SYM) -> VariationalTrajectory:
    """Impulse response of output channel ``i`` (0-based) of the dual system.

    The impulse is the jump ``dz(t0+) = dh/dx(x(t0))' e_i`` and the state is
    propagated with ``df/dx'`` along ``base``; the dual output is ``B' dz``.

    Raises
    ------
    GramianError
        If the symmetry certificate for ``S`` is negative.
    """
    _require(sys, S, base, certificate, tau)
    if not 0 <= i < sys.p:
        raise ConfigError(f"output channel {i} out of range 0..{sys.p - 1}")
    dz0 = sys.jac_h(base.X[0])[i].copy()
    dZ = np.empty_like(base.X)
    for k, block in propagate_blocks(sys, base, dz0, 0, base.grid.N, transpose=True):
        dZ[k:k + block.shape[0]] = block
    return VariationalTrajectory(base, dZ, dZ @ sys.B)


def _rel_mismatch(A, B):
    scale = max(float(np.linalg.norm(A)), float(np.linalg.norm(B)))
    return 0.0 if scale == 0.0 else float(np.linalg.norm(A - B)) / scale


def dual_reachability_gramian(sys: SystemModel, S, base: Trajectory, interval=None,
                              certificate: Optional[SymmetryCertificate] = None,
                              tau: float = TAU_SYM, quadrature: str = GREGORY) -> Gramian:
    """Reachability Gramian of the dual variational system on ``interval``.

    Besides the simulated ``W*`` the primal ``W_R`` is computed and both
    congruences ``S W_R S'`` and ``S' W_R S`` are compared with ``W*``; the
    relative mismatches and the better-matching form are stored in
    ``meta``.  (They coincide for symmetric ``S``.)
    """
    cert = _require(sys, S, base, certificate, tau)
    Sm = cert.S
    k1, k2, span = _interval(base, interval)
    n = sys.n
    w, rule = quadrature_weights(k2 - k1 + 1, base.grid.dt, quadrature)
    Wd = np.zeros((n, n))
    if k2 > k1:
        seg = _segment(base, k1, k2)
        Z0 = sys.jac_h(seg.X[0]).T
        for k, Z in propagate_blocks(sys, seg, Z0, 0, seg.grid.N, transpose=True):
            Wd += np.einsum("k,kip,kjp->ij", w[k:k + Z.shape[0]], Z, Z)
    WR, _, _ = _exact_pair(sys, base, k1, k2, True, False, quadrature=quadrature)
    left = _rel_mismatch(Wd, Sm @ WR @ Sm.T)
    right = _rel_mismatch(Wd, Sm.T @ WR @ Sm)
    meta = {"S_WR_St_mismatch": left, "St_WR_S_mismatch": right,
            "closed_form": "S WR S'" if left <= right else "S' WR S",
            "certificate": cert.to_dict()}
    return finalize_gramian(Wd, DUAL_REACHABILITY, span, EXACT, base.base_id, meta=meta, quadrature=rule)
