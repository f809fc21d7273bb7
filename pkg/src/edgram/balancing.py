"""Balancing transforms, eigen-truncation and Galerkin reduced models.

Given reachability and observability Gramians ``WR`` and ``WO`` the
square-root method finds ``T`` with

    T WR T' = inv(T)' WO inv(T) = diag(sigma).

The reduced model keeps the first ``k`` balanced coordinates:

    zdot = W f(V z) + W B u,    y = h(V z),    z(t0) = W x0

with ``W = T[:k, :]`` and ``V = inv(T)[:, :k]``.  When only one Gramian is
available (variationally symmetric systems with ``S = I``) the orthonormal
eigenbasis of that Gramian plays the role of ``inv(T)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .errors import ConfigError, DivergenceError, EvaluationError, GramianError, RankError
from .gramian import Gramian, _fix_signs
from .sim import InputSignal, TimeGrid, Trajectory, integrate
from .system import ANALYTIC, SystemModel

__all__ = [
    "BalancingResult", "EigenBasis", "ReducedModel", "ErrorReport", "TAU_CLAMP",
    "balance", "eigen_truncate_basis", "truncate", "compare_outputs", "sqrt_factor",
]

TAU_CLAMP = 1e-12


def _matrix(W, name):
    if isinstance(W, Gramian):
        W = W.W
    W = np.asarray(W, dtype=float)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise ConfigError(f"{name} must be a square matrix, got shape {W.shape}")
    if not np.all(np.isfinite(W)):
        raise GramianError(f"{name} has non-finite entries")
    return 0.5 * (W + W.T)


def sqrt_factor(W, tau: float = TAU_CLAMP):
    """Square-root factor ``L`` with ``L L' ~ W`` from a clamped eigendecomposition.

    Eigenvalues below ``tau * lambda_max`` are raised to that floor.
    Returns ``(L, rank)`` where ``rank`` counts the eigenvalues that were
    not clamped.
    """
    lam, V = np.linalg.eigh(W)
    top = lam[-1]
    if not top > 0:
        raise GramianError("Gramian has no positive eigenvalue")
    floor = tau * top
    rank = int(np.count_nonzero(lam > floor))
    return V * np.sqrt(np.maximum(lam, floor)), rank


@dataclass(frozen=True, eq=False)
class BalancingResult:
    """Square-root balancing transform.

    Attributes
    ----------
    T, Tinv : ndarray, shape (n, n)
        Balancing transform ``z = T x`` and its inverse.
    sigma : ndarray, shape (n,)
        Balanced Gramian diagonal, descending.
    residuals : dict
        Frobenius norms of the off-diagonal parts and of the diagonal
        mismatch of both balanced Gramians, and of ``T Tinv - I``.
    effective_rank : int
        Truncation orders up to this value are supported.
    """

    T: np.ndarray
    Tinv: np.ndarray
    sigma: np.ndarray
    residuals: dict
    effective_rank: int
    kind: str = "balanced"

    @property
    def n(self) -> int:
        return self.T.shape[0]

    def to_dict(self) -> dict:
        return {"kind": self.kind, "sigma": self.sigma.tolist(),
                "effective_rank": self.effective_rank, "residuals": dict(self.residuals)}


@dataclass(frozen=True, eq=False)
class EigenBasis:
    """Orthonormal eigenbasis of a single Gramian, eigenvalues descending."""

    basis: np.ndarray
    eigenvalues: np.ndarray
    kind: str = "eigen"

    @property
    def n(self) -> int:
        return self.basis.shape[0]

    @property
    def T(self) -> np.ndarray:
        return self.basis.T

    @property
    def Tinv(self) -> np.ndarray:
        return self.basis

    @property
    def effective_rank(self) -> int:
        # an orthonormal basis can be truncated anywhere
        return self.n

    def to_dict(self) -> dict:
        return {"kind": self.kind, "eigenvalues": self.eigenvalues.tolist(),
                "effective_rank": self.effective_rank}


def _offdiag(M):
    return float(np.linalg.norm(M - np.diag(np.diag(M))))


def balance(WR: Union[Gramian, np.ndarray], WO: Union[Gramian, np.ndarray],
            tau: float = TAU_CLAMP) -> BalancingResult:
    """Square-root balancing of the pair ``(WR, WO)``.

    ``WR = L_R L_R'`` and ``WO = L_O L_O'`` are factored through symmetric
    eigendecompositions (not Cholesky, which fails on the near-singular
    Gramians that make reduction worthwhile).  With ``L_O' L_R = U S V'``,

        T = S^-1/2 U' L_O',    inv(T) = L_R V S^-1/2.

    Singular vector pairs are signed so that the largest-magnitude entry of
    every column of ``inv(T)`` is positive.

    Examples
    --------
    >>> r = balance([[4.0]], [[9.0]])
    >>> float(r.sigma[0]), round(float(r.T[0, 0]) ** 2, 12)
    (6.0, 1.5)
    """
    R = _matrix(WR, "WR")
    O = _matrix(WO, "WO")
    if R.shape != O.shape:
        raise ConfigError(f"Gramian shapes differ: {R.shape} vs {O.shape}")
    LR, rank_r = sqrt_factor(R, tau)
    LO, rank_o = sqrt_factor(O, tau)
    U, s, Vt = np.linalg.svd(LO.T @ LR)
    V = Vt.T
    Tinv = LR @ V / np.sqrt(s)
    signs = np.sign(Tinv[np.argmax(np.abs(Tinv), axis=0), np.arange(Tinv.shape[1])])
    signs[signs == 0] = 1.0
    Tinv = Tinv * signs
    U = U * signs
    T = (U / np.sqrt(s)).T @ LO.T
    rank = min(rank_r, rank_o, int(np.count_nonzero(s > tau * s[0])))

    D = np.diag(s)
    BR = T @ R @ T.T
    BO = Tinv.T @ O @ Tinv
    residuals = {
        "reachability_offdiag": _offdiag(BR),
        "observability_offdiag": _offdiag(BO),
        "reachability_diag_error": float(np.linalg.norm(np.diag(BR) - s)),
        "observability_diag_error": float(np.linalg.norm(np.diag(BO) - s)),
        "reachability_error": float(np.linalg.norm(BR - D)),
        "observability_error": float(np.linalg.norm(BO - D)),
        "inverse_error": float(np.linalg.norm(T @ Tinv - np.eye(len(s)))),
    }
    return BalancingResult(T, Tinv, s, residuals, rank)


def eigen_truncate_basis(W: Union[Gramian, np.ndarray]) -> EigenBasis:
    """Eigenvectors of ``W`` by descending eigenvalue, sign-normalised.

    Examples
    --------
    >>> b = eigen_truncate_basis(np.diag([3.0, 1.0, 2.0]))
    >>> b.eigenvalues.tolist(), np.argmax(b.basis, axis=0).tolist()
    ([3.0, 2.0, 1.0], [0, 2, 1])
    """
    M = _matrix(W, "W")
    lam, V = np.linalg.eigh(M)
    order = np.argsort(lam, kind="stable")[::-1]
    return EigenBasis(_fix_signs(V[:, order]), lam[order])


@dataclass(frozen=True, eq=False)
class ReducedModel:
    """Galerkin projection of ``parent`` onto the leading ``k`` coordinates.

    ``system`` is an ordinary :class:`SystemModel` in the reduced state
    ``z`` and can be simulated with the usual engine.
    """

    parent: SystemModel
    T: np.ndarray
    Tinv: np.ndarray
    k: int
    system: SystemModel
    source: str = "balanced"
    meta: dict = field(default_factory=dict, repr=False)

    @property
    def W(self) -> np.ndarray:
        """Projection ``P T`` onto the reduced coordinates, ``(k, n)``."""
        return self.T[:self.k]

    @property
    def V(self) -> np.ndarray:
        """Embedding ``inv(T) E`` back into the full state, ``(n, k)``."""
        return self.Tinv[:, :self.k]

    def project(self, x) -> np.ndarray:
        """Reduced state ``P T x``."""
        return self.W @ np.asarray(x, dtype=float)

    def lift(self, z) -> np.ndarray:
        """Full state ``inv(T) E z``; rows of a ``(K, k)`` array are lifted."""
        return np.asarray(z, dtype=float) @ self.V.T

    def simulate(self, x0, u: Optional[InputSignal], grid: TimeGrid, scheme: str = "rk4") -> Trajectory:
        """Simulate from the projected full-order initial state ``x0``."""
        return integrate(self.system, self.project(x0), u, grid, scheme)


def truncate(sys: SystemModel, basis_or_result: Union[BalancingResult, EigenBasis], k: int) -> ReducedModel:
    """Reduced model of order ``k`` from a balancing or an eigenbasis.

    Raises
    ------
    ConfigError
        If ``k`` is not in ``1..n``.
    RankError
        If ``k`` exceeds the effective rank of a balancing result.
    """
    res = basis_or_result
    n = sys.n
    if res.n != n:
        raise ConfigError(f"transform is {res.n} x {res.n} but the model has n={n}")
    k = int(k)
    if not 1 <= k <= n:
        raise ConfigError(f"reduced order k={k} outside 1..{n}")
    if k > res.effective_rank:
        raise RankError(f"k={k} exceeds the effective rank {res.effective_rank} of the balancing")
    T = np.array(res.T, dtype=float)
    Tinv = np.array(res.Tinv, dtype=float)
    W = T[:k].copy()
    V = Tinv[:, :k].copy()
    W.flags.writeable = False
    V.flags.writeable = False
    f, h = sys.f, sys.h

    def f_r(z):
        return W @ f(V @ z)

    def h_r(z):
        return h(V @ z)

    def jac_f_r(z):
        return W @ sys.jac_f(V @ z) @ V

    def jac_h_r(z):
        return sys.jac_h(V @ z) @ V

    reduced = SystemModel(f=f_r, B=W @ sys.B, h=h_r, p=sys.p, jac_f_fn=jac_f_r, jac_h_fn=jac_h_r,
                          jacobian_mode=ANALYTIC, fd_step=sys.fd_step,
                          name=f"{sys.name}|{res.kind}{k}",
                          meta={"parent": sys.name, "k": k, "source": res.kind})
    return ReducedModel(sys, T, Tinv, k, reduced, res.kind)


@dataclass(frozen=True)
class ErrorReport:
    """Output mismatch between a full and a reduced simulation.

    ``rel_l2`` is ``||y - y_r|| / ||y||`` over all grid samples and
    channels.  When ``||y|| = 0`` the ratio is reported as 0 if the error is
    also 0 and as ``inf`` otherwise, with ``degenerate`` set.  If the
    reduced simulation diverged the error fields are ``None`` and
    ``diverged`` carries the step.
    """

    rel_l2: Optional[float]
    max_abs: Optional[float]
    argmax_t: Optional[float]
    per_channel: list
    degenerate: bool = False
    diverged: bool = False
    divergence_step: Optional[int] = None
    message: str = ""

    def to_dict(self) -> dict:
        return {"rel_l2": self.rel_l2, "max_abs": self.max_abs, "argmax_t": self.argmax_t,
                "per_channel": self.per_channel, "degenerate": self.degenerate,
                "diverged": self.diverged, "divergence_step": self.divergence_step,
                "message": self.message}


def _rel(err, ref):
    ne, nr = float(np.linalg.norm(err)), float(np.linalg.norm(ref))
    if nr == 0.0:
        return (0.0 if ne == 0.0 else float("inf")), True
    return ne / nr, False


def output_error(t, Y, Yr) -> ErrorReport:
    """Error report for two output arrays sampled at times ``t``."""
    Y = np.asarray(Y, dtype=float)
    Yr = np.asarray(Yr, dtype=float)
    if Y.shape != Yr.shape:
        raise ConfigError(f"output arrays differ in shape: {Y.shape} vs {Yr.shape}")
    if len(t) != Y.shape[0]:
        raise ConfigError("time column and outputs differ in length")
    E = Yr - Y
    absE = np.abs(E)
    rel, degenerate = _rel(E, Y)
    kmax = np.unravel_index(int(np.argmax(absE)), absE.shape)[0] if absE.size else 0
    channels = []
    for j in range(Y.shape[1]):
        r, d = _rel(E[:, j], Y[:, j])
        kj = int(np.argmax(absE[:, j]))
        channels.append({"channel": j, "rel_l2": r, "max_abs": float(absE[kj, j]),
                         "argmax_t": float(t[kj]), "degenerate": d})
    return ErrorReport(rel, float(absE.max()) if absE.size else 0.0, float(t[kmax]), channels, degenerate)


def compare_outputs(full: Trajectory, reduced: ReducedModel, u: Optional[InputSignal] = None,
                    grid: Optional[TimeGrid] = None) -> ErrorReport:
    """Simulate ``reduced`` like ``full`` and compare the outputs.

    The reduced model starts from ``W x0`` and uses the same input, grid and
    scheme as ``full`` unless ``u`` or ``grid`` are given.  Divergence of the
    reduced simulation is reported, not raised.
    """
    u = full.u if u is None else u
    grid = full.grid if grid is None else grid
    if grid.N != full.grid.N or not np.allclose(grid.times, full.grid.times, rtol=0, atol=1e-12):
        raise ConfigError("reduced simulation grid must match the full trajectory")
    try:
        red = reduced.simulate(full.X[0], u, grid, full.scheme)
    except (DivergenceError, EvaluationError) as exc:
        step = getattr(exc, "step", None)
        return ErrorReport(None, None, None, [], diverged=True, divergence_step=step, message=str(exc))
    return output_error(full.t, full.Y, red.Y)
