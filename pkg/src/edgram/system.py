"""Input-affine nonlinear systems with a constant input matrix.

    xdot = f(x) + B u,    y = h(x)

The input matrix is copied and frozen at construction: the impulse
response of the variational system only equals ``Phi(t, t0) B`` when
``B`` does not depend on the state.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError, EvaluationError

__all__ = ["SystemModel", "ANALYTIC", "FINITE_DIFFERENCE"]

ANALYTIC = "analytic"
FINITE_DIFFERENCE = "finite_difference"

VectorMap = Callable[[np.ndarray], np.ndarray]


def _first_bad(v):
    if np.isfinite(v).all():
        return None
    return int(np.flatnonzero(~np.isfinite(v))[0])


@dataclass(frozen=True, eq=False)
class SystemModel:
    """Dynamical system ``xdot = f(x) + B u``, ``y = h(x)``.

    Parameters
    ----------
    f : callable
        Drift, maps an ``(n,)`` state to an ``(n,)`` derivative.
    B : array_like, shape (n, m)
        Constant input matrix.
    h : callable
        Output map, ``(n,)`` to ``(p,)``.
    p : int
        Output dimension.
    jac_f, jac_h : callable, optional
        Analytic Jacobians.  When both are supplied the model defaults to
        ``jacobian_mode="analytic"``, otherwise central differences are used.
    fd_step : float
        Relative central-difference step; coordinate ``j`` is perturbed by
        ``fd_step * (1 + |x_j|)``.
    name : str
        Identifier recorded in trajectories and manifests.
    """

    f: VectorMap
    B: np.ndarray
    h: VectorMap
    p: int
    jac_f_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None
    jac_h_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None
    jacobian_mode: Optional[str] = None
    fd_step: float = 1e-6
    name: str = "model"
    meta: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        B = np.array(self.B, dtype=float, copy=True)
        if B.ndim == 1:
            B = B.reshape(-1, 1)
        if B.ndim != 2 or B.shape[0] < 1 or B.shape[1] < 1:
            raise ConfigError(f"B must be a non-empty n x m matrix, got shape {B.shape}")
        if not np.all(np.isfinite(B)):
            raise ConfigError("B has non-finite entries")
        B.flags.writeable = False
        object.__setattr__(self, "B", B)

        if int(self.p) < 1:
            raise ConfigError("output dimension p must be >= 1")
        object.__setattr__(self, "p", int(self.p))

        mode = self.jacobian_mode
        if mode is None:
            have_both = self.jac_f_fn is not None and self.jac_h_fn is not None
            mode = ANALYTIC if have_both else FINITE_DIFFERENCE
        if mode not in (ANALYTIC, FINITE_DIFFERENCE):
            raise ConfigError(f"unknown jacobian_mode {mode!r}")
        if mode == ANALYTIC and (self.jac_f_fn is None or self.jac_h_fn is None):
            raise ConfigError("analytic jacobian_mode needs both jac_f and jac_h")
        object.__setattr__(self, "jacobian_mode", mode)

        if not self.fd_step > 0:
            raise ConfigError("fd_step must be positive")

    @property
    def n(self) -> int:
        return self.B.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    def with_mode(self, jacobian_mode: str, fd_step: Optional[float] = None) -> "SystemModel":
        """Copy of the model using a different Jacobian provider."""
        return SystemModel(
            f=self.f, B=self.B, h=self.h, p=self.p,
            jac_f_fn=self.jac_f_fn, jac_h_fn=self.jac_h_fn,
            jacobian_mode=jacobian_mode,
            fd_step=self.fd_step if fd_step is None else fd_step,
            name=self.name, meta=self.meta,
        )

    def _check_state(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != self.B.shape[:1]:
            raise ConfigError(f"{self.name}: state must have shape ({self.n},), got {x.shape}")
        return x

    def eval_f(self, x) -> np.ndarray:
        """Drift ``f(x)`` without the input term."""
        x = self._check_state(x)
        with np.errstate(all="ignore"):
            v = np.asarray(self.f(x), dtype=float)
        if v.shape != (self.n,):
            raise ConfigError(f"{self.name}: f returned shape {v.shape}, expected ({self.n},)")
        i = _first_bad(v)
        if i is not None:
            raise EvaluationError(f"{self.name}: f(x) is not finite", index=i)
        return v

    def eval_h(self, x) -> np.ndarray:
        x = self._check_state(x)
        with np.errstate(all="ignore"):
            v = np.atleast_1d(np.asarray(self.h(x), dtype=float))
        if v.shape != (self.p,):
            raise ConfigError(f"{self.name}: h returned shape {v.shape}, expected ({self.p},)")
        i = _first_bad(v)
        if i is not None:
            raise EvaluationError(f"{self.name}: h(x) is not finite", index=i)
        return v

    def _central_difference(self, fun, x, rows):
        n = self.n
        J = np.empty((rows, n))
        steps = self.fd_step * (1.0 + np.abs(x))
        xp = x.copy()
        for j in range(n):
            hj = steps[j]
            xp[j] = x[j] + hj
            fp = np.array(fun(xp), dtype=float).reshape(rows)  # copy: fun may return a view of xp
            xp[j] = x[j] - hj
            fm = np.array(fun(xp), dtype=float).reshape(rows)
            xp[j] = x[j]
            # divide by the realised step, not the nominal one
            J[:, j] = (fp - fm) / ((x[j] + hj) - (x[j] - hj))
        return J

    def jac_f(self, x) -> np.ndarray:
        """``df/dx`` at ``x`` as an ``(n, n)`` array."""
        x = self._check_state(x)
        if self.jacobian_mode == ANALYTIC:
            J = np.array(self.jac_f_fn(x), dtype=float)
        else:
            with np.errstate(all="ignore"):
                J = self._central_difference(self.f, x, self.n)
        if J.shape != (self.n, self.n):
            raise ConfigError(f"{self.name}: jac_f has shape {J.shape}")
        i = _first_bad(J.ravel())
        if i is not None:
            raise EvaluationError(f"{self.name}: jac_f(x) is not finite", index=i // self.n)
        return J

    def jac_h(self, x) -> np.ndarray:
        """``dh/dx`` at ``x`` as a ``(p, n)`` array."""
        x = self._check_state(x)
        if self.jacobian_mode == ANALYTIC:
            J = np.array(self.jac_h_fn(x), dtype=float).reshape(self.p, self.n)
        else:
            with np.errstate(all="ignore"):
                J = self._central_difference(self.h, x, self.p)
        i = _first_bad(J.ravel())
        if i is not None:
            raise EvaluationError(f"{self.name}: jac_h(x) is not finite", index=i // self.n)
        return J

    def jac_f_many(self, X) -> np.ndarray:
        """Stack of ``df/dx`` at the rows of ``X``, shape ``(K, n, n)``."""
        X = np.asarray(X, dtype=float)
        out = np.empty((X.shape[0], self.n, self.n))
        if self.jacobian_mode == ANALYTIC:
            fn = self.jac_f_fn
            for i in range(X.shape[0]):
                out[i] = fn(X[i])
        else:
            with np.errstate(all="ignore"):
                for i in range(X.shape[0]):
                    out[i] = self._central_difference(self.f, X[i], self.n)
        if not np.isfinite(out).all():
            bad = int(np.flatnonzero(~np.isfinite(out).reshape(len(X), -1).all(axis=1))[0])
            self.jac_f(X[bad])  # raises with the offending component
            raise EvaluationError(f"{self.name}: jac_f is not finite at sample {bad}")
        return out

    def jac_h_many(self, X) -> np.ndarray:
        """Stack of ``dh/dx`` at the rows of ``X``, shape ``(K, p, n)``."""
        X = np.asarray(X, dtype=float)
        out = np.empty((X.shape[0], self.p, self.n))
        if self.jacobian_mode == ANALYTIC:
            fn = self.jac_h_fn
            for i in range(X.shape[0]):
                out[i] = np.reshape(fn(X[i]), (self.p, self.n))
        else:
            with np.errstate(all="ignore"):
                for i in range(X.shape[0]):
                    out[i] = self._central_difference(self.h, X[i], self.p)
        if not np.isfinite(out).all():
            bad = int(np.flatnonzero(~np.isfinite(out).reshape(len(X), -1).all(axis=1))[0])
            self.jac_h(X[bad])  # raises with the offending component
            raise EvaluationError(f"{self.name}: jac_h is not finite at sample {bad}")
        return out
