"""Fixed-step simulation of the nonlinear system and its variational system.

Two one-step schemes are available, forward Euler and classical RK4.  The
variational system ``d(dx)/dt = A(t) dx + B du`` is propagated along a
stored base trajectory with ``A(t_k) = df/dx(X[k])``; the RK4 half-step
matrix is evaluated at the midpoint of consecutive base states.

With Euler the propagated variation is exactly the derivative of the
discrete flow map ``x -> x + dt (f(x) + B u)``, which is what makes
finite-difference (Frechet) approximations converge to it without a
scheme-mismatch floor.
"""

from __future__ import annotations

import contextvars
import hashlib
import math
import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ConfigError, DivergenceError
from .system import SystemModel

__all__ = [
    "TimeGrid", "InputSignal", "Trajectory", "VariationalTrajectory",
    "FundamentalMatrix", "integrate", "integrate_variational",
    "fundamental_matrix", "propagate", "propagate_blocks", "count_simulations",
    "DIVERGENCE_LIMIT", "SCHEMES",
]

SCHEMES = ("euler", "rk4")
DIVERGENCE_LIMIT = 1e12
CHUNK = 256


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t_k = t0 + k dt``, ``k = 0..N``."""

    t0: float
    tf: float
    dt: float
    N: int = field(init=False)

    def __post_init__(self):
        t0, tf, dt = float(self.t0), float(self.tf), float(self.dt)
        if not (math.isfinite(t0) and math.isfinite(tf) and math.isfinite(dt)):
            raise ConfigError("--t0, --tf and --dt must be finite")
        if not tf > t0:
            raise ConfigError(f"--tf ({tf}) must exceed --t0 ({t0})")
        if not dt > 0:
            raise ConfigError(f"--dt ({dt}) must be positive")
        span = tf - t0
        N = int(round(span / dt))
        if N < 1 or abs(N * dt - span) > 1e-9 * span:
            raise ConfigError(f"--dt {dt} does not divide --tf - --t0 = {span}")
        object.__setattr__(self, "t0", t0)
        object.__setattr__(self, "tf", tf)
        object.__setattr__(self, "dt", dt)
        object.__setattr__(self, "N", N)

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.N + 1)

    @property
    def midpoints(self) -> np.ndarray:
        return self.t0 + self.dt * (np.arange(self.N) + 0.5)

    def index(self, t: float) -> int:
        """Grid index of time ``t``; raises if ``t`` is not a grid point."""
        k = int(round((t - self.t0) / self.dt))
        if k < 0 or k > self.N or abs(self.t0 + k * self.dt - t) > 1e-9 * max(1.0, abs(t)):
            raise ConfigError(f"time {t} is not a point of the grid [{self.t0}, {self.tf}] / {self.dt}")
        return k

    def interval_indices(self, interval=None):
        if interval is None:
            return 0, self.N
        t1, t2 = interval
        k1, k2 = self.index(t1), self.index(t2)
        if k2 < k1:
            raise ConfigError(f"interval end {t2} precedes start {t1}")
        return k1, k2

    def sub(self, k1: int, k2: int) -> "TimeGrid":
        return TimeGrid(self.t0 + k1 * self.dt, self.t0 + k2 * self.dt, self.dt)


class InputSignal:
    """Input ``u(t)`` that can be sampled at arbitrary times.

    Build one with :meth:`zero`, :meth:`expression`, :meth:`function` or
    :meth:`sampled`.  ``sample(t)`` returns a ``(len(t), m)`` array.
    """

    def __init__(self, kind, m, sampler, description=None):
        if kind not in ("zero", "expression_of_time", "sampled_zoh"):
            raise ConfigError(f"unknown input kind {kind!r}")
        self.kind = kind
        self.m = int(m)
        self._sampler = sampler
        self.description = description

    def __repr__(self):
        return f"InputSignal({self.kind!r}, m={self.m}, {self.description!r})"

    @classmethod
    def zero(cls, m: int = 1) -> "InputSignal":
        return cls("zero", m, lambda t: np.zeros((np.size(t), m)), "zero")

    @classmethod
    def expression(cls, texts) -> "InputSignal":
        """Signal given by expressions of ``t``, one per input channel."""
        from .expr import compile_signal, parse

        if isinstance(texts, str):
            texts = [texts]
        exprs = [parse(s, allow_state=False) for s in texts]
        return cls("expression_of_time", len(exprs), compile_signal(exprs), list(texts))

    @classmethod
    def function(cls, fn: Callable[[float], Sequence[float]], m: int = 1) -> "InputSignal":
        """Signal from a Python callable ``t -> u(t)`` (scalar ``t``)."""
        def sampler(t):
            return np.array([np.atleast_1d(fn(float(tk))) for tk in np.atleast_1d(t)],
                            dtype=float).reshape(-1, m)
        return cls("expression_of_time", m, sampler, getattr(fn, "__name__", "function"))

    @classmethod
    def sampled(cls, grid: TimeGrid, U) -> "InputSignal":
        """Zero-order hold through samples ``U[k]`` taken at ``grid.times[k]``."""
        U = np.asarray(U, dtype=float)
        if U.ndim == 1:
            U = U.reshape(-1, 1)
        if U.shape[0] != grid.N + 1:
            raise ConfigError(f"sampled input needs {grid.N + 1} rows, got {U.shape[0]}")
        U = U.copy()
        U.flags.writeable = False

        def sampler(t):
            t = np.atleast_1d(np.asarray(t, dtype=float))
            k = np.floor((t - grid.t0) / grid.dt + 1e-9).astype(int)
            return U[np.clip(k, 0, grid.N)]
        return cls("sampled_zoh", U.shape[1], sampler, "sampled")

    def sample(self, t) -> np.ndarray:
        out = np.asarray(self._sampler(np.atleast_1d(np.asarray(t, dtype=float))), dtype=float)
        return out.reshape(-1, self.m)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """State, input and output snapshots on a grid."""

    grid: TimeGrid
    X: np.ndarray
    U: np.ndarray
    Y: np.ndarray
    model_id: str = ""
    scheme: str = "rk4"
    u: Optional[InputSignal] = field(default=None, repr=False)

    @property
    def t(self) -> np.ndarray:
        return self.grid.times

    @property
    def x0(self) -> np.ndarray:
        return self.X[0]

    @property
    def base_id(self) -> str:
        digest = hashlib.sha256()
        digest.update(self.model_id.encode())
        digest.update(np.ascontiguousarray(self.X).tobytes())
        return digest.hexdigest()[:16]


@dataclass(frozen=True, eq=False)
class VariationalTrajectory:
    base: Trajectory = field(repr=False)
    dX: np.ndarray
    dY: np.ndarray
    approximate: bool = False


@dataclass(frozen=True, eq=False)
class FundamentalMatrix:
    """``Phi[k]`` approximates ``d phi_{t_k - t_start}(x_start, u) / dx``."""

    base: Trajectory = field(repr=False)
    Phi: np.ndarray
    start: int = 0


# -- instrumentation ---------------------------------------------------------

class SimulationCounter:
    """Counts nonlinear simulations performed inside :func:`count_simulations`."""

    def __init__(self):
        self.count = 0
        self._lock = threading.Lock()

    def bump(self):
        with self._lock:
            self.count += 1


_ACTIVE_COUNTER = contextvars.ContextVar("edgram_simulation_counter", default=None)


@contextmanager
def count_simulations():
    counter = SimulationCounter()
    token = _ACTIVE_COUNTER.set(counter)
    try:
        yield counter
    finally:
        _ACTIVE_COUNTER.reset(token)


# -- nonlinear integration ---------------------------------------------------

def _check_scheme(scheme):
    if scheme not in SCHEMES:
        raise ConfigError(f"--scheme must be one of {SCHEMES}, got {scheme!r}")


def integrate(sys: SystemModel, x0, u: Optional[InputSignal], grid: TimeGrid,
              scheme: str = "rk4") -> Trajectory:
    """Simulate ``xdot = f(x) + B u(t)`` from ``x0`` on ``grid``.

    Raises
    ------
    DivergenceError
        When a state entry becomes non-finite or exceeds ``1e12`` in
        magnitude; ``step`` is the first offending grid index.
    """
    _check_scheme(scheme)
    x = np.array(x0, dtype=float).reshape(-1)
    if x.shape != (sys.n,):
        raise ConfigError(f"x0 must have {sys.n} entries, got {x.size}")
    if u is None:
        u = InputSignal.zero(sys.m)
    if u.m != sys.m:
        raise ConfigError(f"input has {u.m} channels, model {sys.name} expects {sys.m}")

    counter = _ACTIVE_COUNTER.get()
    if counter is not None:
        counter.bump()

    N, dt = grid.N, grid.dt
    U = u.sample(grid.times)
    BU = U @ sys.B.T
    f = sys.f
    X = np.empty((N + 1, sys.n))
    X[0] = x
    if not np.all(np.abs(x) <= DIVERGENCE_LIMIT):
        raise DivergenceError(0, grid.t0)

    with np.errstate(all="ignore"):
        if scheme == "euler":
            for k in range(N):
                x = x + dt * (f(x) + BU[k])
                X[k + 1] = x
                if k % CHUNK == CHUNK - 1:
                    _check_states(X, k + 2 - CHUNK, k + 2, grid)
        else:
            BM = u.sample(grid.midpoints) @ sys.B.T
            h2, h6 = 0.5 * dt, dt / 6.0
            for k in range(N):
                k1 = f(x) + BU[k]
                k2 = f(x + h2 * k1) + BM[k]
                k3 = f(x + h2 * k2) + BM[k]
                k4 = f(x + dt * k3) + BU[k + 1]
                x = x + h6 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
                X[k + 1] = x
                if k % CHUNK == CHUNK - 1:
                    _check_states(X, k + 2 - CHUNK, k + 2, grid)
        _check_states(X, N + 1 - N % CHUNK, N + 1, grid)

    return Trajectory(grid, X, U, _outputs(sys, X), model_id=sys.name, scheme=scheme, u=u)


def _check_states(X, a, b, grid):
    """Raise at the first row of ``X[a:b]`` that is non-finite or too large.

    Non-finite values propagate, so checking in blocks finds the same first
    offending step as checking after every step.
    """
    bad = _first_divergent(X[a:b])
    if bad is not None:
        raise DivergenceError(a + bad, grid.t0 + (a + bad) * grid.dt)


def _outputs(sys, X):
    h = sys.h
    Y = np.empty((X.shape[0], sys.p))
    with np.errstate(all="ignore"):
        for k in range(X.shape[0]):
            Y[k] = h(X[k])
    if not np.isfinite(Y).all():
        k = int(np.flatnonzero(~np.isfinite(Y).all(axis=1))[0])
        sys.eval_h(X[k])  # raises with the offending component
    return Y


# -- variational propagation -------------------------------------------------

_SMALL_N = 24


def _linearization_block(sys, X, c0, c1, rk4, transpose):
    """Jacobians at ``X[c0..c1]`` and, for RK4, at the midpoints in between."""
    A = sys.jac_f_many(X[c0:c1 + 1])
    Am = sys.jac_f_many(0.5 * (X[c0:c1] + X[c0 + 1:c1 + 1])) if rk4 else None
    if transpose:
        A = A.transpose(0, 2, 1)
        Am = Am.transpose(0, 2, 1) if rk4 else None
    return A, Am


def _step_matrices(A, Am, dt, rk4):
    """One-step transition matrices ``R_k`` with ``M_{k+1} = R_k M_k``."""
    n = A.shape[1]
    A0, A1 = A[:-1], A[1:]
    eye = np.eye(n)
    if not rk4:
        return eye + dt * A0
    h2 = 0.5 * dt
    P2 = Am + h2 * (Am @ A0)
    P3 = Am + h2 * (Am @ P2)
    P4 = A1 + dt * (A1 @ P3)
    return eye + (dt / 6.0) * (A0 + 2.0 * P2 + 2.0 * P3 + P4)


def _first_divergent(block):
    flat = np.abs(block.reshape(block.shape[0], -1)).max(axis=1)
    bad = np.flatnonzero(~(flat <= DIVERGENCE_LIMIT))
    return int(bad[0]) if bad.size else None


def propagate_blocks(sys: SystemModel, base: Trajectory, M0, k1: int = 0, k2: Optional[int] = None,
                     scheme: Optional[str] = None, transpose: bool = False, chunk: int = CHUNK):
    """Propagate ``Mdot = A(t) M`` along ``base`` in blocks of grid steps.

    Yields ``(k, block)`` where ``block[j]`` is ``M`` at grid index ``k + j``.
    The first block is ``M0`` alone at ``k1``.  ``transpose=True`` uses
    ``A(t)^T`` instead of ``A(t)``.
    """
    scheme = scheme or base.scheme
    _check_scheme(scheme)
    rk4 = scheme == "rk4"
    X = base.X
    if k2 is None:
        k2 = base.grid.N
    dt = base.grid.dt
    M = np.array(M0, dtype=float)
    n = sys.n
    r = 1 if M.ndim == 1 else M.shape[1]
    via_matrices = n <= _SMALL_N or r >= n
    yield k1, M[None].copy()
    h2, h6 = 0.5 * dt, dt / 6.0
    with np.errstate(all="ignore"):
        for c0 in range(k1, k2, chunk):
            c1 = min(c0 + chunk, k2)
            A, Am = _linearization_block(sys, X, c0, c1, rk4, transpose)
            out = np.empty((c1 - c0,) + M.shape)
            if via_matrices:
                R = _step_matrices(A, Am, dt, rk4)
                for j in range(c1 - c0):
                    M = R[j] @ M
                    out[j] = M
            else:
                for j in range(c1 - c0):
                    if rk4:
                        q1 = A[j] @ M
                        q2 = Am[j] @ (M + h2 * q1)
                        q3 = Am[j] @ (M + h2 * q2)
                        q4 = A[j + 1] @ (M + dt * q3)
                        M = M + h6 * (q1 + 2.0 * q2 + 2.0 * q3 + q4)
                    else:
                        M = M + dt * (A[j] @ M)
                    out[j] = M
            bad = _first_divergent(out)
            if bad is not None:
                step = c0 + 1 + bad
                raise DivergenceError(step, base.grid.t0 + step * dt)
            yield c0 + 1, out


def propagate(sys: SystemModel, base: Trajectory, M0, k1: int = 0, k2: Optional[int] = None,
              scheme: Optional[str] = None, transpose: bool = False):
    """Propagate ``Mdot = A(t) M`` from grid index ``k1`` to ``k2``.

    A generator yielding ``(k, M_k)`` for ``k = k1 .. k2``; ``M0`` may be a
    vector or an ``n x r`` block.
    """
    for k, block in propagate_blocks(sys, base, M0, k1, k2, scheme, transpose):
        for j in range(block.shape[0]):
            yield k + j, block[j]


def integrate_variational(sys: SystemModel, base: Trajectory, dx0, du: Optional[InputSignal] = None,
                          scheme: Optional[str] = None) -> VariationalTrajectory:
    """Solve the variational system along ``base`` from ``dx0`` with input ``du``."""
    scheme = scheme or base.scheme
    _check_scheme(scheme)
    grid = base.grid
    N, dt = grid.N, grid.dt
    dx = np.array(dx0, dtype=float).reshape(-1)
    if dx.shape != (sys.n,):
        raise ConfigError(f"dx0 must have {sys.n} entries")
    dX = np.empty((N + 1, sys.n))
    dX[0] = dx
    if du is None or du.kind == "zero":
        for k, block in propagate_blocks(sys, base, dx, 0, N, scheme):
            dX[k:k + block.shape[0]] = block
    else:
        if du.m != sys.m:
            raise ConfigError(f"du has {du.m} channels, model expects {sys.m}")
        rk4 = scheme == "rk4"
        BU = du.sample(grid.times) @ sys.B.T
        BM = du.sample(grid.midpoints) @ sys.B.T if rk4 else None
        h2, h6 = 0.5 * dt, dt / 6.0
        with np.errstate(all="ignore"):
            for c0 in range(0, N, CHUNK):
                c1 = min(c0 + CHUNK, N)
                A, Am = _linearization_block(sys, base.X, c0, c1, rk4, False)
                for j in range(c1 - c0):
                    k = c0 + j
                    if rk4:
                        q1 = A[j] @ dx + BU[k]
                        q2 = Am[j] @ (dx + h2 * q1) + BM[k]
                        q3 = Am[j] @ (dx + h2 * q2) + BM[k]
                        q4 = A[j + 1] @ (dx + dt * q3) + BU[k + 1]
                        dx = dx + h6 * (q1 + 2.0 * q2 + 2.0 * q3 + q4)
                    else:
                        dx = dx + dt * (A[j] @ dx + BU[k])
                    dX[k + 1] = dx
                bad = _first_divergent(dX[c0 + 1:c1 + 1])
                if bad is not None:
                    step = c0 + 1 + bad
                    raise DivergenceError(step, grid.t0 + step * dt)
    dY = np.einsum("kpn,kn->kp", sys.jac_h_many(base.X), dX)
    return VariationalTrajectory(base, dX, dY)


def fundamental_matrix(sys: SystemModel, base: Trajectory, scheme: Optional[str] = None,
                       start: int = 0) -> FundamentalMatrix:
    """All transition matrices ``Phi(t_k, t_start)`` along ``base``.

    Stores ``(N + 1 - start) * n * n`` doubles; for large models prefer
    :func:`propagate`, which streams.
    """
    N = base.grid.N
    Phi = np.empty((N + 1 - start, sys.n, sys.n))
    for k, block in propagate_blocks(sys, base, np.eye(sys.n), start, N, scheme):
        Phi[k - start:k - start + block.shape[0]] = block
    return FundamentalMatrix(base, Phi, start)
