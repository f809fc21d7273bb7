"""Built-in models and expression-defined models.

Model configuration files are JSON, either expression based::

    {"name": "duffing", "n": 2, "m": 1, "p": 1,
     "B": [[0], [1]], "f": ["x2", "-x1 - x1^3"], "h": ["x1"]}

or referring to a builtin::

    {"builtin": "rl_network", "n": 100}
    {"builtin": "lti", "A": [[...]], "B": [[...]], "C": [[...]]}
    {"builtin": "gradient_family", "S_diag": [...], "quadratic": [[...]],
     "quartic": [...], "c": [...]}
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError
from .expr import compile_vector, parse
from .system import SystemModel

__all__ = [
    "rl_network", "rl_network_expressions", "lti", "gradient_family",
    "from_expressions", "model_from_config", "load_model",
]


def rl_network(n: int = 100) -> SystemModel:
    """Ladder of ``n`` inductor currents with cubic resistors.

    ``f_i = x_{i-1} - 2 x_i + x_{i+1} - (x_i^2/2 + x_i^3/3)`` with the
    out-of-range neighbours dropped, ``B = e_1`` and ``y = x_1``.
    """
    n = int(n)
    if n < 2:
        raise ConfigError("rl_network needs n >= 2")

    def f(x):
        lin = -2.0 * x
        lin[1:] += x[:-1]
        lin[:-1] += x[1:]
        return lin - (x ** 2 / 2.0 + x ** 3 / 3.0)

    base = -2.0 * np.eye(n) + np.eye(n, k=1) + np.eye(n, k=-1)
    diag = np.arange(n)

    def jac_f(x):
        J = base.copy()
        J[diag, diag] -= x + x ** 2
        return J

    C = np.zeros((1, n))
    C[0, 0] = 1.0
    B = np.zeros((n, 1))
    B[0, 0] = 1.0
    return SystemModel(f=f, B=B, h=lambda x: x[:1].copy(), p=1, jac_f_fn=jac_f,
                       jac_h_fn=lambda x: C, name=f"rl_network({n})",
                       meta={"builtin": "rl_network", "n": n})


def rl_network_expressions(n: int):
    """The ``rl_network`` drift written as expression strings."""
    out = []
    for i in range(1, n + 1):
        terms = []
        if i > 1:
            terms.append(f"x{i - 1} - 2*x{i}")
        else:
            terms.append(f"-2*x{i}")
        if i < n:
            terms.append(f"x{i + 1}")
        out.append(" + ".join(terms) + f" - (x{i}^2/2 + x{i}^3/3)")
    return out


def lti(A, B, C) -> SystemModel:
    """Linear model ``xdot = A x + B u``, ``y = C x``."""
    A = np.array(A, dtype=float, ndmin=2)
    B = np.array(B, dtype=float)
    C = np.array(C, dtype=float, ndmin=2)
    n = A.shape[0]
    if A.shape != (n, n):
        raise ConfigError(f"A must be square, got {A.shape}")
    if B.ndim == 1:
        B = B.reshape(n, -1)
    if B.shape[0] != n:
        raise ConfigError(f"B must have {n} rows, got {B.shape}")
    if C.shape[1] != n:
        raise ConfigError(f"C must have {n} columns, got {C.shape}")
    A.flags.writeable = False
    C.flags.writeable = False
    return SystemModel(f=lambda x: A @ x, B=B, h=lambda x: C @ x, p=C.shape[0],
                       jac_f_fn=lambda x: A, jac_h_fn=lambda x: C, name=f"lti({n})",
                       meta={"builtin": "lti", "A": A.tolist(), "B": B.tolist(), "C": C.tolist()})


def gradient_family(S_diag, V_coeffs: Mapping, c) -> SystemModel:
    """Scaled gradient system, variationally symmetric w.r.t. ``diag(S_diag)``.

    The potential is ``V(x) = x'Qx + sum(a_i x_i^3)/3 + sum(q_i x_i^4)/4``
    with ``V_coeffs = {"quadratic": Q, "cubic": a, "quartic": q}`` (missing
    terms are zero, ``Q`` is symmetrised).  Then ``f = S^-1 grad V``,
    ``B = S^-1 c`` and ``h = c'x``, so ``S df/dx = Hess V`` is symmetric and
    ``S B = dh/dx'``.
    """
    s = np.asarray(S_diag, dtype=float).reshape(-1)
    if np.any(s <= 0):
        raise ConfigError("S_diag must be positive")
    n = s.size
    Q = np.asarray(V_coeffs.get("quadratic", np.zeros((n, n))), dtype=float)
    Q = 0.5 * (Q + Q.T)
    a = np.asarray(V_coeffs.get("cubic", np.zeros(n)), dtype=float).reshape(n)
    q = np.asarray(V_coeffs.get("quartic", np.zeros(n)), dtype=float).reshape(n)
    c = np.asarray(c, dtype=float).reshape(n)
    if Q.shape != (n, n):
        raise ConfigError(f"quadratic coefficient must be {n} x {n}")
    inv_s = 1.0 / s
    cT = c.reshape(1, n)

    def grad(x):
        return 2.0 * (Q @ x) + a * x ** 2 + q * x ** 3

    def hess(x):
        return 2.0 * Q + np.diag(2.0 * a * x + 3.0 * q * x ** 2)

    def potential(x):
        return float(x @ Q @ x + np.sum(a * x ** 3) / 3.0 + np.sum(q * x ** 4) / 4.0)

    model = SystemModel(
        f=lambda x: inv_s * grad(x), B=(inv_s * c).reshape(n, 1), h=lambda x: cT @ x, p=1,
        jac_f_fn=lambda x: inv_s[:, None] * hess(x), jac_h_fn=lambda x: cT,
        name=f"gradient_family({n})",
        meta={"builtin": "gradient_family", "S_diag": s.tolist(), "quadratic": Q.tolist(),
              "cubic": a.tolist(), "quartic": q.tolist(), "c": c.tolist(), "potential": potential},
    )
    return model


def from_expressions(f: Sequence[str], h: Sequence[str], B, name: str = "expression_model",
                     fd_step: float = 1e-6) -> SystemModel:
    """Model whose drift and output are expression strings in ``x1..xn``.

    Jacobians come from central differences.
    """
    f = list(f)
    h = list(h)
    n = len(f)
    if n < 1 or not h:
        raise ConfigError("need at least one drift and one output expression")
    B = np.array(B, dtype=float)
    if B.ndim == 1:
        B = B.reshape(n, -1)
    if B.shape[0] != n:
        raise ConfigError(f"B must have {n} rows to match {n} drift expressions, got {B.shape}")
    f_exprs = [parse(s, n=n, allow_time=False) for s in f]
    h_exprs = [parse(s, n=n, allow_time=False) for s in h]
    return SystemModel(f=compile_vector(f_exprs), B=B, h=compile_vector(h_exprs), p=len(h),
                       fd_step=fd_step, name=name,
                       meta={"f": f, "h": h, "B": B.tolist()})


def model_from_config(cfg: Mapping) -> SystemModel:
    """Build a model from a parsed configuration mapping."""
    if "builtin" in cfg:
        kind = cfg["builtin"]
        if kind == "rl_network":
            return rl_network(int(cfg.get("n", 100)))
        if kind == "lti":
            return lti(cfg["A"], cfg["B"], cfg["C"])
        if kind == "gradient_family":
            return gradient_family(cfg["S_diag"], cfg, cfg["c"])
        raise ConfigError(f"unknown builtin model {kind!r}")
    try:
        f, h, B = cfg["f"], cfg["h"], cfg["B"]
    except KeyError as exc:
        raise ConfigError(f"model config is missing key {exc.args[0]!r}") from None
    n = int(cfg.get("n", len(f)))
    if len(f) != n:
        raise ConfigError(f"model config declares n={n} but has {len(f)} drift expressions")
    model = from_expressions(f, h, B, name=cfg.get("name", "expression_model"))
    if "m" in cfg and int(cfg["m"]) != model.m:
        raise ConfigError(f"model config declares m={cfg['m']} but B has {model.m} columns")
    if "p" in cfg and int(cfg["p"]) != model.p:
        raise ConfigError(f"model config declares p={cfg['p']} but has {model.p} outputs")
    return model


def load_model(spec: str) -> SystemModel:
    """Resolve a ``--model`` argument: ``rl:<n>`` or a JSON config path."""
    if spec.startswith("rl:"):
        try:
            return rl_network(int(spec[3:]))
        except ValueError:
            raise ConfigError(f"bad model shorthand {spec!r}, expected rl:<n>") from None
    path = Path(spec)
    if not path.is_file():
        raise ConfigError(f"model file {spec!r} not found")
    try:
        cfg = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"model file {spec!r} is not valid JSON: {exc}") from None
    return model_from_config(cfg)
