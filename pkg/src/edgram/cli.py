"""Command-line front end.

Subcommands::

    edgram simulate   trajectory CSV
    edgram gramian    Gramian CSV + JSON sidecar (reach, obs or dual)
    edgram balance    balancing (or eigen) transform: JSON + T/Tinv CSV
    edgram reduce     reduced-model trajectory CSV
    edgram compare    output error report JSON
    edgram check pd|symmetry
    edgram rerun      repeat a run from its manifest

Every command writes ``<stem>.manifest.json`` next to its primary output.
Exit codes: 0 ok, 2 configuration error, 3 divergence or evaluation
failure, 4 Gramian validity, 5 rank deficiency.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import __version__
from .balancing import (
    BalancingResult, EigenBasis, balance, eigen_truncate_basis, output_error, truncate,
)
from .errors import ConfigError, EdgramError, GramianError
from .gramian import (
    DEFAULT_S, EXACT, FRECHET, GREGORY, OBSERVABILITY, PD_THRESHOLD, QUADRATURES,
    REACHABILITY, observability_gramian, pd_probe, reachability_gramian,
)
from .io import (
    read_json, read_matrix_csv, read_trajectory_csv, sha256_file, write_json, write_manifest,
    write_matrix_csv, write_trajectory_csv,
)
from .models import load_model
from .sim import SCHEMES, InputSignal, TimeGrid, integrate
from .symmetry import TAU_SYM, check_variational_symmetry, dual_reachability_gramian, resolve_S

ENV_OUT_DIR = "EDGRAM_OUT_DIR"
ENV_THREADS = "EDGRAM_THREADS"

KIND_NAMES = {"reach": REACHABILITY, "obs": OBSERVABILITY}
METHOD_NAMES = {"exact": EXACT, "frechet": FRECHET}


# -- argument helpers --------------------------------------------------------

def _out_path(args, default: str) -> Path:
    out = Path(args.out or default)
    if out.is_absolute():
        return out
    root = args.out_dir or os.environ.get(ENV_OUT_DIR) or "."
    return Path(root) / out


def _threads(args) -> int:
    if args.threads is not None:
        n = args.threads
    else:
        raw = os.environ.get(ENV_THREADS, "1")
        try:
            n = int(raw)
        except ValueError:
            raise ConfigError(f"{ENV_THREADS} must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError("--threads must be >= 1")
    return n


def _parse_vector(text: str, n: int, what: str) -> np.ndarray:
    """``zeros``, an inline list (``1,2,3`` or ``[1, 2, 3]``) or a file of numbers."""
    text = text.strip()
    if text == "zeros":
        return np.zeros(n)
    path = Path(text)
    if path.is_file():
        raw = path.read_text().replace(",", " ").replace("[", " ").replace("]", " ")
    else:
        raw = text.replace(",", " ").replace("[", " ").replace("]", " ")
    try:
        v = np.array([float(tok) for tok in raw.split()])
    except ValueError:
        raise ConfigError(f"{what} must be 'zeros', a comma-separated list or a file, got {text!r}") from None
    if v.size != n:
        raise ConfigError(f"{what} has {v.size} entries, the model has n={n}")
    return v


def _parse_input(text: str, m: int) -> InputSignal:
    """``zero`` or expressions of ``t`` separated by ``;`` (one per channel)."""
    if text.strip() == "zero":
        return InputSignal.zero(m)
    u = InputSignal.expression([s.strip() for s in text.split(";")])
    if u.m != m:
        raise ConfigError(f"--input gives {u.m} channel(s), the model has m={m}")
    return u


def _matrix_arg(text: str, n: int, what: str) -> np.ndarray:
    if text == "identity":
        return np.eye(n)
    M = read_matrix_csv(text)
    if M.shape != (n, n):
        raise ConfigError(f"{what} in {text!r} is {M.shape}, expected ({n}, {n})")
    return M


def _base(args):
    """Model, grid, initial state, input and base trajectory from the common flags."""
    model = load_model(args.model)
    grid = TimeGrid(args.t0, args.tf, args.dt)
    x0 = _parse_vector(args.x0, model.n, "--x0")
    u = _parse_input(args.input, model.m)
    traj = integrate(model, x0, u, grid, args.scheme)
    return model, grid, x0, u, traj


def _manifest_info(args, argv) -> dict:
    info = {"command": argv[0] if argv else None, "argv": list(argv), "cwd": os.getcwd(),
            "version": __version__}
    for key in ("model", "scheme", "s", "k", "kind"):
        if getattr(args, key, None) is not None:
            info[key] = getattr(args, key)
    if getattr(args, "tf", None) is not None:
        info["grid"] = {"t0": args.t0, "tf": args.tf, "dt": args.dt}
    if getattr(args, "method", None) is not None:
        info["method"] = METHOD_NAMES.get(args.method, args.method)
    model = getattr(args, "model", None)
    if model and Path(model).is_file():
        info["model_sha256"] = sha256_file(model)
    info["output_dir"] = str(Path(args.out_dir or os.environ.get(ENV_OUT_DIR) or "."))
    return info


def _finish(args, argv, primary: Path, artifacts) -> int:
    write_manifest(primary, _manifest_info(args, argv), artifacts)
    return 0


# -- commands ----------------------------------------------------------------

def cmd_simulate(args, argv) -> int:
    model, grid, x0, u, traj = _base(args)
    out = _out_path(args, "trajectory.csv")
    write_trajectory_csv(out, traj.t, traj.X, traj.U, traj.Y)
    print(f"wrote {out} ({grid.N + 1} samples, n={model.n})")
    return _finish(args, argv, out, [out])


def cmd_gramian(args, argv) -> int:
    model, grid, x0, u, traj = _base(args)
    method = METHOD_NAMES[args.method]
    interval = tuple(args.interval) if args.interval else None
    if args.kind == "dual":
        if method != EXACT:
            raise ConfigError("--kind dual is only available with --method exact")
        S = _matrix_arg(args.S, model.n, "--S")
        cert = check_variational_symmetry(model, S, base=traj, tau=args.tau_sym)
        if not cert.verdict:
            raise GramianError(
                f"symmetry certificate is negative for the given S: res_dyn = {cert.res_dyn:.6e}, "
                f"res_out = {cert.res_out:.6e} (tau = {cert.tau:g})")
        G = dual_reachability_gramian(model, S, traj, interval, certificate=cert,
                                      tau=args.tau_sym, quadrature=args.quadrature)
    elif args.kind == "reach":
        G = reachability_gramian(model, traj, interval, method, s=args.s, impulse=args.impulse,
                                 workers=_threads(args), quadrature=args.quadrature)
    else:
        G = observability_gramian(model, traj, interval, method, s=args.s, workers=_threads(args),
                                  quadrature=args.quadrature)
    out = _out_path(args, "gramian.csv")
    write_matrix_csv(out, G.W)
    side = out.with_suffix(".json")
    doc = G.sidecar()
    doc["model"] = args.model
    write_json(side, doc)
    lam = G.eigenvalues()
    print(f"wrote {out} and {side}; lambda_1 = {lam[0]:.4g}, lambda_n = {lam[-1]:.4g}")
    return _finish(args, argv, out, [out, side])


def cmd_balance(args, argv) -> int:
    out = _out_path(args, "balance.json")
    stem = out.with_suffix("")
    if args.symmetric:
        src = args.w or args.wr
        if not src:
            raise ConfigError("balance --symmetric needs --w GRAMIAN.csv")
        res = eigen_truncate_basis(read_matrix_csv(src))
    else:
        if not (args.wr and args.wo):
            raise ConfigError("balance needs --wr and --wo (or --symmetric --w)")
        res = balance(read_matrix_csv(args.wr), read_matrix_csv(args.wo))
    t_path = Path(f"{stem}_T.csv")
    tinv_path = Path(f"{stem}_Tinv.csv")
    write_matrix_csv(t_path, res.T)
    write_matrix_csv(tinv_path, res.Tinv)
    doc = res.to_dict()
    doc.update({"n": res.n, "T": t_path.name, "Tinv": tinv_path.name})
    write_json(out, doc)
    values = res.sigma if isinstance(res, BalancingResult) else res.eigenvalues
    print(f"wrote {out}; leading values {', '.join(f'{v:.4g}' for v in values[:5])}")
    return _finish(args, argv, out, [out, t_path, tinv_path])


def _load_transform(path):
    doc = read_json(path)
    root = Path(path).parent
    try:
        T = read_matrix_csv(root / doc["T"])
        Tinv = read_matrix_csv(root / doc["Tinv"])
        kind = doc["kind"]
    except KeyError as exc:
        raise ConfigError(f"transform file {str(path)!r} lacks {exc.args[0]!r}") from None
    if kind == "eigen":
        return EigenBasis(Tinv, np.asarray(doc.get("eigenvalues", []), dtype=float))
    sigma = np.asarray(doc.get("sigma", []), dtype=float)
    return BalancingResult(T, Tinv, sigma, doc.get("residuals", {}), int(doc["effective_rank"]))


def cmd_reduce(args, argv) -> int:
    model, grid, x0, u, traj = _base(args)
    red = truncate(model, _load_transform(args.transform), args.k)
    rtraj = red.simulate(x0, u, grid, args.scheme)
    out = _out_path(args, "reduced.csv")
    write_trajectory_csv(out, rtraj.t, rtraj.X, rtraj.U, rtraj.Y, state_prefix="z")
    print(f"wrote {out} (k={red.k})")
    return _finish(args, argv, out, [out])


def cmd_compare(args, argv) -> int:
    full = read_trajectory_csv(args.full)
    red = read_trajectory_csv(args.reduced)
    if full["t"].shape != red["t"].shape or not np.allclose(full["t"], red["t"], rtol=0, atol=1e-12):
        raise ConfigError("the two trajectories are not on the same time grid")
    report = output_error(full["t"], full["Y"], red["Y"])
    out = _out_path(args, "compare.json")
    write_json(out, report.to_dict())
    print(f"rel_l2 = {report.rel_l2:.4g}, max_abs = {report.max_abs:.4g} at t = {report.argmax_t:g}")
    return _finish(args, argv, out, [out])


def cmd_check_pd(args, argv) -> int:
    model, grid, x0, u, traj = _base(args)
    rep = pd_probe(model, traj, KIND_NAMES[args.kind], args.subintervals, args.threshold,
                   METHOD_NAMES[args.method], args.s)
    out = _out_path(args, "pd.json")
    write_json(out, rep.to_dict())
    failed = sum(not e["verdict"] for e in rep.entries)
    print(f"{rep.kind}: verdict {'positive' if rep.verdict else 'negative'} "
          f"({failed} of {len(rep.entries)} subintervals fail)")
    return _finish(args, argv, out, [out])


def cmd_check_symmetry(args, argv) -> int:
    model, grid, x0, u, traj = _base(args)
    S = _matrix_arg(args.S, model.n, "--S")
    cert = check_variational_symmetry(model, resolve_S(S, model.n), base=traj, tau=args.tau)
    out = _out_path(args, "symmetry.json")
    write_json(out, cert.to_dict())
    print(f"verdict {'positive' if cert.verdict else 'negative'}: res_dyn = {cert.res_dyn:.3e}, "
          f"res_out = {cert.res_out:.3e}")
    return _finish(args, argv, out, [out])


def cmd_rerun(args, argv) -> int:
    doc = read_json(args.manifest)
    old = doc.get("argv")
    if not old or old[0] == "rerun":
        raise ConfigError(f"{args.manifest!r} does not record a rerunnable command")
    expected = dict(doc.get("artifacts", {}))
    root = Path(args.manifest).resolve().parent
    cwd = os.getcwd()
    try:
        os.chdir(doc.get("cwd", cwd))
        code = main(old)
    finally:
        os.chdir(cwd)
    if code != 0:
        return code
    mismatched = [name for name, digest in expected.items()
                  if not (root / name).is_file() or sha256_file(root / name) != digest]
    if mismatched:
        print("artifacts differ from the manifest: " + ", ".join(sorted(mismatched)), file=sys.stderr)
        return 1
    print(f"reproduced {len(expected)} artifact(s)")
    return 0


# -- parser ------------------------------------------------------------------

def _output_flags(p, default):
    p.add_argument("--out", default=None, help=f"output file (default {default})")
    p.add_argument("--out-dir", default=None,
                   help=f"directory for relative --out paths (default ${ENV_OUT_DIR} or .)")


def _base_flags(p):
    p.add_argument("--model", required=True, help="rl:<n> or a JSON model file")
    p.add_argument("--t0", type=float, default=0.0)
    p.add_argument("--tf", type=float, required=True)
    p.add_argument("--dt", type=float, required=True)
    p.add_argument("--x0", default="zeros", help="'zeros', a list like 1,0,0 or a file")
    p.add_argument("--input", default="zero",
                   help="'zero' or expressions of t, one per input channel, separated by ';'")
    p.add_argument("--scheme", choices=SCHEMES, default="rk4")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="edgram",
                                     description="Empirical differential Gramians and balanced truncation.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate the model and write its trajectory")
    _base_flags(p)
    _output_flags(p, "trajectory.csv")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("gramian", help="differential Gramian along the simulated trajectory")
    _base_flags(p)
    p.add_argument("--kind", choices=("reach", "obs", "dual"), required=True)
    p.add_argument("--method", choices=tuple(METHOD_NAMES), default="exact")
    p.add_argument("--s", type=float, default=DEFAULT_S, help="Frechet perturbation size")
    p.add_argument("--S", default="identity", help="symmetry matrix CSV for --kind dual, or 'identity'")
    p.add_argument("--tau-sym", type=float, default=TAU_SYM)
    p.add_argument("--interval", type=float, nargs=2, metavar=("T1", "T2"))
    p.add_argument("--quadrature", choices=QUADRATURES, default=GREGORY)
    p.add_argument("--impulse", choices=("jump", "pulse"), default="jump")
    p.add_argument("--threads", type=int, default=None,
                   help=f"worker threads for Frechet runs (default ${ENV_THREADS} or 1)")
    _output_flags(p, "gramian.csv")
    p.set_defaults(func=cmd_gramian)

    p = sub.add_parser("balance", help="balancing transform from Gramian CSV files")
    p.add_argument("--wr", help="reachability Gramian CSV")
    p.add_argument("--wo", help="observability Gramian CSV")
    p.add_argument("--symmetric", action="store_true",
                   help="one-Gramian eigen-truncation basis (variationally symmetric, S = I)")
    p.add_argument("--w", help="Gramian CSV for --symmetric")
    _output_flags(p, "balance.json")
    p.set_defaults(func=cmd_balance)

    p = sub.add_parser("reduce", help="simulate the truncated model")
    _base_flags(p)
    p.add_argument("--transform", required=True, help="JSON written by 'balance'")
    p.add_argument("--k", type=int, required=True, help="reduced order")
    _output_flags(p, "reduced.csv")
    p.set_defaults(func=cmd_reduce)

    p = sub.add_parser("compare", help="compare the outputs of two trajectory CSVs")
    p.add_argument("--full", required=True)
    p.add_argument("--reduced", required=True)
    _output_flags(p, "compare.json")
    p.set_defaults(func=cmd_compare)

    check = sub.add_parser("check", help="positivity and symmetry probes")
    csub = check.add_subparsers(dest="check", required=True)
    p = csub.add_parser("pd", help="Gramian positive definiteness on dyadic subintervals")
    _base_flags(p)
    p.add_argument("--kind", choices=tuple(KIND_NAMES), required=True)
    p.add_argument("--subintervals", type=int, default=1)
    p.add_argument("--threshold", type=float, default=PD_THRESHOLD)
    p.add_argument("--method", choices=tuple(METHOD_NAMES), default="exact")
    p.add_argument("--s", type=float, default=DEFAULT_S)
    _output_flags(p, "pd.json")
    p.set_defaults(func=cmd_check_pd)
    p = csub.add_parser("symmetry", help="variational symmetry certificate for a constant S")
    _base_flags(p)
    p.add_argument("--S", default="identity", help="matrix CSV or 'identity'")
    p.add_argument("--tau", type=float, default=TAU_SYM)
    _output_flags(p, "symmetry.json")
    p.set_defaults(func=cmd_check_symmetry)

    p = sub.add_parser("rerun", help="repeat the run recorded in a manifest and verify hashes")
    p.add_argument("manifest")
    p.set_defaults(func=cmd_rerun, out=None, out_dir=None)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args, argv)
    except EdgramError as exc:
        print(f"edgram: error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
