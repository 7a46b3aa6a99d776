"""Command-line interface: CSV in, JSON/CSV out.

Exit status is 0 on success, 1 when an operation rejects its input
(domain, invariant, numerical or parse errors) and 2 on usage errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import expit

from .basis import SplineSpec, tensor_design
from .bench import E1, E2, SimParams, alpha_sweep, run_experiment, simulate, write_rows
from .bqr import BQRConfig, fit_bqr
from .core import Dataset, FitOptions, FitReport, fit, make_state, elbo_gradient
from .errors import DomainError, InvariantError, ParseError, TavieError
from .families import SSGFamily
from .oracle import fd_gradient, risk_gap
from .priors import GaussianParams, NormalGammaParams

MODELS = ("laplace", "student", "logistic", "binomial", "negbin", "quantile")
TYPE1_MODELS = ("laplace", "student")
COUNT_MODELS = ("logistic", "binomial", "negbin")
INTERCEPT = "(intercept)"


class UsageError(Exception):
    """Bad flag combination; mapped to exit status 2."""


# -- CSV ---------------------------------------------------------------------------


def _read_table(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError(f"{path} is empty; a header row is required")
    header = [h.strip() for h in rows[0]]
    body = [r for r in rows[1:] if any(c.strip() for c in r)]
    return header, body


def _numeric_columns(path, names):
    """Parse the named columns as floats; rows are numbered from 1 after the header."""
    header, body = _read_table(path)
    idx = []
    for name in names:
        if name not in header:
            raise ParseError(f"column {name!r} not found in {path}", column=name)
        idx.append(header.index(name))
    out = np.empty((len(body), len(names)))
    for r, row in enumerate(body, start=1):
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} cells, found {len(row)}", row=r)
        for c, (j, name) in enumerate(zip(idx, names)):
            try:
                v = float(row[j])
            except ValueError:
                raise ParseError(f"non-numeric cell {row[j]!r}", row=r, column=name) from None
            if not np.isfinite(v):
                raise ParseError(f"non-finite cell {row[j]!r}", row=r, column=name)
            out[r - 1, c] = v
    return header, out


def parse_csv(path, target_column: Optional[str], feature_columns=None, m_column: Optional[str] = None,
              intercept: bool = False) -> Dataset:
    """Load a Dataset.  ``feature_columns=None`` means every other column.

    ``target_column=None`` fills ``y`` with zeros (prediction inputs).
    """
    header, _ = _read_table(path)
    if feature_columns is None:
        feature_columns = [h for h in header if h not in (target_column, m_column)]
    feature_columns = list(feature_columns)
    if not feature_columns and not intercept:
        raise ParseError("no feature columns selected")
    names = list(feature_columns)
    if target_column is not None:
        names.append(target_column)
    if m_column is not None:
        names.append(m_column)
    _, vals = _numeric_columns(path, names)
    k = len(feature_columns)
    X = vals[:, :k]
    if intercept:
        X = np.column_stack([np.ones(len(vals)), X])
    y = vals[:, k] if target_column is not None else np.zeros(len(vals))
    m = None
    if m_column is not None:
        m = vals[:, -1]
        bad = np.flatnonzero((m <= 0) | (m != np.round(m)))
        if bad.size:
            raise ParseError(f"count size must be a positive integer, got {m[bad[0]]!r}",
                             row=int(bad[0]) + 1, column=m_column)
    if len(vals) == 0:
        raise ParseError(f"{path} has no data rows")
    zero = np.flatnonzero(~np.any(X != 0, axis=1))
    if zero.size:
        raise InvariantError(f"row {zero[0] + 1} of the design has all-zero features")
    return Dataset(X, y, m)


def _read_matrix(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r]
    try:
        return np.array([[float(c) for c in r] for r in rows])
    except ValueError:
        # tolerate a header line
        return np.array([[float(c) for c in r] for r in rows[1:]])


# -- configuration -------------------------------------------------------------------


@dataclass
class RunConfig:
    model: str
    alpha: float = 1.0
    mu: object = 0.0
    sigma_scale: float = 1.0
    sigma_file: Optional[str] = None
    a: float = 0.025
    b: float = 0.025
    tol: float = 1e-9
    max_iter: int = 10_000
    init: str = "ones"
    nu: int = 5
    tau0: float = 1.0
    quantiles: list = field(default_factory=lambda: [0.5])
    m_column: Optional[str] = None
    seed: int = 0

    def __post_init__(self):
        if self.model not in MODELS:
            raise UsageError(f"unknown model {self.model!r}; choose from {', '.join(MODELS)}")
        if self.model in COUNT_MODELS and self.model != "logistic" and self.m_column is None:
            raise UsageError(f"model {self.model} needs --m-column")

    @classmethod
    def from_args(cls, ns):
        q = getattr(ns, "quantiles", None)
        if q is None:
            q = [getattr(ns, "quantile", 0.5)]
        return cls(model=ns.model, alpha=ns.alpha, mu=ns.prior_mu, sigma_scale=ns.sigma_scale,
                   sigma_file=ns.sigma_file, a=ns.a, b=ns.b, tol=ns.tol, max_iter=ns.max_iter,
                   init=ns.init, nu=ns.nu, tau0=ns.tau0, quantiles=q, m_column=ns.m_column, seed=ns.seed)

    def family(self, u: Optional[float] = None) -> SSGFamily:
        if self.model == "laplace":
            return SSGFamily.laplace()
        if self.model == "student":
            return SSGFamily.student(self.nu)
        if self.model in ("logistic", "binomial"):
            return SSGFamily.binomial()
        if self.model == "negbin":
            return SSGFamily.negbin()
        return SSGFamily.ald(u if u is not None else self.quantiles[0], self.tau0)

    def prior(self, p: int):
        mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        if mu.size == 1:
            mu = np.full(p, mu[0])
        if mu.size != p:
            raise DomainError(f"prior mean has length {mu.size}, design has {p} columns")
        S = _read_matrix(self.sigma_file) if self.sigma_file else self.sigma_scale * np.eye(p)
        if self.model in TYPE1_MODELS:
            return NormalGammaParams(mu, S, self.a, self.b)
        return GaussianParams(mu, S)

    def options(self) -> FitOptions:
        return FitOptions(tol=self.tol, max_iter=self.max_iter, init=self.init)


# -- JSON report ---------------------------------------------------------------------


def report_to_dict(rep: FitReport, cfg: RunConfig, features, target, intercept, u=None) -> dict:
    post = rep.posterior
    is_ng = isinstance(post, NormalGammaParams)
    d = {
        "model": cfg.model,
        "alpha": rep.state.alpha,
        "posterior": {
            "mu": post.mu.tolist(),
            "Sigma": post.Sigma.tolist(),
            "a": post.a if is_ng else None,
            "b": post.b if is_ng else None,
        },
        "elbo_trace": rep.elbo_trace.tolist(),
        "iterations": rep.iterations,
        "converged": rep.converged,
        "fixed_point_residual": rep.fixed_point_residual,
        "wall_time_s": rep.wall_time,
        "n": int(rep.xi.size),
        "features": list(features),
        "intercept": bool(intercept),
        "target": target,
        "m_column": cfg.m_column,
    }
    if cfg.model == "student":
        d["nu"] = cfg.nu
    if cfg.model == "quantile":
        d["quantile"] = u
        d["tau0"] = cfg.tau0
    return d


def _dump_json(obj, path):
    # json writes floats with repr, the shortest string that round-trips exactly
    text = json.dumps(obj, indent=2, allow_nan=True)
    if path in (None, "-"):
        sys.stdout.write(text + "\n")
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")


def load_report(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def predict(report: dict, data: Dataset) -> np.ndarray:
    """Plug-in prediction at the posterior mean."""
    mu = np.asarray(report["posterior"]["mu"], dtype=float)
    if data.p != mu.size:
        raise DomainError(f"new data has {data.p} columns, report expects {mu.size}")
    eta = data.X @ mu
    model = report["model"]
    if model in TYPE1_MODELS or model == "quantile":
        return eta
    m = data.m if data.m is not None else np.ones_like(eta)
    if model in ("logistic", "binomial"):
        return m * expit(eta)
    if model == "negbin":
        if data.m is None:
            raise DomainError("negative binomial prediction needs the count-size column")
        # m (1 - s) / s with s = sigmoid(eta) is m * exp(-eta)
        return m * np.exp(-eta)
    raise DomainError(f"unknown model {model!r} in report")


# -- argument parsing ----------------------------------------------------------------


def _floats(text):
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _mu_arg(text):
    vals = _floats(text)
    return vals[0] if len(vals) == 1 else vals


def _names(text):
    return [v.strip() for v in str(text).split(",") if v.strip()]


def _add_common_fit(sp, quantile_list=False):
    sp.add_argument("--data", required=True, help="input CSV with a header row")
    sp.add_argument("--target", required=True)
    sp.add_argument("--features", type=_names, default=None, help="comma-separated; default all others")
    sp.add_argument("--m-column", default=None, help="count sizes (binomial / negbin)")
    sp.add_argument("--intercept", action="store_true", help="prepend a constant column")
    sp.add_argument("--alpha", type=float, default=1.0)
    sp.add_argument("--prior-mu", type=_mu_arg, default=0.0)
    sp.add_argument("--sigma-scale", type=float, default=1.0)
    sp.add_argument("--sigma-file", default=None, help="CSV with the full prior covariance")
    sp.add_argument("--a", type=float, default=0.025)
    sp.add_argument("--b", type=float, default=0.025)
    sp.add_argument("--tol", type=float, default=1e-9)
    sp.add_argument("--max-iter", type=int, default=10_000)
    sp.add_argument("--init", choices=("ones", "residual"), default="ones")
    sp.add_argument("--nu", type=int, default=5)
    sp.add_argument("--tau0", type=float, default=1.0)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", default="-")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tavie", description="Tangent-approximation variational EM")
    ap.add_argument("--config", default=None, help="JSON file of flag values; explicit flags win")
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("fit", help="fit one model and write a JSON report")
    sp.add_argument("--model", choices=MODELS, required=True)
    sp.add_argument("--quantile", type=float, default=0.5, help="quantile level for --model quantile")
    sp.add_argument("--trace", default=None, help="also write the ELBO trace as CSV")
    _add_common_fit(sp)

    sp = sub.add_parser("quantreg", help="fit a grid of quantile levels")
    sp.add_argument("--quantiles", type=_floats, required=True)
    _add_common_fit(sp)
    sp.set_defaults(model="quantile")

    sp = sub.add_parser("bench", help="simulation study; writes a CSV table")
    sp.add_argument("--family", choices=("laplace", "student", "logistic", "negbin"), required=True)
    sp.add_argument("--grid", default="E1", help="E1, E2 or cells like 2000x8,1000x3")
    sp.add_argument("--reps", type=int, default=20)
    sp.add_argument("--alpha", type=float, default=1.0)
    sp.add_argument("--alphas", type=_floats, default=None, help="run an alpha sweep at n=2000, p=8")
    sp.add_argument("--nu", type=int, default=5)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--workers", type=int, default=1)
    sp.add_argument("--out", default="-")

    sp = sub.add_parser("riskcheck", help="empirical risk-bound gap; writes a JSON array")
    sp.add_argument("--model", choices=("laplace", "negbin"), required=True)
    sp.add_argument("--n", type=int, default=2000)
    sp.add_argument("--p", type=int, default=8)
    sp.add_argument("--alphas", type=_floats, default=[0.3, 0.95])
    sp.add_argument("--reps", type=int, default=10)
    sp.add_argument("--n-mc", type=int, default=100)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", default="-")

    sp = sub.add_parser("gradcheck", help="analytic vs finite-difference ELBO gradient")
    sp.add_argument("--model", choices=MODELS, required=True)
    sp.add_argument("--n", type=int, default=20)
    sp.add_argument("--p", type=int, default=3)
    sp.add_argument("--states", type=int, default=10)
    sp.add_argument("--h", type=float, default=1e-5)
    sp.add_argument("--nu", type=int, default=5)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", default="-")

    sp = sub.add_parser("basis", help="tensor-product B-spline design from coordinates")
    sp.add_argument("--coords", required=True, help="CSV with coordinate columns")
    sp.add_argument("--x-col", default="x")
    sp.add_argument("--y-col", default="y")
    sp.add_argument("--nx", type=int, default=5)
    sp.add_argument("--ny", type=int, default=5)
    sp.add_argument("--degree", type=int, default=3)
    sp.add_argument("--domain", type=_floats, default=None, help="xmin,xmax,ymin,ymax; default data range")
    sp.add_argument("--intercept", action="store_true")
    sp.add_argument("--out", default="-")

    sp = sub.add_parser("predict", help="plug-in predictions from a saved report")
    sp.add_argument("--report", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", default="-")
    return ap


def _apply_config(ap, argv):
    """Parse ``argv`` with JSON config values installed as defaults."""
    argv = list(sys.argv[1:] if argv is None else argv)
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", default=None)
    known, _ = pre.parse_known_args(argv)
    command = next((a for a in argv if a in _COMMANDS), None)
    if not known.config or command is None:
        return ap.parse_args(argv)
    with open(known.config, encoding="utf-8") as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise UsageError("--config must hold a JSON object")
    sub_action = next(a for a in ap._actions if isinstance(a, argparse._SubParsersAction))
    sp = sub_action.choices[command]
    actions = {a.dest: a for a in sp._actions}
    defaults = {}
    for k, v in cfg.items():
        dest = k.lstrip("-").replace("-", "_")
        if dest not in actions or dest == "help":
            raise UsageError(f"config key {k!r} is not a flag of {command!r}")
        act = actions[dest]
        if act.type is not None and isinstance(v, str):
            v = act.type(v)
        elif act.type is _floats and isinstance(v, (int, float)):
            v = [float(v)]
        elif act.type is _names and isinstance(v, list):
            v = [str(x) for x in v]
        defaults[dest] = v
        act.required = False
    sp.set_defaults(**defaults)
    return ap.parse_args(argv)


def _open_out(path):
    if path in (None, "-"):
        return sys.stdout, False
    return open(path, "w", newline="", encoding="utf-8"), True


# -- subcommands -------------------------------------------------------------------


def _load_fit_data(ns, cfg):
    data = parse_csv(ns.data, ns.target, ns.features, cfg.m_column, ns.intercept)
    if cfg.model == "logistic" and data.m is None:
        data = Dataset(data.X, data.y, np.ones(data.n))
    header, _ = _read_table(ns.data)
    feats = ns.features or [h for h in header if h not in (ns.target, cfg.m_column)]
    if ns.intercept:
        feats = [INTERCEPT] + list(feats)
    return data, feats


def _cmd_fit(ns):
    cfg = RunConfig.from_args(ns)
    data, feats = _load_fit_data(ns, cfg)
    prior = cfg.prior(data.p)
    u = ns.quantile if cfg.model == "quantile" else None
    rep = fit(cfg.family(u), data, prior, cfg.alpha, cfg.options())
    _dump_json(report_to_dict(rep, cfg, feats, ns.target, ns.intercept, u), ns.out)
    if ns.trace:
        with open(ns.trace, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "elbo"])
            for i, v in enumerate(rep.elbo_trace, start=1):
                w.writerow([i, repr(float(v))])
    return 0


def _cmd_quantreg(ns):
    cfg = RunConfig.from_args(ns)
    data, feats = _load_fit_data(ns, cfg)
    prior = cfg.prior(data.p)
    docs = []
    for u in cfg.quantiles:
        rep = fit_bqr(data, prior, BQRConfig(u, cfg.tau0, cfg.alpha), cfg.options())
        docs.append(report_to_dict(rep, cfg, feats, ns.target, ns.intercept, u))
    _dump_json(docs, ns.out)
    return 0


def _family_by_name(name, nu=5):
    return {"laplace": SSGFamily.laplace, "student": lambda: SSGFamily.student(nu),
            "logistic": SSGFamily.binomial, "binomial": SSGFamily.binomial,
            "negbin": SSGFamily.negbin, "quantile": lambda: SSGFamily.ald(0.5)}[name]()


def _parse_grid(text):
    if text in ("E1", "E2"):
        return E1 if text == "E1" else E2
    cells = []
    for part in _names(text):
        try:
            n, p = part.lower().split("x")
            cells.append((int(n), int(p)))
        except ValueError:
            raise UsageError(f"bad grid cell {part!r}; use NxP") from None
    return cells


def _cmd_bench(ns):
    fam = _family_by_name(ns.family, ns.nu)
    if ns.alphas:
        rows = alpha_sweep(fam, ns.alphas, reps=ns.reps, seed_base=ns.seed, workers=ns.workers)
    else:
        rows = run_experiment(_parse_grid(ns.grid), fam, ns.reps, ns.alpha, ns.seed, workers=ns.workers)
    fh, close = _open_out(ns.out)
    try:
        write_rows(rows, fh)
    finally:
        if close:
            fh.close()
    return 0


def _cmd_riskcheck(ns):
    out = []
    for a in ns.alphas:
        for r in range(ns.reps):
            out.append(risk_gap(ns.model, ns.n, ns.p, a, ns.seed + r, ns.n_mc).to_dict())
    _dump_json(out, ns.out)
    return 0


def _cmd_gradcheck(ns):
    rng = np.random.default_rng(ns.seed)
    fam = _family_by_name(ns.model, ns.nu)
    worst = 0.0
    for k in range(ns.states):
        data, _ = simulate(fam, ns.n, ns.p, int(rng.integers(2**31)), SimParams())
        prior = (NormalGammaParams.default(ns.p, 3.0, 3.0) if fam.is_type1 else GaussianParams.default(ns.p))
        xi = rng.uniform(0.5, 2.0, ns.n)
        alpha = float(rng.uniform(0.2, 1.0))
        st = make_state(fam, data, prior, alpha, xi)
        g = elbo_gradient(st, data)
        fd = fd_gradient(st, data, ns.h)
        worst = max(worst, float(np.max(np.abs(g - fd)) / max(np.max(np.abs(g)), 1e-300)))
    _dump_json({"model": ns.model, "states": ns.states, "h": ns.h, "max_rel_error": worst}, ns.out)
    return 0


def _cmd_basis(ns):
    _, xy = _numeric_columns(ns.coords, [ns.x_col, ns.y_col])
    if ns.domain:
        if len(ns.domain) != 4:
            raise UsageError("--domain needs four numbers")
        dom = tuple(ns.domain)
    else:
        dom = (xy[:, 0].min(), xy[:, 0].max(), xy[:, 1].min(), xy[:, 1].max())
    spec = SplineSpec(ns.nx, ns.ny, dom, ns.degree)
    B = tensor_design(xy, spec)
    names = [f"b_{i}_{j}" for i in range(ns.nx) for j in range(ns.ny)]
    if ns.intercept:
        B = np.column_stack([np.ones(B.shape[0]), B])
        names = [INTERCEPT] + names
    fh, close = _open_out(ns.out)
    try:
        w = csv.writer(fh)
        w.writerow(names)
        for row in B:
            w.writerow([repr(float(v)) for v in row])
    finally:
        if close:
            fh.close()
    return 0


def _cmd_predict(ns):
    rep = load_report(ns.report)
    feats = [f for f in rep["features"] if f != INTERCEPT]
    m_col = rep.get("m_column")
    header, _ = _read_table(ns.data)
    if m_col is not None and m_col not in header:
        m_col = None
    data = parse_csv(ns.data, None, feats, m_col, rep.get("intercept", False))
    pred = predict(rep, data)
    fh, close = _open_out(ns.out)
    try:
        w = csv.writer(fh)
        w.writerow(["prediction"])
        for v in pred:
            w.writerow([repr(float(v))])
    finally:
        if close:
            fh.close()
    return 0


_COMMANDS = {
    "fit": _cmd_fit, "quantreg": _cmd_quantreg, "bench": _cmd_bench, "riskcheck": _cmd_riskcheck,
    "gradcheck": _cmd_gradcheck, "basis": _cmd_basis, "predict": _cmd_predict,
}


def run(argv=None) -> int:
    ap = build_parser()
    try:
        ns = _apply_config(ap, argv)
        return _COMMANDS[ns.command](ns)
    except SystemExit as exc:  # argparse usage errors
        return int(exc.code) if isinstance(exc.code, int) else 2
    except UsageError as exc:
        print(f"tavie: usage error: {exc}", file=sys.stderr)
        return 2
    except (TavieError, OSError, json.JSONDecodeError) as exc:
        print(f"tavie: error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())
