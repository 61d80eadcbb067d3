"""Command-line front end: strict JSON config in, CSV/JSON reports out.

Config layout (unknown keys anywhere are rejected)::

    {
      "command": "verify",
      "grid": {"t0": 0, "T": 1, "n_steps": 400},
      "measure": {"marks": [{"rate": 1.0, "label": "crash"}]},
      "n": 1, "m": 1,
      "initial": [1.0],
      "control": "optimal",
      "scenarios": [{"probability": 1.0,
                     "coefficients": {"A": [[0.1]], "B": [[1]], "E": [[[0.2]]], "F": [[[0.1]]]},
                     "weights": {"Q": [[1]], "R": [[1]], "G": [[1]]}}],
      "weights": {...},
      "mc": {"n_paths": 10000, "seed": 0, "workers": 1},
      "tolerances": {"eps_N": 1e-8, "delta_inv": 1e-6, "refine": 1},
      "output": {"directory": "out", "formats": ["csv", "json"]}
    }

A matrix is a nested row-major list; a list of n_steps matrices tabulates it
per step. E and F hold one matrix (or table) per mark. The top-level
``weights`` apply to scenarios that omit their own. A ``finance`` block
replaces grid/measure/n/m/initial/scenarios/weights.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .control import (
    closed_loop_simulate, estimate_cost, moment_ode_cost, probe_ratios, verify,
)
from .errors import JumpLQError, ParseError, SchemaError
from .finance import FinanceParams, build_wealth_spec, finance_report
from .model import (
    DEFAULT_DELTA_INV, CoefficientSet, CostWeights, JumpMark, JumpMeasure, ProblemSpec, Scenario,
    TimeGrid, validate_problem,
)
from .riccati import EPS_N, solve_all
from .sdep import FeedbackControl, sample_noise, simulate_paths

COMMANDS = ("riccati", "simulate", "evaluate", "verify", "probe", "finance")
FORMATS = ("csv", "json")
EXIT_OK, EXIT_ERROR, EXIT_FAIL = 0, 1, 2

TOP_KEYS = {"command", "grid", "measure", "n", "m", "initial", "control", "scenarios", "weights",
            "finance", "mc", "tolerances", "output"}
PROBLEM_KEYS = {"grid", "measure", "n", "m", "initial", "scenarios", "weights"}
MC_DEFAULTS = {"n_paths": 10000, "seed": 0, "workers": 1, "n_probe": 32, "n_directions": 3,
               "epsilons": [0.1, 0.2]}
TOL_DEFAULTS = {"eps_N": EPS_N, "delta_inv": DEFAULT_DELTA_INV, "refine": 1, "allowance": 0.02}
COEF_KEYS = ("A", "B", "C", "D", "E", "F")
WEIGHT_KEYS = ("Q", "S", "R", "G")
FINANCE_KEYS = {"lambda", "alpha", "r", "sigma", "jumps", "T", "t0", "steps", "x0"}


@dataclass(eq=False)
class RunConfig:
    command: str
    problem: Optional[ProblemSpec]
    finance: Optional[FinanceParams]
    initial: np.ndarray
    control: object = "optimal"
    mc: dict = field(default_factory=lambda: dict(MC_DEFAULTS))
    tolerances: dict = field(default_factory=lambda: dict(TOL_DEFAULTS))
    directory: str = "."
    formats: tuple = FORMATS

    @property
    def spec(self) -> ProblemSpec:
        if self.problem is not None:
            return self.problem
        return build_wealth_spec(self.finance)


# -- schema helpers -----------------------------------------------------------

def _obj(doc, key, allowed, required=()):
    if not isinstance(doc, dict):
        raise SchemaError(key, "expected an object")
    for k in doc:
        if k not in allowed:
            raise SchemaError(f"{key}.{k}" if key else k, "unknown key")
    for k in required:
        if k not in doc:
            raise SchemaError(f"{key}.{k}" if key else k, "missing required key")
    return doc


def _num(v, key, lo=None, integer=False):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise SchemaError(key, f"expected a number, got {type(v).__name__}")
    if integer and (not isinstance(v, int) and not float(v).is_integer()):
        raise SchemaError(key, "expected an integer")
    v = int(v) if integer else float(v)
    if not math.isfinite(v):
        raise SchemaError(key, "must be finite")
    if lo is not None and v < lo:
        raise SchemaError(key, f"must be >= {lo}")
    return v


def _nested(v, key):
    """Nested list of numbers with rectangular shape."""
    if isinstance(v, list):
        if not v:
            raise SchemaError(key, "empty array")
        parts = [_nested(x, f"{key}[{i}]") for i, x in enumerate(v)]
        shapes = {p.shape for p in parts}
        if len(shapes) != 1:
            raise SchemaError(key, "ragged array (rows of unequal length)")
        return np.stack(parts)
    return np.asarray(_num(v, key))


def _matrix(v, key, shape, n_steps):
    a = _nested(v, key)
    if a.ndim == 0 and shape == (1, 1):
        a = a.reshape(1, 1)
    if a.shape == shape or a.shape == (n_steps,) + shape:
        return a
    raise SchemaError(key, f"shape {a.shape}; expected {shape} or {(n_steps,) + shape}")


def _per_mark(v, key, shape, n_steps, n_marks):
    if not isinstance(v, list) or len(v) != n_marks:
        raise SchemaError(key, f"expected a list with one entry per mark ({n_marks})")
    return [_matrix(x, f"{key}[{i}]", shape, n_steps) for i, x in enumerate(v)]


def _weights(doc, key, n, m, N):
    _obj(doc, key, set(WEIGHT_KEYS))
    shapes = {"Q": (n, n), "S": (m, n), "R": (m, m)}
    kw = {k: _matrix(doc[k], f"{key}.{k}", shapes[k], N) for k in shapes if k in doc}
    if "G" in doc:
        G = _nested(doc["G"], f"{key}.G")
        G = G.reshape(1, 1) if G.ndim == 0 and n == 1 else G
        if G.shape != (n, n):
            raise SchemaError(f"{key}.G", f"shape {G.shape}; expected {(n, n)}")
        kw["G"] = G
    return CostWeights.build(N, n, m, **kw)


def _problem(doc, delta_inv):
    _obj(doc, "", TOP_KEYS, required=("grid", "measure", "n", "m", "scenarios"))
    g = _obj(doc["grid"], "grid", {"t0", "T", "n_steps"}, required=("T", "n_steps"))
    t0 = _num(g.get("t0", 0.0), "grid.t0")
    grid = TimeGrid(t0, _num(g["T"], "grid.T"), _num(g["n_steps"], "grid.n_steps", lo=1, integer=True))
    meas = _obj(doc["measure"], "measure", {"marks"}, required=("marks",))
    if not isinstance(meas["marks"], list):
        raise SchemaError("measure.marks", "expected a list")
    marks = []
    for i, mk in enumerate(meas["marks"]):
        _obj(mk, f"measure.marks[{i}]", {"rate", "label"}, required=("rate",))
        label = mk.get("label", "")
        if not isinstance(label, str):
            raise SchemaError(f"measure.marks[{i}].label", "expected a string")
        marks.append(JumpMark(_num(mk["rate"], f"measure.marks[{i}].rate", lo=0.0), label))
    measure = JumpMeasure(tuple(marks))
    n = _num(doc["n"], "n", lo=1, integer=True)
    m = _num(doc["m"], "m", lo=1, integer=True)
    N, K = grid.n_steps, measure.n_marks
    shared = doc.get("weights")
    scen_docs = doc["scenarios"]
    if not isinstance(scen_docs, list) or not scen_docs:
        raise SchemaError("scenarios", "expected a nonempty list")
    scenarios = []
    for i, sd in enumerate(scen_docs):
        key = f"scenarios[{i}]"
        _obj(sd, key, {"probability", "coefficients", "weights"}, required=("coefficients",))
        p = _num(sd.get("probability", 1.0), f"{key}.probability")
        cd = _obj(sd["coefficients"], f"{key}.coefficients", set(COEF_KEYS))
        shapes = {"A": (n, n), "B": (n, m), "C": (n, n), "D": (n, m)}
        kw = {k: _matrix(cd[k], f"{key}.coefficients.{k}", shapes[k], N) for k in shapes if k in cd}
        if "E" in cd:
            kw["E"] = _per_mark(cd["E"], f"{key}.coefficients.E", (n, n), N, K)
        if "F" in cd:
            kw["F"] = _per_mark(cd["F"], f"{key}.coefficients.F", (n, m), N, K)
        coef = CoefficientSet.build(N, n, m, n_marks=K, **kw)
        wd = sd.get("weights", shared)
        if wd is None:
            raise SchemaError(f"{key}.weights", "no weights given and no top-level weights")
        scenarios.append(Scenario(p, coef, _weights(wd, f"{key}.weights" if "weights" in sd else "weights",
                                                    n, m, N)))
    spec = validate_problem(ProblemSpec(grid, measure, tuple(scenarios), n, m, delta_inv))
    init = doc.get("initial", [0.0] * n)
    xi = _nested(init, "initial").reshape(-1) if isinstance(init, list) else np.array([_num(init, "initial")])
    if xi.shape != (n,):
        raise SchemaError("initial", f"expected {n} entries")
    return spec, xi


def _tab(v, key, N):
    if isinstance(v, list):
        a = _nested(v, key)
        if a.shape != (N,):
            raise SchemaError(key, f"expected a number or {N} per-step values")
        return tuple(a.tolist())
    return _num(v, key)


def _finance(doc):
    key = "finance"
    _obj(doc, key, FINANCE_KEYS, required=("lambda", "alpha", "T", "steps"))
    N = _num(doc["steps"], "finance.steps", lo=1, integer=True)
    jumps = doc.get("jumps", [])
    if not isinstance(jumps, list):
        raise SchemaError("finance.jumps", "expected a list")
    rates, gammas = [], []
    for i, j in enumerate(jumps):
        _obj(j, f"finance.jumps[{i}]", {"rate", "gamma", "label"}, required=("rate", "gamma"))
        rates.append(_num(j["rate"], f"finance.jumps[{i}].rate", lo=0.0))
        gammas.append(_tab(j["gamma"], f"finance.jumps[{i}].gamma", N))
    return FinanceParams(
        lam=_num(doc["lambda"], "finance.lambda"), alpha=_num(doc["alpha"], "finance.alpha"),
        r=_tab(doc.get("r", 0.0), "finance.r", N), sigma=_tab(doc.get("sigma", 0.0), "finance.sigma", N),
        gammas=tuple(gammas), rates=tuple(rates), T=_num(doc["T"], "finance.T"),
        x0=_num(doc.get("x0", 1.0), "finance.x0"), n_steps=N, t0=_num(doc.get("t0", 0.0), "finance.t0"),
    )


def _control(v, m, N):
    if v is None or v == "optimal":
        return "optimal"
    if isinstance(v, str):
        raise SchemaError("control", "expected \"optimal\", a number, an m-vector or an (n_steps, m) table")
    a = _nested(v, "control")
    if a.ndim == 0:
        a = np.full(m, float(a))
    if a.shape == (m,) or a.shape == (N, m):
        return a
    raise SchemaError("control", f"shape {a.shape}; expected ({m},) or ({N}, {m})")


def load_config(doc: dict, command: Optional[str] = None) -> RunConfig:
    """Build a RunConfig from an already-decoded JSON document."""
    _obj(doc, "", TOP_KEYS)
    cmd = command or doc.get("command") or ("finance" if "finance" in doc else None)
    if cmd is None:
        raise SchemaError("command", "no command given and no finance block to infer it from")
    if cmd not in COMMANDS:
        raise SchemaError("command", f"unknown command {cmd!r}; expected one of {', '.join(COMMANDS)}")

    tol = dict(TOL_DEFAULTS)
    for k, v in _obj(doc.get("tolerances", {}), "tolerances", set(TOL_DEFAULTS)).items():
        tol[k] = _num(v, f"tolerances.{k}", lo=0, integer=(k == "refine"))
    if tol["refine"] < 1:
        raise SchemaError("tolerances.refine", "must be >= 1")
    mc = dict(MC_DEFAULTS)
    for k, v in _obj(doc.get("mc", {}), "mc", set(MC_DEFAULTS)).items():
        if k == "epsilons":
            if not isinstance(v, list):
                raise SchemaError("mc.epsilons", "expected a list")
            mc[k] = [_num(e, f"mc.epsilons[{i}]") for i, e in enumerate(v)]
        else:
            mc[k] = _num(v, f"mc.{k}", lo=0 if k == "seed" else 1, integer=True)
    out = _obj(doc.get("output", {}), "output", {"directory", "formats"})
    directory = out.get("directory", ".")
    if not isinstance(directory, str):
        raise SchemaError("output.directory", "expected a string")
    formats = out.get("formats", list(FORMATS))
    if not isinstance(formats, list) or any(f not in FORMATS for f in formats):
        raise SchemaError("output.formats", f"expected a subset of {list(FORMATS)}")

    if "finance" in doc:
        clash = sorted(PROBLEM_KEYS & set(doc))
        if clash:
            raise SchemaError(clash[0], "not allowed together with a finance block")
        fin = _finance(doc["finance"])
        problem, xi, m, N = None, np.array([fin.x0]), 1, fin.n_steps
        build_wealth_spec(fin)
    else:
        if cmd == "finance":
            raise SchemaError("finance", "the finance command needs a finance block")
        fin = None
        problem, xi = _problem(doc, tol["delta_inv"])
        m, N = problem.m, problem.grid.n_steps
    return RunConfig(cmd, problem, fin, xi, _control(doc.get("control"), m, N), mc, tol,
                     directory, tuple(f for f in FORMATS if f in formats))


def parse_config(path, command: Optional[str] = None) -> RunConfig:
    """Read and validate a JSON config file.

    ParseError carries the line and column of malformed JSON; SchemaError
    names the offending key path.
    """
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc.strerror}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return load_config(doc, command)


def _mat_list(a: np.ndarray):
    """Constant tables collapse back to a single matrix."""
    if a.shape[0] and np.all(a == a[0]):
        return a[0].tolist()
    return a.tolist()


def config_to_dict(cfg: RunConfig) -> dict:
    """Emit a document that load_config maps back to an equivalent RunConfig."""
    doc: dict = {"command": cfg.command}
    if cfg.finance is not None:
        f = cfg.finance
        tab = lambda v: list(v) if isinstance(v, (tuple, list, np.ndarray)) else float(v)
        doc["finance"] = {
            "lambda": f.lam, "alpha": f.alpha, "r": tab(f.r), "sigma": tab(f.sigma),
            "jumps": [{"rate": float(r), "gamma": tab(g)} for r, g in zip(f.rates, f.gammas)],
            "T": f.T, "t0": f.t0, "steps": f.n_steps, "x0": f.x0,
        }
    else:
        p = cfg.problem
        doc.update({
            "grid": {"t0": p.grid.t0, "T": p.grid.T, "n_steps": p.grid.n_steps},
            "measure": {"marks": [{"rate": mk.rate, "label": mk.label} for mk in p.measure.marks]},
            "n": p.n, "m": p.m, "initial": cfg.initial.tolist(),
            "scenarios": [],
        })
        for s in p.scenarios:
            c, w = s.coefficients, s.weights
            coef = {k: _mat_list(getattr(c, k)) for k in ("A", "B", "C", "D")}
            coef["E"] = [_mat_list(e) for e in c.E]
            coef["F"] = [_mat_list(f) for f in c.F]
            weights = {k: _mat_list(getattr(w, k)) for k in ("Q", "S", "R")}
            weights["G"] = w.G.tolist()
            doc["scenarios"].append({"probability": s.probability, "coefficients": coef, "weights": weights})
    doc["control"] = cfg.control if isinstance(cfg.control, str) else np.asarray(cfg.control).tolist()
    doc["mc"] = dict(cfg.mc)
    doc["tolerances"] = dict(cfg.tolerances)
    doc["output"] = {"directory": cfg.directory, "formats": list(cfg.formats)}
    return doc


# -- output -----------------------------------------------------------------

def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    return obj


def dumps(obj, indent: int = 2) -> str:
    """JSON text with every float written to 17 significant digits."""

    def enc(v, depth):
        pad, inner = " " * (indent * depth), " " * (indent * (depth + 1))
        if isinstance(v, dict):
            if not v:
                return "{}"
            items = [f"{inner}{json.dumps(k)}: {enc(x, depth + 1)}" for k, x in v.items()]
            return "{\n" + ",\n".join(items) + "\n" + pad + "}"
        if isinstance(v, list):
            if not v:
                return "[]"
            if all(not isinstance(x, (dict, list)) for x in v):
                return "[" + ", ".join(enc(x, depth + 1) for x in v) + "]"
            return "[\n" + ",\n".join(inner + enc(x, depth + 1) for x in v) + "\n" + pad + "]"
        if isinstance(v, bool) or v is None:
            return json.dumps(v)
        if isinstance(v, float):
            return format(v, ".17g") if math.isfinite(v) else "null"
        return json.dumps(v)

    return enc(_plain(obj), 0) + "\n"


class _Emitter:
    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.written: list[str] = []
        os.makedirs(cfg.directory, exist_ok=True)

    def _path(self, name):
        p = os.path.join(self.cfg.directory, name)
        self.written.append(p)
        return p

    def json(self, name, obj):
        if "json" in self.cfg.formats:
            with open(self._path(name), "w") as fh:
                fh.write(dumps(obj))

    def csv(self, name, writer):
        if "csv" in self.cfg.formats:
            writer(self._path(name))


def _noise(cfg: RunConfig, spec: ProblemSpec):
    return sample_noise(spec.measure, spec.grid, cfg.mc["n_paths"], cfg.mc["seed"], workers=cfg.mc["workers"])


def _policy(cfg: RunConfig, spec: ProblemSpec):
    if isinstance(cfg.control, str):
        sols = solve_all(spec, cfg.tolerances["eps_N"])
        return FeedbackControl(np.stack([s.K for s in sols])), sols
    return cfg.control, None


def _cmd_riccati(cfg, spec, out):
    sols = solve_all(spec, cfg.tolerances["eps_N"])
    for i, sol in enumerate(sols):
        out.csv("riccati.csv" if len(sols) == 1 else f"riccati_s{i}.csv", sol.to_csv)
    summary = {"P0": [s.P[0] for s in sols], "min_eig_N": [s.min_eig_N for s in sols],
               "gain_max_abs": [float(np.max(np.abs(s.K))) for s in sols]}
    out.json("riccati.json", summary)
    return EXIT_OK, summary


def _cmd_simulate(cfg, spec, out):
    pol, _ = _policy(cfg, spec)
    paths = simulate_paths(spec, 0 if len(spec.scenarios) == 1 else None, pol, cfg.initial, _noise(cfg, spec))
    out.csv("paths.csv", paths.to_csv)
    summary = {"n_paths": paths.n_paths, "n_jumps": paths.noise.n_jumps,
               "terminal_mean": paths.terminal.mean(axis=0)}
    out.json("simulate.json", summary)
    return EXIT_OK, summary


def _cmd_evaluate(cfg, spec, out):
    noise = _noise(cfg, spec)
    weights = [s.weights for s in spec.scenarios]
    if isinstance(cfg.control, str):
        sols = solve_all(spec, cfg.tolerances["eps_N"])
        paths = closed_loop_simulate(spec, sols, cfg.initial, noise)
        exact = None
    else:
        paths = simulate_paths(spec, 0 if len(spec.scenarios) == 1 else None, cfg.control, cfg.initial, noise)
        exact = moment_ode_cost(spec, None, cfg.control, cfg.initial)
    est = estimate_cost(paths, weights, exact)
    out.json("cost.json", est.as_dict())
    return EXIT_OK, est.as_dict()


def _cmd_verify(cfg, spec, out):
    mc, tol = cfg.mc, cfg.tolerances
    report = verify(spec, cfg.initial, _noise(cfg, spec), eps_N=tol["eps_N"], allowance=tol["allowance"],
                    n_directions=mc["n_directions"], epsilons=mc["epsilons"], n_probe=mc["n_probe"],
                    seed=mc["seed"])
    d = report.as_dict()
    out.json("verification.json", d)
    return (EXIT_OK if report.passed else EXIT_FAIL), d


def _cmd_probe(cfg, spec, out):
    ratios = probe_ratios(spec, cfg.mc["n_probe"], cfg.mc["seed"])
    d = {"probe_delta": float(ratios.min()), "n_controls": len(ratios), "seed": cfg.mc["seed"],
         "ratios": ratios, "note": "upper bound on the convexity constant; only a negative value is conclusive"}
    out.json("probe.json", d)
    return EXIT_OK, d


def _cmd_finance(cfg, spec, out):
    rep = finance_report(cfg.finance, cfg.tolerances["eps_N"]).as_dict()
    ok = rep["P0_numeric"] is None or abs(rep["P0_numeric"] - rep["P0_analytic"]) <= 1e-8 * abs(rep["P0_analytic"])
    out.json("finance.json", rep)
    return (EXIT_OK if ok else EXIT_FAIL), rep


_DISPATCH = {"riccati": _cmd_riccati, "simulate": _cmd_simulate, "evaluate": _cmd_evaluate,
             "verify": _cmd_verify, "probe": _cmd_probe, "finance": _cmd_finance}


def run_command(cfg: RunConfig, stream=None) -> int:
    """Dispatch ``cfg.command``; returns 0 on pass, 2 on a failed check, 1 on error."""
    stream = sys.stdout if stream is None else stream
    try:
        spec = cfg.spec
        status, summary = _DISPATCH[cfg.command](cfg, spec, _Emitter(cfg))
    except JumpLQError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    stream.write(dumps(summary))
    return status


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="jumplq", description="Indefinite stochastic LQ control with jumps.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("config", help="JSON configuration file")
        p.add_argument("-o", "--output", help="output directory (overrides output.directory)")
    args = ap.parse_args(argv)
    try:
        cfg = parse_config(args.config, args.command)
    except JumpLQError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    if args.output:
        cfg.directory = args.output
    return run_command(cfg)


if __name__ == "__main__":
    sys.exit(main())
