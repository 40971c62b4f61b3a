"""Command-line front end.

Exit codes: 0 success, 1 input or usage error, 2 infeasible / not certifiable.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import math
import sys
import warnings
from typing import Sequence

import numpy as np

from . import problemfile, sim, synth
from .model import DimensionError
from .problemfile import ProblemFile, ProblemFileError
from .sdp import SolverOptions

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_INFEASIBLE = 2
REPORT_SCHEMA = 1

METHODS = ("lqr", "gcc-lemma", "gcc-dilated")
COMPARE_ROWS = (
    ("1) LQR", "lqr", False),
    ("2) GCC lemma (unstructured)", "gcc-lemma", False),
    ("3) GCC dilated (unstructured)", "gcc-dilated", False),
    ("4) GCC lemma (structured)", "gcc-lemma", True),
    ("5) GCC dilated (structured)", "gcc-dilated", True),
)


class UsageError(ValueError):
    pass


# -- configuration ------------------------------------------------------------

@dataclasses.dataclass
class Settings:
    solver: SolverOptions = dataclasses.field(default_factory=SolverOptions)
    backend: str = "barrier"
    sim: dict = dataclasses.field(default_factory=dict)


def _coerce(value, like):
    if isinstance(like, bool):
        if isinstance(value, str):
            if value.lower() in ("1", "true", "yes"):
                return True
            if value.lower() in ("0", "false", "no"):
                return False
            raise UsageError(f"expected a boolean, got {value!r}")
        return bool(value)
    if isinstance(like, int):
        return int(value)
    if isinstance(like, float):
        v = float(value)
        if not math.isfinite(v):
            raise UsageError("non-finite option value")
        return v
    return value


def settings_for(pf: ProblemFile, overrides: Sequence[str]) -> Settings:
    """Defaults, then the problem file's ``config`` section, then ``--opt key=value`` flags."""
    items = list(pf.config.items())
    for text in overrides:
        if "=" not in text:
            raise UsageError(f"--opt expects key=value, got {text!r}")
        k, v = text.split("=", 1)
        items.append((k.strip(), v.strip()))
    st = Settings(sim=dict(pf.sim))
    fields = {f.name: f for f in dataclasses.fields(SolverOptions)}
    for key, value in items:
        section, _, name = key.partition(".")
        if section == "solver" and name == "backend":
            st.backend = str(value)
        elif section == "solver" and name in fields:
            try:
                st.solver = st.solver.with_overrides(**{name: _coerce(value, getattr(st.solver, name))})
            except ValueError as e:
                raise UsageError(f"option {key}: {e}") from e
        elif section == "sim" and name in ("runs", "horizon", "seed", "x0"):
            st.sim[name] = value
        else:
            raise UsageError(f"unknown option {key!r}")
    return st


def _x0_mode(spec, nx: int):
    if spec is None or spec == "gaussian":
        return sim.StandardGaussian()
    if isinstance(spec, list):
        vals = spec
    elif isinstance(spec, str) and spec.startswith("fixed:"):
        try:
            vals = [float(v) for v in spec[6:].split(",")]
        except ValueError as e:
            raise UsageError(f"bad --x0 value {spec!r}") from e
    else:
        raise UsageError(f"--x0 must be 'gaussian' or 'fixed:v1,v2,...', got {spec!r}")
    if len(vals) != nx or not all(math.isfinite(float(v)) for v in vals):
        raise UsageError(f"fixed x0 needs {nx} finite entries, got {len(vals)}")
    return sim.FixedVector(np.array(vals, dtype=float))


def sim_config(pf: ProblemFile, st: Settings, args) -> sim.SimConfig:
    d = dict(st.sim)
    for name in ("runs", "horizon", "seed", "x0"):
        v = getattr(args, name, None)
        if v is not None:
            d[name] = v
    try:
        return sim.SimConfig(runs=int(d.get("runs", 5000)), horizon=int(d.get("horizon", 200)),
                             seed=int(d.get("seed", 0)), x0_mode=_x0_mode(d.get("x0"), pf.system.nx))
    except (TypeError, ValueError) as e:
        raise UsageError(str(e)) from e


# -- helpers ------------------------------------------------------------------

def _mat(m) -> list | None:
    if m is None:
        return None
    return [[float(v) for v in row] for row in np.atleast_2d(m)]


def _solver_doc(sol) -> dict | None:
    if sol is None:
        return None
    return {"status": sol.status.value, "iterations": sol.iterations, "gap": _num(sol.gap_estimate),
            "max_constraint_eig": _num(sol.max_constraint_eig), "objective": _num(sol.objective_value),
            "message": sol.message}


def _num(v):
    v = float(v)
    return v if math.isfinite(v) else None


def _write_json(doc: dict, path: str | None) -> None:
    text = json.dumps(doc, indent=1, allow_nan=False) + "\n"
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w", newline="\n") as fh:
            fh.write(text)


def _write_csv(header: list[str], rows: list[list], path: str | None) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    if path is None or path == "-":
        sys.stdout.write(buf.getvalue())
    else:
        with open(path, "w", newline="") as fh:
            fh.write(buf.getvalue())


def _fmt(v) -> str:
    if v is None:
        return "n/a"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else "n/a"
    return str(v)


def _read_matrix_doc(path: str, key: str, what: str) -> np.ndarray:
    try:
        with open(path) as fh:
            doc = json.load(fh, parse_constant=problemfile._reject_constant)
    except OSError as e:
        raise UsageError(f"{path}: {e.strerror}") from e
    except json.JSONDecodeError as e:
        raise UsageError(f"{path}: invalid JSON at line {e.lineno}, column {e.colno}: {e.msg}") from e
    if isinstance(doc, dict):
        if key not in doc or doc[key] is None:
            raise UsageError(f"{path}: no '{key}' entry for the {what}")
        doc = doc[key]
    return problemfile._matrix(doc, f"{path}:{key}")


def run_method(pf: ProblemFile, method: str, structured: bool, st: Settings,
               flipped_sign: bool = False) -> synth.SynthesisResult:
    s, c = pf.system, pf.cost
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        if method == "lqr":
            return synth.lqr(s, c)
        if method == "gcc-lemma":
            return synth.synth_lemma(s, c, structured, opts=st.solver, solver=st.backend)
        if method == "gcc-dilated":
            return synth.synth_dilated(s, c, structured, flipped_sign=flipped_sign,
                                       opts=st.solver, solver=st.backend)
    raise UsageError(f"unknown method {method!r}")


def synthesis_report(pf: ProblemFile, res: synth.SynthesisResult, method: str, multiplier: str) -> dict:
    mult = None
    if res.multipliers is not None:
        mult = {"upsilon": [_mat(b) for b in res.multipliers.blocks],
                "lambda": [_mat(b) for b in res.lambdas.blocks]}
    return {
        "schema_version": REPORT_SCHEMA,
        "problem": pf.name,
        "method": method,
        "multiplier": multiplier,
        "synthesis_cost": res.synthesis_cost,
        "objective": _num(res.objective),
        "gain": _mat(res.k),
        "certificate": _mat(res.p),
        "multipliers": mult,
        "solver": _solver_doc(res.solver),
    }


# -- verbs --------------------------------------------------------------------

def cmd_synth(args) -> int:
    pf = problemfile.load(args.input)
    st = settings_for(pf, args.opt)
    structured = args.multiplier == "structured"
    try:
        res = run_method(pf, args.method, structured, st, args.flipped_sign)
    except synth.NoControllerError as e:
        doc = {"schema_version": REPORT_SCHEMA, "problem": pf.name, "method": args.method,
               "multiplier": args.multiplier, "synthesis_cost": None, "error": str(e),
               "solver": _solver_doc(e.solution)}
        _write_json(doc, args.output)
        print(f"no controller: {e}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except synth.ConditioningError as e:
        print(f"no controller: {e}", file=sys.stderr)
        return EXIT_INFEASIBLE
    _write_json(synthesis_report(pf, res, args.method, args.multiplier), args.output)
    return EXIT_OK


def cmd_certify(args) -> int:
    pf = problemfile.load(args.input)
    st = settings_for(pf, args.opt)
    k = _read_matrix_doc(args.gain, "gain", "controller gain")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        cert = synth.certify(pf.system, pf.cost, k, opts=st.solver, solver=st.backend)
    mult = None
    if cert.multipliers is not None:
        mult = {"lambda": [_mat(b) for b in cert.multipliers.blocks]}
    _write_json({"schema_version": REPORT_SCHEMA, "problem": pf.name, "method": "certify",
                 "certified": cert.certified, "bound": _num(cert.bound), "gain": _mat(k),
                 "certificate": _mat(cert.p), "multipliers": mult, "message": cert.message,
                 "solver": _solver_doc(cert.solver)}, args.output)
    return EXIT_OK if cert.certified else EXIT_INFEASIBLE


def cmd_simulate(args) -> int:
    pf = problemfile.load(args.input)
    st = settings_for(pf, args.opt)
    k = _read_matrix_doc(args.gain, "gain", "controller gain")
    p = _read_matrix_doc(args.certificate, "certificate", "certificate P") if args.certificate else None
    cfg = sim_config(pf, st, args)
    if args.trajectories:
        cfg = dataclasses.replace(cfg, record_trajectories=True)
    rep = sim.run(pf.system, pf.cost, k, cfg, certificate=p)
    summary = {
        "schema_version": REPORT_SCHEMA, "problem": pf.name, "runs": cfg.runs, "horizon": cfg.horizon,
        "seed": cfg.seed, "effective_cost": _num(rep.effective_cost), "ci95_halfwidth": _num(rep.ci95_halfwidth),
        "diverged": rep.diverged, "bound_violations": rep.bound_violations,
        "lyapunov_violations": rep.lyapunov_violations, "max_state_norm": _num(rep.max_state_norm),
    }
    _write_json(summary, args.summary)
    if args.output:
        ok = None
        if p is not None:
            bound = np.einsum("ri,ij,rj->r", rep.x0, p, rep.x0)
            ok = rep.per_run_costs <= bound * (1.0 + sim.BOUND_RTOL) + sim.BOUND_ATOL
        rows = [[i, _fmt(float(cst)), _fmt(None if ok is None else bool(ok[i]))]
                for i, cst in enumerate(rep.per_run_costs)]
        _write_csv(["run", "cost", "bound_ok"], rows, args.output)
    if args.trajectories:
        sim.write_trajectories(rep, args.trajectories)
    return EXIT_OK


def cmd_compare(args) -> int:
    pf = problemfile.load(args.input)
    st = settings_for(pf, args.opt)
    cfg = sim_config(pf, st, args)
    rows = []
    for label, method, structured in COMPARE_ROWS:
        row = {"method": label, "synthesis_cost": None, "effective_cost": None, "ci95": None,
               "certified": None, "note": ""}
        try:
            res = run_method(pf, method, structured, st)
        except (synth.PreconditionError, synth.SynthesisError, DimensionError) as e:
            row["note"] = str(e)
            rows.append(row)
            continue
        row["synthesis_cost"] = res.synthesis_cost
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            cert = synth.certify(pf.system, pf.cost, res.k, opts=st.solver, solver=st.backend)
        row["certified"] = cert.certified
        rep = sim.run(pf.system, pf.cost, res.k, cfg)
        row["effective_cost"] = rep.effective_cost
        row["ci95"] = rep.ci95_halfwidth
        if rep.diverged:
            row["note"] = f"{rep.diverged} diverged runs excluded"
        rows.append(row)
    header = ["method", "synthesis_cost", "effective_cost", "ci95", "certified", "note"]
    _write_csv(header, [[_fmt(r[h]) if h != "note" else r[h] for h in header] for r in rows], args.output)
    return EXIT_OK


def cmd_validate(args) -> int:
    pf = problemfile.load(args.input)
    rep = problemfile.check(pf)
    _write_json({"schema_version": REPORT_SCHEMA, "problem": pf.name,
                 "nx": pf.system.nx, "nu": pf.system.nu, "ny": pf.system.ny,
                 "n_p": pf.system.n_p, "n_q": pf.system.n_q,
                 **{k: (_num(v) if isinstance(v, float) else v) for k, v in dataclasses.asdict(rep).items()},
                 "ok": rep.ok}, args.output)
    return EXIT_OK


# -- entry point ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gccsynth", description=(
        "Guaranteed-cost robust controller synthesis for uncertain discrete-time systems. "
        "Exit codes: 0 success, 1 input error, 2 infeasible or not certifiable."))
    sub = ap.add_subparsers(dest="verb", required=True)

    def common(p):
        p.add_argument("input", help="problem JSON file (or a bundled name: example1, example2)")
        p.add_argument("--opt", action="append", default=[], metavar="KEY=VALUE",
                       help="override a setting, e.g. solver.eps=1e-8 or sim.runs=100")

    def simargs(p):
        p.add_argument("--runs", type=int)
        p.add_argument("--horizon", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--x0", help="'gaussian' or 'fixed:v1,v2,...'")

    p = sub.add_parser("synth", help="synthesize a controller")
    common(p)
    p.add_argument("--method", choices=METHODS, default="gcc-dilated")
    p.add_argument("--multiplier", choices=("structured", "unstructured"), default="structured")
    p.add_argument("--flipped-sign", action="store_true",
                   help="dilated method: use the alternative sign of the slack terms (for comparison)")
    p.add_argument("--output", "-o", help="report JSON path (default stdout)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("certify", help="certify a fixed gain")
    common(p)
    p.add_argument("--gain", required=True, help="JSON file: a synth report or a bare matrix")
    p.add_argument("--output", "-o")
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("simulate", help="Monte Carlo simulation of a gain")
    common(p)
    simargs(p)
    p.add_argument("--gain", required=True, help="JSON file: a synth report or a bare matrix")
    p.add_argument("--certificate", help="JSON file with a 'certificate' entry (or a bare matrix)")
    p.add_argument("--output", "-o", help="per-run CSV (run, cost, bound_ok)")
    p.add_argument("--summary", help="summary JSON path (default stdout)")
    p.add_argument("--trajectories", metavar="DIR", help="write one trajectory CSV per run")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("compare", help="run all five methods and tabulate costs")
    common(p)
    simargs(p)
    p.add_argument("--output", "-o", help="CSV path (default stdout)")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("validate", help="check a problem file")
    common(p)
    p.add_argument("--output", "-o")
    p.set_defaults(func=cmd_validate)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_INPUT
    try:
        return args.func(args)
    except (ProblemFileError, UsageError, synth.PreconditionError, DimensionError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
