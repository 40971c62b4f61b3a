"""JSON problem files.

Layout::

    {"schema_version": 1, "name": "...",
     "system": {"A": [[...]], "Bu": ..., "Bw": ..., "Cy": ..., "Dyw": ...,
                "Cz": ..., "Dzu": ..., "Dzw": ...},
     "structure": [{"repeats": 1, "rows": 1, "cols": 1}, ...],
     "cost": {"Q": ..., "N": ..., "R": ...},
     "sim": {"runs": 5000, "horizon": 200, "seed": 0, "x0": "gaussian" | [..]},
     "config": {"solver.eps": 1e-7, ...}}

Matrices are row-major nested lists.  ``N``, ``sim`` and ``config`` are
optional.  NaN and infinities are rejected.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .model import CostFunctional, UncertainSystem, UncertaintyBlock, ValidationReport, validate

SCHEMA_VERSION = 1
SYSTEM_KEYS = ("A", "Bu", "Bw", "Cy", "Dyw", "Cz", "Dzu", "Dzw")
_FIELD = dict(A="a", Bu="bu", Bw="bw", Cy="cy", Dyw="dyw", Cz="cz", Dzu="dzu", Dzw="dzw")


class ProblemFileError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ProblemFile:
    name: str
    system: UncertainSystem
    cost: CostFunctional
    sim: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)


def _reject_constant(tok: str):
    raise ProblemFileError(f"non-finite number {tok!r} is not allowed")


def _matrix(value, where: str) -> np.ndarray:
    if not isinstance(value, list):
        raise ProblemFileError(f"{where}: expected a list of rows")
    if not value:
        return np.zeros((0, 0))
    width = None
    rows = []
    for i, row in enumerate(value):
        if not isinstance(row, list):
            raise ProblemFileError(f"{where}[{i}]: expected a row (list of numbers)")
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise ProblemFileError(f"{where}[{i}]: row has {len(row)} entries, expected {width}")
        for j, v in enumerate(row):
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
                raise ProblemFileError(f"{where}[{i}][{j}]: expected a finite number, got {v!r}")
        rows.append([float(v) for v in row])
    return np.array(rows, dtype=float).reshape(len(rows), width)


def _int(value, where: str, minimum: int) -> int:
    if isinstance(value, bool) or not isinstance(value, int) or value < minimum:
        raise ProblemFileError(f"{where}: expected an integer >= {minimum}, got {value!r}")
    return value


def parse(doc: dict, source: str = "<problem>", run_validate: bool = True) -> ProblemFile:
    if not isinstance(doc, dict):
        raise ProblemFileError(f"{source}: top level must be an object")
    ver = doc.get("schema_version", SCHEMA_VERSION)
    if ver != SCHEMA_VERSION:
        raise ProblemFileError(f"{source}: unsupported schema_version {ver!r}")
    name = doc.get("name", os.path.splitext(os.path.basename(source))[0])
    sys_doc = doc.get("system")
    if not isinstance(sys_doc, dict):
        raise ProblemFileError(f"{source}: missing object 'system'")
    mats = {}
    for key in SYSTEM_KEYS:
        if key not in sys_doc:
            raise ProblemFileError(f"{source}: missing matrix 'system.{key}'")
        mats[_FIELD[key]] = _matrix(sys_doc[key], f"system.{key}")
    unknown = set(sys_doc) - set(SYSTEM_KEYS)
    if unknown:
        raise ProblemFileError(f"{source}: unknown system entries {sorted(unknown)}")
    st_doc = doc.get("structure", [])
    if not isinstance(st_doc, list):
        raise ProblemFileError(f"{source}: 'structure' must be a list")
    structure = []
    for i, b in enumerate(st_doc):
        if not isinstance(b, dict):
            raise ProblemFileError(f"structure[{i}]: expected an object")
        structure.append(UncertaintyBlock(
            repeats=_int(b.get("repeats", 1), f"structure[{i}].repeats", 1),
            rows=_int(b.get("rows", 1), f"structure[{i}].rows", 1),
            cols=_int(b.get("cols", 1), f"structure[{i}].cols", 1)))
    cost_doc = doc.get("cost")
    if not isinstance(cost_doc, dict) or "Q" not in cost_doc or "R" not in cost_doc:
        raise ProblemFileError(f"{source}: 'cost' must provide Q and R")
    q = _matrix(cost_doc["Q"], "cost.Q")
    r = _matrix(cost_doc["R"], "cost.R")
    n = _matrix(cost_doc["N"], "cost.N") if "N" in cost_doc else None
    try:
        system = UncertainSystem(structure=tuple(structure), **mats)
        cost = CostFunctional.from_weights(q, r, n)
    except ValueError as e:
        raise ProblemFileError(f"{source}: {e}") from e
    sim = doc.get("sim", {})
    config = doc.get("config", {})
    if not isinstance(sim, dict) or not isinstance(config, dict):
        raise ProblemFileError(f"{source}: 'sim' and 'config' must be objects")
    pf = ProblemFile(name=str(name), system=system, cost=cost, sim=dict(sim), config=dict(config))
    if run_validate:
        try:
            check(pf)
        except ValueError as e:
            raise ProblemFileError(f"{source}: {e}") from e
    return pf


def check(pf: ProblemFile) -> ValidationReport:
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return validate(pf.system, pf.cost)


def loads(text: str, source: str = "<string>", run_validate: bool = True) -> ProblemFile:
    try:
        doc = json.loads(text, parse_constant=_reject_constant)
    except json.JSONDecodeError as e:
        raise ProblemFileError(f"{source}: invalid JSON at line {e.lineno}, column {e.colno}: {e.msg}") from e
    return parse(doc, source, run_validate)


def bundled_examples() -> list[str]:
    return sorted(p.name[:-5] for p in resources.files("gccsynth.data").iterdir() if p.name.endswith(".json"))


def load(path: str, run_validate: bool = True) -> ProblemFile:
    """Load a problem file; a bare bundled name such as ``example1`` also works."""
    if not os.path.exists(path) and path in bundled_examples():
        text = resources.files("gccsynth.data").joinpath(path + ".json").read_text()
        return loads(text, path + ".json", run_validate)
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as e:
        raise ProblemFileError(f"{path}: {e.strerror}") from e
    return loads(text, path, run_validate)


def _mat_list(m: np.ndarray) -> list:
    return [[float(v) for v in row] for row in np.asarray(m)]


def to_doc(pf: ProblemFile) -> dict:
    s, c = pf.system, pf.cost
    doc = {
        "schema_version": SCHEMA_VERSION,
        "name": pf.name,
        "system": {key: _mat_list(getattr(s, _FIELD[key])) for key in SYSTEM_KEYS},
        "structure": [{"repeats": b.repeats, "rows": b.rows, "cols": b.cols} for b in s.structure],
        "cost": {"Q": _mat_list(c.q), "N": _mat_list(c.n), "R": _mat_list(c.r)},
    }
    if pf.sim:
        doc["sim"] = pf.sim
    if pf.config:
        doc["config"] = pf.config
    return doc


def dumps(pf: ProblemFile) -> str:
    return json.dumps(to_doc(pf), indent=1, allow_nan=False) + "\n"


def save(pf: ProblemFile, path: str) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(dumps(pf))
