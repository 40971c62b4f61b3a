"""SDPA sparse text format, for cross-checking against external solvers.

The exported problem is in the reduced coordinates ``y`` of
``x = x0 + N y`` (equalities eliminated).  Each LMI block
``G(y) = C + sum_k y_k A_k <= -margin I`` becomes the SDPA block
``sum_k y_k F_k - F_0 >= 0`` with ``F_k = -A_k`` and ``F_0 = C + margin I``.
The dropped constant ``c'x0`` is written in a comment line.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

from .problem import Affine, SdpProblem
from .solver import SolverOptions, eliminate_equalities, reduced_blocks


@dataclass(frozen=True, eq=False)
class SdpaData:
    c: np.ndarray                    # (m,)
    f0: tuple[np.ndarray, ...]       # one matrix per block
    fk: tuple[np.ndarray, ...]       # one (m, d, d) array per block
    offset: float = 0.0
    lift: np.ndarray | None = None   # N, so that x = x0 + N y
    x0: np.ndarray | None = None

    @property
    def nvars(self) -> int:
        return self.c.size

    def to_problem(self, name: str = "sdpa") -> SdpProblem:
        """Rebuild an ``SdpProblem`` over ``y`` (non-strict blocks; margins are already in ``F_0``)."""
        p = SdpProblem(name)
        y = p.add_mat_var(self.nvars, 1, "y")
        for b, (f0, fk) in enumerate(zip(self.f0, self.fk)):
            blk = Affine(np.zeros(f0.shape), y.idx, fk) - f0
            p.add_psd(blk, strict=False, name=f"block{b + 1}")
        p.minimize(y.T @ self.c.reshape(-1, 1) + self.offset)
        return p


def to_sdpa(problem: SdpProblem, opts: SolverOptions | None = None) -> SdpaData:
    opts = opts or SolverOptions()
    p = problem.seal()
    E, f = p.equalities
    x0, nsp = eliminate_equalities(E, f, opts.eq_rtol)
    consts, coefs = reduced_blocks(p.lmi_blocks, x0, nsp, opts)
    c = nsp.T @ p.objective
    offset = float(p.objective @ x0) + p.objective_offset
    return SdpaData(c=c, f0=tuple(consts), fk=tuple(-a for a in coefs), offset=offset, lift=nsp, x0=x0)


def write_sdpa(problem: SdpProblem | SdpaData, path: str, opts: SolverOptions | None = None,
               tol: float = 0.0) -> SdpaData:
    """Write ``problem`` to ``path``; entries with ``|v| <= tol`` are skipped."""
    data = problem if isinstance(problem, SdpaData) else to_sdpa(problem, opts)
    name = getattr(problem, "name", "") or "problem"
    lines = [f'"{name}: equalities eliminated, objective offset {data.offset!r}',
             f"* offset {data.offset!r}",
             str(data.nvars), str(len(data.f0)),
             " ".join(str(b.shape[0]) for b in data.f0),
             " ".join(repr(float(v)) for v in data.c)]
    for blk, (f0, fk) in enumerate(zip(data.f0, data.fk), start=1):
        for mat, m in [(0, f0)] + [(i + 1, fk[i]) for i in range(data.nvars)]:
            i, j = np.triu_indices(m.shape[0])
            vals = m[i, j]
            keep = np.abs(vals) > tol
            for a, b, v in zip(i[keep], j[keep], vals[keep]):
                lines.append(f"{mat} {blk} {a + 1} {b + 1} {float(v)!r}")
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    return data


_SPLIT = re.compile(r"[\s,{}()]+")


def read_sdpa(path: str) -> SdpaData:
    offset = 0.0
    tokens: list[str] = []
    with open(path) as fh:
        for line in fh:
            s = line.strip()
            if s.startswith("* offset"):
                offset = float(s.split()[2])
                continue
            if not s or s[0] in '"*':
                continue
            tokens.extend(t for t in _SPLIT.split(s) if t)
    pos = 0

    def take(count: int) -> list[str]:
        nonlocal pos
        out = tokens[pos:pos + count]
        if len(out) != count:
            raise ValueError(f"{path}: unexpected end of file")
        pos += count
        return out

    m = int(take(1)[0])
    nblocks = int(take(1)[0])
    sizes = [int(v) for v in take(nblocks)]
    if any(sz < 0 for sz in sizes):
        raise ValueError(f"{path}: diagonal (negative-size) blocks are not supported")
    c = np.array([float(v) for v in take(m)]) if m else np.zeros(0)
    f0 = [np.zeros((sz, sz)) for sz in sizes]
    fk = [np.zeros((m, sz, sz)) for sz in sizes]
    rest = tokens[pos:]
    if len(rest) % 5:
        raise ValueError(f"{path}: malformed entry list")
    for q in range(0, len(rest), 5):
        mat, blk, i, j = (int(v) for v in rest[q:q + 4])
        v = float(rest[q + 4])
        if not math.isfinite(v):
            raise ValueError(f"{path}: non-finite entry")
        target = f0[blk - 1] if mat == 0 else fk[blk - 1][mat - 1]
        target[i - 1, j - 1] = v
        target[j - 1, i - 1] = v
    return SdpaData(c=c, f0=tuple(f0), fk=tuple(fk), offset=offset)
