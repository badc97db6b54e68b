"""SDPA sparse format (``.dat-s``) export/import and external result files.

SDPA solves ``min c'x  s.t.  sum_i F_i x_i - F_0 >= 0``.  A maximization
``max c'w  s.t.  C + sum_i w_i F_i >= 0`` maps to SDPA data ``(-c, F_0 = -C, F_i)``.
All 1x1 blocks, and each equality written as a pair of opposite 1x1
inequalities, share one diagonal block (negative size in the block list).
Comment lines starting with ``*`` carry variable ids and the block layout so
the file re-imports to the same problem; other SDPA files import with
generated ids.
"""

from __future__ import annotations

import ast
import re
from collections import defaultdict

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp

from ..moments import LinForm, SymMatrixAffine
from .problem import SdpProblem, SdpSolution

FORMAT_VERSION = 1


def _num(x: float) -> str:
    return repr(float(x))


def export_sdpa(problem: SdpProblem) -> str:
    comp = problem.compile()
    m = comp.m
    full, diag = [], []  # full: indices of blocks with size > 1; diag: ("b", i) or ("e", r, sign)
    for i, b in enumerate(problem.blocks):
        (diag if b.size == 1 else full).append(("b", i) if b.size == 1 else i)
    for r in range(len(problem.equalities)):
        diag.append(("e", r, 1))
        diag.append(("e", r, -1))

    lines = [f"* SDPA sparse export, format_version {FORMAT_VERSION}, maximization mapped to minimization",
             f"* objective_constant {_num(problem.objective.constant)}"]
    for j, vid in enumerate(problem.var_ids, start=1):
        lines.append(f"* var {j} {vid!r}")
    for pos, i in enumerate(full, start=1):
        lines.append(f"* block {pos} {i} {problem.block_names[i]}")
    for pos, item in enumerate(diag, start=1):
        if item[0] == "b":
            lines.append(f"* diag {pos} block {item[1]} {problem.block_names[item[1]]}")
        else:
            lines.append(f"* diag {pos} eq {item[1]} {item[2]:+d}")

    nblock = len(full) + (1 if diag else 0)
    sizes = [problem.blocks[i].size for i in full] + ([-len(diag)] if diag else [])
    lines.append(str(m))
    lines.append(str(nblock))
    lines.append(" ".join(map(str, sizes)))
    lines.append(" ".join(_num(-v) if v != 0 else "0" for v in comp.c) if m else "")

    entries: list[tuple[int, int, int, int, float]] = []
    for blk, i in enumerate(full, start=1):
        C, F = comp.consts[i], comp.coefs[i]
        s = C.shape[0]
        for p in range(s):
            for q in range(p, s):
                if C[p, q] != 0:
                    entries.append((0, blk, p + 1, q + 1, -C[p, q]))
        coo = F.tocoo()
        for row, col, val in zip(coo.row, coo.col, coo.data):
            p, q = divmod(int(row), s)
            if p <= q and val != 0:
                entries.append((int(col) + 1, blk, p + 1, q + 1, val))
    if diag:
        dblk = nblock
        for pos, item in enumerate(diag, start=1):
            if item[0] == "b":
                i = item[1]
                C, F = comp.consts[i], comp.coefs[i]
                if C[0, 0] != 0:
                    entries.append((0, dblk, pos, pos, -C[0, 0]))
                coo = F.tocoo()
                for col, val in zip(coo.col, coo.data):
                    if val != 0:
                        entries.append((int(col) + 1, dblk, pos, pos, val))
            else:
                r, sign = item[1], item[2]
                if comp.beq[r] != 0:
                    entries.append((0, dblk, pos, pos, sign * comp.beq[r]))
                for col in np.flatnonzero(comp.Aeq[r]):
                    entries.append((int(col) + 1, dblk, pos, pos, sign * comp.Aeq[r, col]))
    entries.sort(key=lambda e: (e[0], e[1], e[2], e[3]))
    for mat, blk, p, q, v in entries:
        lines.append(f"{mat} {blk} {p} {q} {_num(v)}")
    return "\n".join(lines) + "\n"


_SPLIT = re.compile(r"[\s,{}()]+")


def import_sdpa(text: str) -> SdpProblem:
    comments = []
    data_tokens: list[str] = []
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        if line[0] in '*"':
            comments.append(line[1:].strip())
            continue
        data_tokens.extend(t for t in _SPLIT.split(line) if t)

    c0 = 0.0
    var_names: dict[int, object] = {}
    block_map: dict[int, tuple[int, str]] = {}
    diag_map: dict[int, tuple] = {}
    for cm in comments:
        parts = cm.split(None, 3)
        if not parts:
            continue
        if parts[0] == "objective_constant":
            c0 = float(parts[1])
        elif parts[0] == "var" and len(parts) >= 3:
            var_names[int(parts[1])] = ast.literal_eval(cm.split(None, 2)[2])
        elif parts[0] == "block" and len(parts) >= 3:
            block_map[int(parts[1])] = (int(parts[2]), parts[3] if len(parts) > 3 else f"block{parts[2]}")
        elif parts[0] == "diag" and len(parts) >= 4:
            rest = cm.split()
            if rest[2] == "block":
                diag_map[int(rest[1])] = ("b", int(rest[3]), rest[4] if len(rest) > 4 else f"block{rest[3]}")
            elif rest[2] == "eq":
                diag_map[int(rest[1])] = ("e", int(rest[3]), int(rest[4]))

    pos = 0
    m = int(float(data_tokens[pos])); pos += 1
    nblock = int(float(data_tokens[pos])); pos += 1
    sizes = [int(float(t)) for t in data_tokens[pos:pos + nblock]]; pos += nblock
    cvec = np.array([float(t) for t in data_tokens[pos:pos + m]]); pos += m
    rest = data_tokens[pos:]
    if len(rest) % 5:
        raise ValueError("entry section is not a multiple of 5 fields")
    ent = defaultdict(list)
    for i in range(0, len(rest), 5):
        mat, blk, p, q = (int(float(t)) for t in rest[i:i + 4])
        ent[blk].append((mat, p - 1, q - 1, float(rest[i + 4])))

    var_ids = tuple(var_names.get(j, f"x{j}") for j in range(1, m + 1))

    def block_from(blk_entries, s, keep=None):
        const = np.zeros((s, s))
        rows, cols, vals = [], [], []
        for mat, p, q, v in blk_entries:
            if keep is not None and (p, q) != (keep, keep):
                continue
            pp, qq = (0, 0) if keep is not None else (p, q)
            if mat == 0:
                const[pp, qq] = const[qq, pp] = -v
            else:
                rows.append(pp * s + qq); cols.append(mat - 1); vals.append(v)
                if pp != qq:
                    rows.append(qq * s + pp); cols.append(mat - 1); vals.append(v)
        coef = sp.csc_matrix((vals, (rows, cols)), shape=(s * s, m))
        used = np.flatnonzero(np.diff(coef.indptr))
        return SymMatrixAffine(const, tuple(var_ids[u] for u in used), coef[:, used])

    placed: dict[int, tuple[SymMatrixAffine, str]] = {}
    extra: list[tuple[SymMatrixAffine, str]] = []
    eq_parts: dict[int, SymMatrixAffine] = {}
    for blk, size in enumerate(sizes, start=1):
        if size > 0:
            b = block_from(ent[blk], size)
            if blk in block_map:
                placed[block_map[blk][0]] = (b, block_map[blk][1])
            else:
                extra.append((b, f"block{blk}"))
        else:
            for d in range(-size):
                b = block_from(ent[blk], 1, keep=d)
                item = diag_map.get(d + 1)
                if item is None:
                    extra.append((b, f"block{blk}_{d + 1}"))
                elif item[0] == "b":
                    placed[item[1]] = (b, item[2])
                elif item[2] > 0:
                    eq_parts[item[1]] = b
    ordered = [placed[i] for i in sorted(placed)] + extra
    blocks = [b for b, _ in ordered]
    names = [n for _, n in ordered]
    equalities = []
    for r in sorted(eq_parts):
        b = eq_parts[r]
        form = b.entry(0, 0)
        equalities.append((LinForm(form.coeffs), -form.constant))
    objective = LinForm({v: -cv for v, cv in zip(var_ids, cvec) if cv != 0}, c0)
    return SdpProblem(var_ids, objective, blocks, equalities, names)


def write_result(path, problem: SdpProblem, values: dict, objective: float | None = None) -> None:
    """Result-file format: objective on the first line, then one value per variable per line."""
    w = [values[v] for v in problem.var_ids]
    if objective is None:
        objective = problem.objective.evaluate(values)
    with open(path, "w") as fh:
        fh.write(_num(objective) + "\n")
        fh.writelines(_num(x) + "\n" for x in w)


def read_result(text: str, problem: SdpProblem) -> SdpSolution:
    tokens = text.split()
    if len(tokens) != problem.num_vars + 1:
        raise ValueError(f"result file has {len(tokens) - 1} values for {problem.num_vars} variables")
    reported = float(tokens[0])
    values = {v: float(t) for v, t in zip(problem.var_ids, tokens[1:])}
    obj = problem.objective.evaluate(values)
    eigs = [float(la.eigvalsh(B)[0]) if B.size else 0.0 for B in problem.evaluate_blocks(values)]
    return SdpSolution("optimal", values, obj, eigs, 0, float("nan"), float("nan"),
                       message=f"external solution; reported objective {reported!r}")
