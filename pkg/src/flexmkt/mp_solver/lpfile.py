"""CPLEX-LP-format text export for external cross-checks.

Ranged rows become a ``_lo``/``_hi`` pair since the classic LP format has
no range syntax; equalities and one-sided rows map directly. Numbers are
printed with 12 significant digits. Variable names are sanitized to the
LP character set, in declaration order.
"""

from __future__ import annotations

import math
import re

from .model import LinearProgram, MixedProgram

__all__ = ["export_lp"]

_SAFE = re.compile(r"[^A-Za-z0-9_.]")


def _num(v: float) -> str:
    return f"{v:.12g}"


def _sanitize_names(names: list[str]) -> list[str]:
    out, used = [], set()
    for name in names:
        token = _SAFE.sub("_", name)
        if not token or token[0].isdigit() or token[0] == ".":
            token = "v_" + token
        base, k = token, 1
        while token in used:
            token = f"{base}_{k}"
            k += 1
        used.add(token)
        out.append(token)
    return out


def _expr(terms: list[tuple[int, float]], names: list[str]) -> str:
    if not terms:
        return "0 " + names[0] if names else "0"
    parts = []
    for j, (idx, val) in enumerate(terms):
        sign = "-" if val < 0 else ("+" if j else "")
        mag = _num(abs(val))
        parts.append(f"{sign} {mag} {names[idx]}".strip())
    return " ".join(parts)


def export_lp(program: LinearProgram | MixedProgram) -> str:
    """Render a program as CPLEX LP text."""
    binaries: list[int] = []
    if isinstance(program, MixedProgram):
        binaries = [idx for group in program.groups for idx in group]
        lp = program.lp
    else:
        lp = program

    names = _sanitize_names(lp.var_names)
    lines = ["Minimize"]
    obj_terms = [(j, c) for j, c in enumerate(lp.var_cost) if c != 0.0]
    lines.append(" obj: " + _expr(obj_terms, names))

    lines.append("Subject To")
    for i, terms in enumerate(lp.rows):
        rname = _SAFE.sub("_", lp.row_names[i]) or f"r{i}"
        lo, hi = lp.row_lo[i], lp.row_hi[i]
        body = _expr(terms, names)
        if lo == hi:
            lines.append(f" {rname}: {body} = {_num(lo)}")
        else:
            if math.isfinite(lo):
                lines.append(f" {rname}_lo: {body} >= {_num(lo)}")
            if math.isfinite(hi):
                lines.append(f" {rname}_hi: {body} <= {_num(hi)}")

    lines.append("Bounds")
    for j, name in enumerate(names):
        lb, ub = lp.var_lb[j], lp.var_ub[j]
        if lb == ub:
            lines.append(f" {name} = {_num(lb)}")
        elif math.isinf(lb) and math.isinf(ub):
            lines.append(f" {name} free")
        elif math.isinf(lb):
            lines.append(f" -inf <= {name} <= {_num(ub)}")
        elif math.isinf(ub):
            lines.append(f" {name} >= {_num(lb)}")
        else:
            lines.append(f" {_num(lb)} <= {name} <= {_num(ub)}")

    if binaries:
        lines.append("Binaries")
        lines.append(" " + " ".join(names[idx] for idx in binaries))
    lines.append("End")
    return "\n".join(lines) + "\n"
