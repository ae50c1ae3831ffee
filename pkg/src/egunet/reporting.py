"""Plain-text tables for evaluation reports.

A table has one row per scalar (lists are expanded to ``key[i]`` rows) and
one column per field. Cells are JSON literals, so floats keep their
shortest round-trip form and :func:`parse_table` inverts
:func:`format_table` exactly.
"""

import json

import numpy as np


def _cell(v):
    if isinstance(v, (np.floating, np.integer)):
        v = v.item()
    return json.dumps(v, separators=(",", ":"))


def _flatten(record):
    rows = []
    for key, value in record.items():
        if " " in key or "[" in key:
            raise ValueError(f"table keys may not contain spaces or brackets: {key!r}")
        if isinstance(value, (list, tuple, np.ndarray)):
            rows.extend((f"{key}[{i}]", v) for i, v in enumerate(value))
            if len(value) == 0:
                rows.append((f"{key}[]", None))
        else:
            rows.append((key, value))
    return rows


def format_table(columns):
    """Render ``{column: {key: scalar or list}}`` (all columns sharing keys) as text."""
    names = list(columns)
    flat = [_flatten(columns[n]) for n in names]
    keys = [k for k, _ in flat[0]]
    for f in flat[1:]:
        if [k for k, _ in f] != keys:
            raise ValueError("all columns must have the same keys")
    body = [[k] + [_cell(f[i][1]) for f in flat] for i, k in enumerate(keys)]
    header = ["metric"] + names
    widths = [max(len(r[j]) for r in [header] + body) for j in range(len(header))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in [header] + body]
    return "\n".join(lines) + "\n"


def parse_table(text):
    """Inverse of :func:`format_table`."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    header = lines[0].split()
    if header[0] != "metric":
        raise ValueError("not a report table")
    columns = {name: {} for name in header[1:]}
    for ln in lines[1:]:
        key, *cells = ln.split()
        if len(cells) != len(header) - 1:
            raise ValueError(f"malformed row {ln!r}")
        for name, cell in zip(header[1:], cells):
            col = columns[name]
            if key.endswith("[]"):
                col[key[:-2]] = []
            elif key.endswith("]"):
                base = key[:key.index("[")]
                col.setdefault(base, []).append(json.loads(cell))
            else:
                col[key] = json.loads(cell)
    return columns


def summarize(reports, keys=None):
    """Mean and (population) standard deviation of each numeric field over runs."""
    keys = keys or [k for k, v in reports[0].items() if _numeric(v)]
    mean, std = {}, {}
    for k in keys:
        vals = np.array([r[k] for r in reports], dtype=np.float64)
        m, s = vals.mean(axis=0), vals.std(axis=0)
        mean[k] = m.tolist() if m.ndim else float(m)
        std[k] = s.tolist() if s.ndim else float(s)
    return {"mean": mean, "std": std}


def _numeric(v):
    arr = np.asarray(v)
    return arr.dtype.kind == "f" or (arr.dtype.kind in "iu" and arr.ndim == 0)
