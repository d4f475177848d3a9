"""Delimited-text tables with self-describing '#'-prefixed key=value
headers.  Every statistics file the package emits goes through here, so
downstream plotting tools see one uniform format."""

from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

__all__ = ["write_table", "read_table", "format_value"]


def format_value(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def write_table(path, header: Mapping[str, object], columns: Mapping[str, Sequence]) -> None:
    """Write one table: header lines, a column-name line, tab-separated rows."""
    names = list(columns)
    arrays = [np.asarray(columns[n]) for n in names]
    if arrays and any(len(a) != len(arrays[0]) for a in arrays):
        raise ValueError("all columns must have the same length")
    with open(path, "w") as f:
        for k, v in header.items():
            f.write(f"# {k}={format_value(v)}\n")
        f.write("\t".join(names) + "\n")
        for row in range(len(arrays[0]) if arrays else 0):
            f.write("\t".join(format_value(a[row]) for a in arrays) + "\n")


def read_table(path):
    """Read a table written by :func:`write_table`.

    Returns (header dict of strings, dict of numpy float columns); columns
    that fail float conversion come back as object arrays of strings.
    """
    header: dict[str, str] = {}
    names: list[str] = []
    rows: list[list[str]] = []
    with open(path) as f:
        for line in f:
            line = line.rstrip("\n")
            if not line.strip():
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if "=" in body:
                    k, v = body.split("=", 1)
                    header[k.strip()] = v.strip()
                continue
            if not names:
                names = line.split("\t")
                continue
            rows.append(line.split("\t"))
    columns: dict[str, np.ndarray] = {}
    for i, name in enumerate(names):
        raw = [r[i] for r in rows]
        try:
            columns[name] = np.asarray([float(v) for v in raw])
        except ValueError:
            columns[name] = np.asarray(raw, dtype=object)
    return header, columns
