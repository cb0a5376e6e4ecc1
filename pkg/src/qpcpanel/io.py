"""Reading and writing balanced panels as CSV.

Long format: one file with columns ``id, t, y, x1, ..., xK`` and optionally
``y0`` (the period-0 outcome, constant within a unit).  Wide format: a
directory holding ``y.csv``, ``x1.csv``, ... with the unit id in the first
column and one column per period, plus an optional ``y0.csv`` with columns
``id, y0``.  Floats are written with 17 significant digits, so a write/read
round trip reproduces the panel bit for bit.
"""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np
import pandas as pd

from qpcpanel.errors import DataError
from qpcpanel.panel import PanelData

__all__ = ["read_long", "read_panel", "read_wide", "write_long", "write_wide"]

FLOAT_FORMAT = "%.17g"
_XCOL = re.compile(r"^x(\d+)$")


def _read_csv(path: Path) -> pd.DataFrame:
    try:
        return pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except FileNotFoundError as e:
        raise DataError(f"{path}: file not found") from e
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise DataError(f"{path}: {e}") from e


def _numeric(df: pd.DataFrame, col: str, path: Path) -> np.ndarray:
    # Python's float() rounds correctly, so 17-digit values read back bit for bit
    out = np.empty(len(df))
    for i, text in enumerate(df[col]):
        try:
            out[i] = float(text)
        except ValueError:
            out[i] = np.nan
        if not np.isfinite(out[i]):
            # line 1 is the header
            raise DataError(f"{path}, line {i + 2}: column {col!r} has non-numeric value {text!r}")
    return out


def read_long(path: str | Path) -> PanelData:
    path = Path(path)
    df = _read_csv(path)
    for col in ("id", "t", "y"):
        if col not in df.columns:
            raise DataError(f"{path}: missing column {col!r}")
    xcols = sorted((c for c in df.columns if _XCOL.match(c)), key=lambda c: int(c[1:]))
    if not xcols:
        raise DataError(f"{path}: no covariate columns x1..xK")
    if xcols != [f"x{k}" for k in range(1, len(xcols) + 1)]:
        raise DataError(f"{path}: covariate columns must be x1..xK without gaps, got {xcols}")

    ids = df["id"].str.strip()
    t = _numeric(df, "t", path)
    cols = {c: _numeric(df, c, path) for c in ["y", *xcols]}
    unit_order = list(dict.fromkeys(ids))
    periods = np.unique(t)

    key = pd.MultiIndex.from_arrays([ids, t])
    dup = key.duplicated()
    if dup.any():
        i = int(np.flatnonzero(dup)[0])
        raise DataError(f"{path}, line {i + 2}: duplicate observation for id={ids.iloc[i]}, t={t[i]:g}")
    full = pd.MultiIndex.from_product([unit_order, periods])
    missing = full.difference(key)
    if len(missing):
        cells = ", ".join(f"({i}, {p:g})" for i, p in missing[:20])
        more = f" and {len(missing) - 20} more" if len(missing) > 20 else ""
        raise DataError(f"{path}: unbalanced panel, missing (id, t) cells: {cells}{more}")

    def matrix(values):
        s = pd.Series(values, index=key).reindex(full)
        return s.to_numpy().reshape(len(unit_order), len(periods))

    y0 = None
    if "y0" in df.columns:
        v = _numeric(df, "y0", path)
        by_unit = pd.Series(v, index=ids).groupby(level=0, sort=False)
        if (by_unit.nunique() > 1).any():
            raise DataError(f"{path}: y0 varies within a unit")
        y0 = by_unit.first().reindex(unit_order).to_numpy()
    return PanelData(matrix(cols["y"]), tuple(matrix(cols[c]) for c in xcols), y0)


def _read_matrix(path: Path) -> tuple[list[str], list[str], np.ndarray]:
    df = _read_csv(path)
    if df.shape[1] < 2:
        raise DataError(f"{path}: expected an id column followed by period columns")
    ids = df.iloc[:, 0].str.strip().tolist()
    periods = list(df.columns[1:])
    M = np.column_stack([_numeric(df, c, path) for c in periods])
    if len(set(ids)) != len(ids):
        raise DataError(f"{path}: duplicate unit ids")
    return ids, periods, M


def read_wide(directory: str | Path) -> PanelData:
    d = Path(directory)
    ids, periods, Y = _read_matrix(d / "y.csv")
    X = []
    k = 1
    while (d / f"x{k}.csv").exists():
        xi, xp, M = _read_matrix(d / f"x{k}.csv")
        if xp != periods:
            raise DataError(f"x{k}.csv: period columns differ from y.csv")
        if set(xi) != set(ids):
            missing = sorted(set(ids) - set(xi))[:20]
            raise DataError(f"x{k}.csv: unit ids differ from y.csv (missing {missing})")
        order = {u: i for i, u in enumerate(xi)}
        X.append(M[[order[u] for u in ids]])
        k += 1
    if not X:
        raise DataError(f"{d}: no covariate files x1.csv, x2.csv, ...")
    y0 = None
    if (d / "y0.csv").exists():
        df = _read_csv(d / "y0.csv")
        if list(df.columns[:2]) != ["id", "y0"]:
            raise DataError("y0.csv: expected columns id, y0")
        v = pd.Series(_numeric(df, "y0", d / "y0.csv"), index=df["id"].str.strip())
        if set(v.index) != set(ids):
            raise DataError("y0.csv: unit ids differ from y.csv")
        y0 = v.reindex(ids).to_numpy()
    return PanelData(Y, tuple(X), y0)


def read_panel(path: str | Path, fmt: str = "long") -> PanelData:
    if fmt == "long":
        return read_long(path)
    if fmt == "wide":
        return read_wide(path)
    raise ValueError(f"unknown format {fmt!r}")


def write_long(data: PanelData, path: str | Path, ids=None) -> None:
    ids = np.arange(data.n) if ids is None else np.asarray(ids)
    n, T = data.n, data.T
    frame = {"id": np.repeat(ids, T), "t": np.tile(np.arange(1, T + 1), n), "y": data.Y.ravel()}
    for k, x in enumerate(data.X, start=1):
        frame[f"x{k}"] = x.ravel()
    if data.y0 is not None:
        frame["y0"] = np.repeat(data.y0, T)
    pd.DataFrame(frame).to_csv(path, index=False, float_format=FLOAT_FORMAT)


def write_wide(data: PanelData, directory: str | Path, ids=None) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    ids = np.arange(data.n) if ids is None else np.asarray(ids)
    cols = [str(t) for t in range(1, data.T + 1)]

    def dump(M, name):
        df = pd.DataFrame(M, columns=cols)
        df.insert(0, "id", ids)
        df.to_csv(d / name, index=False, float_format=FLOAT_FORMAT)

    dump(data.Y, "y.csv")
    for k, x in enumerate(data.X, start=1):
        dump(x, f"x{k}.csv")
    if data.y0 is not None:
        pd.DataFrame({"id": ids, "y0": data.y0}).to_csv(
            d / "y0.csv", index=False, float_format=FLOAT_FORMAT
        )
