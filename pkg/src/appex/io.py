"""CSV/JSON persistence for snapshot datasets and trajectories.

Datasets are long-format CSV with header ``time,sample_id,x1,...,xd`` and a
JSON sidecar ``{times, counts, d}`` next to it (same stem, ``.json``).
Trajectory sets use ``path_id`` in place of ``sample_id``. Floats are written
with 17 significant digits, so a write/read cycle is bit-exact.
"""

import csv
import json
from pathlib import Path

import numpy as np

from .errors import DataFormatError
from .simulate import MarginalDataset, TrajectorySet


def _fmt(x):
    return repr(float(x))


def sidecar_path(path):
    return Path(path).with_suffix(".json")


def _header(id_column, d):
    return ["time", id_column] + [f"x{k + 1}" for k in range(d)]


def write_dataset(data, path):
    """Write a MarginalDataset to ``path`` plus its JSON sidecar."""
    path = Path(path)
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(_header("sample_id", data.d))
            for t, block in zip(data.times, data.samples):
                for j, row in enumerate(block):
                    w.writerow([_fmt(t), j] + [_fmt(v) for v in row])
        meta = {"times": [float(t) for t in data.times], "counts": data.counts, "d": data.d}
        sidecar_path(path).write_text(json.dumps(meta, indent=2) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write dataset to {path}: {exc.strerror or exc}") from exc
    return path


def write_trajectories(traj, path):
    path = Path(path)
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(_header("path_id", traj.d))
            for i, t in enumerate(traj.times):
                for j in range(traj.n_paths):
                    w.writerow([_fmt(t), j] + [_fmt(v) for v in traj.paths[j, i]])
    except OSError as exc:
        raise OSError(f"cannot write trajectories to {path}: {exc.strerror or exc}") from exc
    return path


def _read_table(path, id_column):
    path = Path(path)
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc.strerror or exc}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataFormatError(f"{path}: empty file", column="time")
        header = [h.strip() for h in header]
        for required in ("time", id_column, "x1"):
            if required not in header:
                raise DataFormatError(f"{path}: missing column {required!r}", column=required)
        d = sum(1 for h in header if h.startswith("x") and h[1:].isdigit())
        for k in range(d):
            if f"x{k + 1}" not in header:
                raise DataFormatError(f"{path}: missing column 'x{k + 1}'", column=f"x{k + 1}")
        cols = [header.index("time"), header.index(id_column)] + [
            header.index(f"x{k + 1}") for k in range(d)
        ]
        times, ids, values = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                times.append(float(row[cols[0]]))
                ids.append(int(row[cols[1]]))
                values.append([float(row[c]) for c in cols[2:]])
            except (ValueError, IndexError) as exc:
                raise DataFormatError(f"{path}:{lineno}: malformed row ({exc})") from exc
    if not times:
        raise DataFormatError(f"{path}: no data rows")
    return np.array(times), np.array(ids), np.array(values, dtype=float).reshape(-1, d)


def _groups(times):
    # Contiguous runs of equal time, in file order.
    breaks = np.flatnonzero(np.diff(times) != 0) + 1
    starts = np.concatenate([[0], breaks])
    ends = np.concatenate([breaks, [times.size]])
    return list(zip(starts, ends))


def read_dataset(path):
    """Read a MarginalDataset; the sidecar, if present, is checked for consistency.

    Raises
    ------
    DataFormatError
        On a missing column, an unparseable row, or a sidecar mismatch.
    """
    times, _, values = _read_table(path, "sample_id")
    groups = _groups(times)
    snap_times = np.array([times[s] for s, _ in groups])
    if np.unique(snap_times).size != snap_times.size:
        raise DataFormatError(f"{path}: rows of each snapshot must be contiguous")
    samples = tuple(values[s:e] for s, e in groups)
    meta_path = sidecar_path(path)
    if meta_path.exists():
        meta = json.loads(meta_path.read_text())
        if (
            int(meta.get("d", values.shape[1])) != values.shape[1]
            or list(meta.get("counts", [])) != [e - s for s, e in groups]
            or not np.array_equal(np.asarray(meta.get("times", []), dtype=float), snap_times)
        ):
            raise DataFormatError(f"{meta_path}: sidecar does not match {path}")
    try:
        return MarginalDataset(snap_times, samples)
    except ValueError as exc:
        raise DataFormatError(f"{path}: {exc}") from exc


def read_trajectories(path):
    times, ids, values = _read_table(path, "path_id")
    groups = _groups(times)
    counts = {e - s for s, e in groups}
    if len(counts) != 1:
        raise DataFormatError(f"{path}: every time must list the same paths")
    M = counts.pop()
    paths = np.empty((M, len(groups), values.shape[1]))
    for i, (s, e) in enumerate(groups):
        order = ids[s:e]
        if sorted(order.tolist()) != list(range(M)):
            raise DataFormatError(f"{path}: path ids at t={times[s]} are not 0..{M - 1}")
        paths[order, i] = values[s:e]
    return TrajectorySet(np.array([times[s] for s, _ in groups]), paths)
