"""Snapshot sets, two-fidelity datasets and their on-disk layout.

A dataset directory holds::

    manifest.json        d_u, d_x, per-fidelity node counts and row counts
    hf_inputs.csv        n1 x d_u   (header u0,u1,...)
    hf_outputs.csv       n1 x d_y1  (header y0,y1,...)
    hf_mesh.csv          d_y1 x d_x (header x0,...)   optional
    lf_inputs.csv        n2 x d_u
    lf_outputs.csv       n2 x d_y2
    lf_mesh.csv          d_y2 x d_x                   optional

Numbers are written with ``repr`` so that doubles survive a round trip
bit for bit.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

FORMAT_VERSION = 1
FIDELITY_PREFIX = {1: "hf", 2: "lf"}


class DatasetError(ValueError):
    """Raised for malformed or inconsistent snapshot data."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class SnapshotSet:
    """Inputs, output fields and mesh of one fidelity level.

    Parameters
    ----------
    inputs : (n, d_u) array
    outputs : (n, d_y) array
        One discretized field per row.
    mesh : (d_y, d_x) array, optional
        Node coordinates. Defaults to the node index as a 1-D coordinate.
    fidelity : int
        1 for high fidelity, 2 for low fidelity.
    """

    inputs: np.ndarray
    outputs: np.ndarray
    mesh: np.ndarray | None = None
    fidelity: int = 1

    def __post_init__(self):
        inputs = np.asarray(self.inputs, dtype=float)
        outputs = np.asarray(self.outputs, dtype=float)
        if inputs.ndim == 1:
            inputs = inputs[:, None]
        if outputs.ndim != 2 or inputs.ndim != 2:
            raise DatasetError("inputs and outputs must be 2-D matrices")
        if inputs.shape[0] != outputs.shape[0]:
            raise DatasetError(
                f"row count mismatch: {inputs.shape[0]} inputs vs {outputs.shape[0]} outputs"
            )
        mesh = self.mesh
        if mesh is None:
            mesh = np.arange(outputs.shape[1], dtype=float)[:, None]
        mesh = np.asarray(mesh, dtype=float)
        if mesh.ndim == 1:
            mesh = mesh[:, None]
        if mesh.shape[0] != outputs.shape[1]:
            raise DatasetError(
                f"mesh has {mesh.shape[0]} nodes but fields have {outputs.shape[1]} values"
            )
        if self.fidelity not in FIDELITY_PREFIX:
            raise DatasetError(f"fidelity must be 1 or 2, got {self.fidelity}")
        for name, arr in (("inputs", inputs), ("outputs", outputs), ("mesh", mesh)):
            bad = np.argwhere(~np.isfinite(arr))
            if bad.size:
                r, c = bad[0]
                raise DatasetError(f"non-finite value in {name} at row {r}, column {c}")
        object.__setattr__(self, "inputs", _frozen(inputs))
        object.__setattr__(self, "outputs", _frozen(outputs))
        object.__setattr__(self, "mesh", _frozen(mesh))

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    @property
    def d_u(self) -> int:
        return self.inputs.shape[1]

    @property
    def d_y(self) -> int:
        return self.outputs.shape[1]

    def subset(self, rows) -> SnapshotSet:
        rows = np.asarray(rows, dtype=int)
        return SnapshotSet(self.inputs[rows], self.outputs[rows], self.mesh, self.fidelity)


def match_rows(a: np.ndarray, b: np.ndarray) -> list[tuple[int, int]]:
    """Pairs ``(i, j)`` such that ``a[i]`` and ``b[j]`` are exactly equal.

    Each row of ``a`` is paired with the first identical row of ``b``.
    """
    lookup: dict[bytes, int] = {}
    b = np.ascontiguousarray(b, dtype=float)
    for j in range(b.shape[0]):
        lookup.setdefault(b[j].tobytes(), j)
    a = np.ascontiguousarray(a, dtype=float)
    pairs = []
    for i in range(a.shape[0]):
        j = lookup.get(a[i].tobytes())
        if j is not None:
            pairs.append((i, j))
    return pairs


@dataclass(frozen=True)
class MultiFidelityDataset:
    """High- and low-fidelity snapshot sets sharing an input space.

    ``common_index`` lists ``(hf_row, lf_row)`` pairs evaluated at the same
    input vector. It is computed by exact row matching when not given.
    """

    hf: SnapshotSet
    lf: SnapshotSet
    common_index: tuple[tuple[int, int], ...] | None = None
    metadata: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.hf.fidelity != 1 or self.lf.fidelity != 2:
            raise DatasetError("hf set must have fidelity 1 and lf set fidelity 2")
        if self.hf.d_u != self.lf.d_u:
            raise DatasetError(f"input dimension mismatch: {self.hf.d_u} vs {self.lf.d_u}")
        if self.hf.mesh.shape[1] != self.lf.mesh.shape[1]:
            raise DatasetError("meshes must share the coordinate dimension d_x")
        if self.common_index is None:
            pairs = match_rows(self.hf.inputs, self.lf.inputs)
        else:
            pairs = [(int(i), int(j)) for i, j in self.common_index]
            for i, j in pairs:
                if np.max(np.abs(self.hf.inputs[i] - self.lf.inputs[j])) > 1e-12:
                    raise DatasetError(f"common pair ({i}, {j}) has different input rows")
        object.__setattr__(self, "common_index", tuple(pairs))

    @property
    def d_u(self) -> int:
        return self.hf.d_u

    @property
    def n_common(self) -> int:
        return len(self.common_index)

    @property
    def is_nested(self) -> bool:
        return self.n_common == self.hf.n

    @property
    def same_mesh(self) -> bool:
        return self.hf.mesh.shape == self.lf.mesh.shape and np.array_equal(
            self.hf.mesh, self.lf.mesh
        )

    def common_part(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Inputs, HF fields and LF fields restricted to the common pairs."""
        if not self.common_index:
            raise DatasetError("dataset has no input shared by both fidelities")
        hi, lo = np.array(self.common_index).T
        return self.hf.inputs[hi], self.hf.outputs[hi], self.lf.outputs[lo]


def _write_matrix(path: Path, header_prefix: str, a: np.ndarray):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"{header_prefix}{k}" for k in range(a.shape[1])])
        for row in a:
            w.writerow([repr(float(v)) for v in row])


def _read_matrix(path: Path, n_cols: int | None = None) -> np.ndarray:
    if not path.exists():
        raise DatasetError(f"missing file {path.name}")
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetError(f"{path.name}: empty file") from None
        width = len(header) if n_cols is None else n_cols
        if len(header) != width:
            raise DatasetError(f"{path.name}: header has {len(header)} columns, expected {width}")
        for r, line in enumerate(reader):
            if len(line) != width:
                raise DatasetError(
                    f"{path.name}: row {r} has {len(line)} columns, expected {width}"
                )
            vals = []
            for c, cell in enumerate(line):
                try:
                    v = float(cell)
                except ValueError:
                    raise DatasetError(f"{path.name}: row {r}, column {c}: not a number {cell!r}") from None
                if not math.isfinite(v):
                    raise DatasetError(f"{path.name}: row {r}, column {c}: non-finite value {cell}")
                vals.append(v)
            rows.append(vals)
    return np.array(rows, dtype=float).reshape(len(rows), width)


def save_dataset(ds: MultiFidelityDataset, path) -> Path:
    """Write ``ds`` to the directory ``path`` (created if needed)."""
    for s in (ds.hf, ds.lf):
        if s.n < 1:
            raise DatasetError("n must be ≥ 1")
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format_version": FORMAT_VERSION,
        "d_u": ds.d_u,
        "d_x": int(ds.hf.mesh.shape[1]),
        "fidelities": {},
        "metadata": ds.metadata,
    }
    for s in (ds.hf, ds.lf):
        prefix = FIDELITY_PREFIX[s.fidelity]
        _write_matrix(path / f"{prefix}_inputs.csv", "u", s.inputs)
        _write_matrix(path / f"{prefix}_outputs.csv", "y", s.outputs)
        _write_matrix(path / f"{prefix}_mesh.csv", "x", s.mesh)
        manifest["fidelities"][prefix] = {"level": s.fidelity, "n": s.n, "nodes": s.d_y}
    with open(path / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, default=_json_default)
    return path


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def load_dataset(path) -> MultiFidelityDataset:
    """Read a dataset directory written by :func:`save_dataset` or by hand."""
    path = Path(path)
    mpath = path / "manifest.json"
    if not mpath.exists():
        raise DatasetError(f"{path}: no manifest.json")
    try:
        manifest = json.loads(mpath.read_text())
    except json.JSONDecodeError as exc:
        raise DatasetError(f"manifest.json: {exc}") from None
    for key in ("d_u", "fidelities"):
        if key not in manifest:
            raise DatasetError(f"manifest.json: missing key {key!r}")
    d_u = int(manifest["d_u"])
    d_x = manifest.get("d_x")
    sets = {}
    for prefix, level in (("hf", 1), ("lf", 2)):
        info = manifest["fidelities"].get(prefix)
        if info is None:
            raise DatasetError(f"manifest.json: no entry for fidelity {prefix!r}")
        nodes = int(info["nodes"])
        inputs = _read_matrix(path / f"{prefix}_inputs.csv", d_u)
        outputs = _read_matrix(path / f"{prefix}_outputs.csv", nodes)
        mesh_path = path / f"{prefix}_mesh.csv"
        mesh = _read_matrix(mesh_path, d_x) if mesh_path.exists() else None
        if "n" in info and int(info["n"]) != inputs.shape[0]:
            raise DatasetError(
                f"{prefix}: manifest declares n={info['n']} but found {inputs.shape[0]} rows"
            )
        try:
            sets[prefix] = SnapshotSet(inputs, outputs, mesh, level)
        except DatasetError as exc:
            raise DatasetError(f"{prefix}: {exc}") from None
    return MultiFidelityDataset(sets["hf"], sets["lf"], metadata=manifest.get("metadata", {}))
