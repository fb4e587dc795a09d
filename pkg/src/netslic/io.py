"""Dataset and report files.

A dataset directory holds::

    network.json            topology, true line parameters, PMU placement
    database_params.json    legacy line parameters (solver starting point)
    branch_<p>-<q>.csv      t, ReV_from, ImV_from, ReV_to, ImV_to,
                            ReI_from, ImI_from, ReI_to, ImI_to
    residual_<bus>.csv      t, ReI_L, ImI_L  (current leaving the bus
                            through everything outside the tree)
    line_<p>-<q>_at_<m>.csv t, ReI, ImI  (extra line metered at bus m)
    ground_truth.json       ratio error per channel, true line parameters
    manifest.json           seed, scenario, config hash, file list

Floats are written with 17 significant digits so a round trip is exact.
"""
from __future__ import annotations

import hashlib
import json
import platform
from dataclasses import asdict, dataclass, field, is_dataclass
from pathlib import Path
from typing import Dict, Mapping, Optional

import numpy as np

from . import __version__
from .exceptions import InputError
from .model import (Branch, BranchMeasurements, BusCurrentSet, ConnectedTree,
                    LineParams, NetworkSpec)
from .synthgen import Channel, channel_name, parse_channel

FLOAT_FMT = "%.17g"
BRANCH_COLUMNS = ("t", "ReV_from", "ImV_from", "ReV_to", "ImV_to",
                  "ReI_from", "ImI_from", "ReI_to", "ImI_to")
RESIDUAL_COLUMNS = ("t", "ReI_L", "ImI_L")
LINE_COLUMNS = ("t", "ReI", "ImI")


def to_jsonable(obj):
    """Recursively convert complex numbers, tuples, numpy scalars/arrays
    and dataclasses into JSON-compatible values."""
    if is_dataclass(obj) and not isinstance(obj, type):
        return to_jsonable(asdict(obj))
    if isinstance(obj, complex) or isinstance(obj, np.complexfloating):
        return [float(obj.real), float(obj.imag)]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, Mapping):
        return {(k if isinstance(k, str) else _key(k)): to_jsonable(v)
                for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    return obj


def _key(k) -> str:
    if isinstance(k, tuple) and len(k) == 2 and all(isinstance(x, int)
                                                    for x in k):
        return f"{k[0]}-{k[1]}"
    return str(k)


def _parse_branch(text: str) -> Branch:
    p, q = text.split("-")
    return int(p), int(q)


def config_hash(config: Mapping) -> str:
    """SHA-256 of the canonical JSON form of ``config``."""
    blob = json.dumps(to_jsonable(config), sort_keys=True,
                      separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def write_json(path, obj):
    Path(path).write_text(json.dumps(to_jsonable(obj), indent=2,
                                     sort_keys=True) + "\n")


def read_json(path):
    path = Path(path)
    try:
        return json.loads(path.read_text())
    except FileNotFoundError:
        raise InputError(f"missing file {path}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}:{exc.lineno}: {exc.msg}") from None


def _write_csv(path, columns, data):
    np.savetxt(path, data, delimiter=",", fmt=FLOAT_FMT,
               header=",".join(columns), comments="")


def _read_csv(path, columns) -> np.ndarray:
    path = Path(path)
    try:
        with path.open() as fh:
            header = fh.readline().strip().split(",")
    except FileNotFoundError:
        raise InputError(f"missing file {path}") from None
    if tuple(header) != tuple(columns):
        raise InputError(f"{path}:1: expected columns {','.join(columns)}")
    try:
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from None
    if data.shape[1] != len(columns):
        raise InputError(f"{path}: expected {len(columns)} columns")
    return data


def _cplx(data, re_col):
    return data[:, re_col] + 1j * data[:, re_col + 1]


def branch_file(br: Branch) -> str:
    return f"branch_{br[0]}-{br[1]}.csv"


def residual_file(bus: int) -> str:
    return f"residual_{bus}.csv"


def line_file(key: Branch, bus: int) -> str:
    return f"line_{key[0]}-{key[1]}_at_{bus}.csv"


def write_dataset(dataset, directory, manifest: Optional[Mapping] = None
                  ) -> Path:
    """Write a generated dataset (measurements plus ground truth)."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    n = dataset.n_samples
    t = np.arange(n, dtype=float)
    files = []
    for br, m in dataset.measurements.items():
        data = np.column_stack([t] + [f(x) for x in (m.v_from, m.v_to,
                                                     m.i_from, m.i_to)
                                      for f in (np.real, np.imag)])
        _write_csv(out / branch_file(br), BRANCH_COLUMNS, data)
        files.append(branch_file(br))
    for bus, cur in dataset.bus_currents.items():
        data = np.column_stack([t, cur.residual.real, cur.residual.imag])
        _write_csv(out / residual_file(bus), RESIDUAL_COLUMNS, data)
        files.append(residual_file(bus))
    for (_, key, bus), series in dataset.extra_currents.items():
        data = np.column_stack([t, series.real, series.imag])
        _write_csv(out / line_file(key, bus), LINE_COLUMNS, data)
        files.append(line_file(key, bus))
    dataset.network.save(out / "network.json")
    write_json(out / "database_params.json",
               {_key(k): asdict(v) for k, v in dataset.legacy.items()})
    truth = {"eta": {channel_name(ch): v for ch, v in dataset.etas.items()},
             "line_params": {_key(k): asdict(v) for k, v in
                             dataset.network.line_params().items()}}
    write_json(out / "ground_truth.json", truth)
    doc = dict(manifest or {})
    doc.update({"files": sorted(files), "n_samples": n, "seed": dataset.seed,
                "package_version": __version__})
    write_json(out / "manifest.json", doc)
    return out


@dataclass
class LoadedDataset:
    """Measurements read back from disk, ready for calibration."""

    network: NetworkSpec
    tree: ConnectedTree
    measurements: Dict[Branch, BranchMeasurements]
    bus_currents: Dict[int, BusCurrentSet]
    legacy: Dict[Branch, LineParams]
    extra_currents: Dict[Channel, np.ndarray] = field(default_factory=dict)
    etas: Optional[Dict[Channel, complex]] = None
    manifest: dict = field(default_factory=dict)

    @property
    def seed(self):
        return self.manifest.get("seed")

    @property
    def n_samples(self) -> int:
        return next(iter(self.measurements.values())).n


def read_params(path) -> Dict[Branch, LineParams]:
    doc = read_json(path)
    try:
        return {_parse_branch(k): LineParams(**v) for k, v in doc.items()}
    except (TypeError, ValueError) as exc:
        raise InputError(f"{path}: bad line parameters ({exc})") from None


def read_dataset(directory) -> LoadedDataset:
    """Read a dataset directory written by :func:`write_dataset`.

    Raises
    ------
    InputError
        Listing every missing measurement file, or pointing at the first
        malformed one.
    """
    src = Path(directory)
    network = NetworkSpec.load(src / "network.json")
    tree = network.tree()
    expected = [branch_file(br) for br in tree.branches]
    expected += [residual_file(bus) for bus in tree.buses]
    expected += [line_file((l.from_bus, l.to_bus), l.metered_end)
                 for l in network.extra_lines if l.metered_end is not None]
    missing = [f for f in expected if not (src / f).exists()]
    if missing:
        raise InputError(f"{src}: missing channel files: {', '.join(missing)}")
    meas = {}
    for br in tree.branches:
        d = _read_csv(src / branch_file(br), BRANCH_COLUMNS)
        meas[br] = BranchMeasurements(br, _cplx(d, 1), _cplx(d, 3),
                                      _cplx(d, 5), _cplx(d, 7))
    currents = {}
    for bus in tree.buses:
        d = _read_csv(src / residual_file(bus), RESIDUAL_COLUMNS)
        currents[bus] = BusCurrentSet(
            bus, {br: meas[br].current_at(bus) for br in tree.incident(bus)},
            _cplx(d, 1))
    extra = {}
    for l in network.extra_lines:
        if l.metered_end is None:
            continue
        key = (l.from_bus, l.to_bus)
        d = _read_csv(src / line_file(key, l.metered_end), LINE_COLUMNS)
        extra[("IX", key, l.metered_end)] = _cplx(d, 1)
    legacy = read_params(src / "database_params.json")
    etas = None
    if (src / "ground_truth.json").exists():
        truth = read_json(src / "ground_truth.json")
        etas = {parse_channel(k): complex(*v) for k, v in truth["eta"].items()}
    manifest = read_json(src / "manifest.json") \
        if (src / "manifest.json").exists() else {}
    return LoadedDataset(network, tree, meas, currents, legacy, extra, etas,
                         manifest)


def calibration_report(estimates, manifest: Mapping, failures=None) -> dict:
    return {
        "manifest": dict(manifest),
        "branches": [e.as_dict() for e in estimates.values()],
        "failures": {_key(k): str(v) for k, v in (failures or {}).items()},
    }


def environment() -> dict:
    return {"python": platform.python_version(), "numpy": np.__version__,
            "package_version": __version__}


__all__ = [
    "write_dataset", "read_dataset", "LoadedDataset", "read_params",
    "config_hash", "write_json", "read_json", "to_jsonable",
    "calibration_report", "environment", "BRANCH_COLUMNS",
    "RESIDUAL_COLUMNS", "LINE_COLUMNS",
]
