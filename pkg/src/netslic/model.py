"""Domain types: phasors, line parameters, measurement series, trees.

Phasors are plain Python/numpy complex values in per-unit. A branch is
identified by its ordered bus pair ``(from_bus, to_bus)``; the reversed
pair names the same physical line with the measurement roles exchanged.
"""
from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .exceptions import InputError, TopologyError

Branch = Tuple[int, int]

#: bounds applied to every correction factor / ratio as a sanity check
CF_MAG_BOUNDS = (0.5, 1.5)

#: smallest number of time instants accepted for one estimation window
MIN_SAMPLES = 3


def as_phasor(value) -> complex:
    """Return ``value`` as a finite Python complex."""
    z = complex(value)
    if not (np.isfinite(z.real) and np.isfinite(z.imag)):
        raise InputError(f"non-finite phasor {value!r}")
    return z


def as_series(values, name="series") -> np.ndarray:
    """Return a 1-D complex128 copy of ``values``; reject NaN/Inf."""
    arr = np.array(values, dtype=np.complex128).reshape(-1)
    if not np.all(np.isfinite(arr)):
        raise InputError(f"{name} contains non-finite samples")
    return arr


def canonical(branch: Sequence[int]) -> Branch:
    """Undirected key for a branch: the pair sorted ascending."""
    p, q = int(branch[0]), int(branch[1])
    return (p, q) if p <= q else (q, p)


def other_end(branch: Branch, bus: int) -> int:
    p, q = branch
    if bus == p:
        return q
    if bus == q:
        return p
    raise TopologyError(f"bus {bus} is not an end of branch {branch}")


def shared_bus(first: Branch, second: Branch) -> int:
    common = set(first) & set(second)
    if len(common) != 1:
        raise TopologyError(
            f"branches {first} and {second} share {len(common)} buses")
    return common.pop()


@dataclass(frozen=True)
class LineParams:
    """Per-unit pi-model parameters of one line.

    ``b`` is the shunt susceptance placed at *each* end, i.e. the value
    that multiplies ``j V`` in the terminal current equations.
    """

    r: float
    x: float
    b: float

    def __post_init__(self):
        for name in ("r", "x", "b"):
            v = float(getattr(self, name))
            if not np.isfinite(v):
                raise InputError(f"line parameter {name} is not finite")
            object.__setattr__(self, name, v)
        if self.x <= 0:
            raise InputError(f"reactance must be positive, got {self.x}")
        if self.r < 0 or self.b < 0:
            raise InputError("resistance and susceptance must be >= 0")

    @property
    def z(self) -> complex:
        return complex(self.r, self.x)

    def as_array(self) -> np.ndarray:
        return np.array([self.r, self.x, self.b])

    def scaled(self, factors) -> "LineParams":
        fr, fx, fb = factors
        return LineParams(self.r * fr, self.x * fx, self.b * fb)


def _check_cf(name, value):
    z = as_phasor(value)
    lo, hi = CF_MAG_BOUNDS
    if not lo < abs(z) < hi:
        raise InputError(f"{name}={z} outside magnitude bounds {CF_MAG_BOUNDS}")
    return z


@dataclass(frozen=True)
class CorrectionFactors:
    """The four IT correction factors of a branch, in branch orientation."""

    alpha_from: complex
    alpha_to: complex
    beta_from: complex
    beta_to: complex

    def __post_init__(self):
        for name in ("alpha_from", "alpha_to", "beta_from", "beta_to"):
            object.__setattr__(self, name, _check_cf(name, getattr(self, name)))

    @classmethod
    def from_etas(cls, eta_v_from, eta_v_to, eta_i_from, eta_i_to):
        return cls(1 / eta_v_from, 1 / eta_v_to, 1 / eta_i_from, 1 / eta_i_to)

    def as_dict(self) -> Dict[str, complex]:
        return {"alpha_from": self.alpha_from, "alpha_to": self.alpha_to,
                "beta_from": self.beta_from, "beta_to": self.beta_to}


@dataclass(frozen=True)
class PsiVector:
    """Nine real unknowns of a branch, referenced to one end's VT.

    Layout: ``(r, x, b, Re/Im alpha_far/alpha_ref, Re/Im beta_ref/alpha_ref,
    Re/Im beta_far/alpha_ref)`` where *ref* is ``reference_end`` and *far*
    is the opposite end of ``branch``.
    """

    values: np.ndarray
    branch: Branch
    reference_end: int

    def __post_init__(self):
        v = np.array(self.values, dtype=float).reshape(-1)
        if v.shape != (9,) or not np.all(np.isfinite(v)):
            raise InputError("psi must hold 9 finite reals")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        other_end(self.branch, self.reference_end)

    @classmethod
    def from_parts(cls, line: LineParams, alpha_far, beta_ref, beta_far,
                   branch, reference_end):
        a, bn, bf = complex(alpha_far), complex(beta_ref), complex(beta_far)
        vals = [line.r, line.x, line.b, a.real, a.imag, bn.real, bn.imag,
                bf.real, bf.imag]
        return cls(np.array(vals), tuple(branch), reference_end)

    @property
    def far_end(self) -> int:
        return other_end(self.branch, self.reference_end)

    @property
    def line(self) -> LineParams:
        return LineParams(*self.values[:3])

    @property
    def alpha_ratio(self) -> complex:
        return complex(self.values[3], self.values[4])

    @property
    def beta_ref_ratio(self) -> complex:
        return complex(self.values[5], self.values[6])

    @property
    def beta_far_ratio(self) -> complex:
        return complex(self.values[7], self.values[8])

    def validate(self):
        """Raise InputError unless line params and CFR magnitudes are sane."""
        self.line
        for name in ("alpha_ratio", "beta_ref_ratio", "beta_far_ratio"):
            _check_cf(name, getattr(self, name))
        return self


@dataclass(frozen=True)
class BranchMeasurements:
    """Time-stacked phasors measured at both ends of one line.

    Currents are the terminal currents flowing from the bus into the line.
    """

    branch: Branch
    v_from: np.ndarray
    v_to: np.ndarray
    i_from: np.ndarray
    i_to: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "branch", (int(self.branch[0]),
                                            int(self.branch[1])))
        n = None
        for name in ("v_from", "v_to", "i_from", "i_to"):
            arr = as_series(getattr(self, name), name)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
            if n is None:
                n = arr.size
            elif arr.size != n:
                raise InputError("measurement channels differ in length")
        if n < MIN_SAMPLES:
            raise InputError(f"need at least {MIN_SAMPLES} samples, got {n}")

    @property
    def n(self) -> int:
        return self.v_from.size

    def window(self, start: int, stop: int) -> "BranchMeasurements":
        s = slice(start, stop)
        return BranchMeasurements(self.branch, self.v_from[s], self.v_to[s],
                                  self.i_from[s], self.i_to[s])

    def take(self, indices) -> "BranchMeasurements":
        """Subset of the samples at integer ``indices``."""
        idx = np.asarray(indices, dtype=int)
        return BranchMeasurements(self.branch, self.v_from[idx],
                                  self.v_to[idx], self.i_from[idx],
                                  self.i_to[idx])

    def oriented(self, reference_end: int):
        """Return ``(v_ref, v_far, i_ref, i_far)`` for the given reference."""
        p, q = self.branch
        if reference_end == p:
            return self.v_from, self.v_to, self.i_from, self.i_to
        if reference_end == q:
            return self.v_to, self.v_from, self.i_to, self.i_from
        raise TopologyError(f"bus {reference_end} not on branch {self.branch}")

    def voltage_at(self, bus: int) -> np.ndarray:
        return self.oriented(bus)[0]

    def current_at(self, bus: int) -> np.ndarray:
        return self.oriented(bus)[2]


@dataclass(frozen=True)
class BusCurrentSet:
    """Currents leaving one bus: monitored branch ends plus the residual.

    ``residual`` is the aggregate of every other current leaving the bus
    (loads, generators, lines outside the tree) and carries its own CT.
    """

    bus: int
    branch_currents: Mapping[Branch, np.ndarray]
    residual: np.ndarray

    def __post_init__(self):
        currents = {tuple(k): as_series(v, f"current {k}")
                    for k, v in self.branch_currents.items()}
        object.__setattr__(self, "branch_currents", currents)
        object.__setattr__(self, "residual", as_series(self.residual,
                                                       "residual"))

    def kcl_mismatch(self) -> np.ndarray:
        total = self.residual.copy()
        for series in self.branch_currents.values():
            total = total + series
        return total

    def window(self, start, stop):
        s = slice(start, stop)
        return BusCurrentSet(self.bus,
                             {k: v[s] for k, v in self.branch_currents.items()},
                             self.residual[s])


@dataclass(frozen=True)
class ConnectedTree:
    """Branches monitored at both ends that form one connected subgraph."""

    buses: Tuple[int, ...]
    branches: Tuple[Branch, ...]
    rqm_branch: Branch
    rqm_end: int
    _index: Dict[Branch, Branch] = field(default=None, init=False,
                                         repr=False, compare=False)

    def __post_init__(self):
        branches = tuple((int(p), int(q)) for p, q in self.branches)
        object.__setattr__(self, "branches", branches)
        object.__setattr__(self, "buses", tuple(sorted(set(self.buses))))
        index = {}
        for br in branches:
            if br[0] == br[1]:
                raise TopologyError(f"self-loop branch {br}")
            key = canonical(br)
            if key in index:
                raise TopologyError(f"duplicate branch {br}")
            index[key] = br
            for bus in br:
                if bus not in self.buses:
                    raise TopologyError(f"branch {br} uses unknown bus {bus}")
        object.__setattr__(self, "_index", index)
        object.__setattr__(self, "rqm_branch", self.lookup(self.rqm_branch))
        if self.rqm_end not in self.rqm_branch:
            raise TopologyError("rqm_end must be an end of rqm_branch")
        self._check_connected()

    def _check_connected(self):
        adj = {b: set() for b in self.buses}
        for p, q in self.branches:
            adj[p].add(q)
            adj[q].add(p)
        seen = {self.buses[0]}
        todo = [self.buses[0]]
        while todo:
            for nb in adj[todo.pop()]:
                if nb not in seen:
                    seen.add(nb)
                    todo.append(nb)
        if len(seen) != len(self.buses):
            missing = sorted(set(self.buses) - seen)
            raise TopologyError(f"tree is not connected; unreachable {missing}")

    def lookup(self, branch) -> Branch:
        """Return the stored orientation of ``branch`` (either direction)."""
        try:
            return self._index[canonical(branch)]
        except KeyError:
            raise TopologyError(f"branch {tuple(branch)} not in tree") from None

    def incident(self, bus: int) -> List[Branch]:
        return [br for br in self.branches if bus in br]

    def _neighbours(self, branch: Branch) -> List[Branch]:
        out = []
        for other in self.branches:
            if other != branch and len(set(other) & set(branch)) == 1:
                out.append(other)
        return sorted(out, key=lambda br: sorted(br))

    def bfs_parents(self) -> Dict[Branch, Optional[Branch]]:
        """BFS over branches from the RQM branch; returns child -> parent.

        Insertion order of the returned dict is the visiting order.
        """
        parents = {self.rqm_branch: None}
        queue = deque([self.rqm_branch])
        while queue:
            cur = queue.popleft()
            for nb in self._neighbours(cur):
                if nb not in parents:
                    parents[nb] = cur
                    queue.append(nb)
        return parents

    def entry_bus(self, branch: Branch, parents=None) -> int:
        """End of ``branch`` facing the RQM branch (the RQM end for itself)."""
        branch = self.lookup(branch)
        parents = self.bfs_parents() if parents is None else parents
        parent = parents[branch]
        if parent is None:
            return self.rqm_end
        return shared_bus(branch, parent)


def find_path(tree: ConnectedTree, target) -> List[Branch]:
    """Shortest branch path from the RQM branch to ``target``.

    Consecutive branches share exactly one bus. Ties are broken toward
    lower bus ids, so the result is deterministic.
    """
    target = tree.lookup(target)
    parents = tree.bfs_parents()
    if target not in parents:
        raise TopologyError(f"branch {target} unreachable from RQM branch")
    path = [target]
    while parents[path[-1]] is not None:
        path.append(parents[path[-1]])
    return path[::-1]


# --------------------------------------------------------------------------
# network specification (ground truth + configuration), JSON round trip

@dataclass(frozen=True)
class BranchSpec:
    from_bus: int
    to_bus: int
    params: LineParams
    accuracy_class_vt_from: float = 0.6
    accuracy_class_vt_to: float = 0.6
    accuracy_class_ct_from: float = 0.6
    accuracy_class_ct_to: float = 0.6

    @property
    def branch(self) -> Branch:
        return (self.from_bus, self.to_bus)


@dataclass(frozen=True)
class ExtraLineSpec:
    """A line outside the connected tree, optionally metered at one end."""

    from_bus: int
    to_bus: int
    params: LineParams
    metered_end: Optional[int] = None


@dataclass(frozen=True)
class NetworkSpec:
    """Ground-truth network used for generation and scoring.

    ``injections`` are base complex power injections (p.u., generation
    positive, loads negative) for every non-slack bus.
    ``voltage_setpoints`` maps generator buses to a regulated voltage
    magnitude; the reactive part of their injection is then solved for.
    """

    buses: Tuple[int, ...]
    branches: Tuple[BranchSpec, ...]
    rqm_branch: Branch
    rqm_end: int
    base_mva: float = 100.0
    base_kv: float = 345.0
    slack_bus: Optional[int] = None
    slack_voltage: complex = 1.0 + 0.0j
    injections: Mapping[int, complex] = field(default_factory=dict)
    extra_lines: Tuple[ExtraLineSpec, ...] = ()
    pmu_buses: Tuple[int, ...] = ()
    voltage_setpoints: Mapping[int, float] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "buses", tuple(int(b) for b in self.buses))
        object.__setattr__(self, "branches", tuple(self.branches))
        object.__setattr__(self, "rqm_branch", tuple(self.rqm_branch))
        object.__setattr__(self, "extra_lines", tuple(self.extra_lines))
        if self.slack_bus is None:
            object.__setattr__(self, "slack_bus", self.rqm_end)
        if not self.pmu_buses:
            tree_buses = sorted({b for s in self.branches for b in s.branch})
            object.__setattr__(self, "pmu_buses", tuple(tree_buses))
        for line in self.extra_lines:
            for bus in (line.from_bus, line.to_bus):
                if bus not in self.buses:
                    raise TopologyError(f"extra line uses unknown bus {bus}")
        for bus, vm in self.voltage_setpoints.items():
            if bus not in self.buses or bus == self.slack_bus:
                raise TopologyError(f"voltage setpoint at invalid bus {bus}")
            if not 0.5 < float(vm) < 1.5:
                raise InputError(f"voltage setpoint {vm} at bus {bus} out of range")

    def tree(self) -> ConnectedTree:
        tree_buses = sorted({b for s in self.branches for b in s.branch})
        return ConnectedTree(tuple(tree_buses),
                             tuple(s.branch for s in self.branches),
                             self.rqm_branch, self.rqm_end)

    def branch_spec(self, branch) -> BranchSpec:
        key = canonical(branch)
        for spec in self.branches:
            if canonical(spec.branch) == key:
                return spec
        raise TopologyError(f"branch {tuple(branch)} not in network")

    def line_params(self) -> Dict[Branch, LineParams]:
        return {s.branch: s.params for s in self.branches}

    # ---- JSON ---------------------------------------------------------
    def to_dict(self) -> dict:
        def cplx(z):
            return [float(np.real(z)), float(np.imag(z))]

        return {
            "buses": list(self.buses),
            "branches": [
                {"from": s.from_bus, "to": s.to_bus, "r": s.params.r,
                 "x": s.params.x, "b": s.params.b,
                 "accuracy_class_vt_from": s.accuracy_class_vt_from,
                 "accuracy_class_vt_to": s.accuracy_class_vt_to,
                 "accuracy_class_ct_from": s.accuracy_class_ct_from,
                 "accuracy_class_ct_to": s.accuracy_class_ct_to}
                for s in self.branches],
            "rqm_branch": list(self.rqm_branch),
            "rqm_end": self.rqm_end,
            "base": {"mva": self.base_mva, "kv": self.base_kv},
            "slack_bus": self.slack_bus,
            "slack_voltage": cplx(self.slack_voltage),
            "injections": {str(k): cplx(v) for k, v in
                           sorted(self.injections.items())},
            "extra_lines": [
                {"from": e.from_bus, "to": e.to_bus, "r": e.params.r,
                 "x": e.params.x, "b": e.params.b,
                 "metered_end": e.metered_end} for e in self.extra_lines],
            "pmu_buses": list(self.pmu_buses),
            "voltage_setpoints": {str(k): float(v) for k, v in
                                  sorted(self.voltage_setpoints.items())},
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "NetworkSpec":
        try:
            branches = tuple(
                BranchSpec(int(d["from"]), int(d["to"]),
                           LineParams(d["r"], d["x"], d["b"]),
                           float(d.get("accuracy_class_vt_from", 0.6)),
                           float(d.get("accuracy_class_vt_to", 0.6)),
                           float(d.get("accuracy_class_ct_from", 0.6)),
                           float(d.get("accuracy_class_ct_to", 0.6)))
                for d in doc["branches"])
            extra = tuple(
                ExtraLineSpec(int(d["from"]), int(d["to"]),
                              LineParams(d["r"], d["x"], d["b"]),
                              d.get("metered_end"))
                for d in doc.get("extra_lines", []))
            base = doc.get("base", {})
            sv = doc.get("slack_voltage", [1.0, 0.0])
            return cls(
                buses=tuple(doc["buses"]),
                branches=branches,
                rqm_branch=tuple(doc["rqm_branch"]),
                rqm_end=int(doc["rqm_end"]),
                base_mva=float(base.get("mva", 100.0)),
                base_kv=float(base.get("kv", 345.0)),
                slack_bus=doc.get("slack_bus"),
                slack_voltage=complex(sv[0], sv[1]),
                injections={int(k): complex(v[0], v[1])
                            for k, v in doc.get("injections", {}).items()},
                extra_lines=extra,
                pmu_buses=tuple(doc.get("pmu_buses", ())),
                voltage_setpoints={
                    int(k): float(v)
                    for k, v in doc.get("voltage_setpoints", {}).items()},
            )
        except (KeyError, TypeError, IndexError) as exc:
            raise InputError(f"invalid network spec: {exc!r}") from exc

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path) -> "NetworkSpec":
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except OSError as exc:
            raise InputError(f"{path}: {exc.strerror}") from exc
        except json.JSONDecodeError as exc:
            raise InputError(
                f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
        return cls.from_dict(doc)


def iter_tree_buses(branches: Iterable[Branch]) -> List[int]:
    return sorted({b for br in branches for b in br})
