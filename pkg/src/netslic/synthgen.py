"""Synthetic synchrophasor datasets with known ground truth.

True phasors come from a nodal solve: the slack bus is held at a fixed
voltage and every other bus injects a prescribed complex power that
ramps over the recording and fluctuates bus by bus. Every IT channel
then gets a constant complex ratio error ``eta`` and the PMU adds
Gaussian noise sized from a TVE budget::

    measured = eta * true + delta
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Dict, Mapping, Optional, Tuple

import numpy as np

from .exceptions import GenerationError, InputError
from .model import (Branch, BranchMeasurements, BusCurrentSet, ConnectedTree,
                    LineParams, NetworkSpec, canonical)

#: default phase-angle bound per accuracy-class percent, in degrees
ANGLE_PER_CLASS_DEG = 0.87


@dataclass(frozen=True)
class NoiseConfig:
    tve_max: float = 0.001
    rng_seed: int = 0
    it_accuracy_regular: float = 0.6
    it_accuracy_rqm: float = 0.15
    perfect_rqm: bool = False
    angle_per_class_deg: float = ANGLE_PER_CLASS_DEG

    def __post_init__(self):
        if self.tve_max < 0:
            raise InputError("tve_max must be >= 0")
        if self.it_accuracy_regular <= 0 or self.it_accuracy_rqm <= 0:
            raise InputError("accuracy classes must be > 0")


@dataclass(frozen=True)
class LoadScenario:
    """Load trajectory over ``n_samples`` instants.

    Loads (injections with negative real part) follow a linear ramp from 1
    to ``1 + k * ramp_fraction`` times an independent per-bus, per-instant
    factor ``1 + fluctuation * N(0, 1)``. The per-bus rate ``k`` is drawn
    uniformly from ``1 +- ramp_spread``, so the system load still grows by
    ``ramp_fraction`` on average while individual buses pick up at
    different rates. Generators keep their scheduled
    injection and the slack bus covers the difference.
    ``base_injections`` overrides the network's own injections.
    """

    n_samples: int = 600
    ramp_fraction: float = 0.60
    fluctuation: float = 0.05
    ramp_spread: float = 0.5
    base_injections: Optional[Mapping[int, complex]] = None

    def __post_init__(self):
        if self.n_samples < 3:
            raise InputError("n_samples must be >= 3")
        if self.ramp_fraction < 0 or self.fluctuation < 0:
            raise InputError("ramp_fraction and fluctuation must be >= 0")
        if not 0 <= self.ramp_spread <= 1:
            raise InputError("ramp_spread must lie in [0, 1]")

    def trajectory(self, network: NetworkSpec, rng) -> np.ndarray:
        """Complex power injections, shape (n_samples, n_buses), bus order
        as ``network.buses``; the slack column is unused."""
        base = dict(network.injections)
        if self.base_injections is not None:
            base.update(self.base_injections)
        b0 = np.array([complex(base.get(bus, 0.0)) for bus in network.buses])
        t = np.linspace(0.0, 1.0, self.n_samples)
        rate = rng.uniform(1 - self.ramp_spread, 1 + self.ramp_spread,
                           size=b0.size)
        ramp = 1.0 + self.ramp_fraction * t[:, None] * rate[None, :]
        wiggle = 1.0 + self.fluctuation * rng.standard_normal(
            (self.n_samples, b0.size))
        scale = ramp * wiggle
        is_load = b0.real < 0
        return np.where(is_load[None, :], scale * b0[None, :], b0[None, :])


@dataclass(frozen=True)
class Snapshot:
    """True bus voltages and terminal currents for a batch of instants."""

    voltages: np.ndarray                      # (T, n_buses)
    bus_index: Mapping[int, int]
    currents: Mapping[Tuple[int, int], Tuple[np.ndarray, np.ndarray]]
    injections: np.ndarray                    # (T, n_buses) nodal currents Y V

    def voltage(self, bus) -> np.ndarray:
        return self.voltages[:, self.bus_index[bus]]


def _all_lines(network: NetworkSpec):
    for spec in network.branches:
        yield spec.branch, spec.params
    for line in network.extra_lines:
        yield (line.from_bus, line.to_bus), line.params


def terminal_currents(params: LineParams, v_p, v_q):
    """Terminal currents (bus into line) of the pi-model at both ends."""
    y_series = 1.0 / params.z
    y_shunt = 1j * params.b
    i_p = y_shunt * v_p + (v_p - v_q) * y_series
    i_q = y_shunt * v_q + (v_q - v_p) * y_series
    return i_p, i_q


def admittance_matrix(network: NetworkSpec) -> np.ndarray:
    idx = {b: k for k, b in enumerate(network.buses)}
    Y = np.zeros((len(idx), len(idx)), complex)
    for (p, q), params in _all_lines(network):
        ys = 1.0 / params.z
        i, j = idx[p], idx[q]
        Y[i, i] += ys + 1j * params.b
        Y[j, j] += ys + 1j * params.b
        Y[i, j] -= ys
        Y[j, i] -= ys
    return Y


def solve_snapshot(network: NetworkSpec, injections, tol=1e-12,
                   max_iter=30) -> Snapshot:
    """Nodal solve with the slack voltage fixed.

    ``injections`` are complex powers (p.u., generation positive, loads
    negative), shape (n_buses,) or (T, n_buses), or a mapping bus ->
    complex for one instant. The slack entry is ignored. Non-slack
    voltages satisfy ``V * conj(Y V) = S`` (Newton iteration in
    rectangular coordinates, all instants at once). At buses listed in
    ``network.voltage_setpoints`` the reactive balance is replaced by the
    magnitude setpoint.
    """
    idx = {b: k for k, b in enumerate(network.buses)}
    if isinstance(injections, Mapping):
        inj = np.array([complex(injections.get(b, 0)) for b in network.buses])
    else:
        inj = np.asarray(injections, dtype=complex)
    inj = np.atleast_2d(inj)
    if inj.shape[1] != len(idx):
        raise InputError("injection width does not match bus count")
    Y = admittance_matrix(network)
    s = idx[network.slack_bus]
    rest = np.array([k for k in range(len(idx)) if k != s])
    Ynn = Y[np.ix_(rest, rest)]
    cond = np.linalg.cond(Ynn)
    if not np.isfinite(cond) or cond > 1e12:
        raise GenerationError(f"singular network (cond={cond:.3g})")
    T, m = inj.shape[0], rest.size
    V = np.empty(inj.shape, complex)
    V[:, s] = network.slack_voltage
    V[:, rest] = network.slack_voltage
    S = inj[:, rest]
    Yr = Y[rest]                        # rows of non-slack buses
    Yc = np.conj(Yr[:, rest])
    pv = np.array([j for j, k in enumerate(rest)
                   if network.buses[k] in network.voltage_setpoints], int)
    vset2 = np.array([network.voltage_setpoints[network.buses[rest[j]]]
                      for j in pv]) ** 2
    V[:, rest[pv]] = np.sqrt(vset2)
    for _ in range(max_iter):
        I = V @ Yr.T
        Vn = V[:, rest]
        mis = Vn * np.conj(I) - S
        mis.imag[:, pv] = np.abs(Vn[:, pv]) ** 2 - vset2
        if np.max(np.abs(mis)) < tol:
            break
        # dS/dRe(V), dS/dIm(V) for every instant
        dE = Vn[:, :, None] * Yc[None]
        dF = -1j * dE
        diag = np.conj(I)
        dE[:, np.arange(m), np.arange(m)] += diag
        dF[:, np.arange(m), np.arange(m)] += 1j * diag
        J = np.block([[dE.real, dF.real], [dE.imag, dF.imag]])
        rows = m + pv
        J[:, rows, :] = 0.0
        J[:, rows, pv] = 2 * Vn[:, pv].real
        J[:, rows, m + pv] = 2 * Vn[:, pv].imag
        rhs = -np.concatenate([mis.real, mis.imag], axis=1)[..., None]
        try:
            dx = np.linalg.solve(J, rhs)[..., 0]
        except np.linalg.LinAlgError as exc:
            raise GenerationError("load-flow Jacobian is singular") from exc
        V[:, rest] = Vn + dx[:, :m] + 1j * dx[:, m:]
        if not np.all(np.isfinite(V)):
            raise GenerationError("load flow diverged")
    else:
        raise GenerationError("load flow did not converge")
    if np.min(np.abs(V)) < 0.5:
        raise GenerationError("load flow converged to a low-voltage solution")
    currents = {}
    for (p, q), params in _all_lines(network):
        currents[(p, q)] = terminal_currents(params, V[:, idx[p]],
                                             V[:, idx[q]])
    return Snapshot(V, idx, currents, V @ Y.T)


# ---------------------------------------------------------------------------
# ratio errors

def angle_bound_deg(accuracy_class, angle_per_class=ANGLE_PER_CLASS_DEG):
    return accuracy_class * angle_per_class


def sample_eta(accuracy_class, rng, angle_per_class=ANGLE_PER_CLASS_DEG):
    """Draw one complex ratio error for an IT of the given class.

    Magnitude is uniform in ``1 +- class/100`` and the angle uniform in
    ``+- class * angle_per_class`` degrees.
    """
    if accuracy_class <= 0:
        raise InputError("accuracy class must be > 0")
    mag = rng.uniform(1 - accuracy_class / 100, 1 + accuracy_class / 100)
    bound = math.radians(angle_bound_deg(accuracy_class, angle_per_class))
    ang = rng.uniform(-bound, bound)
    return complex(mag * np.exp(1j * ang))


# channel keys: ("V"|"I", branch, bus) for tree branch ends,
# ("IL", bus) for residual currents, ("IX", line, bus) for extra lines
Channel = tuple


def channel_name(ch: Channel) -> str:
    if ch[0] == "IL":
        return f"IL@{ch[1]}"
    kind, (p, q), bus = ch
    return f"{kind}:{p}-{q}@{bus}"


def parse_channel(name: str) -> Channel:
    if name.startswith("IL@"):
        return ("IL", int(name[3:]))
    kind, rest = name.split(":", 1)
    pair, bus = rest.split("@")
    p, q = pair.split("-")
    return (kind, (int(p), int(q)), int(bus))


def assign_etas(network: NetworkSpec, noise: NoiseConfig, rng
                ) -> Dict[Channel, complex]:
    """One constant eta per IT channel, RQM channels included."""
    k = noise.angle_per_class_deg
    rqm = network.tree().rqm_branch
    etas: Dict[Channel, complex] = {}
    for spec in network.branches:
        p, q = spec.branch
        classes = {("V", p): spec.accuracy_class_vt_from,
                   ("V", q): spec.accuracy_class_vt_to,
                   ("I", p): spec.accuracy_class_ct_from,
                   ("I", q): spec.accuracy_class_ct_to}
        for kind in ("V", "I"):
            for bus in (p, q):
                is_rqm = spec.branch == rqm and bus == network.rqm_end
                if is_rqm and noise.perfect_rqm:
                    eta = 1.0 + 0.0j
                elif is_rqm:
                    eta = sample_eta(noise.it_accuracy_rqm, rng, k)
                else:
                    eta = sample_eta(classes[(kind, bus)], rng, k)
                etas[(kind, spec.branch, bus)] = eta
    for bus in network.tree().buses:
        etas[("IL", bus)] = sample_eta(noise.it_accuracy_regular, rng, k)
    for line in network.extra_lines:
        if line.metered_end is not None:
            etas[("IX", (line.from_bus, line.to_bus), line.metered_end)] = \
                sample_eta(noise.it_accuracy_regular, rng, k)
    return etas


def noise_sigma(true, tve_max):
    """Per-component std so that 3 sigma radial error ~ the TVE bound."""
    return tve_max * np.abs(true) / (3.0 * math.sqrt(2.0))


def apply_composite_noise(true, eta, tve_max, rng) -> np.ndarray:
    """``eta * true + delta`` with i.i.d. complex Gaussian ``delta``."""
    true = np.asarray(true, dtype=complex)
    out = eta * true
    if tve_max > 0:
        sigma = noise_sigma(true, tve_max)
        out = out + sigma * (rng.standard_normal(true.shape)
                             + 1j * rng.standard_normal(true.shape))
    return out


# ---------------------------------------------------------------------------
# datasets

@dataclass
class Dataset:
    """Measured series plus everything needed to score an estimate."""

    network: NetworkSpec
    tree: ConnectedTree
    measurements: Dict[Branch, BranchMeasurements]
    bus_currents: Dict[int, BusCurrentSet]
    etas: Dict[Channel, complex]
    legacy: Dict[Branch, LineParams]
    true_measurements: Dict[Branch, BranchMeasurements] = field(repr=False)
    true_voltages: np.ndarray = field(repr=False, default=None)
    extra_currents: Dict[Channel, np.ndarray] = field(default_factory=dict,
                                                      repr=False)
    true_extra_currents: Dict[Channel, np.ndarray] = field(
        default_factory=dict, repr=False)
    seed: int = 0

    @property
    def n_samples(self) -> int:
        return next(iter(self.measurements.values())).n

    def true_cfs(self, branch):
        from .model import CorrectionFactors
        p, q = branch = self.tree.lookup(branch)
        e = self.etas
        return CorrectionFactors.from_etas(e[("V", branch, p)],
                                           e[("V", branch, q)],
                                           e[("I", branch, p)],
                                           e[("I", branch, q)])

    def window(self, start, stop) -> "Dataset":
        return replace(
            self,
            measurements={k: m.window(start, stop)
                          for k, m in self.measurements.items()},
            bus_currents={k: c.window(start, stop)
                          for k, c in self.bus_currents.items()},
            true_measurements={k: m.window(start, stop)
                               for k, m in self.true_measurements.items()},
            true_voltages=self.true_voltages[start:stop],
            extra_currents={k: v[start:stop]
                            for k, v in self.extra_currents.items()},
            true_extra_currents={k: v[start:stop] for k, v in
                                 self.true_extra_currents.items()},
        )


def legacy_parameters(network: NetworkSpec, spread, rng
                      ) -> Dict[Branch, LineParams]:
    """Truth times independent ``U(1 - spread, 1 + spread)`` factors.

    Covers tree branches and extra lines; tree draws come first so adding
    extra lines never changes a tree branch's legacy values.
    """
    out = {}
    for spec in network.branches:
        out[spec.branch] = spec.params.scaled(
            rng.uniform(1 - spread, 1 + spread, size=3))
    for line in network.extra_lines:
        out[(line.from_bus, line.to_bus)] = line.params.scaled(
            rng.uniform(1 - spread, 1 + spread, size=3))
    return out


def generate_dataset(network: NetworkSpec, noise: NoiseConfig = NoiseConfig(),
                     load: LoadScenario = LoadScenario(),
                     legacy_spread: float = 0.10) -> Dataset:
    """Simulate one recording; the same seed gives bit-identical output."""
    ss = np.random.SeedSequence(noise.rng_seed)
    rng_load, rng_eta, rng_noise, rng_legacy = (
        np.random.default_rng(s) for s in ss.spawn(4))
    tree = network.tree()
    snap = solve_snapshot(network, load.trajectory(network, rng_load))
    etas = assign_etas(network, noise, rng_eta)

    true_meas, meas = {}, {}
    for spec in network.branches:
        p, q = br = spec.branch
        i_p, i_q = snap.currents[br]
        true = BranchMeasurements(br, snap.voltage(p), snap.voltage(q), i_p, i_q)
        true_meas[br] = true
        chans = [(snap.voltage(p), ("V", br, p)), (snap.voltage(q), ("V", br, q)),
                 (i_p, ("I", br, p)), (i_q, ("I", br, q))]
        noisy = [apply_composite_noise(x, etas[ch], noise.tve_max, rng_noise)
                 for x, ch in chans]
        meas[br] = BranchMeasurements(br, *noisy)

    bus_currents = {}
    for bus in tree.buses:
        inc = tree.incident(bus)
        true_terms = {br: true_meas[br].current_at(bus) for br in inc}
        residual = -sum(true_terms.values())
        noisy_res = apply_composite_noise(residual, etas[("IL", bus)],
                                          noise.tve_max, rng_noise)
        bus_currents[bus] = BusCurrentSet(
            bus, {br: meas[br].current_at(bus) for br in inc}, noisy_res)

    extra, true_extra = {}, {}
    for line in network.extra_lines:
        if line.metered_end is None:
            continue
        key = (line.from_bus, line.to_bus)
        i_p, i_q = snap.currents[key]
        true = i_p if line.metered_end == line.from_bus else i_q
        ch = ("IX", key, line.metered_end)
        true_extra[ch] = true
        extra[ch] = apply_composite_noise(true, etas[ch], noise.tve_max,
                                          rng_noise)

    legacy = legacy_parameters(network, legacy_spread, rng_legacy)
    return Dataset(network, tree, meas, bus_currents, etas, legacy,
                   true_meas, snap.voltages, extra, true_extra,
                   seed=noise.rng_seed)


def canonical_channels(etas) -> Dict[str, complex]:
    return {channel_name(ch): complex(v) for ch, v in etas.items()}


__all__ = [
    "NoiseConfig", "LoadScenario", "Snapshot", "Dataset", "solve_snapshot",
    "sample_eta", "apply_composite_noise", "assign_etas", "generate_dataset",
    "terminal_currents", "admittance_matrix", "noise_sigma", "channel_name",
    "parse_channel", "legacy_parameters", "angle_bound_deg", "canonical",
]
