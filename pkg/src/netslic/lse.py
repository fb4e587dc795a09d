"""Linear state estimation on PMU channels.

The state is the complex voltage of every bus. Each voltage channel
observes its bus directly; each current channel observes the pi-model
current of its line::

    I_p = (j b + 1/z) V_p - (1/z) V_q

so the model is linear in the state and is solved per instant by weighted
least squares in rectangular coordinates. Weights are inverse noise
variances, with each channel's sigma sized from the TVE budget and the
channel's mean measured magnitude.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np

from .exceptions import InputError, NumericDomainError, ObservabilityError
from .model import Branch, LineParams, NetworkSpec
from .synthgen import Channel, Dataset, noise_sigma

PARAM_SOURCES = ("legacy", "estimated", "true")
CF_SOURCES = ("none", "estimated", "true")


def _line_rows(params: LineParams):
    """Coefficients of (V_metered, V_other) in the metered-end current."""
    ys = 1.0 / params.z
    return 1j * params.b + ys, -ys


@dataclass
class ObservationModel:
    """Channels, their rows over the bus voltages and per-channel weights.

    ``corrections`` maps a channel to the factor its measurement is
    multiplied by before the fit (``1`` when absent).
    """

    buses: List[int]
    channels: List[Channel]
    H: np.ndarray                                   # (n_channels, n_buses)
    sigma: np.ndarray                               # (n_channels,)
    corrections: Dict[Channel, complex] = field(default_factory=dict)
    params: Dict[Branch, LineParams] = field(default_factory=dict, repr=False)

    @property
    def real_matrix(self) -> np.ndarray:
        H = self.H
        return np.block([[H.real, -H.imag], [H.imag, H.real]])

    @property
    def weights(self) -> np.ndarray:
        w = 1.0 / self.sigma ** 2
        return np.concatenate([w, w])

    def check_observable(self):
        A = self.real_matrix * np.sqrt(self.weights)[:, None]
        rank = np.linalg.matrix_rank(A)
        if rank < A.shape[1]:
            raise ObservabilityError(
                f"observation model has rank {rank} < {A.shape[1]} states")

    def stack(self, series: Mapping[Channel, np.ndarray]) -> np.ndarray:
        """Corrected measurements, shape (T, n_channels)."""
        missing = [ch for ch in self.channels if ch not in series]
        if missing:
            raise InputError(f"missing channels: {missing}")
        cols = [np.asarray(series[ch], complex) * self.corrections.get(ch, 1.0)
                for ch in self.channels]
        return np.column_stack(cols)


def _channel_rows(network: NetworkSpec, params: Mapping[Branch, LineParams]):
    """Yield (channel, {bus: coefficient}) for every metered channel."""
    for spec in network.branches:
        p, q = br = spec.branch
        if br not in params:
            raise InputError(f"no parameters for branch {br}")
        for bus in (p, q):
            yield ("V", br, bus), {bus: 1.0}
        own, other = _line_rows(params[br])
        yield ("I", br, p), {p: own, q: other}
        yield ("I", br, q), {q: own, p: other}
    for line in network.extra_lines:
        if line.metered_end is None:
            continue
        key = (line.from_bus, line.to_bus)
        if key not in params:
            raise InputError(f"no parameters for line {key}")
        m = line.metered_end
        far = line.to_bus if m == line.from_bus else line.from_bus
        own, other = _line_rows(params[key])
        yield ("IX", key, m), {m: own, far: other}


def measured_channels(dataset: Dataset) -> Dict[Channel, np.ndarray]:
    """Every PMU series of a dataset keyed by channel."""
    out: Dict[Channel, np.ndarray] = {}
    for br, m in dataset.measurements.items():
        p, q = br
        out[("V", br, p)], out[("V", br, q)] = m.v_from, m.v_to
        out[("I", br, p)], out[("I", br, q)] = m.i_from, m.i_to
    out.update(dataset.extra_currents)
    return out


def select_params(dataset: Dataset, source: str, estimates=None
                  ) -> Dict[Branch, LineParams]:
    """Line parameters for the model.

    ``"estimated"`` takes tree branches from ``estimates`` and keeps legacy
    values for lines the calibration does not cover.
    """
    if source not in PARAM_SOURCES:
        raise InputError(f"params source must be one of {PARAM_SOURCES}")
    net = dataset.network
    if source == "true":
        out = dict(net.line_params())
        out.update({(l.from_bus, l.to_bus): l.params for l in net.extra_lines})
        return out
    out = dict(dataset.legacy)
    if source == "estimated":
        if estimates is None:
            raise InputError("estimated params need calibration estimates")
        out.update({br: e.line for br, e in estimates.items()})
    return out


def select_corrections(dataset: Dataset, source: str, estimates=None
                       ) -> Dict[Channel, complex]:
    """Per-channel multipliers: estimated or true CFs on tree channels."""
    if source not in CF_SOURCES:
        raise InputError(f"cf source must be one of {CF_SOURCES}")
    if source == "none":
        return {}
    out = {}
    for spec in dataset.network.branches:
        p, q = br = spec.branch
        if source == "true":
            cfs = dataset.true_cfs(br)
        else:
            if estimates is None or br not in estimates:
                raise InputError(f"no calibration estimate for {br}")
            cfs = estimates[br].cfs
        out[("V", br, p)], out[("V", br, q)] = cfs.alpha_from, cfs.alpha_to
        out[("I", br, p)], out[("I", br, q)] = cfs.beta_from, cfs.beta_to
    if source == "true":
        # calibration never reaches extra lines; only truth can correct them
        out.update({ch: 1 / eta for ch, eta in dataset.etas.items()
                    if ch[0] == "IX"})
    return out


def build_observation_model(network: NetworkSpec,
                            params: Mapping[Branch, LineParams],
                            corrections: Optional[Mapping[Channel, complex]] = None,
                            series: Optional[Mapping[Channel, np.ndarray]] = None,
                            tve: float = 0.001) -> ObservationModel:
    """Assemble the linear observation model.

    Parameters
    ----------
    network : NetworkSpec
        Topology and PMU placement (both ends of tree branches, the metered
        end of extra lines).
    params : mapping
        Line parameters per tree branch and metered extra line.
    corrections : mapping, optional
        Channel -> correction factor applied to its measurements.
    series : mapping, optional
        Measured series used to size the weights; uniform weights without.
    tve : float
        TVE budget used for the per-channel sigma.

    Raises
    ------
    ObservabilityError
        If the rows do not determine every bus voltage.
    """
    buses = list(network.buses)
    col = {b: k for k, b in enumerate(buses)}
    channels, rows = [], []
    for ch, coeffs in _channel_rows(network, params):
        row = np.zeros(len(buses), complex)
        for bus, c in coeffs.items():
            row[col[bus]] += c
        channels.append(ch)
        rows.append(row)
    H = np.array(rows)
    if series is not None and tve > 0:
        mags = np.array([np.mean(np.abs(series[ch])) for ch in channels])
        sigma = noise_sigma(mags, tve)
    else:
        sigma = np.ones(len(channels))
    if np.any(sigma <= 0):
        raise NumericDomainError("channel with zero measured magnitude")
    model = ObservationModel(buses, channels, H, sigma,
                             dict(corrections or {}), dict(params))
    model.check_observable()
    return model


@dataclass
class StateEstimate:
    voltages: np.ndarray                     # (T, n_buses)
    buses: List[int]
    residual: np.ndarray                     # (T, 2 n_channels), weighted
    net_are: Optional[float] = None
    net_ae: Optional[float] = None


def estimate_states(model: ObservationModel,
                    series: Mapping[Channel, np.ndarray],
                    truth: Optional[np.ndarray] = None) -> StateEstimate:
    """Weighted least-squares bus voltages at every instant.

    Parameters
    ----------
    model : ObservationModel
    series : mapping
        Channel -> measured series.
    truth : ndarray, optional
        True voltages, shape (T, n_buses) in ``model.buses`` order. When
        given, the result carries the net magnitude ARE (percent, averaged
        over buses and instants) and net angle AE (degrees).
    """
    Z = model.stack(series)
    A = model.real_matrix
    sw = np.sqrt(model.weights)
    Aw = A * sw[:, None]
    zr = np.concatenate([Z.real, Z.imag], axis=1) * sw[None, :]
    gram = Aw.T @ Aw
    if np.linalg.cond(gram) > 1e14:
        raise NumericDomainError("normal equations are singular")
    x = np.linalg.solve(gram, Aw.T @ zr.T).T
    n = len(model.buses)
    V = x[:, :n] + 1j * x[:, n:]
    resid = zr - x @ Aw.T
    est = StateEstimate(V, list(model.buses), resid)
    if truth is not None:
        truth = np.asarray(truth, complex)
        if truth.shape != V.shape:
            raise InputError("truth shape does not match the state")
        est.net_are = float(np.mean(np.abs(np.abs(V) - np.abs(truth))
                                    / np.abs(truth)) * 100)
        dang = np.angle(V / truth, deg=True)
        est.net_ae = float(np.mean(np.abs(dang)))
    return est


def improvement_pct(base: float, post: float) -> float:
    """Relative reduction from ``base`` to ``post`` in percent."""
    if base == 0 or not math.isfinite(base):
        raise NumericDomainError("baseline error is zero")
    return (base - post) / base * 100.0


def lse_case(dataset: Dataset, params_source: str, cf_source: str,
             estimates=None, tve: Optional[float] = None) -> StateEstimate:
    """Run the state estimator on a dataset for one parameter/CF choice."""
    series = measured_channels(dataset)
    tve = 0.001 if tve is None else tve
    model = build_observation_model(
        dataset.network, select_params(dataset, params_source, estimates),
        select_corrections(dataset, cf_source, estimates), series, tve)
    return estimate_states(model, series, dataset.true_voltages)


def lse_comparison(network: NetworkSpec, scenario, trials: int,
                   config=None, seed: int = 0) -> dict:
    """Paired base-case versus post-calibration state estimation.

    Each trial uses one dataset for both cases: legacy parameters with
    uncorrected measurements, then calibrated parameters and correction
    factors.

    Returns
    -------
    dict
        ``{"base": {"are", "ae"}, "post_slic": {"are", "ae"},
        "improvement_pct": {"are", "ae"}, "trials", "per_trial"}``.
    """
    from .evaluation import trial_seeds
    from .pipeline import calibrate_dataset
    from .solver import SolverConfig

    config = SolverConfig() if config is None else config
    per_trial = []
    for seed_k in trial_seeds(seed, trials):
        ds = scenario.dataset(network, seed_k)
        tve = scenario.noise.tve_max
        base = lse_case(ds, "legacy", "none", tve=tve)
        est = calibrate_dataset(ds, config)
        post = lse_case(ds, "estimated", "estimated", est, tve=tve)
        per_trial.append({"seed": seed_k,
                          "base": {"are": base.net_are, "ae": base.net_ae},
                          "post_slic": {"are": post.net_are,
                                        "ae": post.net_ae}})
    summary = {}
    for case in ("base", "post_slic"):
        summary[case] = {k: float(np.mean([t[case][k] for t in per_trial]))
                         for k in ("are", "ae")}
    summary["improvement_pct"] = {
        k: improvement_pct(summary["base"][k], summary["post_slic"][k])
        for k in ("are", "ae")}
    summary["trials"] = trials
    summary["per_trial"] = per_trial
    return summary


__all__ = [
    "ObservationModel", "StateEstimate", "build_observation_model",
    "estimate_states", "measured_channels", "select_params",
    "select_corrections", "lse_case", "lse_comparison", "improvement_pct",
]
