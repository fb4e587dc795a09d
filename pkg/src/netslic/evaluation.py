"""Error metrics and the Monte-Carlo harness.

Every trial draws fresh ratio errors, PMU noise and legacy parameters from
its own seed, runs the full calibration and scores each branch against the
ground truth: absolute relative error (percent) for line parameters and
correction-factor magnitudes, absolute angle error (degrees) for
correction-factor angles.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .exceptions import InputError, MetricError, SlicError, TrialError
from .model import Branch, NetworkSpec
from .pipeline import SlicEstimate, calibrate_dataset
from .solver import SolverConfig
from .synthgen import Dataset, LoadScenario, NoiseConfig, generate_dataset

log = logging.getLogger(__name__)

LINE_QUANTITIES = ("r", "x", "b")
CF_NAMES = ("alpha_from", "alpha_to", "beta_from", "beta_to")
MAG_QUANTITIES = tuple(f"|{n}|" for n in CF_NAMES)
ANGLE_QUANTITIES = tuple(f"arg {n}" for n in CF_NAMES)
QUANTITIES = LINE_QUANTITIES + MAG_QUANTITIES + ANGLE_QUANTITIES


def are(est, truth) -> float:
    """Absolute relative error in percent."""
    truth = float(truth)
    if truth == 0 or not math.isfinite(truth):
        raise MetricError("relative error is undefined for a zero truth")
    return abs(float(est) - truth) / abs(truth) * 100.0


def wrap_degrees(angle) -> float:
    """Map an angle in degrees to (-180, 180]."""
    out = math.fmod(float(angle), 360.0)
    if out > 180.0:
        out -= 360.0
    elif out <= -180.0:
        out += 360.0
    return out


def ae(est, truth) -> float:
    """Absolute angle error in degrees, robust to wrap-around."""
    return abs(wrap_degrees(wrap_degrees(est) - wrap_degrees(truth)))


# ---------------------------------------------------------------------------
# scenarios

@dataclass(frozen=True)
class Scenario:
    """Everything that defines how one trial's dataset is drawn."""

    name: str
    noise: NoiseConfig
    load: LoadScenario = LoadScenario()
    legacy_spread: float = 0.10

    def dataset(self, network: NetworkSpec, seed: int) -> Dataset:
        noise = replace(self.noise, rng_seed=int(seed))
        return generate_dataset(network, noise, self.load, self.legacy_spread)


PRESETS = {
    # perfect RQM pair, no additive noise
    "ideal": NoiseConfig(tve_max=0.0, perfect_rqm=True),
    # perfect RQM pair, 0.1% TVE
    "noisy-perfect-rqm": NoiseConfig(tve_max=0.001, perfect_rqm=True),
    # 0.15-class RQM pair, 0.1% TVE
    "realistic": NoiseConfig(tve_max=0.001, perfect_rqm=False),
}


def preset(name: str, **noise_overrides) -> Scenario:
    """Named scenario; keyword arguments override :class:`NoiseConfig`
    fields of the preset."""
    if name not in PRESETS:
        raise InputError(f"unknown scenario {name!r}; "
                         f"choose from {sorted(PRESETS)}")
    return Scenario(name, replace(PRESETS[name], **noise_overrides))


def trial_seeds(root_seed: int, trials: int) -> List[int]:
    """Independent per-trial seeds split from one root seed."""
    if trials < 1:
        raise InputError("trials must be >= 1")
    children = np.random.SeedSequence(int(root_seed)).spawn(trials)
    return [int(c.generate_state(1)[0]) for c in children]


# ---------------------------------------------------------------------------
# scoring

def score_branch(estimate: SlicEstimate, dataset: Dataset
                 ) -> Dict[str, float]:
    """ARE/AE of every quantity of one branch estimate."""
    br = estimate.branch
    true_line = dataset.network.branch_spec(br).params
    true_cfs = dataset.true_cfs(br)
    out = {q: are(getattr(estimate.line, q), getattr(true_line, q))
           for q in LINE_QUANTITIES}
    for name, mag, ang in zip(CF_NAMES, MAG_QUANTITIES, ANGLE_QUANTITIES):
        est, truth = getattr(estimate.cfs, name), getattr(true_cfs, name)
        out[mag] = are(abs(est), abs(truth))
        out[ang] = ae(math.degrees(np.angle(est)), math.degrees(np.angle(truth)))
    return out


@dataclass
class TrialResult:
    trial: int
    seed: int
    errors: Dict[Branch, Dict[str, float]]
    max_constraint_violation: float = 0.0


def score_trial(estimates: Mapping[Branch, SlicEstimate], dataset: Dataset,
                trial=0) -> TrialResult:
    errors = {br: score_branch(e, dataset) for br, e in estimates.items()}
    viol = max((e.max_constraint_violation for e in estimates.values()),
               default=0.0)
    return TrialResult(trial, dataset.seed, errors, viol)


def run_trial(network: NetworkSpec, scenario: Scenario, config: SolverConfig,
              seed: int, trial: int = 0) -> TrialResult:
    """Generate, calibrate and score one trial.

    Raises
    ------
    TrialError
        Wrapping any package error, tagged with the trial and its seed.
    """
    try:
        dataset = scenario.dataset(network, seed)
        estimates = calibrate_dataset(dataset, config)
    except SlicError as exc:
        raise TrialError(f"trial {trial} (seed {seed}): {exc}",
                         trial=trial, seed=seed) from exc
    return score_trial(estimates, dataset, trial)


# ---------------------------------------------------------------------------
# aggregation

@dataclass
class MetricReport:
    """MARE/SDARE per branch and quantity over a set of trials.

    Magnitude and line-parameter entries are percent, angle entries are
    degrees (their "MARE" is the mean absolute error).
    """

    trials: int
    mare: Dict[Tuple[Branch, str], float]
    sdare: Dict[Tuple[Branch, str], float]
    seeds: List[int] = field(default_factory=list)
    max_constraint_violation: float = 0.0
    label: str = ""

    @classmethod
    def from_trials(cls, results: Sequence[TrialResult], label=""
                    ) -> "MetricReport":
        if not results:
            raise InputError("no trial results to aggregate")
        samples: Dict[Tuple[Branch, str], List[float]] = {}
        for res in results:
            for br, errs in res.errors.items():
                for q, v in errs.items():
                    samples.setdefault((br, q), []).append(v)
        mare = {k: float(np.mean(v)) for k, v in samples.items()}
        sdare = {k: float(np.std(v)) for k, v in samples.items()}
        viol = max(r.max_constraint_violation for r in results)
        return cls(len(results), mare, sdare, [r.seed for r in results],
                   viol, label)

    @property
    def branches(self) -> List[Branch]:
        return sorted({br for br, _ in self.mare})

    def overall(self, quantity: str) -> float:
        """Mean over branches (and trials) of one quantity."""
        vals = [v for (_, q), v in self.mare.items() if q == quantity]
        if not vals:
            raise InputError(f"no entries for {quantity!r}")
        return float(np.mean(vals))

    def _group(self, quantities) -> float:
        return float(np.mean([self.overall(q) for q in quantities]))

    def worst(self, quantities) -> Tuple[float, Branch, str]:
        """Largest per-branch MARE among ``quantities``, with its location."""
        if isinstance(quantities, str):
            quantities = [quantities]
        cells = [(v, br, q) for (br, q), v in self.mare.items()
                 if q in quantities]
        if not cells:
            raise InputError(f"no entries for {list(quantities)!r}")
        return max(cells)

    def worst_cf(self, kind: str = "all", angle: bool = False
                 ) -> Tuple[float, Branch, str]:
        names = ANGLE_QUANTITIES if angle else MAG_QUANTITIES
        return self.worst(_cf_subset(names, kind))

    def line_mare(self, quantity=None) -> float:
        return self._group(LINE_QUANTITIES if quantity is None else [quantity])

    def cf_magnitude_mare(self, kind: str = "all") -> float:
        """Mean magnitude ARE of VT (``"vt"``), CT (``"ct"``) or all CFs."""
        return self._group(_cf_subset(MAG_QUANTITIES, kind))

    def cf_angle_mae(self, kind: str = "all") -> float:
        return self._group(_cf_subset(ANGLE_QUANTITIES, kind))

    def aggregate_error(self) -> float:
        """Line-parameter MARE plus CF magnitude MARE, both in percent."""
        return self.line_mare() + self.cf_magnitude_mare()

    def rows(self) -> List[dict]:
        """One row per branch and quantity, for CSV export."""
        out = []
        for (br, q) in sorted(self.mare, key=lambda k: (k[0],
                                                        QUANTITIES.index(k[1]))):
            out.append({"label": self.label, "branch": f"{br[0]}-{br[1]}",
                        "quantity": q,
                        "unit": "deg" if q in ANGLE_QUANTITIES else "%",
                        "mare": self.mare[(br, q)],
                        "sdare": self.sdare[(br, q)],
                        "trials": self.trials})
        return out

    def summary(self) -> dict:
        return {
            "label": self.label,
            "trials": self.trials,
            "line_mare_pct": {q: self.overall(q) for q in LINE_QUANTITIES},
            "vt_magnitude_mare_pct": self.cf_magnitude_mare("vt"),
            "ct_magnitude_mare_pct": self.cf_magnitude_mare("ct"),
            "vt_angle_mae_deg": self.cf_angle_mae("vt"),
            "ct_angle_mae_deg": self.cf_angle_mae("ct"),
            "aggregate_error_pct": self.aggregate_error(),
            "max_constraint_violation": self.max_constraint_violation,
            "seeds": list(self.seeds),
        }

    def table(self) -> str:
        """Fixed-width per-branch table of MARE values."""
        head = f"{'branch':>8}" + "".join(f"{q:>14}" for q in QUANTITIES)
        lines = [head]
        for br in self.branches:
            vals = "".join(f"{self.mare[(br, q)]:>14.5f}" for q in QUANTITIES)
            lines.append(f"{br[0]:>4}-{br[1]:<3}" + vals)
        vals = "".join(f"{self.overall(q):>14.5f}" for q in QUANTITIES)
        lines.append(f"{'all':>8}" + vals)
        return "\n".join(lines)


def _cf_subset(names, kind):
    kind = kind.lower()
    if kind == "all":
        return names
    if kind == "vt":
        return [n for n in names if "alpha" in n]
    if kind == "ct":
        return [n for n in names if "beta" in n]
    raise InputError(f"unknown CF kind {kind!r}")


def _trial_job(args):
    return run_trial(*args)


def run_monte_carlo(network: NetworkSpec, scenario: Scenario, trials: int,
                    config: SolverConfig = SolverConfig(), seed: int = 0,
                    jobs: int = 1, label: str = "") -> MetricReport:
    """Run ``trials`` independent trials and aggregate their errors.

    Parameters
    ----------
    network : NetworkSpec
    scenario : Scenario
    trials : int
    config : SolverConfig
    seed : int
        Root seed; per-trial seeds are split from it.
    jobs : int
        Worker processes; ``1`` runs in-process.

    Raises
    ------
    TrialError
        The first failing trial, tagged with its index and seed.
    """
    seeds = trial_seeds(seed, trials)
    tasks = [(network, scenario, config, s, k) for k, s in enumerate(seeds)]
    if jobs > 1 and trials > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_trial_job, tasks))
    else:
        results = [_trial_job(t) for t in tasks]
    return MetricReport.from_trials(results, label or scenario.name)


def sweep_lambda(values: Sequence[float], network: NetworkSpec,
                 scenario: Scenario, trials: int,
                 config: SolverConfig = SolverConfig(), seed: int = 0,
                 jobs: int = 1) -> List[Tuple[float, MetricReport]]:
    """One Monte-Carlo report per regularization weight (``lam = lam1``).

    Every value reuses the same trial seeds, so the comparison is paired.
    """
    if not values:
        raise InputError("no regularization weights given")
    if any(v <= 0 for v in values):
        raise InputError("regularization weights must be > 0")
    out = []
    for lam in values:
        cfg = replace(config, lam=float(lam), lam1=float(lam))
        report = run_monte_carlo(network, scenario, trials, cfg, seed, jobs,
                                 label=f"lambda={lam:g}")
        log.info("lambda %g: aggregate error %.5f%%", lam,
                 report.aggregate_error())
        out.append((float(lam), report))
    return out


def sweep_rows(sweep) -> List[dict]:
    """Summary rows of a sweep, one per regularization weight."""
    rows = []
    for lam, rep in sweep:
        s = rep.summary()
        rows.append({"lambda": lam, "trials": rep.trials,
                     "line_mare_pct": rep.line_mare(),
                     "cf_magnitude_mare_pct": rep.cf_magnitude_mare(),
                     "cf_angle_mae_deg": rep.cf_angle_mae(),
                     "aggregate_error_pct": s["aggregate_error_pct"]})
    return rows


__all__ = [
    "are", "ae", "wrap_degrees", "Scenario", "PRESETS", "preset",
    "trial_seeds", "score_branch", "score_trial", "TrialResult", "run_trial",
    "MetricReport", "run_monte_carlo", "sweep_lambda", "sweep_rows",
    "QUANTITIES", "LINE_QUANTITIES", "MAG_QUANTITIES", "ANGLE_QUANTITIES",
]
