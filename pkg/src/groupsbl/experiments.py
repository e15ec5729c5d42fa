"""Seeded Monte Carlo sweeps, metric collection, and CSV emission.

Every trial derives its random seeds from a stable hash of
(base seed, sweep value, trial index), generates one observation set, and
feeds the identical data to every requested method.  Results are collected
in a fixed order so the raw CSV is byte-identical across reruns and worker
counts.
"""

from __future__ import annotations

import csv
import hashlib
import io
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .arrays import AngleGrid, ArrayGeometry, build_dictionary
from .baselines import genie_ls, individual_sbl, joint_omp
from .channels import (GroupScenario, draw_scenario, generate_pilots,
                       observe_users, synthesize_channels)
from .metrics import grouping_accuracy, nmse
from .vbi import Hyperparams, run_inference

SWEEP_VARIABLES = ("t_pilots", "snr_db", "n_groups", "angular_spread_deg")
METHODS = ("proposed", "group_only", "common", "individual_sbl", "joint_omp", "genie")

RAW_COLUMNS = ("method", "sweep_variable", "sweep_value", "trial", "trial_seed",
               "nmse", "grouping_accuracy", "iterations", "status", "obs_digest")
AGG_COLUMNS = ("method", "sweep_variable", "sweep_value", "n_trials", "n_failures",
               "nmse_mean", "nmse_stderr", "accuracy_mean", "accuracy_stderr",
               "iterations_mean")


@dataclass(frozen=True)
class ExperimentConfig:
    """One sweep: scenario template, geometry, methods, and trial count."""

    scenario: GroupScenario
    geometry: ArrayGeometry
    sweep: str
    values: tuple
    methods: tuple
    t_pilots: int = 24
    snr_db: float = 10.0
    n_trials: int = 200
    base_seed: int = 20240601
    hyper: Hyperparams = field(default_factory=Hyperparams)
    omp_common_budget: int | None = None
    omp_individual_budget: int | None = None
    threads: int = 1

    def __post_init__(self):
        if self.sweep not in SWEEP_VARIABLES:
            raise ValueError(f"sweep must be one of {SWEEP_VARIABLES}")
        if not self.values:
            raise ValueError("sweep value list must be nonempty")
        if not self.methods:
            raise ValueError("method list must be nonempty")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ValueError(f"unknown methods: {sorted(unknown)}")
        if self.n_trials < 1 or self.threads < 1:
            raise ValueError("trial and thread counts must be positive")


@dataclass
class ExperimentRecord:
    """Outcome of one method on one trial; wall time stays out of the CSVs
    so identical configs reproduce byte-identical files."""

    method: str
    sweep_variable: str
    sweep_value: float
    trial: int
    trial_seed: int
    nmse: float
    grouping_accuracy: float | None
    iterations: float
    status: str
    obs_digest: str
    wall_time: float


def _canon(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return repr(bool(value))
    if isinstance(value, (int, np.integer)):
        return repr(int(value))
    return repr(float(value))


def trial_seed(base_seed: int, sweep_value, trial: int, purpose: str = "") -> int:
    """Stable 63-bit seed from SHA-256 of the canonical trial identity."""
    text = f"{int(base_seed)}|{_canon(sweep_value)}|{int(trial)}|{purpose}"
    digest = hashlib.sha256(text.encode("ascii")).digest()
    return int.from_bytes(digest[:8], "little") >> 1


def _omp_budgets(config: ExperimentConfig, scenario: GroupScenario,
                 grid_interval: float):
    """Default greedy budgets: grid cells per cluster times cluster counts."""
    spread = np.deg2rad(scenario.angular_spread_deg)
    cells = max(1, int(np.ceil(spread / grid_interval)) + 1)
    common = config.omp_common_budget
    indiv = config.omp_individual_budget
    if common is None:
        common = scenario.shared_clusters * cells
    if indiv is None:
        indiv = scenario.individual_clusters * cells
    return common, indiv


def _run_trial(config: ExperimentConfig, sweep_value, trial: int) -> list[ExperimentRecord]:
    scenario = config.scenario
    hyper = config.hyper
    t_pilots = config.t_pilots
    snr_db = config.snr_db
    if config.sweep == "t_pilots":
        t_pilots = int(sweep_value)
    elif config.sweep == "snr_db":
        snr_db = float(sweep_value)
    elif config.sweep == "n_groups":
        hyper = replace(hyper, n_groups=int(sweep_value))
    elif config.sweep == "angular_spread_deg":
        scenario = replace(scenario, angular_spread_deg=float(sweep_value))

    seed = trial_seed(config.base_seed, sweep_value, trial)
    scenario = replace(scenario, seed=trial_seed(config.base_seed, sweep_value, trial, "scenario"))
    geometry = config.geometry
    realization = draw_scenario(scenario, geometry)
    channels = synthesize_channels(realization, geometry)
    pilots = generate_pilots(t_pilots, geometry.n_elements, 1.0,
                             trial_seed(config.base_seed, sweep_value, trial, "pilots"))
    observations = observe_users(pilots, channels, snr_db,
                                 trial_seed(config.base_seed, sweep_value, trial, "noise"))
    digest = hashlib.sha256(
        observations.pilots.tobytes() + observations.received.tobytes()
        + repr(observations.noise_variance).encode()).hexdigest()[:12]
    hyper = replace(hyper, init_seed=trial_seed(config.base_seed, sweep_value, trial, "init"),
                    grid_size=hyper.grid_size or geometry.n_elements)

    records = []
    for method in config.methods:
        start = time.perf_counter()
        value = float(sweep_value)
        try:
            est, labels, iters = _run_method(
                method, config, scenario, hyper, geometry, observations, realization)
            err = nmse(est, channels)
            acc = (grouping_accuracy(labels, realization.group_labels)
                   if labels is not None else None)
            status = "ok"
        except Exception as exc:  # recorded, the sweep continues
            err, acc, iters = float("nan"), None, 0.0
            status = f"failed:{type(exc).__name__}"
        records.append(ExperimentRecord(
            method=method, sweep_variable=config.sweep, sweep_value=value,
            trial=trial, trial_seed=seed, nmse=err, grouping_accuracy=acc,
            iterations=float(iters), status=status, obs_digest=digest,
            wall_time=time.perf_counter() - start))
    return records


def _run_method(method, config, scenario, hyper, geometry, observations, realization):
    """Dispatch one recovery method; returns (estimates, labels or None,
    iteration count)."""
    if method in ("proposed", "group_only", "common"):
        mode = "general" if method == "proposed" else method
        eff = replace(hyper, mode=mode)
        _, summary, _ = run_inference(eff, observations, geometry)
        return summary.channels, summary.group_labels, summary.iterations
    if method == "individual_sbl":
        grid = AngleGrid.for_geometry(geometry, hyper.grid_size)
        dictionary = build_dictionary(geometry, grid, 0)
        eff = replace(hyper, mode="general")
        estimates = np.zeros((observations.n_users, geometry.n_elements), dtype=complex)
        iters = []
        for k in range(observations.n_users):
            _, _, estimates[k], n = individual_sbl(
                observations.received[k], observations.pilots, dictionary, eff)
            iters.append(n)
        return estimates, None, float(np.mean(iters))
    if method == "joint_omp":
        grid = AngleGrid.for_geometry(geometry, hyper.grid_size)
        dictionary = build_dictionary(geometry, grid, 0)
        common, indiv = _omp_budgets(config, scenario, grid.interval)
        _, estimates = joint_omp(observations.received, observations.pilots,
                                 dictionary, common, indiv)
        return estimates, None, 0.0
    if method == "genie":
        estimates = np.zeros((observations.n_users, geometry.n_elements), dtype=complex)
        for k in range(observations.n_users):
            elev = (realization.elevations[k]
                    if realization.elevations is not None else None)
            estimates[k] = genie_ls(observations.received[k], observations.pilots,
                                    geometry, realization.azimuths[k], elev)
        return estimates, None, 0.0
    raise ValueError(f"unknown method {method!r}")


def run_monte_carlo(config: ExperimentConfig) -> list[ExperimentRecord]:
    """Run the full sweep; deterministic for a fixed config regardless of
    the worker count (BLAS is pinned to one thread while trials run)."""
    tasks = [(value, trial) for value in config.values
             for trial in range(config.n_trials)]
    results = {}
    with threadpool_limits(limits=1):
        if config.threads == 1:
            for value, trial in tasks:
                results[(value, trial)] = _run_trial(config, value, trial)
        else:
            with ThreadPoolExecutor(max_workers=config.threads) as pool:
                futures = {(value, trial): pool.submit(_run_trial, config, value, trial)
                           for value, trial in tasks}
                for key, future in futures.items():
                    results[key] = future.result()
    records = []
    for value in config.values:
        for trial in range(config.n_trials):
            records.extend(results[(value, trial)])
    return records


def _format(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def render_raw_csv(records) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(RAW_COLUMNS)
    for rec in records:
        writer.writerow([rec.method, rec.sweep_variable, _format(rec.sweep_value),
                         rec.trial, rec.trial_seed, _format(rec.nmse),
                         _format(rec.grouping_accuracy), _format(rec.iterations),
                         rec.status, rec.obs_digest])
    return out.getvalue()


def _mean_stderr(values):
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        return None, None
    mean = float(np.mean(arr))
    if arr.size == 1:
        return mean, 0.0
    return mean, float(np.std(arr, ddof=1) / np.sqrt(arr.size))


def aggregate_records(records):
    """Per (method, sweep value) means and standard errors over the
    successful trials, in stable method-then-value order."""
    keys = []
    groups = {}
    for rec in records:
        key = (rec.method, rec.sweep_value)
        if key not in groups:
            groups[key] = []
            keys.append(key)
        groups[key].append(rec)
    rows = []
    for method, value in keys:
        bucket = groups[(method, value)]
        ok = [r for r in bucket if r.status == "ok"]
        nm, ns = _mean_stderr([r.nmse for r in ok])
        accs = [r.grouping_accuracy for r in ok if r.grouping_accuracy is not None]
        am, asd = _mean_stderr(accs) if accs else (None, None)
        im = float(np.mean([r.iterations for r in ok])) if ok else None
        rows.append({
            "method": method, "sweep_variable": bucket[0].sweep_variable,
            "sweep_value": value, "n_trials": len(bucket),
            "n_failures": len(bucket) - len(ok), "nmse_mean": nm,
            "nmse_stderr": ns, "accuracy_mean": am, "accuracy_stderr": asd,
            "iterations_mean": im})
    return rows


def render_aggregate_csv(records) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(AGG_COLUMNS)
    for row in aggregate_records(records):
        writer.writerow([_format(row[c]) if not isinstance(row[c], str) else row[c]
                         for c in AGG_COLUMNS])
    return out.getvalue()


def render_summary(records) -> str:
    """Plain-text table with wall-clock totals (not byte-stable)."""
    rows = aggregate_records(records)
    times = {}
    for rec in records:
        times[rec.method] = times.get(rec.method, 0.0) + rec.wall_time
    lines = [f"{'method':<16}{'sweep':<20}{'value':>10}{'nmse':>12}{'stderr':>11}"
             f"{'accuracy':>10}{'fails':>7}"]
    for row in rows:
        nm = f"{row['nmse_mean']:.6f}" if row["nmse_mean"] is not None else "-"
        ns = f"{row['nmse_stderr']:.2e}" if row["nmse_stderr"] is not None else "-"
        am = f"{row['accuracy_mean']:.4f}" if row["accuracy_mean"] is not None else "-"
        lines.append(f"{row['method']:<16}{row['sweep_variable']:<20}"
                     f"{row['sweep_value']:>10.4g}{nm:>12}{ns:>11}{am:>10}"
                     f"{row['n_failures']:>7}")
    lines.append("")
    for method, total in times.items():
        lines.append(f"total wall time {method}: {total:.1f} s")
    return "\n".join(lines) + "\n"


def emit_csv(records, raw_path, aggregate_path=None):
    """Write the raw CSV (and the per-sweep-value aggregate next to it)."""
    if not records:
        raise ValueError("no records to emit")
    raw_path = Path(raw_path)
    raw_path.write_bytes(render_raw_csv(records).encode("ascii"))
    if aggregate_path is None:
        aggregate_path = raw_path.with_name(raw_path.stem + "_aggregate.csv")
    Path(aggregate_path).write_bytes(render_aggregate_csv(records).encode("ascii"))
    return raw_path, Path(aggregate_path)


def load_records(path) -> list[ExperimentRecord]:
    """Parse a raw CSV back into records (wall time is not stored)."""
    records = []
    with open(path, newline="") as handle:
        for row in csv.DictReader(handle):
            records.append(ExperimentRecord(
                method=row["method"], sweep_variable=row["sweep_variable"],
                sweep_value=float(row["sweep_value"]), trial=int(row["trial"]),
                trial_seed=int(row["trial_seed"]), nmse=float(row["nmse"]),
                grouping_accuracy=(float(row["grouping_accuracy"])
                                   if row["grouping_accuracy"] else None),
                iterations=float(row["iterations"]), status=row["status"],
                obs_digest=row["obs_digest"], wall_time=0.0))
    return records
