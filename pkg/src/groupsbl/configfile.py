"""Key-value configuration files for experiments and hyperparameters.

Format: one ``key = value`` pair per line, ``#`` comments, blank lines
ignored.  Lists are comma separated.  Keys are documented in the README;
unknown keys raise so typos do not silently fall back to defaults.
"""

from __future__ import annotations

from pathlib import Path

from .arrays import PlanarArray, UniformLinearArray, load_geometry
from .channels import GroupScenario
from .experiments import ExperimentConfig
from .vbi import Hyperparams

_SCENARIO_KEYS = {
    "n_groups_true": int, "n_users": int, "shared_clusters": int,
    "individual_clusters": int, "subpaths_per_cluster": int,
    "angular_spread_deg": float, "gain_distribution": str,
    "angle_placement": str,
}
_HYPER_KEYS = {
    "prior_shape": float, "prior_rate": float, "individual_scale": float,
    "n_groups": int, "grid_size": int, "max_iters": int, "tol": float,
    "mode": str, "offgrid": bool, "indiv_shape_rule": str,
    "assign_init": str, "support_threshold": float, "track_elbo": bool,
}
_TOP_KEYS = {
    "sweep": str, "values": list, "methods": list, "t_pilots": int,
    "snr_db": float, "n_trials": int, "base_seed": int, "threads": int,
    "omp_common_budget": int, "omp_individual_budget": int,
    "geometry": str, "n_antennas": int, "spacing_over_wavelength": float,
    "planar_nx": int, "planar_ny": int, "geometry_file": str,
}


def parse_config(path) -> dict:
    """Read a key-value file into a flat {key: string} dict."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        values[key.strip()] = value.strip()
    return values


def _coerce(key, kind, raw):
    if kind is bool:
        lowered = raw.lower()
        if lowered in ("true", "1", "yes", "on"):
            return True
        if lowered in ("false", "0", "no", "off"):
            return False
        raise ValueError(f"{key}: expected a boolean, got {raw!r}")
    if kind is list:
        return [item.strip() for item in raw.split(",") if item.strip()]
    try:
        return kind(raw)
    except ValueError as exc:
        raise ValueError(f"{key}: {exc}") from exc


def _geometry_from(values: dict):
    kind = values.get("geometry", "ula")
    if kind == "ula":
        return UniformLinearArray(int(values.get("n_antennas", 32)),
                                  float(values.get("spacing_over_wavelength", 0.5)))
    if kind == "planar_grid":
        return PlanarArray.grid(int(values["planar_nx"]), int(values["planar_ny"]),
                                float(values.get("spacing_over_wavelength", 0.5)))
    if kind == "file":
        return load_geometry(values["geometry_file"])
    raise ValueError(f"geometry must be ula, planar_grid, or file, got {kind!r}")


def build_experiment_config(values: dict) -> ExperimentConfig:
    """Turn a flat parsed mapping into a validated ExperimentConfig."""
    known = set(_SCENARIO_KEYS) | set(_HYPER_KEYS) | set(_TOP_KEYS)
    unknown = set(values) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")

    scenario_kwargs = {}
    for key, kind in _SCENARIO_KEYS.items():
        if key in values:
            scenario_kwargs[key] = _coerce(key, kind, values[key])
    hyper_kwargs = {}
    for key, kind in _HYPER_KEYS.items():
        if key in values:
            target = "offgrid_enabled" if key == "offgrid" else key
            hyper_kwargs[target] = _coerce(key, kind, values[key])

    geometry = _geometry_from(values)
    if "grid_size" not in hyper_kwargs:
        hyper_kwargs["grid_size"] = geometry.n_elements
    if values.get("angle_placement") == "on_grid":
        scenario_kwargs["grid_size"] = hyper_kwargs["grid_size"]
    scenario = GroupScenario(**{
        "n_groups_true": 2, "n_users": 8, "shared_clusters": 2,
        "individual_clusters": 1, **scenario_kwargs})
    hyper = Hyperparams(**hyper_kwargs)

    sweep = values.get("sweep", "snr_db")
    sweep_values = _coerce("values", list, values.get("values", "10"))
    numeric = tuple(int(v) if sweep in ("t_pilots", "n_groups") else float(v)
                    for v in sweep_values)
    methods = tuple(_coerce("methods", list, values.get("methods", "proposed")))

    kwargs = dict(
        scenario=scenario, geometry=geometry, sweep=sweep, values=numeric,
        methods=methods, hyper=hyper)
    for key in ("t_pilots", "snr_db", "n_trials", "base_seed", "threads",
                "omp_common_budget", "omp_individual_budget"):
        if key in values:
            kwargs[key] = _coerce(key, _TOP_KEYS[key], values[key])
    return ExperimentConfig(**kwargs)


def load_experiment_config(path) -> ExperimentConfig:
    return build_experiment_config(parse_config(path))


def _benchmark_hyper(**extra) -> Hyperparams:
    base = dict(offgrid_enabled=True, max_iters=150, track_elbo=False,
                indiv_shape_rule="per_user")
    base.update(extra)
    return Hyperparams(**base)


ALL_METHODS = ("proposed", "group_only", "common", "individual_sbl",
               "joint_omp", "genie")


def preset(name: str, n_trials: int | None = None, threads: int = 1) -> ExperimentConfig:
    """Named sweep presets at benchmark scale.

    fig2a/fig2b sweep the pilot count (80 antennas, 60 users, SNR 0 dB,
    without and with outlier clusters); fig3a/fig3b sweep the SNR at 50
    users; fig6 sweeps the group budget on a fixed four-group scenario at
    100 antennas; desk is a small smoke-scale SNR sweep.
    """
    if name == "fig2a":
        config = ExperimentConfig(
            scenario=GroupScenario(3, 60, 4, 0, 20, 10.0),
            geometry=UniformLinearArray(80), sweep="t_pilots",
            values=(40, 45, 50, 55, 60, 65, 70), methods=ALL_METHODS,
            snr_db=0.0, n_trials=200, hyper=_benchmark_hyper(n_groups=3, grid_size=80))
    elif name == "fig2b":
        config = ExperimentConfig(
            scenario=GroupScenario(3, 60, 2, 2, 20, 10.0),
            geometry=UniformLinearArray(80), sweep="t_pilots",
            values=(30, 35, 40, 45, 50, 55, 60, 65, 70), methods=ALL_METHODS,
            snr_db=0.0, n_trials=200, hyper=_benchmark_hyper(n_groups=3, grid_size=80))
    elif name == "fig3a":
        config = ExperimentConfig(
            scenario=GroupScenario(4, 50, 3, 0, 20, 10.0),
            geometry=UniformLinearArray(80), sweep="snr_db",
            values=(-10.0, -6.0, -2.0, 2.0, 6.0, 10.0), methods=ALL_METHODS,
            t_pilots=60, n_trials=200, hyper=_benchmark_hyper(n_groups=4, grid_size=80))
    elif name == "fig3b":
        config = ExperimentConfig(
            scenario=GroupScenario(4, 50, 2, 1, 20, 10.0),
            geometry=UniformLinearArray(80), sweep="snr_db",
            values=(-10.0, -6.0, -2.0, 2.0, 6.0, 10.0), methods=ALL_METHODS,
            t_pilots=60, n_trials=200, hyper=_benchmark_hyper(n_groups=4, grid_size=80))
    elif name == "fig6":
        config = ExperimentConfig(
            scenario=GroupScenario(4, 50, 2, 1, 20, 10.0),
            geometry=UniformLinearArray(100), sweep="n_groups",
            values=(1, 2, 4, 6, 8, 10), methods=ALL_METHODS,
            t_pilots=60, snr_db=0.0, n_trials=200,
            hyper=_benchmark_hyper(grid_size=100))
    elif name == "desk":
        config = ExperimentConfig(
            scenario=GroupScenario(2, 12, 2, 1, 20, 10.0),
            geometry=UniformLinearArray(32), sweep="snr_db",
            values=(0.0, 10.0), methods=("proposed", "individual_sbl",
                                         "joint_omp", "genie"),
            t_pilots=24, n_trials=50,
            hyper=Hyperparams(n_groups=2, grid_size=32))
    else:
        raise ValueError(f"unknown preset {name!r}; choose from "
                         "fig2a fig2b fig3a fig3b fig6 desk")
    from dataclasses import replace as _replace
    if n_trials is not None:
        config = _replace(config, n_trials=n_trials)
    if threads != 1:
        config = _replace(config, threads=threads)
    return config


PRESET_NAMES = ("fig2a", "fig2b", "fig3a", "fig3b", "fig6", "desk")
