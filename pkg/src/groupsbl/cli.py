"""Thin-client command line: builds requests from config files and sends
them through the service API, in process by default or to a remote server
with ``--server``.  Responses are written out as CSV plus a summary table.
"""

from __future__ import annotations

import sys
from pathlib import Path

import click
import httpx

from .configfile import PRESET_NAMES, load_experiment_config, preset
from .service.schemas import (ExperimentRequest, GeometryModel, HyperModel,
                              ScenarioModel)


def _client(server: str | None) -> httpx.Client:
    if server:
        return httpx.Client(base_url=server, timeout=None)
    # in-process: drive the ASGI app directly through a sync test client
    from starlette.testclient import TestClient

    from .service.app import app
    return TestClient(app, raise_server_exceptions=False)


def _geometry_model(geometry) -> GeometryModel:
    from .arrays import UniformLinearArray
    if isinstance(geometry, UniformLinearArray):
        return GeometryModel(kind="ula", n_antennas=geometry.n_antennas,
                             spacing_over_wavelength=geometry.spacing_over_wavelength)
    return GeometryModel(kind="sensors",
                         radii_over_wavelength=[float(v) for v in geometry.radii],
                         bearings_rad=[float(v) for v in geometry.bearings])


def _request_from_config(config) -> ExperimentRequest:
    hyper = config.hyper
    return ExperimentRequest(
        scenario=ScenarioModel(
            n_groups_true=config.scenario.n_groups_true,
            n_users=config.scenario.n_users,
            shared_clusters=config.scenario.shared_clusters,
            individual_clusters=config.scenario.individual_clusters,
            subpaths_per_cluster=config.scenario.subpaths_per_cluster,
            angular_spread_deg=config.scenario.angular_spread_deg,
            gain_distribution=config.scenario.gain_distribution,
            angle_placement=config.scenario.angle_placement,
            grid_size=config.scenario.grid_size),
        geometry=_geometry_model(config.geometry),
        sweep=config.sweep,
        values=[float(v) for v in config.values],
        methods=list(config.methods),
        t_pilots=config.t_pilots, snr_db=config.snr_db,
        n_trials=config.n_trials, base_seed=config.base_seed,
        threads=config.threads,
        hyper=HyperModel(
            prior_shape=hyper.prior_shape, prior_rate=hyper.prior_rate,
            individual_scale=hyper.individual_scale, n_groups=hyper.n_groups,
            grid_size=hyper.grid_size, max_iters=hyper.max_iters,
            min_iters=hyper.min_iters, tol=hyper.tol, mode=hyper.mode,
            offgrid_enabled=hyper.offgrid_enabled,
            indiv_shape_rule=hyper.indiv_shape_rule,
            assign_init=hyper.assign_init,
            support_threshold=hyper.support_threshold,
            init_seed=hyper.init_seed, track_elbo=hyper.track_elbo),
        omp_common_budget=config.omp_common_budget,
        omp_individual_budget=config.omp_individual_budget)


def _execute(request: ExperimentRequest, out_dir: str, server: str | None,
             stem: str):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with _client(server) as client:
        response = client.post("/experiments/run",
                               json=request.model_dump(mode="json"))
    if response.status_code != 200:
        click.echo(f"server error {response.status_code}: {response.text}", err=True)
        sys.exit(1)
    payload = response.json()
    raw = out / f"{stem}_raw.csv"
    agg = out / f"{stem}_aggregate.csv"
    summary = out / f"{stem}_summary.txt"
    raw.write_bytes(payload["raw_csv"].encode("ascii"))
    agg.write_bytes(payload["aggregate_csv"].encode("ascii"))
    summary.write_text(payload["summary"])
    click.echo(payload["summary"])
    click.echo(f"wrote {raw}, {agg}, {summary}")


@click.group()
def main():
    """Joint sparse channel estimation and user grouping simulator."""


@main.command()
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True), help="key-value experiment file")
@click.option("--trials", type=int, default=None, help="override trial count")
@click.option("--threads", type=int, default=None, help="worker threads")
@click.option("--out", "out_dir", default="results", show_default=True)
@click.option("--server", default=None,
              help="remote service URL; in-process when omitted")
def run(config_path, trials, threads, out_dir, server):
    """Run the experiment described by a config file."""
    config = load_experiment_config(config_path)
    request = _request_from_config(config)
    if trials is not None:
        request.n_trials = trials
    if threads is not None:
        request.threads = threads
    _execute(request, out_dir, server, Path(config_path).stem)


@main.command()
@click.argument("name", type=click.Choice(PRESET_NAMES))
@click.option("--trials", type=int, default=None, help="override trial count")
@click.option("--threads", type=int, default=1, show_default=True)
@click.option("--out", "out_dir", default="results", show_default=True)
@click.option("--server", default=None,
              help="remote service URL; in-process when omitted")
def sweep(name, trials, threads, out_dir, server):
    """Run a named sweep preset (fig2a fig2b fig3a fig3b fig6 desk)."""
    config = preset(name, n_trials=trials, threads=threads)
    request = _request_from_config(config)
    _execute(request, out_dir, server, name)


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
def serve(host, port):
    """Start the HTTP service."""
    import uvicorn
    uvicorn.run("groupsbl.service.app:app", host=host, port=port)


if __name__ == "__main__":
    main()
