"""FastAPI front end over the recovery engine and experiment harness."""

from __future__ import annotations

from fastapi import FastAPI, HTTPException

from .. import __version__
from ..arrays import steering
from ..channels import ObservationSet
from ..configfile import PRESET_NAMES, preset
from ..experiments import render_aggregate_csv, render_raw_csv, render_summary, run_monte_carlo
from ..vbi import run_inference
from .schemas import (EstimateRequest, EstimateResponse, ExperimentRequest,
                      ExperimentResponse, ComplexMatrix, PresetInfo,
                      SteeringRequest, SteeringResponse)


def create_app() -> FastAPI:
    app = FastAPI(title="groupsbl", version=__version__,
                  description="Joint sparse channel estimation and user "
                              "grouping as a service")

    @app.get("/health")
    def health():
        return {"status": "ok", "version": __version__}

    @app.get("/presets", response_model=list[PresetInfo])
    def presets():
        infos = []
        for name in PRESET_NAMES:
            config = preset(name)
            infos.append(PresetInfo(
                name=name, sweep=config.sweep,
                values=[float(v) for v in config.values],
                methods=list(config.methods), n_trials=config.n_trials))
        return infos

    @app.post("/steering/vector", response_model=SteeringResponse)
    def steering_vector(request: SteeringRequest):
        try:
            geometry = request.geometry.to_geometry()
            vector = steering(geometry, request.azimuth_rad, request.elevation_rad)
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return SteeringResponse(vector=ComplexMatrix.from_numpy(vector[None, :]))

    @app.post("/channels/estimate", response_model=EstimateResponse)
    def estimate(request: EstimateRequest):
        try:
            geometry = request.geometry.to_geometry()
            pilots = request.pilots.to_numpy()
            received = request.received.to_numpy()
            if pilots.shape[1] != geometry.n_elements:
                raise ValueError("pilot width must equal the antenna count")
            if received.shape[1] != pilots.shape[0]:
                raise ValueError("received rows must match the pilot count")
            power = float((abs(pilots) ** 2).sum()) / pilots.size
            observations = ObservationSet(
                pilots=pilots, received=received,
                noise_variance=power / 10.0 ** (request.snr_db / 10.0),
                snr_db=request.snr_db)
            _, summary, trace = run_inference(request.hyper.to_hyper(),
                                              observations, geometry)
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return EstimateResponse(
            group_labels=[int(v) for v in summary.group_labels],
            supports=[[int(i) for i in s] for s in summary.supports],
            channels=ComplexMatrix.from_numpy(summary.channels),
            iterations=summary.iterations,
            elbo=float(summary.elbo))

    @app.post("/experiments/run", response_model=ExperimentResponse)
    def run_experiment(request: ExperimentRequest):
        try:
            config = request.to_config()
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        records = run_monte_carlo(config)
        return ExperimentResponse(
            raw_csv=render_raw_csv(records),
            aggregate_csv=render_aggregate_csv(records),
            summary=render_summary(records),
            n_records=len(records))

    return app


app = create_app()
