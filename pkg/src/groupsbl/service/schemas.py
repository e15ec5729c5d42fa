"""Pydantic request/response models for the estimation service.

Complex matrices travel as paired real/imaginary nested lists.
"""

from __future__ import annotations

from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, Field, model_validator


class ComplexMatrix(BaseModel):
    re: list[list[float]]
    im: list[list[float]]

    @model_validator(mode="after")
    def _shapes_match(self):
        if len(self.re) != len(self.im):
            raise ValueError("re and im row counts differ")
        for r, i in zip(self.re, self.im):
            if len(r) != len(i):
                raise ValueError("re and im column counts differ")
        return self

    def to_numpy(self) -> np.ndarray:
        return np.asarray(self.re, dtype=float) + 1j * np.asarray(self.im, dtype=float)

    @classmethod
    def from_numpy(cls, matrix: np.ndarray) -> "ComplexMatrix":
        matrix = np.atleast_2d(np.asarray(matrix))
        return cls(re=matrix.real.tolist(), im=matrix.imag.tolist())


class GeometryModel(BaseModel):
    kind: Literal["ula", "planar_grid", "sensors"] = "ula"
    n_antennas: int = 32
    spacing_over_wavelength: float = 0.5
    planar_nx: int = 0
    planar_ny: int = 0
    radii_over_wavelength: Optional[list[float]] = None
    bearings_rad: Optional[list[float]] = None

    def to_geometry(self):
        from ..arrays import PlanarArray, UniformLinearArray
        if self.kind == "ula":
            return UniformLinearArray(self.n_antennas, self.spacing_over_wavelength)
        if self.kind == "planar_grid":
            return PlanarArray.grid(self.planar_nx, self.planar_ny,
                                    self.spacing_over_wavelength)
        if self.radii_over_wavelength is None or self.bearings_rad is None:
            raise ValueError("sensor geometry needs radii and bearings")
        return PlanarArray(np.asarray(self.radii_over_wavelength),
                           np.asarray(self.bearings_rad))


class SteeringRequest(BaseModel):
    geometry: GeometryModel
    azimuth_rad: float
    elevation_rad: float = 0.0


class SteeringResponse(BaseModel):
    vector: ComplexMatrix


class HyperModel(BaseModel):
    prior_shape: float = 1e-4
    prior_rate: float = 1e-4
    individual_scale: float = 1e-3
    n_groups: int = 2
    grid_size: Optional[int] = None
    max_iters: int = 500
    min_iters: int = 10
    tol: float = 1e-4
    mode: Literal["general", "group_only", "common"] = "general"
    offgrid_enabled: bool = False
    indiv_shape_rule: Literal["per_user", "pooled"] = "per_user"
    assign_init: Literal["clustered", "uniform"] = "clustered"
    support_threshold: float = 0.01
    init_seed: int = 0
    track_elbo: bool = True

    def to_hyper(self):
        from ..vbi import Hyperparams
        return Hyperparams(**self.model_dump())


class EstimateRequest(BaseModel):
    geometry: GeometryModel
    pilots: ComplexMatrix
    received: ComplexMatrix = Field(description="one row per user")
    snr_db: float = 10.0
    hyper: HyperModel = Field(default_factory=HyperModel)


class EstimateResponse(BaseModel):
    group_labels: list[int]
    supports: list[list[int]]
    channels: ComplexMatrix
    iterations: int
    elbo: float


class ScenarioModel(BaseModel):
    n_groups_true: int = 2
    n_users: int = 8
    shared_clusters: int = 2
    individual_clusters: int = 1
    subpaths_per_cluster: int = 20
    angular_spread_deg: float = 10.0
    gain_distribution: Literal["complex_gaussian", "unit_modulus"] = "complex_gaussian"
    angle_placement: Literal["continuous", "on_grid"] = "continuous"
    grid_size: Optional[int] = None

    def to_scenario(self):
        from ..channels import GroupScenario
        return GroupScenario(**self.model_dump())


class ExperimentRequest(BaseModel):
    scenario: ScenarioModel = Field(default_factory=ScenarioModel)
    geometry: GeometryModel = Field(default_factory=GeometryModel)
    sweep: Literal["t_pilots", "snr_db", "n_groups", "angular_spread_deg"] = "snr_db"
    values: list[float]
    methods: list[str]
    t_pilots: int = 24
    snr_db: float = 10.0
    n_trials: int = 50
    base_seed: int = 20240601
    threads: int = 1
    hyper: HyperModel = Field(default_factory=HyperModel)
    omp_common_budget: Optional[int] = None
    omp_individual_budget: Optional[int] = None

    def to_config(self):
        from ..experiments import ExperimentConfig
        values = tuple(int(v) if self.sweep in ("t_pilots", "n_groups") else float(v)
                       for v in self.values)
        return ExperimentConfig(
            scenario=self.scenario.to_scenario(),
            geometry=self.geometry.to_geometry(),
            sweep=self.sweep, values=values, methods=tuple(self.methods),
            t_pilots=self.t_pilots, snr_db=self.snr_db, n_trials=self.n_trials,
            base_seed=self.base_seed, hyper=self.hyper.to_hyper(),
            omp_common_budget=self.omp_common_budget,
            omp_individual_budget=self.omp_individual_budget,
            threads=self.threads)


class ExperimentResponse(BaseModel):
    raw_csv: str
    aggregate_csv: str
    summary: str
    n_records: int


class PresetInfo(BaseModel):
    name: str
    sweep: str
    values: list[float]
    methods: list[str]
    n_trials: int
