"""HTTP face of the pouring pipeline.

Wraps the core library in a small JSON API so trials and experiments can run
on a shared box while clients stay thin.  Every endpoint is stateless; all
determinism lives in the request (scenario + seed).
"""

from __future__ import annotations

import math
import os
import tempfile
from dataclasses import replace

from fastapi import FastAPI
from fastapi.responses import JSONResponse

from .. import __version__, control, harness, sim
from ..errors import PourError, TrialTimeout
from ..optics import LIQUID_PRESETS, LiquidSpec, Opacity, get_liquid
from ..sim import BOTTLE_PRESETS, CUP_PRESETS, BottleSpec, CupSpec, LoopConfig, Scenario
from . import models


def _liquid_from(model) -> LiquidSpec:
    if isinstance(model, str):
        return get_liquid(model)
    return LiquidSpec(
        name=model.name,
        opacity=Opacity(model.opacity),
        n_l=model.n_l,
        surface_noise_scale=model.surface_noise_scale,
    )


def _cup_from(model) -> CupSpec:
    if isinstance(model, str):
        return sim.get_cup(model)
    return CupSpec(inner_radius=model.inner_radius, height=model.height, name=model.name)


def _bottle_from(model) -> BottleSpec:
    if isinstance(model, str):
        return sim.get_bottle(model)
    return BottleSpec(
        opening_diameter=model.opening_diameter, capacity=model.capacity, name=model.name
    )


def _apply_overrides(config: LoopConfig, overrides) -> LoopConfig:
    if overrides is None:
        return config
    for attr, sub in (("filter_params", overrides.filter),
                      ("controller", overrides.controller),
                      ("sensor", overrides.sensor)):
        if sub is not None:
            fields = {k: v for k, v in sub.model_dump().items() if v is not None}
            if fields:
                config = replace(config, **{attr: replace(getattr(config, attr), **fields)})
    for key in ("sigma_r", "diameter_scale", "plane_margin", "max_sim_time"):
        value = getattr(overrides, key)
        if value is not None:
            config = replace(config, **{key: value})
    return config


def _trial_to_model(result: sim.TrialResult) -> models.TrialResultModel:
    return models.TrialResultModel(
        final_height_mm=result.final_height * 1000.0,
        target_mm=result.target * 1000.0,
        error_mm=result.error * 1000.0,
        overshoot_mm=result.overshoot * 1000.0,
        duration_s=result.duration,
        phases=list(result.phases),
        commands=[
            models.CommandModel(
                timestamp=c.timestamp, phase=c.phase.value, wrist_angle_rad=c.wrist_angle
            )
            for c in result.commands
        ],
    )


def _nan_none(x: float):
    return None if math.isnan(x) else x


def create_app() -> FastAPI:
    app = FastAPI(title="autopour", version=__version__)

    @app.exception_handler(PourError)
    async def pour_error(request, exc: PourError):
        status = 408 if isinstance(exc, TrialTimeout) else 422
        return JSONResponse(
            status_code=status,
            content={"detail": str(exc), "error": type(exc).__name__},
        )

    @app.exception_handler(KeyError)
    async def key_error(request, exc: KeyError):
        return JSONResponse(
            status_code=404, content={"detail": str(exc.args[0]), "error": "KeyError"}
        )

    @app.exception_handler(ValueError)
    async def value_error(request, exc: ValueError):
        return JSONResponse(
            status_code=422, content={"detail": str(exc), "error": "ValueError"}
        )

    @app.get("/health", response_model=models.HealthResponse)
    async def health():
        return models.HealthResponse(status="ok", version=__version__)

    @app.get("/presets", response_model=models.PresetsResponse)
    async def presets():
        return models.PresetsResponse(
            liquids=[
                models.LiquidModel(
                    name=l.name, opacity=l.opacity.value, n_l=l.n_l,
                    surface_noise_scale=l.surface_noise_scale,
                )
                for l in LIQUID_PRESETS.values()
            ],
            cups=[
                models.CupModel(name=c.name, inner_radius=c.inner_radius, height=c.height)
                for c in CUP_PRESETS.values()
            ],
            bottles=[
                models.BottleModel(
                    name=b.name, opening_diameter=b.opening_diameter, capacity=b.capacity
                )
                for b in BOTTLE_PRESETS.values()
            ],
        )

    @app.post("/simulate", response_model=models.TrialResultModel)
    async def simulate(req: models.SimulateRequest):
        scenario = Scenario(
            liquid=_liquid_from(req.liquid),
            cup=_cup_from(req.cup),
            bottle=_bottle_from(req.bottle),
            initial_volume_ml=req.initial_volume_ml,
            target_mm=req.target_mm,
            prefill_mm=req.prefill_mm,
        )
        config = _apply_overrides(LoopConfig(), req.config)
        return _trial_to_model(sim.run_closed_loop(scenario, req.seed, config))

    @app.post("/experiment", response_model=models.ExperimentResultModel)
    async def experiment(req: models.ExperimentRequest):
        family = harness.parse_family(req.family)
        plan = harness.build_plan(family, trials_per_group=req.trials_per_group, seed=req.seed)
        config = _apply_overrides(LoopConfig(), req.config)
        result = harness.run_experiment(plan, config)
        return models.ExperimentResultModel(
            family=family.value,
            seed=plan.seed,
            rows=[
                models.TrialRowModel(
                    trial=r.trial, family=r.family, group=r.group,
                    liquid=r.spec.liquid, cup=r.spec.cup, bottle=r.spec.bottle,
                    init_volume_ml=r.spec.init_volume_ml, prefill_mm=r.spec.prefill_mm,
                    target_mm=r.spec.target_mm, achieved_mm=_nan_none(r.achieved_mm),
                    error_mm=_nan_none(r.error_mm), error_ml=_nan_none(r.error_ml),
                    duration_s=r.duration_s, seed=r.spec.seed, timed_out=r.timed_out,
                )
                for r in result.rows
            ],
            summaries=[
                models.SummaryModel(
                    group=s.group, count=s.count, timeouts=s.timeouts,
                    mean_signed_error_mm=_nan_none(s.mean_signed_error_mm),
                    mean_abs_error_mm=_nan_none(s.mean_abs_error_mm),
                    std_error_mm=_nan_none(s.std_error_mm),
                    max_abs_error_mm=_nan_none(s.max_abs_error_mm),
                    mean_abs_error_ml=_nan_none(s.mean_abs_error_ml),
                )
                for s in result.summaries
            ],
            csv=result.to_csv(),
        )

    @app.post("/estimate", response_model=models.EstimateResponse)
    async def estimate(req: models.EstimateRequest):
        liquid = _liquid_from(req.liquid)
        config = _apply_overrides(LoopConfig(), req.config)
        # estimate_offline takes a path; the cloud arrives as text.
        fd, path = tempfile.mkstemp(suffix=".cloud", text=True)
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                fh.write(req.cloud_text)
            report = harness.estimate_offline(path, liquid, config)
        finally:
            os.unlink(path)
        return models.EstimateResponse(
            plane_normal=report.plane_normal,
            plane_offset_m=report.plane_offset,
            cylinder_radius_mm=report.cylinder_radius * 1000.0,
            cylinder_height_mm=report.cylinder_height * 1000.0,
            raw_height_mm=report.raw_height * 1000.0,
            alpha_rad=report.alpha,
            point_count=report.point_count,
            corrected_height_mm=report.estimate.h * 1000.0,
            sigma_mm=math.sqrt(report.estimate.variance) * 1000.0,
            source=report.estimate.source.value,
            report=str(report),
        )

    return app


app = create_app()
