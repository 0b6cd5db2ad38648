"""Experiment harness: seeded trial plans, batch runs, and CSV reports.

Six experiment families probe the pipeline the way the original robot
study did: one factor varies per family (liquid, initial volume, target
height, bottle opening, cup, pre-filled level) while the rest stay at the
reference setup (blue cup, small bottle).  Group means and spreads land in a
CSV with one row per trial plus per-group summary statistics.

Plans are data: volumes and targets are drawn once, from the plan seed, so a
published plan re-runs bit-identically anywhere.
"""

from __future__ import annotations

import enum
import io
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import yaml

from .errors import ParseError, TrialTimeout
from .geometry import RansacConfig, extract_above_plane, fit_cylinder_ransac, fit_plane_ransac, load_cloud, measure_raw_height
from .optics import DEFAULT_SIGMA_R, HeightEstimate, LiquidSpec, correct_height, get_liquid
from .sim import (
    BOTTLE_PRESETS,
    CUP_PRESETS,
    CupSpec,
    LoopConfig,
    Scenario,
    get_bottle,
    get_cup,
    run_closed_loop,
)

HEADROOM_ML = 100.0

CSV_COLUMNS = (
    "trial,family,liquid,cup,bottle,init_volume_ml,prefill_mm,"
    "target_mm,achieved_mm,error_mm,error_ml,duration_s,seed"
)

# Reference setup shared by all families except where the family varies it.
REF_CUP = "blue"
REF_BOTTLE = "small"
REF_VOLUME_ML = 400.0
REF_TARGET_MM = 40.0
# Liquid pair used by the single-factor families; each group gets a
# balanced half/half split so group means stay comparable.
PAIRED_LIQUIDS = ("water", "milk")

VOLUME_CHOICES_ML = tuple(float(v) for v in range(200, 501, 50))
TARGET_CHOICES_MM = tuple(float(t) for t in range(20, 71, 10))


class ExperimentFamily(enum.Enum):
    LIQUIDS = "Liquids"
    INITIAL_VOLUME = "InitialVolume"
    TARGET_HEIGHT = "TargetHeight"
    BOTTLE_OPENING = "BottleOpening"
    CUPS = "Cups"
    PRE_FILLED = "PreFilled"


def height_error_to_volume(error_mm: float, cup: CupSpec) -> float:
    """Convert a height error in mm to a volume error in ml for a cup."""
    return math.pi * (cup.inner_radius * 1000.0) ** 2 * error_mm / 1000.0


def target_volume_ml(target_mm: float, cup: CupSpec) -> float:
    return height_error_to_volume(target_mm, cup)


@dataclass(frozen=True)
class TrialSpec:
    group: str
    liquid: str
    cup: str
    bottle: str
    init_volume_ml: float
    prefill_mm: float
    target_mm: float
    seed: int

    def scenario(self) -> Scenario:
        return Scenario(
            liquid=get_liquid(self.liquid),
            cup=get_cup(self.cup),
            bottle=get_bottle(self.bottle),
            initial_volume_ml=self.init_volume_ml,
            target_mm=self.target_mm,
            prefill_mm=self.prefill_mm,
        )


@dataclass(frozen=True)
class ExperimentPlan:
    family: ExperimentFamily
    trials: tuple[TrialSpec, ...]
    seed: int

    def __post_init__(self) -> None:
        if not self.trials:
            raise ValueError("plan has no trials")
        for t in self.trials:
            cup = get_cup(t.cup)
            needed = target_volume_ml(t.target_mm - t.prefill_mm, cup) + HEADROOM_ML
            if t.init_volume_ml < needed:
                raise ValueError(
                    f"trial {t} violates the {HEADROOM_ML:.0f} ml headroom "
                    f"constraint (needs >= {needed:.1f} ml)"
                )


def _paired_liquid(index: int) -> str:
    return PAIRED_LIQUIDS[index % len(PAIRED_LIQUIDS)]


def _draw_volume_target(rng: np.random.Generator, cup: CupSpec) -> tuple[float, float]:
    # Redraw until the headroom constraint holds; the choice sets guarantee
    # at least one valid pair, so this terminates.
    while True:
        vol = float(rng.choice(VOLUME_CHOICES_ML))
        tgt = float(rng.choice(TARGET_CHOICES_MM))
        if vol >= target_volume_ml(tgt, cup) + HEADROOM_ML:
            return vol, tgt


def build_plan(
    family: ExperimentFamily, trials_per_group: int = 10, seed: int = 20
) -> ExperimentPlan:
    """Construct the seeded trial list for one experiment family.

    Group layouts:
        Liquids:       one group per liquid preset; every liquid pours the
                       same drawn (volume, target) pairs.
        InitialVolume: volumes 350-500 ml, fixed 40 mm target.
        TargetHeight:  targets 30-60 mm, fixed 400 ml.
        BottleOpening: small vs wide opening at the reference setup.
        Cups:          the three cup presets at the reference setup.
        PreFilled:     pre-filled levels 0-30 mm, each pouring 30 mm more.
    """
    if trials_per_group < 1:
        raise ValueError("trials_per_group must be at least 1")
    rng = np.random.default_rng(seed)
    specs: list[TrialSpec] = []
    trial_seed = 0

    def add(group: str, liquid: str, cup: str = REF_CUP, bottle: str = REF_BOTTLE,
            vol: float = REF_VOLUME_ML, prefill: float = 0.0,
            target: float = REF_TARGET_MM) -> None:
        nonlocal trial_seed
        specs.append(TrialSpec(group=group, liquid=liquid, cup=cup, bottle=bottle,
                               init_volume_ml=vol, prefill_mm=prefill,
                               target_mm=target, seed=seed * 1000 + trial_seed))
        trial_seed += 1

    if family is ExperimentFamily.LIQUIDS:
        cup = get_cup(REF_CUP)
        draws = [_draw_volume_target(rng, cup) for _ in range(trials_per_group)]
        for liquid in ("water", "carbonated_water", "olive_oil", "milk", "orange_juice"):
            for vol, tgt in draws:
                add(liquid, liquid, vol=vol, target=tgt)
    elif family is ExperimentFamily.INITIAL_VOLUME:
        for vol in (350.0, 400.0, 450.0, 500.0):
            for i in range(trials_per_group):
                add(f"{vol:.0f}ml", _paired_liquid(i), vol=vol)
    elif family is ExperimentFamily.TARGET_HEIGHT:
        for tgt in (30.0, 40.0, 50.0, 60.0):
            for i in range(trials_per_group):
                add(f"{tgt:.0f}mm", _paired_liquid(i), target=tgt)
    elif family is ExperimentFamily.BOTTLE_OPENING:
        for bottle in ("small", "wide"):
            for i in range(trials_per_group):
                add(bottle, _paired_liquid(i), bottle=bottle)
    elif family is ExperimentFamily.CUPS:
        for cup in ("text", "patterned", "blue"):
            for i in range(trials_per_group):
                add(cup, _paired_liquid(i), cup=cup)
    elif family is ExperimentFamily.PRE_FILLED:
        for prefill in (0.0, 10.0, 20.0, 30.0):
            for i in range(trials_per_group):
                add(f"{prefill:.0f}mm", _paired_liquid(i), prefill=prefill,
                    target=prefill + 30.0)
    else:  # pragma: no cover - enum is exhaustive
        raise ValueError(f"unknown family {family}")

    return ExperimentPlan(family=family, trials=tuple(specs), seed=seed)


@dataclass(frozen=True)
class TrialRow:
    trial: int
    family: str
    group: str
    spec: TrialSpec
    achieved_mm: float   # nan when the trial timed out
    error_mm: float
    error_ml: float
    duration_s: float
    timed_out: bool


@dataclass(frozen=True)
class SummaryStats:
    group: str
    count: int
    timeouts: int
    mean_signed_error_mm: float
    mean_abs_error_mm: float
    std_error_mm: float
    max_abs_error_mm: float
    mean_abs_error_ml: float

    def __post_init__(self) -> None:
        if self.count > self.timeouts:
            assert self.max_abs_error_mm >= self.mean_abs_error_mm - 1e-12 >= -1e-12


@dataclass(frozen=True)
class ExperimentResult:
    plan: ExperimentPlan
    rows: tuple[TrialRow, ...]
    summaries: tuple[SummaryStats, ...]

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(CSV_COLUMNS + "\n")
        for r in self.rows:
            s = r.spec
            buf.write(
                f"{r.trial},{r.family},{s.liquid},{s.cup},{s.bottle},"
                f"{_num(s.init_volume_ml)},{_num(s.prefill_mm)},{_num(s.target_mm)},"
                f"{_num(r.achieved_mm)},{_num(r.error_mm)},{_num(r.error_ml)},"
                f"{_num(r.duration_s)},{s.seed}\n"
            )
        return buf.getvalue()


def _num(x: float) -> str:
    return f"{x:.6g}"


def _summarize(group: str, rows: list[TrialRow]) -> SummaryStats:
    done = [r for r in rows if not r.timed_out]
    errs = np.array([r.error_mm for r in done])
    mls = np.array([abs(r.error_ml) for r in done])
    if len(done) == 0:
        return SummaryStats(group=group, count=len(rows), timeouts=len(rows),
                            mean_signed_error_mm=float("nan"),
                            mean_abs_error_mm=float("nan"), std_error_mm=float("nan"),
                            max_abs_error_mm=float("nan"), mean_abs_error_ml=float("nan"))
    return SummaryStats(
        group=group,
        count=len(rows),
        timeouts=len(rows) - len(done),
        mean_signed_error_mm=float(errs.mean()),
        mean_abs_error_mm=float(np.abs(errs).mean()),
        std_error_mm=float(errs.std()),
        max_abs_error_mm=float(np.abs(errs).max()),
        mean_abs_error_ml=float(mls.mean()),
    )


def run_experiment(
    plan: ExperimentPlan, config: LoopConfig = LoopConfig()
) -> ExperimentResult:
    """Run every trial in the plan and aggregate per-group statistics.

    A TrialTimeout flags the row (nan metrics, full duration) and the batch
    continues.  Rows keep plan order, so output is deterministic.
    """
    rows: list[TrialRow] = []
    for i, spec in enumerate(plan.trials):
        cup = get_cup(spec.cup)
        try:
            result = run_closed_loop(spec.scenario(), spec.seed, config)
            error_mm = result.error * 1000.0
            rows.append(TrialRow(
                trial=i, family=plan.family.value, group=spec.group, spec=spec,
                achieved_mm=result.final_height * 1000.0, error_mm=error_mm,
                error_ml=height_error_to_volume(error_mm, cup),
                duration_s=result.duration, timed_out=False,
            ))
        except TrialTimeout:
            rows.append(TrialRow(
                trial=i, family=plan.family.value, group=spec.group, spec=spec,
                achieved_mm=float("nan"), error_mm=float("nan"),
                error_ml=float("nan"), duration_s=config.max_sim_time,
                timed_out=True,
            ))

    groups: dict[str, list[TrialRow]] = {}
    for row in rows:
        groups.setdefault(row.group, []).append(row)
    summaries = tuple(_summarize(g, rs) for g, rs in groups.items())
    return ExperimentResult(plan=plan, rows=tuple(rows), summaries=summaries)


def format_summary(result: ExperimentResult) -> str:
    """Human-readable per-group table for terminal output."""
    lines = [
        f"family: {result.plan.family.value}  trials: {len(result.rows)}  "
        f"plan seed: {result.plan.seed}",
        f"{'group':>16s} {'n':>4} {'mean[mm]':>9} {'|mean|[mm]':>11} "
        f"{'std[mm]':>8} {'max[mm]':>8} {'|mean|[ml]':>11}",
    ]
    for s in result.summaries:
        flag = f"  ({s.timeouts} timeout)" if s.timeouts else ""
        lines.append(
            f"{s.group:>16s} {s.count:>4d} {s.mean_signed_error_mm:>9.2f} "
            f"{s.mean_abs_error_mm:>11.2f} {s.std_error_mm:>8.2f} "
            f"{s.max_abs_error_mm:>8.2f} {s.mean_abs_error_ml:>11.2f}{flag}"
        )
    return "\n".join(lines)


@dataclass(frozen=True)
class OfflineReport:
    plane_normal: tuple[float, float, float]
    plane_offset: float
    cylinder_radius: float
    cylinder_height: float
    raw_height: float
    alpha: float
    point_count: int
    estimate: HeightEstimate

    def __str__(self) -> str:
        n = self.plane_normal
        return (
            f"table plane: normal ({n[0]:+.4f}, {n[1]:+.4f}, {n[2]:+.4f}), "
            f"offset {self.plane_offset:.4f} m\n"
            f"cup: radius {self.cylinder_radius * 1000:.1f} mm, "
            f"height {self.cylinder_height * 1000:.1f} mm\n"
            f"raw height: {self.raw_height * 1000:.2f} mm "
            f"(alpha {math.degrees(self.alpha):.1f} deg, {self.point_count} points)\n"
            f"corrected height: {self.estimate.h * 1000:.2f} mm "
            f"(sigma {math.sqrt(self.estimate.variance) * 1000:.2f} mm, "
            f"{self.estimate.source.value})"
        )


def estimate_offline(
    cloud_file: str, liquid: LiquidSpec, config: LoopConfig = LoopConfig()
) -> OfflineReport:
    """Run the full single-frame pipeline on a saved point cloud."""
    cloud = load_cloud(cloud_file)
    plane = fit_plane_ransac(cloud, config.ransac)
    above = extract_above_plane(cloud, plane, margin=config.plane_margin)
    cup = fit_cylinder_ransac(above, plane, config.ransac)
    raw = measure_raw_height(cloud, cup, plane, config.diameter_scale)
    estimate = correct_height(raw, liquid, config.sigma_r)
    return OfflineReport(
        plane_normal=tuple(float(v) for v in plane.normal),
        plane_offset=float(plane.offset),
        cylinder_radius=cup.radius,
        cylinder_height=cup.height,
        raw_height=raw.h_r,
        alpha=raw.alpha,
        point_count=raw.point_count,
        estimate=estimate,
    )


_FAMILY_LOOKUP = {f.value.lower(): f for f in ExperimentFamily}


def parse_family(name: str) -> ExperimentFamily:
    try:
        return _FAMILY_LOOKUP[name.strip().lower()]
    except KeyError:
        raise ParseError(
            f"unknown family {name!r}; choose from "
            f"{', '.join(f.value for f in ExperimentFamily)}"
        ) from None


def load_plan(path: str, trials_per_group: Optional[int] = None) -> ExperimentPlan:
    """Load a plan file: ``family`` plus optional ``trials_per_group``/``seed``.

    The optional argument overrides the file's trial count (the --trials
    flag), keeping the same plan seed so draws stay reproducible.
    """
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ParseError(f"bad plan file {path}: {exc}") from None
    if not isinstance(data, dict) or "family" not in data:
        raise ParseError(f"plan file {path} must be a mapping with a 'family' key")
    family = parse_family(str(data["family"]))
    n = trials_per_group if trials_per_group is not None else int(data.get("trials_per_group", 10))
    seed = int(data.get("seed", 20))
    return build_plan(family, trials_per_group=n, seed=seed)
