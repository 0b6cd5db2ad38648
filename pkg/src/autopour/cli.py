"""pourctl: command-line client for the pouring service.

Every subcommand talks HTTP.  By default the service runs in-process (no
daemon needed); pass --url to target a remote instance instead.  Scenario
and plan files are parsed client-side, so paths never cross the wire.
"""

from __future__ import annotations

import os
import sys
from dataclasses import asdict

import click
import httpx
import yaml

from . import harness, sim
from .errors import PourError


def _client(url: str | None) -> httpx.Client:
    if url:
        return httpx.Client(base_url=url, timeout=600.0)
    import warnings

    with warnings.catch_warnings():
        # starlette's testclient shim warns about its httpx pin; not actionable here
        warnings.simplefilter("ignore")
        from fastapi.testclient import TestClient

    from .service import app

    return TestClient(app)


def _post(client: httpx.Client, path: str, payload: dict) -> dict:
    response = client.post(path, json=payload)
    if response.status_code != 200:
        try:
            detail = response.json().get("detail", response.text)
        except ValueError:
            detail = response.text
        raise click.ClickException(f"{path} failed ({response.status_code}): {detail}")
    return response.json()


def _liquid_payload(liquid) -> dict:
    return {
        "name": liquid.name,
        "opacity": liquid.opacity.value,
        "n_l": liquid.n_l,
        "surface_noise_scale": liquid.surface_noise_scale,
    }


def _config_payload(config: sim.LoopConfig) -> dict:
    return {
        "filter": asdict(config.filter_params),
        "controller": asdict(config.controller),
        "sensor": asdict(config.sensor),
        "sigma_r": config.sigma_r,
        "diameter_scale": config.diameter_scale,
        "plane_margin": config.plane_margin,
        "max_sim_time": config.max_sim_time,
    }


@click.group()
@click.option("--url", default=None, help="Remote service URL (default: in-process).")
@click.pass_context
def main(ctx: click.Context, url: str | None) -> None:
    """Closed-loop pouring: simulate trials, run experiments, estimate clouds."""
    ctx.obj = url


@main.command()
@click.argument("scenario_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--seed", "-s", type=int, default=None, help="Override the file's seed.")
@click.option("--csv", "csv_path", type=click.Path(dir_okay=False), default=None,
              help="Write the wrist command log CSV here.")
@click.pass_obj
def simulate(url: str | None, scenario_file: str, seed: int | None, csv_path: str | None) -> None:
    """Run one closed-loop pour from a scenario file."""
    try:
        scenario, file_seed, config = sim.load_scenario(scenario_file)
    except PourError as exc:
        raise click.ClickException(str(exc))
    payload = {
        "liquid": _liquid_payload(scenario.liquid),
        "cup": {"name": scenario.cup.name, "inner_radius": scenario.cup.inner_radius,
                "height": scenario.cup.height},
        "bottle": {"name": scenario.bottle.name,
                   "opening_diameter": scenario.bottle.opening_diameter,
                   "capacity": scenario.bottle.capacity},
        "initial_volume_ml": scenario.initial_volume_ml,
        "target_mm": scenario.target_mm,
        "prefill_mm": scenario.prefill_mm,
        "seed": seed if seed is not None else file_seed,
        "config": _config_payload(config),
    }
    with _client(url) as client:
        result = _post(client, "/simulate", payload)
    click.echo(
        f"target {result['target_mm']:.1f} mm -> achieved "
        f"{result['final_height_mm']:.2f} mm (error {result['error_mm']:+.2f} mm) "
        f"in {result['duration_s']:.2f} s"
    )
    click.echo("phases: " + " -> ".join(result["phases"]))
    if csv_path:
        lines = ["timestamp,phase,wrist_angle_rad"]
        for c in result["commands"]:
            lines.append(f"{c['timestamp']:.6f},{c['phase']},{c['wrist_angle_rad']:.9f}")
        with open(csv_path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
        click.echo(f"command log: {csv_path} ({len(result['commands'])} commands)")


@main.command()
@click.argument("plan_or_family")
@click.option("--trials", "-n", type=int, default=None, help="Trials per group.")
@click.option("--csv", "csv_path", type=click.Path(dir_okay=False), default=None,
              help="Write per-trial results CSV here.")
@click.pass_obj
def experiment(url: str | None, plan_or_family: str, trials: int | None,
               csv_path: str | None) -> None:
    """Run an experiment family, by name or from a plan file."""
    trials_per_group, seed = 10, 20
    if os.path.exists(plan_or_family):
        with open(plan_or_family, "r", encoding="utf-8") as fh:
            try:
                data = yaml.safe_load(fh) or {}
            except yaml.YAMLError as exc:
                raise click.ClickException(f"bad plan file {plan_or_family}: {exc}")
        if not isinstance(data, dict) or "family" not in data:
            raise click.ClickException(
                f"plan file {plan_or_family} must be a mapping with a 'family' key"
            )
        family_name = str(data["family"])
        trials_per_group = int(data.get("trials_per_group", trials_per_group))
        seed = int(data.get("seed", seed))
    else:
        family_name = plan_or_family
    try:
        family = harness.parse_family(family_name)
    except PourError as exc:
        raise click.ClickException(str(exc))
    if trials is not None:
        trials_per_group = trials

    payload = {"family": family.value, "trials_per_group": trials_per_group, "seed": seed}
    with _client(url) as client:
        result = _post(client, "/experiment", payload)

    header = f"{'group':>16s} {'n':>4} {'mean[mm]':>9} {'|mean|[mm]':>11} {'std[mm]':>8} {'max[mm]':>8} {'|mean|[ml]':>11}"
    click.echo(f"family: {result['family']}  trials: {len(result['rows'])}  plan seed: {result['seed']}")
    click.echo(header)
    for s in result["summaries"]:
        if s["mean_abs_error_mm"] is None:
            click.echo(f"{s['group']:>16s} {s['count']:>4d}  all {s['timeouts']} timed out")
            continue
        flag = f"  ({s['timeouts']} timeout)" if s["timeouts"] else ""
        click.echo(
            f"{s['group']:>16s} {s['count']:>4d} {s['mean_signed_error_mm']:>9.2f} "
            f"{s['mean_abs_error_mm']:>11.2f} {s['std_error_mm']:>8.2f} "
            f"{s['max_abs_error_mm']:>8.2f} {s['mean_abs_error_ml']:>11.2f}{flag}"
        )
    if csv_path:
        with open(csv_path, "w", encoding="utf-8") as fh:
            fh.write(result["csv"])
        click.echo(f"rows: {csv_path}")


@main.command()
@click.argument("cloud_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--liquid", "-l", required=True, help="Liquid preset name.")
@click.pass_obj
def estimate(url: str | None, cloud_file: str, liquid: str) -> None:
    """Estimate liquid height from a saved point cloud."""
    with open(cloud_file, "r", encoding="utf-8") as fh:
        cloud_text = fh.read()
    with _client(url) as client:
        result = _post(client, "/estimate", {"cloud_text": cloud_text, "liquid": liquid})
    click.echo(result["report"])


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True, type=int)
def serve(host: str, port: int) -> None:
    """Run the HTTP service."""
    import uvicorn

    uvicorn.run("autopour.service:app", host=host, port=port)


if __name__ == "__main__":
    sys.exit(main())
