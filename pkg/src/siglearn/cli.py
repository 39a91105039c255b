"""Command-line entry point.

Subcommands: ``run``, ``sweep``, ``eval``, ``attention-report``,
``validate-net``.  Every flag has a config-file equivalent (a flat JSON
object); explicit flags and ``--set key=value`` overrides win over the
file.  Exit codes: 0 success, 1 configuration error, 2 runtime error.
"""

from __future__ import annotations

import csv
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import click
import numpy as np

from . import harness, microsim
from .agents import CONTROLLERS, make_controller
from .autodiff import load_params
from .roadnet import NetworkFormatError, load_network
from .scenarios import scenario_catalog


class ConfigError(ValueError):
    pass


_RUN_KEYS = {"scenario", "controller", "episodes", "seed", "out",
             "log_attention"}


def _coerce(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _parse_sets(pairs) -> dict:
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        out[key.strip()] = _coerce(value.strip())
    return out


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a JSON object")
    return data


def _effective(config: dict, flags: dict, sets: dict) -> dict:
    """defaults < config file < explicit flags and --set pairs."""
    merged = dict(config)
    for key, value in flags.items():
        if value is not None:
            merged[key] = value
    merged.update(sets)
    return merged


def _split_controller_params(merged: dict, controller: str) -> tuple[dict, dict]:
    run_cfg = {k: v for k, v in merged.items() if k in _RUN_KEYS}
    params = {k: v for k, v in merged.items() if k not in _RUN_KEYS}
    if controller not in CONTROLLERS:
        raise ConfigError(
            f"unknown controller {controller!r}; choose from {sorted(CONTROLLERS)}")
    valid = set(CONTROLLERS[controller]().get_params())
    unknown = set(params) - valid
    if unknown:
        raise ConfigError(
            f"unknown configuration keys for controller {controller!r}: "
            f"{sorted(unknown)}")
    return run_cfg, params


def _require_scenario(name) -> str:
    if name is None:
        raise ConfigError("a scenario is required (--scenario or config key)")
    if name not in scenario_catalog():
        raise ConfigError(
            f"unknown scenario {name!r}; choose from {sorted(scenario_catalog())}")
    return name


def _require_seed(value) -> int:
    if value is None:
        raise ConfigError("a seed is required (--seed or config key)")
    return int(value)


def _fail(exc: Exception, code: int) -> None:
    click.echo(f"error: {exc}", err=True)
    sys.exit(code)


@click.group()
def main() -> None:
    """Traffic-signal control experiments."""


@main.command()
@click.option("--scenario", default=None, help="Scenario name from the catalog.")
@click.option("--controller", default=None,
              help=f"Controller name ({', '.join(sorted(CONTROLLERS))}).")
@click.option("--episodes", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--out", default=None, help="Output directory for artifacts.")
@click.option("--config", "config_path", default=None,
              help="JSON config file; flags override it.")
@click.option("--set", "sets", multiple=True,
              help="Override any config key, e.g. --set lr=0.0005.")
def run(scenario, controller, episodes, seed, out, config_path, sets):
    """Train/evaluate one controller on one scenario."""
    try:
        merged = _effective(_load_config(config_path),
                            {"scenario": scenario, "controller": controller,
                             "episodes": episodes, "seed": seed, "out": out},
                            _parse_sets(sets))
        name = merged.get("controller", "attention")
        run_cfg, params = _split_controller_params(merged, name)
        scenario_name = _require_scenario(run_cfg.get("scenario"))
        seed_val = _require_seed(run_cfg.get("seed"))
    except ConfigError as exc:
        _fail(exc, 1)
    try:
        report = harness.run_experiment(
            scenario_name, name,
            episodes=int(run_cfg.get("episodes", 100)),
            seed=seed_val,
            outdir=run_cfg.get("out"),
            overrides=params,
            log_attention=run_cfg.get("log_attention"),
        )
    except Exception as exc:  # noqa: BLE001 - boundary of the process
        _fail(exc, 2)
    click.echo(f"final travel time: {report.final_travel_time!r}")


@main.command()
@click.option("--parameter", type=click.Choice(sorted(harness.SWEEP_PARAMS)),
              default=None)
@click.option("--values", default=None, help="Comma-separated list, e.g. 1,5.")
@click.option("--scenario", default=None)
@click.option("--episodes", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--out", default=None)
@click.option("--jobs", type=int, default=1, show_default=True)
@click.option("--config", "config_path", default=None)
@click.option("--set", "sets", multiple=True)
def sweep(parameter, values, scenario, episodes, seed, out, jobs, config_path, sets):
    """Run one experiment per parameter value, identical budgets."""
    try:
        merged = _effective(_load_config(config_path),
                            {"parameter": parameter, "values": values,
                             "scenario": scenario, "episodes": episodes,
                             "seed": seed, "out": out},
                            _parse_sets(sets))
        param = merged.get("parameter")
        if param not in harness.SWEEP_PARAMS:
            raise ConfigError(
                f"sweep parameter must be one of {sorted(harness.SWEEP_PARAMS)}")
        raw_values = merged.get("values")
        if raw_values is None:
            raise ConfigError("sweep needs --values")
        if isinstance(raw_values, str):
            value_list = [int(v) for v in raw_values.split(",") if v.strip()]
        else:
            value_list = [int(v) for v in raw_values]
        if not value_list:
            raise ConfigError("sweep needs at least one value")
        scenario_name = _require_scenario(merged.get("scenario"))
        seed_val = _require_seed(merged.get("seed"))
        overrides = {k: v for k, v in merged.items()
                     if k not in _RUN_KEYS | {"parameter", "values"}}
        valid = set(CONTROLLERS["attention"]().get_params())
        unknown = set(overrides) - valid
        if unknown:
            raise ConfigError(
                f"unknown configuration keys for the sweep: {sorted(unknown)}")
    except ConfigError as exc:
        _fail(exc, 1)
    episodes_val = int(merged.get("episodes", 100))
    outdir = merged.get("out")
    try:
        if jobs > 1:
            rows = _parallel_sweep(param, value_list, scenario_name,
                                   episodes_val, seed_val, outdir, overrides, jobs)
        else:
            rows = harness.sweep(param, value_list, scenario_name,
                                 episodes=episodes_val, seed=seed_val,
                                 outdir=outdir, overrides=overrides)
    except Exception as exc:  # noqa: BLE001
        _fail(exc, 2)
    for row in rows:
        click.echo(f"{param}={row[param]}: "
                   f"final travel time {row['final_travel_time']!r}")


def _sweep_cell(args):
    param, value, scenario_name, episodes, seed, outdir, overrides = args
    key = harness.SWEEP_PARAMS[param]
    cell_overrides = dict(overrides)
    cell_overrides[key] = value
    cell_dir = None if outdir is None else Path(outdir) / f"{param}_{value}"
    report = harness.run_experiment(scenario_name, "attention",
                                    episodes=episodes, seed=seed,
                                    outdir=cell_dir, overrides=cell_overrides)
    return {param: value, "final_travel_time": report.final_travel_time}


def _parallel_sweep(param, values, scenario_name, episodes, seed, outdir,
                    overrides, jobs):
    tasks = [(param, v, scenario_name, episodes, seed, outdir, overrides)
             for v in values]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        rows = list(pool.map(_sweep_cell, tasks))
    if outdir is not None:
        out = Path(outdir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "sweep.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow([param, "final_travel_time"])
            for row in rows:
                w.writerow([row[param], repr(row["final_travel_time"])])
    return rows


@main.command("eval")
@click.option("--checkpoint", required=True)
@click.option("--scenario", default=None)
@click.option("--controller", default=None)
@click.option("--seed", type=int, default=None)
@click.option("--config", "config_path", default=None)
@click.option("--set", "sets", multiple=True)
def eval_cmd(checkpoint, scenario, controller, seed, config_path, sets):
    """Frozen-policy evaluation of a saved checkpoint (epsilon 0)."""
    try:
        merged = _effective(_load_config(config_path),
                            {"scenario": scenario, "controller": controller,
                             "seed": seed},
                            _parse_sets(sets))
        name = merged.get("controller", "attention")
        run_cfg, params = _split_controller_params(merged, name)
        scenario_name = _require_scenario(run_cfg.get("scenario"))
        seed_val = _require_seed(run_cfg.get("seed"))

        sc = scenario_catalog()[scenario_name]
        agent = make_controller(name, **{**params, "seed": seed_val})
        if not agent.trainable:
            raise ConfigError(f"controller {name!r} has no checkpoint to evaluate")
        agent.setup(sc.build_network(), sc.dt)
        loaded = load_params(checkpoint)
        expected = {k: v.shape for k, v in agent.params_.items()}
        got = {k: v.shape for k, v in loaded.items()}
        if expected != got:
            diff = sorted(set(expected.items()) ^ set(got.items()))
            raise ConfigError(
                f"checkpoint does not match the configured network: {diff}")
        agent.params_ = loaded
    except ConfigError as exc:
        _fail(exc, 1)
    except OSError as exc:
        _fail(exc, 1)
    try:
        sim = microsim.reset(agent.net_, sc.flow, seed_val)
        stats = agent.run_episode(sim, sc.episode_s, eps=0.0, learn=False)
    except Exception as exc:  # noqa: BLE001
        _fail(exc, 2)
    click.echo(f"travel time: {stats.travel_time!r}")


@main.command("attention-report")
@click.option("--run", "run_dir", required=True,
              help="Run directory containing attention.jsonl.")
@click.option("--target", type=int, default=None,
              help="Also write this intersection's attention time series.")
def attention_report(run_dir, target):
    """Aggregate a run's attention log into CSV studies."""
    log_path = Path(run_dir) / "attention.jsonl"
    if not log_path.exists():
        _fail(FileNotFoundError(f"missing attention log {log_path}"), 1)
    try:
        rows = harness.read_attention_log(log_path)
        means = harness.spatial_attention_study(rows)
        spatial_path = Path(run_dir) / "spatial_attention.csv"
        with open(spatial_path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["target", "neighbor", "mean_alpha"])
            for tgt in sorted(means):
                for nbr in sorted(means[tgt]):
                    w.writerow([tgt, nbr, repr(means[tgt][nbr])])
        click.echo(f"wrote {spatial_path}")
        if target is not None:
            series = harness.temporal_attention_series(rows, target)
            temporal_path = Path(run_dir) / f"temporal_attention_{target}.csv"
            with open(temporal_path, "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh)
                w.writerow(["t", "neighbor", "alpha"])
                for nbr in sorted(series):
                    times, alphas = series[nbr]
                    for t, a in zip(times, alphas):
                        w.writerow([t, nbr, repr(a)])
            click.echo(f"wrote {temporal_path}")
    except Exception as exc:  # noqa: BLE001
        _fail(exc, 2)


@main.command("validate-net")
@click.option("--net", "net_path", required=True)
def validate_net(net_path):
    """Validate a road-network JSON file."""
    try:
        net = load_network(net_path)
    except NetworkFormatError as exc:
        _fail(exc, 1)
    except OSError as exc:
        _fail(exc, 1)
    click.echo(f"ok: {len(net.intersections)} intersections, "
               f"{len(net.lanes)} lanes")


if __name__ == "__main__":
    main()
