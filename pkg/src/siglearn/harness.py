"""Experiment orchestration: seeded runs, metrics, attention studies, sweeps.

Every artifact a run writes (metrics.csv, attention.jsonl, report.json,
checkpoint.json) is byte-identical across repeated runs with the same
seed and configuration; wall time is kept out of them (timing.txt holds
it) so reproducibility stays checkable with a file compare.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np
from scipy import stats

from . import microsim
from .agents import GraphAttentionAgent, SignalController, make_controller
from .autodiff import save_params
from .scenarios import Scenario, scenario_catalog


@dataclass
class RunReport:
    scenario: str
    controller: str
    episodes: int
    seed: int
    config: dict
    train_travel_times: list = field(default_factory=list)
    eval_travel_times: list = field(default_factory=list)
    eval_travel_times_smoothed: list = field(default_factory=list)
    losses: list = field(default_factory=list)
    epsilons: list = field(default_factory=list)
    final_travel_time: float = 0.0
    attention_rows: int = 0
    wall_time_s: float = 0.0

    def deterministic_dict(self) -> dict:
        out = asdict(self)
        out.pop("wall_time_s")
        return out


def moving_average(values, window: int = 5) -> list[float]:
    """Trailing mean over up to ``window`` points."""
    out = []
    for i in range(len(values)):
        chunk = values[max(0, i - window + 1): i + 1]
        out.append(float(np.mean(chunk)))
    return out


def _controller_name(controller: SignalController) -> str:
    from .agents import CONTROLLERS
    for name, cls in CONTROLLERS.items():
        if type(controller) is cls:
            return name
    return type(controller).__name__


def run_experiment(scenario: Union[Scenario, str],
                   controller: Union[SignalController, str] = "attention",
                   episodes: int = 100, seed: int = 0,
                   outdir: Optional[Union[str, Path]] = None,
                   overrides: Optional[dict] = None,
                   log_attention: Optional[bool] = None,
                   log_last_episodes: int = 10) -> RunReport:
    """Train (when learnable) and evaluate one controller on one scenario.

    Each episode of a learnable controller is a fresh seeded simulation
    with the schedule's epsilon, followed by a greedy evaluation episode
    (epsilon 0, no learning).  Static controllers run one evaluation
    episode per index, giving a flat curve.  Attention records are logged
    for the last ``log_last_episodes`` evaluation episodes.
    """
    t0 = time.perf_counter()
    if isinstance(scenario, str):
        scenario = scenario_catalog()[scenario]
    if isinstance(controller, str):
        kwargs = dict(overrides or {})
        kwargs.setdefault("seed", seed)
        controller = make_controller(controller, **kwargs)
    elif overrides:
        controller.set_params(**overrides)

    net = scenario.build_network()
    controller.setup(net, scenario.dt)
    if log_attention is None:
        log_attention = isinstance(controller, GraphAttentionAgent)

    outdir = Path(outdir) if outdir is not None else None
    if outdir is not None:
        outdir.mkdir(parents=True, exist_ok=True)
    attention_fh = None
    if log_attention and outdir is not None:
        attention_fh = open(outdir / "attention.jsonl", "w", encoding="utf-8")

    report = RunReport(
        scenario=scenario.name,
        controller=_controller_name(controller),
        episodes=episodes,
        seed=seed,
        config={
            "scenario": scenario.name,
            "episodes": episodes,
            "seed": seed,
            "dt": scenario.dt,
            "episode_s": scenario.episode_s,
            "controller": _controller_name(controller),
            "controller_params": _jsonable(controller.get_params()),
        },
    )
    try:
        for episode in range(episodes):
            if controller.trainable:
                eps = controller.epsilon_at(episode)
                sim = microsim.reset(net, scenario.flow, seed)
                train_stats = controller.run_episode(
                    sim, scenario.episode_s, eps=eps, learn=True)
                report.train_travel_times.append(train_stats.travel_time)
                report.losses.append(train_stats.mean_loss)
                report.epsilons.append(eps)

                sink = [] if (log_attention
                              and episode >= episodes - log_last_episodes) else None
                sim = microsim.reset(net, scenario.flow, seed)
                eval_stats = controller.run_episode(
                    sim, scenario.episode_s, eps=0.0, learn=False,
                    attention_sink=sink)
                report.eval_travel_times.append(eval_stats.travel_time)
                if sink is not None and attention_fh is not None:
                    report.attention_rows += _write_attention(
                        attention_fh, sink, episode)
            else:
                sim = microsim.reset(net, scenario.flow, seed)
                stats_ = controller.run_episode(sim, scenario.episode_s)
                report.train_travel_times.append(stats_.travel_time)
                report.eval_travel_times.append(stats_.travel_time)
                report.losses.append(float("nan"))
                report.epsilons.append(0.0)
    finally:
        if attention_fh is not None:
            attention_fh.close()

    report.eval_travel_times_smoothed = moving_average(report.eval_travel_times, 5)
    tail = report.eval_travel_times[-min(10, len(report.eval_travel_times)):]
    report.final_travel_time = float(np.mean(tail)) if tail else 0.0
    report.wall_time_s = time.perf_counter() - t0

    if outdir is not None:
        _write_metrics_csv(outdir / "metrics.csv", report)
        with open(outdir / "report.json", "w", encoding="utf-8") as fh:
            json.dump(report.deterministic_dict(), fh, sort_keys=True, indent=1)
        with open(outdir / "timing.txt", "w", encoding="utf-8") as fh:
            fh.write(f"{report.wall_time_s:.3f}\n")
        if controller.trainable:
            save_params(controller.params_, outdir / "checkpoint.json")
    return report


def _jsonable(d: dict) -> dict:
    out = {}
    for key, value in d.items():
        if isinstance(value, (np.integer,)):
            value = int(value)
        elif isinstance(value, (np.floating,)):
            value = float(value)
        elif isinstance(value, (list, tuple)):
            value = list(value)
        out[key] = value
    return out


def _write_attention(fh, records, episode: int) -> int:
    for r in records:
        fh.write(json.dumps({
            "t": r.time, "episode": episode, "layer": r.layer, "head": r.head,
            "target": r.target, "neighbors": list(r.neighbor_ids),
            "alpha": list(r.alphas),
        }, sort_keys=True))
        fh.write("\n")
    return len(records)


def _write_metrics_csv(path: Path, report: RunReport) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["episode", "travel_time", "eval_travel_time", "loss", "epsilon"])
        for i in range(len(report.eval_travel_times)):
            w.writerow([
                i,
                repr(report.train_travel_times[i]),
                repr(report.eval_travel_times[i]),
                repr(report.losses[i]),
                repr(report.epsilons[i]),
            ])


def read_attention_log(path) -> list[dict]:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    return rows


def _last_layer(rows) -> int:
    return max(r["layer"] for r in rows)


def spatial_attention_study(rows: list[dict], layer: Optional[int] = None
                            ) -> dict[int, dict[int, float]]:
    """Mean attention per (target, neighbor) over heads, steps, episodes.

    Uses the last attention layer unless ``layer`` is given.  Raises on an
    empty log so a disabled-logging run fails loudly.
    """
    if not rows:
        raise ValueError("attention log is empty")
    layer = _last_layer(rows) if layer is None else layer
    sums: dict[int, dict[int, list]] = {}
    for r in rows:
        if r["layer"] != layer:
            continue
        per_target = sums.setdefault(r["target"], {})
        for nbr, alpha in zip(r["neighbors"], r["alpha"]):
            per_target.setdefault(nbr, []).append(alpha)
    return {
        target: {nbr: float(np.mean(vals)) for nbr, vals in per_target.items()}
        for target, per_target in sums.items()
    }


def temporal_attention_series(rows: list[dict], target: int,
                              layer: Optional[int] = None,
                              episode: Optional[int] = None
                              ) -> dict[int, tuple[list[int], list[float]]]:
    """Per-neighbor head-averaged attention time series for one target
    during one evaluation episode (the last logged one by default)."""
    if not rows:
        raise ValueError("attention log is empty")
    layer = _last_layer(rows) if layer is None else layer
    episode = max(r["episode"] for r in rows) if episode is None else episode
    by_time: dict[int, dict[int, list]] = {}
    for r in rows:
        if r["layer"] != layer or r["target"] != target or r["episode"] != episode:
            continue
        slot = by_time.setdefault(r["t"], {})
        for nbr, alpha in zip(r["neighbors"], r["alpha"]):
            slot.setdefault(nbr, []).append(alpha)
    series: dict[int, tuple[list[int], list[float]]] = {}
    for t in sorted(by_time):
        for nbr, vals in by_time[t].items():
            times, alphas = series.setdefault(nbr, ([], []))
            times.append(t)
            alphas.append(float(np.mean(vals)))
    return series


def spearman(x, y) -> float:
    rho = stats.spearmanr(x, y).statistic
    return float(rho)


SWEEP_PARAMS = {"heads": "heads", "neighbors": "scope_size"}


def sweep(parameter: str, values, scenario: Union[Scenario, str],
          episodes: int = 100, seed: int = 0,
          outdir: Optional[Union[str, Path]] = None,
          overrides: Optional[dict] = None) -> list[dict]:
    """One full attention-agent experiment per value, identical seeds and
    budgets; returns (and optionally writes) the comparison table."""
    if parameter not in SWEEP_PARAMS:
        raise ValueError(f"sweep parameter must be one of {sorted(SWEEP_PARAMS)}")
    if not values:
        raise ValueError("sweep needs at least one value")
    key = SWEEP_PARAMS[parameter]
    rows = []
    outdir = Path(outdir) if outdir is not None else None
    for value in values:
        cell_overrides = dict(overrides or {})
        cell_overrides[key] = value
        cell_dir = outdir / f"{parameter}_{value}" if outdir is not None else None
        report = run_experiment(scenario, "attention", episodes=episodes,
                                seed=seed, outdir=cell_dir,
                                overrides=cell_overrides)
        rows.append({parameter: value,
                     "final_travel_time": report.final_travel_time})
    if outdir is not None:
        outdir.mkdir(parents=True, exist_ok=True)
        with open(outdir / "sweep.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow([parameter, "final_travel_time"])
            for row in rows:
                w.writerow([row[parameter], repr(row["final_travel_time"])])
    return rows
