"""Command line entry point: ``landloc run | sweep | plotdata``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .config import ENV_PREFIX, ConfigError, ScenarioKind, SwarmConfig, config_to_dict, load_config, read_toml
from .metrics import align, metric_rows, summarize
from .scenarios import ExperimentLog, ScenarioError, run_scenario
from .vehicle import TrajectoryRef

TRAJECTORY_COLUMNS = ["drone_id", "role", "t_s", "true_x", "true_y", "true_z", "est_x", "est_y"]
EVENT_COLUMNS = ["t_ns", "t_s", "node", "event", "detail"]
PLOT_COLUMNS = ["t_s", "true_x", "true_y", "est_x", "est_y", "aligned_x", "aligned_y", "ideal_x", "ideal_y"]
SHIFT_COLUMNS = ["scenario", "seed", "drone_id", "shift_x", "shift_y", "shift_norm"]
SWEEP_COLUMNS = ["scenario", "vary", "value", "round_period_ms", "runs",
                 "l_rmse_mean", "l_rmse_std", "c_rmse_mean", "c_rmse_std",
                 "landing_error_mean", "landing_error_std", "md_avg_power_w_mean", "md_avg_power_w_std"]


class CliError(RuntimeError):
    pass


@dataclass(frozen=True)
class RunManifest:
    config_path: Path
    scenarios: Tuple[ScenarioKind, ...]
    seeds: Tuple[int, ...]
    out: Optional[Path]
    jobs: int = 1

    def __post_init__(self):
        if not self.seeds:
            raise CliError("seed list is empty")
        if not self.scenarios:
            raise CliError("scenario list is empty")


def _parse_int_list(text: str, what: str) -> Tuple[int, ...]:
    try:
        values = tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise CliError(f"{what}: expected comma-separated integers, got {text!r}") from None
    if not values:
        raise CliError(f"{what}: empty list")
    return values


def _parse_scenarios(items: Iterable[str]) -> Tuple[ScenarioKind, ...]:
    out = []
    for item in items:
        try:
            out.append(ScenarioKind(item.strip()))
        except ValueError:
            choices = ", ".join(k.value for k in ScenarioKind)
            raise CliError(f"unknown scenario {item!r} (choose from {choices})") from None
    return tuple(out)


def build_manifest(args) -> Tuple[RunManifest, SwarmConfig]:
    cfg = load_config(args.config)
    run_section = read_toml(args.config).get("run", {})
    if args.seeds is not None:
        seeds = _parse_int_list(args.seeds, "--seeds")
    elif "seeds" in run_section:
        seeds = tuple(int(s) for s in run_section["seeds"])
    else:
        seeds = (cfg.seed,)
    if args.scenario:
        scenarios = _parse_scenarios(args.scenario.split(","))
    elif "scenarios" in run_section:
        scenarios = _parse_scenarios(run_section["scenarios"])
    else:
        scenarios = tuple(ScenarioKind)
    out = Path(args.out) if getattr(args, "out", None) else None
    return RunManifest(Path(args.config), scenarios, seeds, out, max(1, args.jobs)), cfg


# --- formatting -----------------------------------------------------------------

def _num(x) -> str:
    return repr(float(x))


def _csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow(row)
    return buf.getvalue()


def _json_text(data) -> str:
    return json.dumps(data, sort_keys=True, indent=2, allow_nan=False) + "\n"


def trajectories_csv(log: ExperimentLog) -> str:
    def rows():
        for d, s in sorted(log.series.items()):
            for t, p, e in zip(s.t, s.true, s.est):
                yield [d, s.role.value, _num(t), _num(p[0]), _num(p[1]), _num(p[2]), _num(e[0]), _num(e[1])]
    return _csv_text(TRAJECTORY_COLUMNS, rows())


def events_csv(log: ExperimentLog) -> str:
    rows = ([e.t, _num(e.t / 1e9), e.node, e.kind, e.detail] for e in log.events)
    return _csv_text(EVENT_COLUMNS, rows)


def run_summary(log: ExperimentLog) -> Dict[str, object]:
    s = summarize(log)
    s["mission_start_s"] = log.mission_start / 1e9
    s["mission_end_s"] = log.mission_end / 1e9
    s["references"] = {
        str(d): {"center": list(r.center), "radius": r.radius, "speed": r.speed, "phase": r.phase,
                 "height": r.height, "duration": r.duration}
        for d, r in sorted(log.references.items())
    }
    s["landings"] = [
        {"index": r.index, "node": r.node_id, "target": list(r.target), "believed": list(r.believed),
         "actual": list(r.actual), "error_m": r.error, "landed_at_s": r.landed_at}
        for r in log.landings
    ]
    s["config"] = config_to_dict(log.config)
    return s


def metrics_csv(summary) -> str:
    rows = ([name, _num(v), unit, seed, scen] for name, v, unit, seed, scen in metric_rows(summary))
    return _csv_text(["metric", "value", "units", "seed", "scenario"], rows)


# --- execution ------------------------------------------------------------------------

def _execute(job):
    kind, cfg = job
    log = run_scenario(kind, cfg)
    return {
        "trajectories.csv": trajectories_csv(log),
        "events.csv": events_csv(log),
        "summary": run_summary(log),
    }


def run_jobs(jobs: List[Tuple[ScenarioKind, SwarmConfig]], workers: int = 1) -> List[dict]:
    if workers > 1 and len(jobs) > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_execute, jobs))
    return [_execute(j) for j in jobs]


def write_run(out: Path, kind: ScenarioKind, seed: int, result: dict) -> Path:
    d = out / kind.value / f"seed{seed}"
    d.mkdir(parents=True, exist_ok=True)
    (d / "trajectories.csv").write_text(result["trajectories.csv"])
    (d / "events.csv").write_text(result["events.csv"])
    (d / "summary.json").write_text(_json_text(result["summary"]))
    (d / "metrics.csv").write_text(metrics_csv(result["summary"]))
    return d


def cmd_run(args) -> int:
    manifest, cfg = build_manifest(args)
    if manifest.out is None:
        raise CliError("run needs --out")
    jobs = [(k, replace(cfg, seed=s)) for k in manifest.scenarios for s in manifest.seeds]
    results = run_jobs(jobs, manifest.jobs)
    for (kind, c), res in zip(jobs, results):
        d = write_run(manifest.out, kind, c.seed, res)
        s = res["summary"]
        print(f"{kind.value} seed={c.seed}: l_rmse={s['l_rmse']:.4f} m  c_rmse={s['c_rmse']:.4f} m  "
              f"landing={s['landing_error_mean']:.4f} m  -> {d}")
    return 0


def _mean_std(values: Sequence[float]) -> Tuple[float, float]:
    a = np.asarray(values, dtype=float)
    return float(a.mean()), float(a.std())


def sweep_table(rows: List[dict]) -> str:
    lines = [f"{'scenario':<18} {'N':>3} {'round_ms':>8} {'l-RMSE [m]':>17} {'c-RMSE [m]':>17} "
             f"{'landing [m]':>17} {'MD power [W]':>17}"]
    for r in rows:
        lines.append(
            f"{r['scenario']:<18} {r['value']:>3} {r['round_period_ms']:>8g} "
            f"{r['l_rmse_mean']:>8.4f} ± {r['l_rmse_std']:<6.4f} "
            f"{r['c_rmse_mean']:>8.4f} ± {r['c_rmse_std']:<6.4f} "
            f"{r['landing_error_mean']:>8.4f} ± {r['landing_error_std']:<6.4f} "
            f"{r['md_avg_power_w_mean']:>8.4f} ± {r['md_avg_power_w_std']:<6.4f}"
        )
    return "\n".join(lines)


def _parse_vary(text: str) -> Tuple[str, Tuple[int, ...]]:
    if "=" not in text:
        raise CliError(f"--vary: expected name=v1,v2, got {text!r}")
    name, values = text.split("=", 1)
    name = name.strip()
    if name != "mission_drones":
        raise CliError(f"--vary: only mission_drones can be swept, got {name!r}")
    return name, _parse_int_list(values, "--vary")


def cmd_sweep(args) -> int:
    manifest, cfg = build_manifest(args)
    name, values = _parse_vary(args.vary)
    jobs, keys = [], []
    for k in manifest.scenarios:
        for v in values:
            for s in manifest.seeds:
                jobs.append((k, replace(cfg, seed=s, **{name: v})))
                keys.append((k, v, s))
    results = run_jobs(jobs, manifest.jobs)
    grouped: Dict[Tuple[ScenarioKind, int], List[dict]] = {}
    for (k, v, s), res in zip(keys, results):
        grouped.setdefault((k, v), []).append(res["summary"])
        if manifest.out is not None:
            write_run(manifest.out / f"{name}={v}", k, s, res)
    rows = []
    for (k, v), sums in grouped.items():
        row = {"scenario": k.value, "vary": name, "value": v,
               "round_period_ms": sums[0]["round_period_ms"], "runs": len(sums)}
        for metric in ("l_rmse", "c_rmse", "landing_error_mean", "md_avg_power_w"):
            m, sd = _mean_std([s[metric] for s in sums])
            key = "landing_error" if metric == "landing_error_mean" else metric
            row[f"{key}_mean"], row[f"{key}_std"] = m, sd
        rows.append(row)
    print(sweep_table(rows))
    if manifest.out is not None:
        manifest.out.mkdir(parents=True, exist_ok=True)
        body = ([r[c] if isinstance(r[c], (str, int)) else _num(r[c]) for c in SWEEP_COLUMNS] for r in rows)
        (manifest.out / "sweep.csv").write_text(_csv_text(SWEEP_COLUMNS, body))
        (manifest.out / "sweep.json").write_text(_json_text(rows))
    return 0


# --- plot data --------------------------------------------------------------------

def _read_trajectories(path: Path) -> Dict[int, Dict[str, np.ndarray]]:
    cols: Dict[int, Dict[str, list]] = {}
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != TRAJECTORY_COLUMNS:
            raise CliError(f"{path}: unexpected columns {reader.fieldnames}")
        for row in reader:
            d = cols.setdefault(int(row["drone_id"]), {c: [] for c in TRAJECTORY_COLUMNS[1:]})
            d["role"].append(row["role"])
            for c in TRAJECTORY_COLUMNS[2:]:
                d[c].append(float(row[c]))
    return {k: {c: np.asarray(v) if c != "role" else v for c, v in d.items()} for k, d in cols.items()}


def find_runs(root: Path) -> List[Path]:
    return sorted(p.parent for p in root.rglob("summary.json") if (p.parent / "trajectories.csv").is_file())


def cmd_plotdata(args) -> int:
    root = Path(getattr(args, "from"))
    if not root.is_dir():
        raise CliError(f"{root}: run output directory not found")
    runs = find_runs(root)
    if not runs:
        raise CliError(f"{root}: no run outputs (summary.json + trajectories.csv) found")
    out = Path(args.out) if args.out else root / "plotdata"
    out.mkdir(parents=True, exist_ok=True)
    shift_rows = []
    for run in runs:
        summary = json.loads((run / "summary.json").read_text())
        traj = _read_trajectories(run / "trajectories.csv")
        lo, hi = summary["mission_start_s"], summary["mission_end_s"]
        trim = summary["config"]["swarm"]["trim_fraction"]
        tag = "_".join(run.relative_to(root).parts)
        for d_str, r in sorted(summary["references"].items(), key=lambda kv: int(kv[0])):
            d = int(d_str)
            ref = TrajectoryRef(center=tuple(r["center"]), radius=r["radius"], speed=r["speed"],
                                height=r["height"], duration=r["duration"], phase=r["phase"])
            s = traj[d]
            sel = (s["t_s"] >= lo - 1e-12) & (s["t_s"] < hi - 1e-12)
            t = s["t_s"][sel]
            real = np.column_stack([s["true_x"][sel], s["true_y"][sel]])
            est = np.column_stack([s["est_x"][sel], s["est_y"][sel]])
            ideal = ref.point(t - lo)
            aligned, shift = align(real, ideal, trim)
            rows = ([_num(t[k]), _num(real[k, 0]), _num(real[k, 1]), _num(est[k, 0]), _num(est[k, 1]),
                     _num(aligned[k, 0]), _num(aligned[k, 1]), _num(ideal[k, 0]), _num(ideal[k, 1])]
                    for k in range(len(t)))
            (out / f"{tag}_md{d}.csv").write_text(_csv_text(PLOT_COLUMNS, rows))
            shift_rows.append([summary["scenario"], summary["seed"], d, _num(shift[0]), _num(shift[1]),
                               _num(math.hypot(shift[0], shift[1]))])
    (out / "shift_vectors.csv").write_text(_csv_text(SHIFT_COLUMNS, shift_rows))
    print(f"wrote plot data for {len(runs)} run(s) to {out}")
    return 0


# --- argument parsing ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="landloc",
        description="Simulate drone-deployed UWB anchor systems and evaluate them.",
        epilog=f"Config values can be overridden with {ENV_PREFIX}<SECTION>__<KEY>=value.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_required):
        sp.add_argument("--config", required=True, help="TOML configuration file")
        sp.add_argument("--out", required=out_required, help="output directory")
        sp.add_argument("--seeds", help="comma-separated seeds (default: [run] seeds or swarm.seed)")
        sp.add_argument("--scenario", help="comma-separated scenario kinds (default: all)")
        sp.add_argument("--jobs", type=int, default=1, help="worker processes")

    common(sub.add_parser("run", help="run scenarios and export logs and metrics"), True)
    sw = sub.add_parser("sweep", help="mean and std of metrics over a parameter sweep")
    common(sw, False)
    sw.add_argument("--vary", required=True, help="e.g. mission_drones=4,8")
    pd = sub.add_parser("plotdata", help="aligned trajectories and shift vectors for plotting")
    pd.add_argument("--from", required=True, help="directory written by `run` or `sweep --out`")
    pd.add_argument("--out", help="destination (default: <from>/plotdata)")
    return p


_COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "plotdata": cmd_plotdata}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, CliError) as exc:
        print(f"landloc: error: {exc}", file=sys.stderr)
        return 2
    except ScenarioError as exc:
        print(f"landloc: scenario failed in {exc.phase}: {exc.cause}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"landloc: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
