"""Command-line front end: ``molcom {eval,synth,fit,compare,simulate}``.

Option values resolve as command-line flag, then ``--config`` JSON file
(flat keys, or keys nested under the subcommand name), then built-in
defaults. Every run that writes to ``--output`` also writes a
``manifest.json`` describing the resolved configuration, input digests and
outputs.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from .channel_models import (
    DiffusionParams,
    VerticalChannelParams,
    diffusion_response,
    peak_time,
    vertical_response,
)
from .fitting import FitConfig, average_fit, fit_vertical_model
from .particle_sim import (
    SimConfigError,
    density_at_distance,
    l1_distance_to_analytic,
    load_sim_config,
    profile_to_trace,
    simulate,
    synthetic_trace,
)
from .traces import (
    TimeSeries,
    average_trials,
    estimate_baseline,
    normalize_peak,
    parse_trace,
    resample,
    serialize_trace,
    subtract_baseline,
    window,
)

log = logging.getLogger("molcom")

MANIFEST_SCHEMA = "1"
REPORT_SCHEMA = "1"

# Reference coefficients reported for the vertical model, fitted at a
# 10 cm separation expressed as d = 0.1.
REFERENCE_A, REFERENCE_B, REFERENCE_E = 1.8788, 60.4567, 0.0301
REFERENCE_VERTICAL_DISTANCE = 0.1

DEFAULTS = {
    "model": "vertical",
    "a": REFERENCE_A,
    "b": REFERENCE_B,
    "e": REFERENCE_E,
    "distance": None,
    "molecules": 1.0,
    "diffusion_coefficient": 0.0993,
    "dimension": 1,
    "t_start": 0.0,
    "t_end": 11.0,
    "rate": 10.0,
    "times": None,
    "clamp_negative": False,
    "seed": 0,
    "format": "csv",
    "n_trials": 6,
    "noise": 0.01,
    "baseline": "none",
    "baseline_samples": 5,
    "normalize": False,
    "window_start": 0.0,
    "window_end": 11.0,
    "no_window": False,
    "a0": None,
    "b0": None,
    "e0": None,
    "max_iterations": 200,
    "cost_tolerance": 1e-10,
    "step_tolerance": 1e-10,
    "initial_damping": 1e-3,
    "keep_going": False,
    "timing": False,
}


class UsageError(Exception):
    pass


class Run:
    """Collects inputs, outputs and resolved settings for the manifest."""

    def __init__(self, subcommand, args, config):
        self.subcommand = subcommand
        self.args = args
        self.config = config
        self.resolved = {}
        self.inputs = {}
        self.outputs = []
        self.summary = {}
        self.out_dir = Path(args.output) if args.output else None
        self.started = time.perf_counter()

    def get(self, key):
        value = getattr(self.args, key, None)
        if value is None:
            value = self.config.get(key, DEFAULTS.get(key))
        self.resolved[key] = value
        return value

    def read_input(self, path):
        data = Path(path).read_bytes()
        self.inputs[str(path)] = hashlib.sha256(data).hexdigest()
        return data.decode("utf-8")

    def write(self, name, text):
        if self.out_dir is None:
            sys.stdout.write(text)
            return
        self.out_dir.mkdir(parents=True, exist_ok=True)
        (self.out_dir / name).write_text(text, encoding="utf-8", newline="\n")
        self.outputs.append(name)

    def finish(self, status, message=None):
        if self.out_dir is None:
            return
        manifest = {
            "schema": MANIFEST_SCHEMA,
            "subcommand": self.subcommand,
            "status": status,
            "config": self.resolved,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "summary": self.summary,
            "wall_clock_seconds": None,
        }
        if message:
            manifest["error"] = message
        if self.resolved.get("timing") or getattr(self.args, "timing", False):
            manifest["wall_clock_seconds"] = round(time.perf_counter() - self.started, 6)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        text = json.dumps(manifest, indent=2, sort_keys=True) + "\n"
        (self.out_dir / "manifest.json").write_text(text, encoding="utf-8", newline="\n")


def _fmt(x):
    s = f"{x:.9g}"
    return "0" if s == "-0" else s


def _time_grid(run):
    times = run.get("times")
    if times is not None:
        if isinstance(times, str):
            parts = [p for p in times.split(",") if p.strip()]
            try:
                times = [float(p) for p in parts]
            except ValueError as exc:
                raise UsageError(f"--times: not a number list: {times!r}") from exc
        grid = np.asarray(times, dtype=float)
    else:
        t_start, t_end, rate = run.get("t_start"), run.get("t_end"), run.get("rate")
        if not rate > 0:
            raise UsageError(f"--rate must be > 0, got {rate}")
        n = int(math.floor((t_end - t_start) * rate + 1e-9))
        grid = t_start + np.arange(1, max(n, 0) + 1) / rate
    if grid.size == 0:
        raise UsageError("--times/--t-start/--t-end: the time grid is empty")
    if np.any(grid <= 0):
        raise UsageError("--times/--t-start: model times must be > 0")
    if np.any(np.diff(grid) <= 0):
        raise UsageError("--times: times must be strictly increasing")
    return grid


def _vertical_params(run):
    distance = run.get("distance")
    if distance is None:
        distance = REFERENCE_VERTICAL_DISTANCE
        run.resolved["distance"] = distance
    try:
        return VerticalChannelParams(run.get("a"), run.get("b"), run.get("e"), distance)
    except ValueError as exc:
        raise UsageError(f"--a/--b/--e/--distance: {exc}") from exc


def _diffusion_params(run):
    distance = run.get("distance")
    if distance is None:
        distance = 10.0
        run.resolved["distance"] = distance
    try:
        return DiffusionParams(
            run.get("molecules"), run.get("diffusion_coefficient"), int(run.get("dimension")), distance
        )
    except ValueError as exc:
        raise UsageError(f"--molecules/--diffusion-coefficient/--dimension/--distance: {exc}") from exc


def _model_values(run, grid):
    model = run.get("model")
    if model == "vertical":
        p = _vertical_params(run)
        return vertical_response(p, grid), p.distance
    if model == "diffusion":
        p = _diffusion_params(run)
        return diffusion_response(p, grid), p.distance
    raise UsageError(f"--model: unknown model {model!r}")


def _emit_series(run, name, ts: TimeSeries):
    if run.get("format") == "json":
        doc = {"metadata": ts.metadata(), "t": ts.t.tolist(), "value": ts.values.tolist()}
        run.write(f"{name}.json", json.dumps(doc, indent=2) + "\n")
    else:
        run.write(f"{name}.csv", serialize_trace(ts))


def cmd_eval(run):
    grid = _time_grid(run)
    values, distance = _model_values(run, grid)
    if run.get("clamp_negative"):
        values = np.maximum(values, 0.0)
    ts = TimeSeries(grid, values, trial_id=f"{run.get('model')}_model", distance_cm=distance, units="model")
    i = int(np.argmax(values))
    run.summary = {"samples": int(grid.size), "argmax_t": float(grid[i]), "max": float(values[i])}
    if run.get("model") == "vertical":
        run.summary["peak_time_s"] = peak_time(_vertical_params(run))
    _emit_series(run, "eval", ts)


def cmd_synth(run):
    p = _vertical_params(run)
    grid = _time_grid(run)
    n_trials, noise, seed = int(run.get("n_trials")), run.get("noise"), int(run.get("seed"))
    if n_trials < 1:
        raise UsageError("--n-trials must be >= 1")
    if not noise >= 0:
        raise UsageError("--noise must be >= 0")
    for i in range(1, n_trials + 1):
        ts = synthetic_trace(p, grid, noise, rng_seed=[seed, i], trial_id=f"trial_{i:02d}")
        _emit_series(run, f"trial_{i:02d}", ts)
    run.summary = {"trials": n_trials, "samples_per_trial": int(grid.size)}


def _load_traces(run, paths):
    traces = []
    for path in paths:
        ts = parse_trace(run.read_input(path))
        if ts.trial_id is None:
            ts = replace(ts, trial_id=Path(path).stem)
        traces.append(ts)
    return traces


def _preprocess(run, ts):
    baseline = run.get("baseline")
    if baseline == "auto":
        ts = subtract_baseline(ts, estimate_baseline(ts, int(run.get("baseline_samples"))))
    elif baseline not in (None, "none"):
        try:
            value = float(baseline)
        except ValueError as exc:
            raise UsageError(f"--baseline: expected none, auto or a number, got {baseline!r}") from exc
        ts = subtract_baseline(ts, value)
    if not run.get("no_window"):
        ts = window(ts, run.get("window_start"), run.get("window_end"))
    if run.get("normalize"):
        ts = normalize_peak(ts)
    return ts


def cmd_fit(run):
    paths = run.args.traces
    keep_going = run.get("keep_going")
    guess = [run.get("a0"), run.get("b0"), run.get("e0")]
    if any(g is not None for g in guess) and not all(g is not None for g in guess):
        raise UsageError("--a0/--b0/--e0 must be given together")
    cfg = FitConfig(
        initial_guess=tuple(guess) if guess[0] is not None else None,
        max_iterations=int(run.get("max_iterations")),
        cost_tolerance=run.get("cost_tolerance"),
        step_tolerance=run.get("step_tolerance"),
        initial_damping=run.get("initial_damping"),
    )
    fmt = run.get("format")
    trials, results, failures, curves = [], [], [], []
    for path in paths:
        label = str(path)
        try:
            raw = parse_trace(run.read_input(path))
            label = raw.trial_id or Path(path).stem
            ts = _preprocess(run, raw)
            distance = run.get("distance")
            if distance is None:
                distance = ts.distance_cm if ts.distance_cm is not None else REFERENCE_VERTICAL_DISTANCE
            res = fit_vertical_model(ts, distance, cfg)
            if not res.converged:
                raise RuntimeError(f"fit did not converge: {res.message}")
        except Exception as exc:
            if not keep_going:
                raise RuntimeError(f"trial {label}: {exc}") from exc
            log.warning("trial %s failed: %s", label, exc)
            failures.append({"trial_id": label, "error": str(exc)})
            continue
        trials.append({"trial_id": label, "distance": distance, **res.as_dict()})
        results.append(res)
        fitted = vertical_response(res.params, ts.t)
        curves.append((label, ts, fitted))

    if not results:
        raise RuntimeError("no trial produced a converged fit")
    avg = average_fit(results)
    report = {
        "schema": REPORT_SCHEMA,
        "trials": trials,
        "failures": failures,
        "average": {"a": avg.a, "b": avg.b, "e": avg.e, "distance": avg.distance},
    }
    for label, ts, fitted in curves:
        name = f"fit_{label}"
        if fmt == "json":
            doc = {"t": ts.t.tolist(), "observed": ts.values.tolist(), "fitted": fitted.tolist()}
            text = json.dumps(doc, indent=2) + "\n"
            name += ".json"
        else:
            rows = [f"# trial_id={label}", "# columns=t,observed,fitted"]
            rows += [f"{_fmt(t)},{_fmt(o)},{_fmt(f)}" for t, o, f in zip(ts.t, ts.values, fitted)]
            text = "\n".join(rows) + "\n"
            name += ".csv"
        if run.out_dir is not None:
            run.write(name, text)
    report_text = json.dumps(report, indent=2) + "\n"
    if run.out_dir is not None:
        run.write("fit_report.json", report_text)
        for tr in trials:
            print(f"{tr['trial_id']}: a={tr['a']:.6g} b={tr['b']:.6g} e={tr['e']:.6g} rss={tr['rss']:.3e}")
        print(f"average: a={avg.a:.6g} b={avg.b:.6g} e={avg.e:.6g}")
    else:
        sys.stdout.write(report_text)
    run.summary = {"fitted": len(results), "failed": len(failures)}


def cmd_compare(run):
    traces = _load_traces(run, run.args.traces)
    spans = [(tr.trial_id, tr.span) for tr in traces]
    ref_id, ref_span = spans[0]
    for tid, span in spans[1:]:
        if not (math.isclose(span[0], ref_span[0], abs_tol=1e-9) and math.isclose(span[1], ref_span[1], abs_tol=1e-9)):
            raise RuntimeError(
                f"mismatched time spans: {ref_id} covers [{ref_span[0]:.9g}, {ref_span[1]:.9g}] s, "
                f"{tid} covers [{span[0]:.9g}, {span[1]:.9g}] s"
            )
    grid = traces[0].t
    lo, hi = max(tr.span[0] for tr in traces), min(tr.span[1] for tr in traces)
    grid = grid[(grid >= lo) & (grid <= hi)]
    aligned = [tr if np.array_equal(tr.t, grid) else resample(tr, grid) for tr in traces]
    experiment = normalize_peak(average_trials(aligned))
    if np.any(grid <= 0):
        raise RuntimeError("comparison grid must have t > 0 to evaluate the model")
    model_values, _ = _model_values(run, grid)
    model = normalize_peak(TimeSeries(grid, model_values))
    t_exp = float(grid[int(np.argmax(experiment.values))])
    t_model = float(grid[int(np.argmax(model.values))])
    lag = t_exp - t_model
    run.summary = {"experiment_peak_s": t_exp, "model_peak_s": t_model, "peak_lag_s": lag, "n_trials": len(traces)}
    if run.get("format") == "json":
        doc = {
            **run.summary,
            "t": grid.tolist(),
            "experiment": experiment.values.tolist(),
            "model": model.values.tolist(),
        }
        run.write("compare.json", json.dumps(doc, indent=2) + "\n")
    else:
        rows = [
            "# columns=t,experiment,model",
            f"# n_trials={len(traces)}",
            f"# experiment_peak_s={_fmt(t_exp)}",
            f"# model_peak_s={_fmt(t_model)}",
            f"# peak_lag_s={_fmt(lag)}",
        ]
        rows += [f"{_fmt(t)},{_fmt(x)},{_fmt(m)}" for t, x, m in zip(grid, experiment.values, model.values)]
        run.write("compare.csv", "\n".join(rows) + "\n")


def cmd_simulate(run):
    doc = json.loads(run.read_input(run.args.sim_config))
    if not isinstance(doc, dict):
        raise SimConfigError("config must be a JSON object")
    if run.args.seed is not None:
        doc["rng_seed"] = run.args.seed
    cfg = load_sim_config(doc)
    run.resolved.update(cfg.to_dict())
    if run.out_dir is None:
        raise UsageError("simulate writes several files; pass --output DIR")
    profiles = simulate(cfg)
    snapshots = []
    for i, prof in enumerate(profiles):
        _emit_series(run, f"snapshot_{i:03d}", profile_to_trace(prof))
        snapshots.append(
            {
                "time": prof.time,
                "out_of_range": prof.out_of_range,
                "mean_position": prof.mean_position,
                "variance": prof.variance,
                "l1_to_analytic": l1_distance_to_analytic(prof, cfg.diffusion_coefficient, cfg.drift),
            }
        )
    if cfg.measurement_distance > 0:
        _emit_series(run, "receiver", density_at_distance(profiles, cfg.measurement_distance))
    run.summary = {"snapshots": snapshots}


COMMANDS = {
    "eval": cmd_eval,
    "synth": cmd_synth,
    "fit": cmd_fit,
    "compare": cmd_compare,
    "simulate": cmd_simulate,
}


def _add_model_flags(p, with_model=True):
    if with_model:
        p.add_argument("--model", choices=["vertical", "diffusion"], help="channel model (default: vertical)")
    p.add_argument("--a", type=float, help="vertical model amplitude a (default: 1.8788, reference fit)")
    p.add_argument("--b", type=float, help="vertical model spread b (default: 60.4567, reference fit)")
    p.add_argument("--e", type=float, help="vertical model gravity slope e (default: 0.0301, reference fit)")
    p.add_argument(
        "--distance",
        type=float,
        help="transmitter-receiver distance; default 0.1 for the vertical model "
        "(10 cm in the unit the reference coefficients assume) and 10 cm for diffusion",
    )
    if with_model:
        p.add_argument("--molecules", type=float, help="released molecule count M (default: 1)")
        p.add_argument(
            "--diffusion-coefficient",
            type=float,
            help="D in cm^2/s (default: 0.0993, isopropyl alcohol)",
        )
        p.add_argument("--dimension", type=int, choices=[1, 2, 3], help="spatial dimension n (default: 1)")


def _add_grid_flags(p):
    p.add_argument("--t-start", type=float, help="grid start, exclusive (default: 0 s)")
    p.add_argument("--t-end", type=float, help="grid end, inclusive (default: 11 s)")
    p.add_argument("--rate", type=float, help="sampling rate in Hz (default: 10; a guess, not a measured rate)")
    p.add_argument("--times", help="explicit comma-separated times; overrides the regular grid")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--output", help="directory for output files and manifest.json (default: stdout)")
    common.add_argument("--seed", type=int, help="RNG seed (default: 0)")
    common.add_argument("--format", choices=["csv", "json"], help="output format (default: csv)")
    common.add_argument("--config", help="JSON file of option defaults")
    common.add_argument("--timing", action="store_true", default=None, help="record wall-clock time in the manifest")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    parser = argparse.ArgumentParser(prog="molcom", description="Vertical molecular communication channel toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("eval", parents=[common], help="evaluate a channel model on a time grid")
    _add_model_flags(p)
    _add_grid_flags(p)
    p.add_argument("--clamp-negative", action="store_true", default=None, help="write negative values as 0 (plotting only)")

    p = sub.add_parser("synth", parents=[common], help="generate seeded synthetic vertical-model trials")
    _add_model_flags(p, with_model=False)
    _add_grid_flags(p)
    p.add_argument("--n-trials", type=int, help="number of trials (default: 6)")
    p.add_argument("--noise", type=float, help="Gaussian noise sigma (default: 0.01)")

    p = sub.add_parser("fit", parents=[common], help="fit (a, b, e) to trace files and average them")
    p.add_argument("traces", nargs="+", help="trace CSV files")
    p.add_argument("--distance", type=float, help="fixed distance (default: trace metadata, else 0.1)")
    p.add_argument("--baseline", help="none (default), auto (mean of the first samples) or a number")
    p.add_argument("--baseline-samples", type=int, help="samples averaged by --baseline auto (default: 5)")
    p.add_argument("--normalize", action="store_true", default=None, help="peak-normalize each trace before fitting")
    p.add_argument("--window-start", type=float, help="fit window start, exclusive (default: 0 s)")
    p.add_argument("--window-end", type=float, help="fit window end, inclusive (default: 11 s)")
    p.add_argument("--no-window", action="store_true", default=None, help="fit the whole trace")
    p.add_argument("--a0", type=float, help="initial a (default: from the observed peak)")
    p.add_argument("--b0", type=float, help="initial b (default: from the observed peak)")
    p.add_argument("--e0", type=float, help="initial e (default: 0.01)")
    p.add_argument("--max-iterations", type=int, help="LM iteration budget (default: 200)")
    p.add_argument("--cost-tolerance", type=float, help="relative cost-decrease stop (default: 1e-10)")
    p.add_argument("--step-tolerance", type=float, help="relative step-size stop (default: 1e-10)")
    p.add_argument("--initial-damping", type=float, help="initial LM damping (default: 1e-3)")
    p.add_argument("--keep-going", action="store_true", default=None, help="report converged trials when others fail")

    p = sub.add_parser("compare", parents=[common], help="peak-normalized experiment average vs model")
    p.add_argument("traces", nargs="+", help="trace CSV files")
    _add_model_flags(p)

    p = sub.add_parser("simulate", parents=[common], help="Monte Carlo random-walk simulation")
    p.add_argument("sim_config", help="SimConfig JSON document")
    return parser


def _load_config(path, command):
    if not path:
        return {}
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise UsageError(f"--config: {path} must hold a JSON object")
    flat = {k.replace("-", "_"): v for k, v in doc.items() if not isinstance(v, dict)}
    flat.update({k.replace("-", "_"): v for k, v in doc.get(command, {}).items()})
    return flat


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    run = None
    try:
        config = _load_config(args.config, args.command)
        run = Run(args.command, args, config)
        run.get("seed")
        run.get("format")
        COMMANDS[args.command](run)
    except UsageError as exc:
        if run is not None:
            run.finish("error", str(exc))
        parser.error(str(exc))
    except (OSError, ValueError, RuntimeError) as exc:
        if run is not None:
            run.finish("error", str(exc))
        print(f"molcom {args.command}: error: {exc}", file=sys.stderr)
        return 1
    run.finish("ok")
    return 0


if __name__ == "__main__":
    sys.exit(main())
