"""``collprob`` command line: scenario runs, benchmarks and candidate batches."""
from __future__ import annotations

import csv
import io
import json
import logging
import time
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path

import click
import numpy as np

from . import __version__, schema
from .boundary import CrossingConfig, boundary_series
from .errors import CollprobError, InvalidArgumentError
from .montecarlo import McConfig, default_threads, mc_state_sampling, mc_trajectory_sampling
from .overlap import OverlapConfig, independent_product_series, overlap_series
from .prediction import ScenarioSpec, build_scenario
from .quadrature import DEFAULT_ORDER
from .riskeval import METHODS as BATCH_METHODS
from .riskeval import combine_obstacles, evaluate_batch, rank_candidates

log = logging.getLogger("collprob")

# column order of probabilities.csv
METHODS = ("mc_state", "overlap", "overlap_independent", "mc_traj", "boundary")
MC_METHODS = ("mc_state", "mc_traj")
BATCH_ALIASES = {"boundary": "boundary-crossing", "overlap": "overlap-max", "obb": "conservative-obb"}
FIXTURE = "builtin:cut-in"


class CliError(click.ClickException):
    exit_code = 2


class OutputError(click.ClickException):
    exit_code = 1


# ------------------------------------------------------------ scenario runs


@dataclass(frozen=True)
class RunManifest:
    scenario: ScenarioSpec
    source: str
    methods: tuple
    mc: McConfig
    quad_order: int
    out: Path

    def __post_init__(self):
        if not self.methods:
            raise InvalidArgumentError("select at least one method")


@dataclass(frozen=True)
class MethodResult:
    values: np.ndarray
    wall_time: float
    standard_error: np.ndarray | None = None
    sample_count: int | None = None


def parse_methods(text: str) -> tuple:
    if text.strip() == "all":
        return METHODS
    names = [m.strip() for m in text.split(",") if m.strip()]
    unknown = [m for m in names if m not in METHODS]
    if unknown:
        raise CliError(f"unknown method(s) {', '.join(unknown)}; choose from {', '.join(METHODS)} or 'all'")
    if not names:
        raise CliError("select at least one method")
    return tuple(m for m in METHODS if m in names)


def load_scenario(source: str, orientation: bool | None, dt: float | None) -> ScenarioSpec:
    path = Path(source)
    if source.startswith("builtin:") or (not path.exists() and source in ("1", "2", "empty")):
        spec = build_scenario(source, bool(orientation))
    else:
        spec = schema.load_scenario(path)
        if orientation is not None:
            spec = replace(spec, orientation_enabled=orientation)
    if dt is not None:
        steps = spec.horizon / dt
        if not dt > 0 or abs(steps - round(steps)) > 1e-9:
            raise InvalidArgumentError(f"--dt {dt} must be positive and divide the horizon {spec.horizon}")
        spec = replace(spec, dt=dt)
    return spec


def _per_obstacle(method: str, ego, obs, manifest: RunManifest):
    orient = manifest.scenario.orientation_enabled
    if method in MC_METHODS:
        sampler = mc_state_sampling if method == "mc_state" else mc_trajectory_sampling
        res = sampler(ego, obs, manifest.mc)
        return res.values, res.standard_error
    if method == "boundary":
        return boundary_series(ego, obs, CrossingConfig(manifest.quad_order, theta_enabled=orient)).values, None
    p = overlap_series(ego, obs, OverlapConfig(manifest.quad_order, theta_enabled=orient)).values
    return (independent_product_series(p) if method == "overlap_independent" else p), None


def compute_method(method: str, manifest: RunManifest) -> MethodResult:
    """Per-step series for one method; several obstacles combine as independent agents."""
    spec = manifest.scenario
    ego = spec.ego_trajectory()
    start = time.perf_counter()
    cols, errs = [], []
    for obs in spec.obstacle_trajectories():
        v, se = _per_obstacle(method, ego, obs, manifest)
        cols.append(v)
        errs.append(se)
    wall = time.perf_counter() - start
    if cols:
        values = combine_obstacles(np.stack(cols, axis=1))
    else:
        values = np.zeros(len(ego))
    se = None
    n = None
    if method in MC_METHODS:
        n = manifest.mc.sample_count
        se = np.sqrt(np.sum(np.square(errs), axis=0)) if errs else np.zeros(len(ego))
    return MethodResult(values, wall, se, n)


def format_probabilities(times: np.ndarray, results: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", *results])
    for k, t in enumerate(times):
        w.writerow([f"{t:.3f}", *(f"{r.values[k]:.9g}" for r in results.values())])
    return buf.getvalue()


def summary_document(manifest: RunManifest, times: np.ndarray, results: dict, total_wall: float) -> dict:
    spec = manifest.scenario
    methods = {}
    for name, r in results.items():
        k = int(np.argmax(r.values))
        entry = {
            "final": float(r.values[-1]),
            "peak": float(r.values[k]),
            "peak_time": float(times[k]),
            "wall_time_s": r.wall_time,
        }
        if r.sample_count is not None:
            entry["sample_count"] = r.sample_count
            entry["standard_error_final"] = float(r.standard_error[-1])
            entry["standard_error_max"] = float(np.max(r.standard_error))
        methods[name] = entry
    return {
        "format_version": schema.FORMAT_VERSION,
        "scenario": {"source": manifest.source, "name": spec.name, "obstacles": len(spec.obstacles)},
        "orientation_enabled": spec.orientation_enabled,
        "dt": spec.dt,
        "horizon": spec.horizon,
        "steps": len(times),
        "seed": manifest.mc.seed,
        "samples": manifest.mc.sample_count,
        "quad_order": manifest.quad_order,
        "threads": manifest.mc.threads,
        "methods": methods,
        "wall_time_s": total_wall,
    }


def plot_svg(times: np.ndarray, results: dict, path: Path, title: str):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "collprob"
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    for name, r in results.items():
        ax.plot(times, 100.0 * r.values, label=name)
    ax.set_xlabel("time [s]")
    ax.set_ylabel("collision probability [%]")
    ax.set_ylim(-2, 102)
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def _write(path: Path, text: str):
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc.strerror or exc}") from None


def _threads(value: int | None) -> int:
    threads = value if value is not None else default_threads()
    if threads < 1:
        raise CliError("--threads must be >= 1")
    return threads


def _manifest(scenario, methods, orientation, samples, seed, quad_order, dt, out, threads) -> RunManifest:
    spec = load_scenario(scenario, orientation, dt)
    mc = McConfig(samples, seed, spec.orientation_enabled, _threads(threads))
    return RunManifest(spec, scenario, parse_methods(methods), mc, quad_order, Path(out))


# ------------------------------------------------------------ click plumbing


def _guard(fn):
    """Library errors become messages with exit status 2."""

    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except CollprobError as exc:
            raise CliError(str(exc)) from None

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


def scenario_options(fn):
    opts = [
        click.option("--scenario", default="1", show_default=True, help="Built-in id (1, 2, builtin:empty) or scenario file."),
        click.option("--methods", default="all", show_default=True, help=f"Comma list of {', '.join(METHODS)}, or all."),
        click.option("--orientation/--no-orientation", default=None, help="Heading uncertainty (default: scenario setting; off for built-ins)."),
        click.option("--samples", default=25_000, show_default=True, type=click.IntRange(min=1), help="Monte Carlo samples."),
        click.option("--seed", default=0, show_default=True, type=click.IntRange(0, 2**64 - 1), help="Monte Carlo seed."),
        click.option("--quad-order", default=DEFAULT_ORDER, show_default=True, type=click.IntRange(min=2), help="Gauss-Legendre order."),
        click.option("--dt", type=float, default=None, help="Evaluation time step in seconds (default: scenario dt)."),
        click.option("--out", default="out", show_default=True, type=click.Path(file_okay=False), help="Output directory."),
        click.option("--threads", type=int, default=None, help="Worker threads (default: $COLLPROB_THREADS or 1)."),
        click.option("--svg", is_flag=True, help="Also write plot.svg."),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return fn


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
@click.version_option(version=__version__, prog_name="collprob")
def main(verbose):
    """Collision probability of uncertain trajectories."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")


@main.command()
@scenario_options
@_guard
def run(scenario, methods, orientation, samples, seed, quad_order, dt, out, threads, svg):
    """Evaluate the selected methods on one scenario."""
    manifest = _manifest(scenario, methods, orientation, samples, seed, quad_order, dt, out, threads)
    spec = manifest.scenario
    times = spec.times
    start = time.perf_counter()
    results = {}
    for m in manifest.methods:
        log.info("running %s", m)
        results[m] = compute_method(m, manifest)
    total = time.perf_counter() - start

    _write(manifest.out / "probabilities.csv", format_probabilities(times, results))
    _write(manifest.out / "summary.json", json.dumps(summary_document(manifest, times, results, total), indent=2) + "\n")
    if svg:
        try:
            plot_svg(times, results, manifest.out / "plot.svg", spec.name or scenario)
        except OSError as exc:
            raise OutputError(f"cannot write plot.svg: {exc}") from None

    width = max(len(m) for m in results)
    click.echo(f"{spec.name or scenario}: orientation {'on' if spec.orientation_enabled else 'off'}, {len(times)} steps")
    for name, r in results.items():
        click.echo(f"  {name:<{width}}  final {r.values[-1]:.4f}  peak {r.values.max():.4f}  {1e3 * r.wall_time:9.1f} ms")
    click.echo(f"wrote {manifest.out}")


def bench_table(manifest: RunManifest, repetitions: int) -> list[dict]:
    rows = []
    for orient in (False, True):
        spec = replace(manifest.scenario, orientation_enabled=orient)
        if orient:
            # built-in scenarios carry heading variance only when built with orientation
            if manifest.source.startswith("builtin:") or manifest.source in ("1", "2", "empty"):
                spec = build_scenario(manifest.source, True)
        m = replace(manifest, scenario=spec, mc=replace(manifest.mc, orientation_enabled=orient))
        for method in manifest.methods:
            compute_method(method, m)  # warm-up, not timed
            runs = [compute_method(method, m) for _ in range(repetitions)]
            times = np.array([r.wall_time for r in runs])
            rows.append(
                {
                    "method": method,
                    "orientation": "on" if orient else "off",
                    "repetitions": repetitions,
                    "median_s": float(np.median(times)),
                    "p95_s": float(np.percentile(times, 95)),
                    "sample_count": runs[0].sample_count if runs[0].sample_count is not None else "",
                    "final": f"{runs[0].values[-1]:.9g}",
                }
            )
    return rows


@main.command()
@scenario_options
@click.option("--repetitions", default=5, show_default=True, type=int, help="Timed runs per method (>= 3).")
@_guard
def bench(scenario, methods, orientation, samples, seed, quad_order, dt, out, threads, svg, repetitions):
    """Time every method with and without orientation uncertainty."""
    if repetitions < 3:
        raise CliError("--repetitions must be >= 3")
    manifest = _manifest(scenario, methods, orientation, samples, seed, quad_order, dt, out, threads)
    rows = bench_table(manifest, repetitions)

    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({**r, "median_s": f"{r['median_s']:.6g}", "p95_s": f"{r['p95_s']:.6g}"})
    _write(manifest.out / "bench.csv", buf.getvalue())

    header = f"{'method':<20} {'orientation':>11} {'reps':>5} {'median [ms]':>12} {'p95 [ms]':>10} {'samples':>8}"
    click.echo(header)
    click.echo("-" * len(header))
    for r in rows:
        click.echo(
            f"{r['method']:<20} {r['orientation']:>11} {r['repetitions']:>5} "
            f"{1e3 * r['median_s']:>12.2f} {1e3 * r['p95_s']:>10.2f} {str(r['sample_count']):>8}"
        )
    click.echo(f"wrote {manifest.out / 'bench.csv'}")


def load_batch(source: str):
    if source == FIXTURE:
        text = resources.files("collprob").joinpath("data/cut_in.json").read_text(encoding="utf-8")
        return schema.parse(schema.BatchModel, text, FIXTURE)
    return schema.load(schema.BatchModel, source)


@main.command()
@click.option("--input", "source", default=FIXTURE, show_default=True, help="Batch file, or the bundled builtin:cut-in fixture.")
@click.option("--method", default=None, help=f"Override the file's method: {', '.join(BATCH_METHODS)} (aliases: boundary, overlap, obb).")
@click.option("--out", default="out", show_default=True, type=click.Path(file_okay=False), help="Output directory.")
@click.option("--threads", type=int, default=None, help="Worker threads (default: $COLLPROB_THREADS or 1).")
@click.option("--top", default=10, show_default=True, type=click.IntRange(min=1), help="Ranked candidates to print.")
@_guard
def batch(source, method, out, threads, top):
    """Rank candidate ego trajectories by collision risk."""
    model = load_batch(source)
    candidates, config = schema.batch_from_model(model)
    if method is not None:
        method = BATCH_ALIASES.get(method, method)
        if method not in BATCH_METHODS:
            raise CliError(f"unknown method {method!r}; choose from {', '.join(BATCH_METHODS)}")
        candidates = candidates.with_method(method)
    config = replace(config, threads=_threads(threads))
    report = evaluate_batch(candidates, config)
    ranking = rank_candidates(report)

    out = Path(out)
    _write(out / "report.json", schema.dumps(schema.report_to_model(report, ranking)))

    click.echo(f"{len(report)} candidates, {len(candidates.obstacles)} obstacles, method {report.method}, {report.wall_time:.3f} s")
    if report.feasible is not None:
        click.echo(f"{report.feasible_count} feasible candidates")
    if ranking:
        names = [c.name for c in model.candidates]
        click.echo("rank  candidate  risk         name")
        for r, i in enumerate(ranking[:top], 1):
            click.echo(f"{r:>4}  {i:>9}  {report.combined[i]:.6e}  {names[i]}")
        best = ranking[0]
        click.echo(f"best candidate {best} ({names[best]}): minimum risk {report.combined[best]:.6e}")
    click.echo(f"wrote {out / 'report.json'}")


if __name__ == "__main__":
    main()
