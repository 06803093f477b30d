#!/usr/bin/env python3
"""
PA percolation experiment CLI

Every subcommand builds an ExperimentSpec, validates it and writes one
CSV or JSON artifact carrying its provenance. Without --output the
artifact goes to stdout.

Usage:
    pa-percolation threshold --m 2 --delta 1
    pa-percolation sweep --variant b --m 2 --delta 1 --n 100000 --pis 0.02,0.3 --replicas 20 --seed 7 --output results/sweep.csv
    pa-percolation ppt-survival --m 2 --delta 1 --pis 0.02,0.15 --generations 30 --cap 10000 --replicas 10000
    pa-percolation elbow --m 2 --delta -1 --pi 0.1 --h-cut 1e-6
    pa-percolation spectral --m 2 --delta 1 --b 16 --mode power --n-points 500,1000,2000
    pa-percolation spine --m 2 --delta 1 --b 16 --budget 100000
    pa-percolation expander --m 2 --delta 0 --n-grid 10,12,14,16,18,20 --replicas 200
    pa-percolation scores --m 2 --delta 1 --b 16 --pi-martingale 0.15
"""

from typing import Any, Callable, Optional

import click
from tabulate import tabulate

from src.harness.runner import RunResult, run
from src.harness.spec import ExperimentSpec, Subcommand
from src.shared.output import FORMATS, format_value


def _split(value: Optional[str], kind: Callable[[str], Any]) -> list:
    if value is None or not value.strip():
        return []
    try:
        return [kind(part) for part in value.split(",") if part.strip()]
    except ValueError as e:
        raise click.BadParameter(f"cannot parse '{value}': {e}")


def _floats(ctx, param, value):
    return _split(value, float)


def _ints(ctx, param, value):
    return _split(value, int)


def run_options(default_format: str = "csv"):
    """Options shared by every subcommand."""

    options = [
        click.option("--seed", type=int, default=0, show_default=True),
        click.option(
            "--output",
            type=click.Path(dir_okay=False),
            help="Artifact path (stdout when omitted)",
        ),
        click.option(
            "--format",
            "fmt",
            type=click.Choice(FORMATS),
            default=default_format,
            show_default=True,
        ),
        click.option(
            "--workers",
            type=int,
            help="Worker processes (default: PA_WORKERS)",
        ),
    ]

    def decorator(fn):
        for option in reversed(options):
            fn = option(fn)
        return fn

    return decorator


def model_options(fn):
    fn = click.option("--delta", type=float, default=1.0, show_default=True)(
        fn
    )
    return click.option("--m", type=int, default=2, show_default=True)(fn)


def graph_options(fn):
    fn = click.option("--a2", type=int, help="Initial degree of vertex 2")(fn)
    fn = click.option("--a1", type=int, help="Initial degree of vertex 1")(fn)
    fn = click.option("--n", type=int, default=1000, show_default=True)(fn)
    return click.option(
        "--variant",
        type=click.Choice(["a", "b", "d"], case_sensitive=False),
        default="b",
        show_default=True,
    )(fn)


def _execute(subcommand: Subcommand, fmt: str, **fields) -> None:
    spec = ExperimentSpec(subcommand=subcommand, format=fmt, **fields)
    result = run(spec)
    if result.exit_code:
        for error in result.errors:
            click.echo(f"❌ Error: {error}", err=True)
        raise SystemExit(result.exit_code)
    _report(result)


def _report(result: RunResult) -> None:
    if result.path is None:
        click.echo(result.text, nl=False)
        return
    click.echo(f"✅ Wrote {len(result.records)} record(s) to {result.path}")
    if result.records:
        columns = result.columns or list(result.records[0].keys())
        rows = [
            [format_value(record.get(c)) for c in columns]
            for record in result.records
        ]
        click.echo(tabulate(rows, headers=columns, tablefmt="simple"))


# CLI Commands
@click.group()
def cli():
    """Percolation on preferential attachment graphs and Polya point trees"""
    pass


@cli.command("generate")
@model_options
@graph_options
@click.option(
    "--edges",
    "edges_path",
    type=click.Path(dir_okay=False),
    help="Also write the edge list to this file",
)
@run_options()
def generate_command(seed, output, fmt, workers, **fields):
    """Generate one PA graph and summarize its degrees"""
    _execute(
        Subcommand.GENERATE, fmt, seed=seed, output=output, workers=workers,
        **fields,
    )


@cli.command("sweep")
@model_options
@graph_options
@click.option(
    "--pis", callback=_floats, required=True, help="Comma-separated pi grid"
)
@click.option("--replicas", type=int, help="Graphs per grid (default 10)")
@click.option(
    "--n-grid",
    callback=_ints,
    help="Graph sizes for a scaling study at each pi",
)
@run_options()
def sweep_command(seed, output, fmt, workers, **fields):
    """Coupled percolation sweep of C1/n and C2/n over a pi grid"""
    _execute(
        Subcommand.SWEEP, fmt, seed=seed, output=output, workers=workers,
        **fields,
    )


@cli.command("ppt-survival")
@model_options
@click.option("--b", type=float, help="Truncation factor (restricted if unset)")
@click.option("--pis", callback=_floats, required=True)
@click.option("--generations", type=int, help="Default: PPT_GENERATIONS")
@click.option("--cap", type=int, help="Default: PPT_POPULATION_CAP")
@click.option("--replicas", type=int, help="Default: PPT_REPLICAS")
@click.option(
    "--root-label",
    type=click.Choice(["root", "O", "Y"]),
    default="root",
    show_default=True,
)
@run_options()
def ppt_survival_command(seed, output, fmt, workers, **fields):
    """Survival probability of the percolated Polya point tree"""
    _execute(
        Subcommand.PPT_SURVIVAL, fmt, seed=seed, output=output,
        workers=workers, **fields,
    )


@cli.command("elbow")
@click.option("--m", type=int, default=2, show_default=True)
@click.option("--delta", type=float, default=-1.0, show_default=True)
@click.option("--pi", type=float, required=True)
@click.option("--h-cut", type=float, help="Cut-off age (chosen if unset)")
@click.option("--generations", type=int)
@click.option("--cap", type=int)
@click.option("--replicas", type=int)
@click.option(
    "--continuous-at-zero",
    is_flag=True,
    help="Use the delta -> 0 limit of the mean formula at delta = 0",
)
@run_options()
def elbow_command(seed, output, fmt, workers, **fields):
    """Dominated elbow branching process for delta <= 0"""
    _execute(
        Subcommand.ELBOW, fmt, seed=seed, output=output, workers=workers,
        **fields,
    )


@cli.command("spectral")
@model_options
@click.option("--b", type=float, help="Truncation factor")
@click.option(
    "--mode",
    "spectral_mode",
    type=click.Choice(["report", "residual", "power"]),
    default="report",
    show_default=True,
)
@click.option(
    "--boundary",
    type=click.Choice(["periodic", "open"]),
    default="periodic",
    show_default=True,
)
@click.option("--x-min", type=float, default=1e-6, show_default=True)
@click.option("--x-max", type=float, default=1.0, show_default=True)
@click.option(
    "--n-points", callback=_ints, default="2000", show_default=True
)
@click.option(
    "--test-ages",
    callback=_floats,
    default="0.001,0.1,1,10",
    show_default=True,
)
@run_options()
def spectral_command(seed, output, fmt, workers, **fields):
    """Spectral quantities, eigenfunction residuals or power iteration"""
    _execute(
        Subcommand.SPECTRAL, fmt, seed=seed, output=output, workers=workers,
        **fields,
    )


@cli.command("threshold")
@model_options
@click.option("--pi", type=float, help="Also report the minimal b at this pi")
@run_options(default_format="json")
def threshold_command(seed, output, fmt, workers, **fields):
    """Critical percolation threshold pi_c and operator norm r"""
    _execute(
        Subcommand.THRESHOLD, fmt, seed=seed, output=output,
        workers=workers, **fields,
    )


@cli.command("spine")
@model_options
@click.option("--b", type=float, default=16.0, show_default=True)
@click.option("--budget", type=int, default=100_000, show_default=True)
@click.option(
    "--trajectory",
    "trajectory_path",
    type=click.Path(dir_okay=False),
    help="Also dump the simulated spine (step, label, log_age)",
)
@run_options()
def spine_command(seed, output, fmt, workers, **fields):
    """Spine label chain and age drift against their closed forms"""
    _execute(
        Subcommand.SPINE, fmt, seed=seed, output=output, workers=workers,
        **fields,
    )


@cli.command("expander")
@model_options
@graph_options
@click.option("--epsilon", type=float, default=0.25, show_default=True)
@click.option("--alpha-probe", type=float, default=0.05, show_default=True)
@click.option("--n-grid", callback=_ints, required=True)
@click.option("--replicas", type=int, help="Graphs per size (default 20)")
@run_options()
def expander_command(seed, output, fmt, workers, **fields):
    """Empirical probability that PA graphs fail to expand"""
    _execute(
        Subcommand.EXPANDER, fmt, seed=seed, output=output, workers=workers,
        **fields,
    )


@cli.command("scores")
@model_options
@click.option("--pi", type=float, help="Score retention (default pi_c)")
@click.option("--b", type=float, help="Also run the b-truncated martingale")
@click.option("--pi-martingale", type=float, help="Martingale retention")
@click.option("--generations", type=int, default=10, show_default=True)
@click.option("--replicas", type=int, default=1000, show_default=True)
@run_options()
def scores_command(seed, output, fmt, workers, **fields):
    """Score super-martingale and b-truncated martingale trajectories"""
    _execute(
        Subcommand.SCORES, fmt, seed=seed, output=output, workers=workers,
        **fields,
    )


if __name__ == "__main__":
    cli()
