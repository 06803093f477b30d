"""
Orchestration of one experiment: validate, dispatch, emit.

``run`` never raises for bad input or failed numerics; it reports them in
the returned ``RunResult`` with exit status 2 (invalid spec or parameters)
or 1 (runtime failure).
"""

from dataclasses import dataclass, field
from typing import Any, Callable, Optional

from src.graphs.expander import EXPANSION_COLUMNS, expansion_experiment
from src.graphs.pa_models import (
    PAConfig,
    degree_histogram,
    generate,
    write_edge_list,
)
from src.graphs.percolation import SWEEP_COLUMNS, scaling_study, sweep
from src.harness.spec import ExperimentSpec, Subcommand, validate
from src.ppt.ppt_sim import (
    TRAJECTORY_COLUMNS,
    PptParams,
    choose_elbow_threshold,
    elbow_bp_mean,
    elbow_offspring_sample,
    martingale_trajectory,
    score_trajectory,
    simulate_elbow_bp,
    survival_curve,
)
from src.ppt.spine import (
    SPINE_COLUMNS,
    empirical_vs_analytic_report,
    simulate_spine,
)
from src.shared.errors import DomainError
from src.shared.logging_config import (
    bind_run_context,
    clear_run_context,
    get_logger,
)
from src.shared.output import (
    build_provenance,
    emit,
    resolve_output_path,
)
from src.shared.rng import ELBOW_STREAM, make_rng
from src.spectral.constants import (
    Label,
    minimal_truncation,
    pi_c,
    spectral_norm,
    spectral_report,
)
from src.spectral.power_iteration import refinement_study
from src.spectral.quadrature import eigen_residual

logger = get_logger(__name__)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_INVALID = 2

DEFAULT_SWEEP_REPLICAS = 10
DEFAULT_EXPANDER_REPLICAS = 20
# conditional one-step martingale means within this many standard errors
STEP_TOLERANCE_SE = 4.0

SURVIVAL_COLUMNS = [
    "pi",
    "generations",
    "population_cap",
    "replicas",
    "survivals",
    "survival_frac",
    "ci_half_width",
    "m",
    "delta",
    "b",
    "root_label",
]
ELBOW_COLUMNS = [
    "pi",
    "h_cut",
    "m",
    "delta",
    "mean_formula",
    "mean_empirical",
    "mean_se",
    "generations",
    "population_cap",
    "replicas",
    "survivals",
    "survival_frac",
    "ci_half_width",
]
SCALING_COLUMNS = ["n", "pi", "replicas", "c1_mean", "c1_sd", "c1_se"]
CHECK_COLUMNS = ["name", "analytic", "empirical", "tolerance", "passed"]
RESIDUAL_COLUMNS = [
    "operator",
    "age",
    "label",
    "applied",
    "expected",
    "rel_residual",
]
GENERATE_COLUMNS = [
    "n",
    "m",
    "delta",
    "variant",
    "seed",
    "edges",
    "self_loops",
    "max_degree",
    "self_loop_mass",
    "degree_histogram",
]

Table = tuple[list[dict[str, Any]], Optional[list[str]]]


@dataclass
class RunResult:
    exit_code: int
    records: list[dict[str, Any]] = field(default_factory=list)
    columns: Optional[list[str]] = None
    text: str = ""
    path: Optional[str] = None
    errors: list[str] = field(default_factory=list)


def _pa_config(spec: ExperimentSpec, n: Optional[int] = None) -> PAConfig:
    return PAConfig(
        variant=spec.variant,
        m=spec.m,
        delta=spec.delta,
        n=spec.n if n is None else n,
        a1=spec.a1,
        a2=spec.a2,
        seed=spec.seed,
    )


def _run_generate(spec: ExperimentSpec) -> Table:
    graph = generate(_pa_config(spec))
    if spec.edges_path:
        write_edge_list(graph, resolve_output_path(spec.edges_path))
    record = {
        "n": graph.n_vertices,
        "m": spec.m,
        "delta": spec.delta,
        "variant": spec.variant.lower(),
        "seed": spec.seed,
        "edges": graph.n_edges,
        "self_loops": graph.self_loop_count,
        "max_degree": int(graph.degrees.max()),
        "self_loop_mass": graph.self_loop_mass,
        "degree_histogram": degree_histogram(graph),
    }
    return [record], GENERATE_COLUMNS


def _run_sweep(spec: ExperimentSpec) -> Table:
    replicas = (
        DEFAULT_SWEEP_REPLICAS if spec.replicas is None else spec.replicas
    )
    config = _pa_config(spec)
    if spec.n_grid:
        rows = []
        for pi in spec.pis:
            rows += scaling_study(
                config, pi, spec.n_grid, replicas, spec.seed, spec.workers
            )
        return rows, SCALING_COLUMNS
    table = sweep(config, spec.pis, replicas, spec.seed, spec.workers)
    return table.records(), SWEEP_COLUMNS


def _run_survival(spec: ExperimentSpec) -> Table:
    params = PptParams(
        m=spec.m,
        delta=spec.delta,
        pi=spec.pis[0],
        b=spec.b,
        root_label=Label(spec.root_label),
    )
    run = survival_curve(
        params,
        spec.pis,
        spec.generations,
        spec.cap,
        spec.replicas,
        spec.seed,
        spec.workers,
    )
    violations = run.monotonicity_violations()
    if violations:
        logger.error("survival_monotonicity_violated", violations=violations)
    rows = []
    for estimate in run.at():
        row = estimate.model_dump()
        row.update(
            m=spec.m, delta=spec.delta, b=spec.b, root_label=spec.root_label
        )
        rows.append(row)
    return rows, SURVIVAL_COLUMNS


def _run_elbow(spec: ExperimentSpec) -> Table:
    h_cut = spec.h_cut
    if h_cut is None:
        threshold = choose_elbow_threshold(
            spec.pi,
            spec.m,
            spec.delta,
            continuous_at_zero=spec.continuous_at_zero,
        )
        if not threshold.feasible:
            raise DomainError(threshold.reason)
        h_cut = threshold.h_cut

    run = simulate_elbow_bp(
        spec.pi,
        h_cut,
        spec.m,
        spec.delta,
        spec.generations,
        spec.cap,
        spec.replicas,
        spec.seed,
        spec.workers,
    )
    estimate = run.at()[0]
    offspring = elbow_offspring_sample(
        spec.pi,
        h_cut,
        spec.m,
        spec.delta,
        estimate.replicas,
        make_rng(spec.seed, ELBOW_STREAM),
    )
    se = (
        float(offspring.std(ddof=1) / offspring.size**0.5)
        if offspring.size > 1
        else 0.0
    )
    row = estimate.model_dump()
    row.update(
        h_cut=h_cut,
        m=spec.m,
        delta=spec.delta,
        mean_formula=elbow_bp_mean(
            spec.pi, h_cut, spec.m, spec.delta, spec.continuous_at_zero
        ),
        mean_empirical=float(offspring.mean()),
        mean_se=se,
    )
    return [row], ELBOW_COLUMNS


def _run_spectral(spec: ExperimentSpec) -> Table:
    if spec.spectral_mode == "report":
        report = spectral_report(spec.m, spec.delta, spec.b)
        return [report.model_dump()], None
    if spec.spectral_mode == "residual":
        rows = []
        for adjoint in (False, True):
            report = eigen_residual(
                spec.m, spec.delta, spec.b, spec.test_ages, adjoint=adjoint
            )
            rows += [
                {"operator": report.operator, **row.model_dump()}
                for row in report.rows
            ]
        return rows, RESIDUAL_COLUMNS
    rows = refinement_study(
        spec.m,
        spec.delta,
        spec.b,
        spec.x_min,
        spec.x_max,
        spec.n_points,
        spec.boundary,
    )
    return rows, None


def _run_threshold(spec: ExperimentSpec) -> Table:
    norm = spectral_norm(spec.m, spec.delta)
    record = {
        "m": spec.m,
        "delta": spec.delta,
        "chi": (spec.m + spec.delta) / (2 * spec.m + spec.delta),
        "lambda_M": norm.lambda_M,
        "r": norm.r,
        "pi_c": pi_c(spec.m, spec.delta),
    }
    if spec.pi is not None and spec.delta > 0:
        record["pi"] = spec.pi
        record["b_min"] = (
            minimal_truncation(spec.pi, spec.m, spec.delta)
            if spec.pi > record["pi_c"]
            else None
        )
    return [record], None


def _run_spine(spec: ExperimentSpec) -> Table:
    report = empirical_vs_analytic_report(
        spec.m, spec.delta, spec.b, spec.budget, spec.seed
    )
    if not report.applicable:
        return [{"applicable": False, "reason": report.reason}], None
    if spec.trajectory_path:
        trajectory = simulate_spine(
            spec.m, spec.delta, spec.b, spec.budget, spec.seed
        )
        emit(
            trajectory.records(),
            "csv",
            spec.trajectory_path,
            columns=SPINE_COLUMNS,
            provenance=build_provenance(spec.provenance_spec()),
        )
    return report.records(), CHECK_COLUMNS


def _run_expander(spec: ExperimentSpec) -> Table:
    rows = expansion_experiment(
        _pa_config(spec, n=spec.n_grid[0]),
        spec.epsilon,
        spec.alpha_probe,
        spec.n_grid,
        DEFAULT_EXPANDER_REPLICAS if spec.replicas is None else spec.replicas,
        spec.seed,
        spec.workers,
    )
    return rows, EXPANSION_COLUMNS


def _run_scores(spec: ExperimentSpec) -> Table:
    generations = 10 if spec.generations is None else spec.generations
    replicas = 1000 if spec.replicas is None else spec.replicas
    pi = spec.pi if spec.pi is not None else pi_c(spec.m, spec.delta)
    score = score_trajectory(
        PptParams(m=spec.m, delta=spec.delta, pi=pi, root_label=Label.O),
        generations,
        replicas,
        spec.seed,
        spec.workers,
    )
    rows = score.records()
    non_increasing = score.is_non_increasing()
    for row in rows:
        row["score_non_increasing"] = non_increasing
    checks = {"score_non_increasing": non_increasing}

    if spec.b is not None:
        pi_m = spec.pi_martingale if spec.pi_martingale is not None else pi
        martingale = martingale_trajectory(
            PptParams(
                m=spec.m,
                delta=spec.delta,
                pi=pi_m,
                b=spec.b,
                root_label=Label.O,
            ),
            generations,
            replicas,
            spec.seed,
            spec.workers,
        )
        step_dev = martingale.max_deviation_se(column="step")
        for row, other in zip(rows, martingale.records()):
            for name in (
                "martingale_mean",
                "martingale_se",
                "martingale_step_mean",
                "martingale_step_se",
            ):
                row[name] = other[name]
            row["martingale_step_max_dev_se"] = step_dev
        checks["martingale_step_max_dev_se"] = step_dev
        checks["martingale_step_passed"] = step_dev <= STEP_TOLERANCE_SE

    logger.info("score_checks", **checks)
    return rows, TRAJECTORY_COLUMNS


HANDLERS: dict[Subcommand, Callable[[ExperimentSpec], Table]] = {
    Subcommand.GENERATE: _run_generate,
    Subcommand.SWEEP: _run_sweep,
    Subcommand.PPT_SURVIVAL: _run_survival,
    Subcommand.ELBOW: _run_elbow,
    Subcommand.SPECTRAL: _run_spectral,
    Subcommand.THRESHOLD: _run_threshold,
    Subcommand.SPINE: _run_spine,
    Subcommand.EXPANDER: _run_expander,
    Subcommand.SCORES: _run_scores,
}


def run(spec: ExperimentSpec) -> RunResult:
    """
    Execute one experiment and write its artifact.

    Returns:
        RunResult with exit code 0 on success, 2 when the spec or a model
        parameter is invalid, 1 when the computation or the write failed.
    """
    violations = validate(spec)
    if violations:
        logger.warning(
            "spec_invalid",
            subcommand=spec.subcommand.value,
            violations=violations,
        )
        return RunResult(exit_code=EXIT_INVALID, errors=violations)

    bind_run_context(subcommand=spec.subcommand.value, seed=spec.seed)
    try:
        records, columns = HANDLERS[spec.subcommand](spec)
        text = emit(
            records,
            spec.format,
            spec.output,
            columns=columns,
            provenance=build_provenance(spec.provenance_spec()),
        )
    except ValueError as e:
        logger.error("run_rejected", error=str(e))
        return RunResult(exit_code=EXIT_INVALID, errors=[str(e)])
    except (RuntimeError, OSError) as e:
        logger.error("run_failed", error=str(e), exc_info=True)
        return RunResult(exit_code=EXIT_RUNTIME, errors=[str(e)])
    finally:
        clear_run_context()

    logger.info(
        "run_completed",
        subcommand=spec.subcommand.value,
        records=len(records),
        output=spec.output,
    )
    path = None if spec.output is None else resolve_output_path(spec.output)
    return RunResult(
        exit_code=EXIT_OK,
        records=records,
        columns=columns,
        text=text,
        path=None if path is None else str(path),
    )
