#!/usr/bin/env python3
"""
IAEI - Main Entry Point

Command-line front end for imputation-adjusted invariance estimation:
simulation studies, fits on CSV data, synthetic data generation and the
monthly cross-validation harness.
"""

import functools
import logging
import sys
from dataclasses import replace

import click
import numpy as np

from src import ImputationModel
from src.config import ConfigManager
from src.crossval import monthly_cv
from src.data_io import (
    center_dataset,
    dataset_csv_text,
    load_csv,
    read_table,
    render_report,
    write_dataset_csv,
    write_report,
)
from src.dataset import MultiEnvDataset
from src.errors import ParseError, SolverError, ValidationError
from src.estimators import Method, MethodFitter
from src.imputation import build_strategy, impute_dataset, load_model, save_model, train
from src.objectives import PenaltyVariant
from src.sem import SemModel, apply_mcar, generate_dataset
from src.simulation import STREAM_DATA, STREAM_MASK, run_studies, study_grid
from src.utils import derive_rng, setup_logging
import settings

# The imputers are automatically loaded when importing from src
IMPUTERS = ImputationModel.get_registered_families()

logger = logging.getLogger(__name__)


def exit_codes(command):
    """Map library errors to the documented exit codes."""

    @functools.wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except ParseError as e:
            click.echo(f"Parse error: {e}", err=True)
            sys.exit(settings.EXIT_PARSE)
        except ValueError as e:
            click.echo(f"Validation error: {e}", err=True)
            sys.exit(settings.EXIT_VALIDATION)
        except (SolverError, OSError, RuntimeError) as e:
            click.echo(f"Error: {e}", err=True)
            sys.exit(settings.EXIT_RUNTIME)

    return wrapper


def emit(ctx: click.Context, report) -> None:
    """Write a report to --out, or to stdout when no path was given."""
    out, fmt = ctx.obj["out"], ctx.obj["format"]
    if out:
        write_report(report, out, fmt)
        click.echo(f"Report written to {out}", err=True)
    else:
        click.echo(render_report(report, fmt), nl=False)


def _imputer_spec(ctx: click.Context, **overrides):
    spec = ctx.obj["config"].imputer_spec(**overrides)
    if ctx.obj["seed"] is not None:
        spec = replace(spec, seed=ctx.obj["seed"])
    return spec


@click.group(invoke_without_command=True)
@click.option(
    "--seed",
    type=int,
    default=None,
    help="Master seed; overrides master_seed / seed from the config file.",
)
@click.option(
    "--threads",
    type=int,
    default=settings.DEFAULT_THREADS,
    show_default=True,
    help="Worker threads for replications and CV folds. Results do not depend on it.",
)
@click.option(
    "--config",
    "config_file",
    type=click.Path(),
    default=None,
    help="Study configuration file ([simulation], [imputer], [search], [cv] sections).",
)
@click.option(
    "--out",
    "-o",
    type=click.Path(),
    default=None,
    help="Path of the report or dataset to write. Defaults to stdout.",
)
@click.option(
    "--format",
    "fmt",
    type=click.Choice(settings.REPORT_FORMATS, case_sensitive=False),
    default="json",
    show_default=True,
    help="Report format.",
)
@click.option(
    "--log-level",
    type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR"], case_sensitive=False),
    default=settings.LOG_LEVEL,
    show_default=True,
    help="Set logging level for debugging and detailed output.",
)
@click.option(
    "--verbose",
    "-v",
    is_flag=True,
    help="Enable verbose output (equivalent to --log-level INFO).",
)
@click.option(
    "--list-imputers",
    is_flag=True,
    help="List all available imputer families and exit.",
)
@click.pass_context
def main(ctx, seed, threads, config_file, out, fmt, log_level, verbose, list_imputers):
    """Imputation-adjusted invariance estimation across environments.

    \b
    Examples:
      # Simulation study from a config file, 4 threads
      iaei --config study.ini --threads 4 --out report.json simulate

      # Quick Model 1 study overriding the config
      iaei --seed 7 simulate --model model1 --n-per-env 250 --replications 10

      # Fit every method on a CSV with a boosted-tree imputer
      iaei estimate data.csv --imputer boosted_trees --gamma 1 --gamma 10

      # Synthetic Model 2 data with 70% missing outcomes
      iaei --seed 3 --out model2.csv dgp --model model2 --missing-ratio 0.7

      # Monthly cross-validation on hourly data
      iaei --format csv cv hourly.csv --history year1.csv --env-column workingday
    """
    setup_logging(level=log_level, verbose=verbose)

    if threads < 1:
        click.echo(f"Error: --threads must be >= 1, got {threads}", err=True)
        sys.exit(settings.EXIT_VALIDATION)

    if list_imputers:
        ImputationModel.list_families()
        sys.exit(settings.EXIT_OK)

    if ctx.invoked_subcommand is None:
        click.echo(ctx.get_help())
        sys.exit(settings.EXIT_OK)

    try:
        config = ConfigManager(config_file)
    except ParseError as e:
        click.echo(f"Parse error: {e}", err=True)
        sys.exit(settings.EXIT_PARSE)
    except OSError as e:
        click.echo(f"Error: {e}", err=True)
        sys.exit(settings.EXIT_RUNTIME)

    ctx.obj = {
        "seed": seed,
        "threads": threads,
        "config": config,
        "out": out,
        "format": fmt.lower(),
    }


@main.command()
@click.option(
    "--model",
    "models",
    multiple=True,
    type=click.Choice([m.value for m in SemModel]),
    help="Structural equation model(s). Can be specified multiple times.",
)
@click.option("--n-per-env", "sizes", multiple=True, type=int, help="Sample size(s) per environment.")
@click.option("--missing-ratio", "ratios", multiple=True, type=float, help="MCAR ratio(s).")
@click.option("--gamma", "gammas", multiple=True, type=float, help="Penalty weight(s).")
@click.option(
    "--method",
    "methods",
    multiple=True,
    type=click.Choice(settings.METHODS),
    help="Estimation method(s). Defaults to all.",
)
@click.option(
    "--variant",
    "variants",
    multiple=True,
    type=click.Choice(settings.PENALTY_VARIANTS),
    help="Penalty variant(s). Defaults to both.",
)
@click.option("--replications", type=int, default=None, help="Replications per scenario.")
@click.option(
    "--first-replication",
    type=int,
    default=None,
    help="Index of the first replication (for split studies that are merged later).",
)
@click.option(
    "--imputer",
    type=click.Choice(list(IMPUTERS) + ["oracle"]),
    default=None,
    help="Imputer family.",
)
@click.option(
    "--strategy",
    type=click.Choice(settings.IMPUTATION_STRATEGIES),
    default=None,
    help="Imputation strategy.",
)
@click.option(
    "--training",
    type=click.Choice(["fresh", "labeled"]),
    default=None,
    help="Imputer training data: a fresh sample or the labeled rows.",
)
@click.pass_context
@exit_codes
def simulate(
    ctx, models, sizes, ratios, gammas, methods, variants, replications,
    first_replication, imputer, strategy, training,
):
    """Run a simulation study and report FDR and l2-error per grid cell."""
    config = ctx.obj["config"]
    specs = config.simulation_specs(master_seed=ctx.obj["seed"])
    base = specs[0]
    imputer_spec = config.imputer_spec(family=imputer, strategy=strategy, training=training)
    overrides = {
        "imputer": imputer_spec,
        "gammas": gammas or None,
        "methods": methods or None,
        "variants": variants or None,
        "replications": replications,
        "first_replication": first_replication,
    }
    base = replace(base, **{k: v for k, v in overrides.items() if v is not None})
    if models or sizes or ratios:
        specs = study_grid(
            base,
            models or sorted({s.model for s in specs}, key=lambda m: m.value),
            sizes or sorted({s.n_per_env for s in specs}),
            ratios or sorted({s.missing_ratio for s in specs}),
        )
    else:
        specs = [
            replace(base, model=s.model, n_per_env=s.n_per_env, missing_ratio=s.missing_ratio)
            for s in specs
        ]
    report = run_studies(specs, threads=ctx.obj["threads"])
    emit(ctx, report)


def _imputations(data: MultiEnvDataset, history, imputer_model, spec):
    """Per-environment predictions for the methods that need them."""
    if imputer_model:
        model = load_model(imputer_model)
        models = {env.env_id: model for env in data.environments}
    else:
        source = load_csv(history) if history else data
        sources = {
            env.env_id: (env.labeled_covariates, env.labels) for env in source.environments
        }
        models = build_strategy(spec, sources)
    predictions, diagnostics = impute_dataset(models, data)
    for env_id, eta in diagnostics.eta_hat.items():
        logger.info(f"Environment '{env_id}': eta_hat={eta:.4g}")
    return predictions


@main.command()
@click.argument("data_csv", type=click.Path(exists=True, dir_okay=False))
@click.option(
    "--method",
    "methods",
    multiple=True,
    type=click.Choice(settings.METHODS),
    help="Estimation method(s). Defaults to all; oracle needs a fully labeled file.",
)
@click.option("--gamma", "gammas", multiple=True, type=float, help="Penalty weight(s).")
@click.option(
    "--variant",
    "variants",
    multiple=True,
    type=click.Choice(settings.PENALTY_VARIANTS),
    help="Penalty variant(s).",
)
@click.option(
    "--history",
    type=click.Path(exists=True, dir_okay=False),
    default=None,
    help="CSV the imputers are trained on. Defaults to the labeled rows of DATA_CSV.",
)
@click.option(
    "--imputer-model",
    type=click.Path(exists=True, dir_okay=False),
    default=None,
    help="Saved imputer (see train-imputer) used for every environment.",
)
@click.option(
    "--imputer",
    type=click.Choice(list(IMPUTERS)),
    default=None,
    help="Imputer family.",
)
@click.option(
    "--strategy",
    type=click.Choice(settings.IMPUTATION_STRATEGIES),
    default=None,
    help="Imputation strategy.",
)
@click.option("--env-column", default=settings.CSV_ENV_COLUMN, show_default=True)
@click.option("--center", is_flag=True, help="Center covariates within each environment.")
@click.pass_context
@exit_codes
def estimate(
    ctx, data_csv, methods, gammas, variants, history, imputer_model, imputer,
    strategy, env_column, center,
):
    """Fit estimation methods on a multi-environment CSV file."""
    config = ctx.obj["config"]
    data = load_csv(data_csv, env_column=env_column)
    if center:
        data = center_dataset(data)
    methods = [Method(m) for m in methods] or [
        m for m in Method if m is not Method.ORACLE or all(env.fully_labeled for env in data)
    ]
    base = config.search_config()
    gammas = gammas or (base.gamma,)
    variants = [PenaltyVariant(v) for v in variants] or [base.variant]

    predictions = None
    if any(m.needs_imputations for m in methods):
        spec = _imputer_spec(ctx, family=imputer, strategy=strategy)
        predictions = _imputations(data, history, imputer_model, spec)

    results = []
    for method in methods:
        fitter = MethodFitter(method, data, predictions)
        results.extend(fitter.fit_grid(gammas, variants, base))
    for result in results:
        logger.info(
            f"{result.method} ({result.penalty_variant}, gamma={result.gamma}): {result.support}"
        )
    emit(ctx, results)


@main.command("train-imputer")
@click.argument("data_csv", type=click.Path(exists=True, dir_okay=False))
@click.argument("model_path", type=click.Path(dir_okay=False))
@click.option(
    "--imputer",
    type=click.Choice(list(IMPUTERS)),
    default=None,
    help="Imputer family.",
)
@click.option("--env-column", default=settings.CSV_ENV_COLUMN, show_default=True)
@click.pass_context
@exit_codes
def train_imputer(ctx, data_csv, model_path, imputer, env_column):
    """Train one pooled imputer on the labeled rows of DATA_CSV and save it."""
    data = load_csv(data_csv, env_column=env_column)
    spec = _imputer_spec(ctx, family=imputer)
    x = np.vstack([env.labeled_covariates for env in data.environments])
    y = np.concatenate([env.labels for env in data.environments])
    model = train(spec.family, x, y, spec.hyperparams, seed=spec.seed)
    save_model(model, model_path)
    click.echo(f"Saved {spec.family} imputer trained on {y.shape[0]} rows to {model_path}", err=True)


@main.command()
@click.option(
    "--model",
    type=click.Choice([m.value for m in SemModel]),
    default=SemModel.MODEL0.value,
    show_default=True,
    help="Structural equation model.",
)
@click.option(
    "--n-per-env",
    type=int,
    default=settings.DEFAULT_SAMPLE_SIZES[0],
    show_default=True,
    help="Rows per environment.",
)
@click.option(
    "--missing-ratio",
    type=float,
    default=0.0,
    show_default=True,
    help="Fraction of outcomes hidden completely at random in each environment.",
)
@click.option("--replication", type=int, default=0, show_default=True)
@click.pass_context
@exit_codes
def dgp(ctx, model, n_per_env, missing_ratio, replication):
    """Emit a synthetic two-environment CSV drawn from a simulation model."""
    seed = ctx.obj["seed"]
    if seed is None:
        seed = settings.DEFAULT_MASTER_SEED
    data = generate_dataset(model, n_per_env, seed, replication, STREAM_DATA)
    environments = [
        apply_mcar(env, missing_ratio, derive_rng(seed, replication, STREAM_MASK, position))
        for position, env in enumerate(data.environments)
    ]
    data = data.replace_environments(environments)
    logger.info(f"Generated {model}: {n_per_env} rows per environment, seed {seed}")
    if ctx.obj["out"]:
        write_dataset_csv(data, ctx.obj["out"])
    else:
        click.echo(dataset_csv_text(data), nl=False)


@main.command()
@click.argument("data_csv", type=click.Path(exists=True, dir_okay=False))
@click.option(
    "--history",
    type=click.Path(exists=True, dir_okay=False),
    required=True,
    help="CSV (same x columns, env column) the imputer is trained on.",
)
@click.option("--env-column", default=None, help="Column that splits each fold into environments (required here or in [cv]).")
@click.option("--date-column", default=None, help="Timestamp column defining months and days.")
@click.option("--mask-rate", type=float, default=None, help="Fraction of outcomes hidden.")
@click.option("--gamma", "gammas", multiple=True, type=float, help="Penalty weight grid.")
@click.option(
    "--method",
    "methods",
    multiple=True,
    type=click.Choice(settings.METHODS),
    help="Estimation method(s).",
)
@click.option(
    "--variant",
    "variants",
    multiple=True,
    type=click.Choice(settings.PENALTY_VARIANTS),
    help="Penalty variant(s).",
)
@click.pass_context
@exit_codes
def cv(ctx, data_csv, history, env_column, date_column, mask_rate, gammas, methods, variants):
    """Monthly cross-validation with per-day gamma selection."""
    config = ctx.obj["config"]
    if env_column is None and "env_column" not in config.section("cv"):
        raise ValidationError("cv needs --env-column or env_column in the [cv] config section")
    cv_config = config.cv_config(
        env_column=env_column,
        date_column=date_column,
        mask_rate=mask_rate,
        gammas=gammas or None,
        methods=methods or None,
        variants=variants or None,
        seed=ctx.obj["seed"],
    )
    cv_config = replace(cv_config, imputer=_imputer_spec(ctx))
    frame = read_table(data_csv)
    history_data = load_csv(history, env_column=cv_config.env_column)
    result = monthly_cv(frame, history_data, cv_config, threads=ctx.obj["threads"])
    emit(ctx, result)


if __name__ == "__main__":
    main()
