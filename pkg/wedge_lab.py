# wedge_lab.py
import functools
import json
import logging
import sys

import click
from dotenv import load_dotenv

from config.settings import Settings, load_config, parse_grid
from services.errors import ShockLabError
from services.experiments import ExperimentRunner
from utils.helpers import get_logger, to_jsonable

# Load environment variables
load_dotenv()


def common_options(func):
    @click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None,
                  help="TOML experiment configuration.")
    @click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None, help="Output directory.")
    @click.option("--grid", default=None, help="Grid as NSxNT or NSxNTxNZ.")
    @click.option("--radius", type=float, default=None, help="Truncation radius R (> 4).")
    @click.option("--seed", type=int, default=None, help="Seed for randomized checks.")
    @click.option("--quiet", is_flag=True, help="Only warnings and errors; no progress bars.")
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        return func(*args, **kwargs)

    return wrapper


def _runner(mode, config_path, out_dir, grid, radius, seed, quiet) -> ExperimentRunner:
    settings = Settings()
    level = logging.WARNING if quiet else settings.log_level
    for name in ("services", "wedge_lab", "config"):
        get_logger(name, level)
    overrides = {
        "mode": mode,
        "seed": seed,
        "solver.grid": parse_grid(grid) if grid else None,
        "solver.radius": radius,
    }
    config = load_config(config_path, overrides)
    return ExperimentRunner(config, settings, out_dir=out_dir, progress=settings.progress and not quiet)


def _execute(mode, action, **options):
    logger = get_logger("wedge_lab")
    try:
        runner = _runner(mode, **options)
        result = action(runner)
    except ShockLabError as e:
        logger.error(f"{type(e).__name__}: {e}")
        sys.exit(e.exit_code)
    click.echo(json.dumps({"out": str(runner.out_dir), "config_hash": runner.hash,
                           "result": to_jsonable(result)}, indent=2))
    return result


@click.group()
def cli():
    """Attached weak transonic shocks past three-dimensional wedges: numerical laboratory."""


@cli.command()
@common_options
def polar(**options):
    """Critical angles and the shock polar curve."""
    _execute("polar", lambda r: r.run_polar(), **options)


@cli.command()
@common_options
def certify(**options):
    """Stability certificate of the background shock."""
    _execute("certify", lambda r: r.run_certify(), **options)


@cli.command("solve-linear")
@common_options
def solve_linear(**options):
    """Solve the linearized mixed boundary value problem once."""
    _execute("solve-linear", lambda r: r.run_solve_linear(), **options)


@cli.command()
@common_options
def run(**options):
    """Full pipeline: polar, certificate, fixed-point iteration, residuals."""
    _execute("run", lambda r: r.run_iteration(), **options)


@cli.command()
@common_options
@click.option("--jobs", type=int, default=None, help="Parallel scenarios (defaults to WEDGE_LAB_N_JOBS).")
def sweep(jobs, **options):
    """Linear-response sweep over perturbation amplitudes."""
    _execute("sweep", lambda r: r.run_sweep(jobs).to_dict(orient="records"), **options)


@cli.command()
@common_options
def truncation(**options):
    """Compare linear solves at R and 2R to check the outer cut."""
    _execute("truncation", lambda r: r.run_truncation(), **options)


@cli.command()
@common_options
def validate(**options):
    """Dry-run precondition checks; no solves."""
    seed = options.get("seed")
    report = _execute("run", lambda r: r.validate(seed), **options)
    if not report["ok"]:
        sys.exit(1)


if __name__ == "__main__":
    cli()
