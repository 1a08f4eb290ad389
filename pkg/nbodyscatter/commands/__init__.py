"""
Shared plumbing for the CLI subcommands: common options, config loading,
the error-to-exit-code boundary and the item fan-out.
"""
import functools
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import click
from tqdm import tqdm

from ..config import apply_overrides, config_hash, load_config, parse_config
from ..errors import ConfigurationError, DomainError, NBodyScatterError
from ..services.free_region import sample_in_region
from ..utils.results import write_timing
from ..utils.seeding import task_rng

logger = logging.getLogger(__name__)

EXIT_CONFIGURATION = 1
EXIT_NUMERICAL = 2


def experiment_options(func):
    """--config, --out, --seed, --threads, --horizon and --quiet."""
    options = [
        click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
                     help="TOML experiment file."),
        click.option("--out", type=click.Path(file_okay=False), default=None, help="Output directory."),
        click.option("--seed", type=click.IntRange(0, 2 ** 64 - 1), default=None, help="Sampling seed."),
        click.option("--threads", type=click.IntRange(min=1), default=None, help="Worker processes."),
        click.option("--horizon", type=click.FloatRange(min=0.0, min_open=True), default=None,
                     help="Last dyadic checkpoint time."),
        click.option("--quiet", is_flag=True, default=False, help="Disable progress bars."),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def guarded(func):
    """Turn package errors raised by a command into exit codes 1 and 2."""
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except (ConfigurationError, DomainError) as exc:
            logger.error(f"Configuration error: {exc}", exc_info=True)
            click.echo(f"Error: {exc}", err=True)
            raise click.exceptions.Exit(EXIT_CONFIGURATION)
        except NBodyScatterError as exc:
            logger.error(f"Numerical failure: {type(exc).__name__}: {exc}", exc_info=True)
            click.echo(f"Error: {type(exc).__name__}: {exc}", err=True)
            raise click.exceptions.Exit(EXIT_NUMERICAL)
    return wrapper


def load_experiment(scenario, config_path=None, out=None, seed=None, horizon=None, threads=None):
    """Validated ExperimentConfig for a subcommand, with overrides applied."""
    if config_path is None:
        if scenario != "verify":
            raise ConfigurationError(f"{scenario}: --config is required")
        config = parse_config({"scenario": "verify"})
    else:
        config = load_config(config_path)
        if config.scenario != scenario:
            logger.info(f"Config declares scenario {config.scenario!r}; running {scenario!r}")
    return apply_overrides(config, scenario=scenario, seed=seed, horizon=horizon, out=out, threads=threads)


def run_scenario(scenario, runner, config_path=None, out=None, seed=None, threads=None, horizon=None, quiet=False):
    """
    Load the config, run one scenario and record its wall-clock time.

    Args:
        scenario: subcommand name
        runner: callable (config, progress) -> ResultRecord
        remaining arguments: the shared CLI options

    Returns:
        (config, ResultRecord)
    """
    config = load_experiment(scenario, config_path, out, seed, horizon, threads)
    directory = Path(config.output.directory)
    logger.info(f"Running {scenario} (config {config_hash(config)[:12]}) into {directory}")
    start = time.perf_counter()
    record = runner(config, progress=not quiet)
    elapsed = time.perf_counter() - start
    write_timing(directory, scenario, elapsed)
    logger.info(f"{scenario} finished in {elapsed:.2f}s")
    return config, record


def map_items(worker, config, items, progress=True, desc="items", context=None):
    """
    Apply worker(config, context, index, item) to every item.

    With threads > 1 the items go to a process pool; either way the results
    come back as (index, result) pairs sorted by index.
    """
    items = list(items)
    if config.threads > 1 and len(items) > 1:
        logger.info(f"Fanning {len(items)} {desc} out to {config.threads} processes")
        with ProcessPoolExecutor(max_workers=config.threads) as pool:
            futures = [pool.submit(worker, config, context, index, item) for index, item in enumerate(items)]
            results = [(index, future.result()) for index, future in
                       enumerate(tqdm(futures, desc=desc, disable=not progress))]
    else:
        results = [(index, worker(config, context, index, item)) for index, item in
                   enumerate(tqdm(items, desc=desc, disable=not progress))]
    return sorted(results, key=lambda pair: pair[0])


def wants_csv(config):
    return config.output.format in ("csv", "both")


def wants_json(config):
    return config.output.format in ("json", "both")


def initial_states(config, spec, params):
    """Configured states followed by config.sampler.count states drawn inside F+_loc."""
    states = [state.to_state() for state in config.states]
    for state in states:
        state.check_dimension(spec)
    sampler = config.sampler
    for index in range(sampler.count):
        rng = task_rng(config.seed, index)
        states.append(sample_in_region(spec, params, rng, sampler.velocity_shell, sampler.perturbation))
    if not states:
        raise ConfigurationError("states: no initial states given and sampler.count is 0")
    logger.info(f"{len(config.states)} configured and {sampler.count} sampled initial states")
    return states
