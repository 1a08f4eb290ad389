import logging
from pathlib import Path

import click
import numpy as np

from ..config import config_hash
from ..services.flows import nbody_flow
from ..services.free_region import default_params, membership
from ..services.nbody_core import pair_distances
from ..utils.results import build_record, write_record, write_trajectory_csv
from . import experiment_options, guarded, initial_states, map_items, run_scenario, wants_csv, wants_json

logger = logging.getLogger(__name__)


def trajectory_filename(index):
    return f"trajectory_{index:03d}.csv"


def simulate_state(config, params, index, state):
    """Integrate one state over [0, run.t_end]; writes its CSV and returns the summary item."""
    spec = config.system.build_spec()
    cfg = config.integrator.to_config()
    times = np.linspace(0.0, config.run.t_end, config.run.samples)
    traj = nbody_flow(spec, state, (0.0, config.run.t_end), cfg, t_eval=times)
    if not traj.termination.completed:
        logger.warning(f"State {index}: integration stopped early ({traj.termination.kind.value} "
                       f"at t={traj.termination.time})")

    item = {
        "samples": len(traj.times),
        "t_final": traj.times[-1],
        "termination": traj.termination.kind.value,
        "energy_drift": traj.energy_drift,
        "q_min": pair_distances(spec, traj.q).min(),
        "inside_at_start": membership(spec, params, state).inside,
        "inside_at_end": membership(spec, params, traj.final_state).inside,
    }
    if wants_csv(config):
        path = Path(config.output.directory) / trajectory_filename(index)
        write_trajectory_csv(path, spec, traj, params)
        item["csv"] = path.name
    return item


def run_simulate(config, progress=True):
    """
    Trajectory checkpoints for every configured and sampled state.

    Returns:
        ResultRecord
    """
    spec = config.system.build_spec()
    params = default_params(spec)
    states = initial_states(config, spec, params)
    logger.info(f"Integrating {spec.n}-body system over [0, {config.run.t_end}] for {len(states)} states")
    results = map_items(simulate_state, config, states, progress, desc="simulate", context=params)
    record = build_record(config_hash(config), "simulate", config.seed, results)
    if wants_json(config):
        write_record(record, config.output.directory)
    return record


@click.command("simulate")
@experiment_options
@guarded
def simulate_command(**options):
    """Integrate states and write trajectory CSV files."""
    _, record = run_scenario("simulate", run_simulate, **options)
    click.echo(f"simulate: {len(record.items)} trajectories")
