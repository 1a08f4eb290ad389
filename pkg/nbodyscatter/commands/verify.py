import logging

import click

from ..config import config_hash, parse_config
from ..errors import ConfigurationError
from ..services.acceptance import ACCEPTANCE_CHECKS, run_acceptance
from ..utils.results import build_record, write_record
from . import experiment_options, guarded, run_scenario

logger = logging.getLogger(__name__)


def run_verify(config, progress=True):
    """
    Run the selected acceptance checks and write verify.json.

    Failing checks are reported, never raised.

    Returns:
        ResultRecord with all_passed set
    """
    names = config.verify.checks or None
    try:
        outcomes = run_acceptance(names, quick=config.verify.quick, seed=config.seed, progress=progress)
    except KeyError as exc:
        raise ConfigurationError(f"verify.checks: {exc.args[0]}") from exc
    items = [
        (index, {"name": o.name, "passed": o.passed, "measurements": o.measurements, "thresholds": o.thresholds,
                 "detail": o.detail})
        for index, o in enumerate(outcomes)
    ]
    all_passed = all(o.passed for o in outcomes)
    record = build_record(config_hash(config), "verify", config.seed, items, all_passed=all_passed)
    write_record(record, config.output.directory, name="verify.json")
    return record


def _format_value(value):
    if value is None:
        return "-"
    if isinstance(value, float):
        return f"{value:.3e}"
    return str(value)


def format_table(record):
    """Human-readable summary: one line per check plus its measurements."""
    width = max([len(item["name"]) for item in record.items] + [5])
    lines = [f"{'check'.ljust(width)}  result", f"{'-' * width}  ------"]
    for item in record.items:
        lines.append(f"{item['name'].ljust(width)}  {'PASS' if item['passed'] else 'FAIL'}")
        thresholds = item["thresholds"]
        for key, value in item["measurements"].items():
            limit = f"  (threshold {_format_value(thresholds[key])})" if key in thresholds else ""
            lines.append(f"{''.ljust(width)}    {key} = {_format_value(value)}{limit}")
        if item["detail"]:
            lines.append(f"{''.ljust(width)}    {item['detail']}")
    lines.append(f"all passed: {record.all_passed}")
    return "\n".join(lines)


@click.command("verify")
@experiment_options
@click.option("--check", "checks", multiple=True, metavar="NAME",
              help=f"Run only the named check; repeatable. One of: {', '.join(ACCEPTANCE_CHECKS)}.")
@click.option("--quick", is_flag=True, default=False, help="Reduced sample counts.")
@guarded
def verify_command(checks, quick, **options):
    """Run the acceptance suite."""
    def runner(config, progress):
        data = config.model_dump()
        if checks:
            data["verify"]["checks"] = list(checks)
        if quick:
            data["verify"]["quick"] = True
        return run_verify(parse_config(data), progress)

    _, record = run_scenario("verify", runner, **options)
    click.echo(format_table(record))
