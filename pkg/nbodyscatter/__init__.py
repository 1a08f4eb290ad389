import logging
import os

import click
from dotenv import load_dotenv

load_dotenv()

LOG_LEVEL_ENV = "NBODYSCATTER_LOG_LEVEL"
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

logger = logging.getLogger(__name__)


def create_cli():
    @click.group()
    @click.option("--log-level", default=lambda: os.environ.get(LOG_LEVEL_ENV, "INFO"),
                  type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR"], case_sensitive=False),
                  show_default=f"${LOG_LEVEL_ENV} or INFO", help="Root logger level.")
    def cli(log_level):
        """Numerical n-body scattering: free regions, asymptotic data and Moller transforms."""
        logging.basicConfig(level=log_level.upper(), format=LOG_FORMAT)

    # Import and register subcommands
    from .commands.classify import classify_command
    from .commands.scatter import scatter_command
    from .commands.simulate import simulate_command
    from .commands.sweep import sweep_command
    from .commands.verify import verify_command
    cli.add_command(simulate_command)
    cli.add_command(classify_command)
    cli.add_command(scatter_command)
    cli.add_command(sweep_command)
    cli.add_command(verify_command)

    return cli
