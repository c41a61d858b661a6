"""
Command-line entry point: python -m nullctl.main <command> [options]
"""

import sys

import click

from . import config
from .runner import PIPELINES, run
from .utils import setup_logging


def _execute(ctx: click.Context, command: str, config_path, overrides, seed, output_dir):
    options = ctx.obj or {}
    setup_logging(options.get('log_level', config.LOG_LEVEL), options.get('log_file') or None)
    code, _ = run(command, config_path, overrides, seed, output_dir)
    sys.exit(code)


def _command(name: str, help_text: str):
    @click.command(name=name, help=help_text)
    @click.option('--config', 'config_path', type=click.Path(dir_okay=False),
                  help='JSON config file')
    @click.option('--set', 'overrides', multiple=True, metavar='KEY=VALUE',
                  help='Override a config key (value parsed as JSON when possible)')
    @click.option('--seed', type=int, default=None, help='Seed of the run generator')
    @click.option('--output-dir', type=click.Path(file_okay=False), envvar='NULLCTL_OUTPUT_DIR',
                  default=None, help='Directory for CSV tables and the manifest')
    @click.pass_context
    def command(ctx, config_path, overrides, seed, output_dir):
        _execute(ctx, name, config_path, overrides, seed, output_dir)

    return command


@click.group()
@click.option('--log-level', default=config.LOG_LEVEL, show_default=True,
              type=click.Choice(['DEBUG', 'INFO', 'WARNING', 'ERROR'], case_sensitive=False))
@click.option('--log-file', default=config.LOG_FILE, help='Also log to this file')
@click.pass_context
def cli(ctx, log_level, log_file):
    """Null controllability experiments for the coupled heat / degenerate system"""
    ctx.obj = {'log_level': log_level.upper(), 'log_file': log_file}


COMMAND_HELP = {
    'spectrum': 'Eigenvalues of one operator with the growth fit',
    'spectral-constant': 'Best spectral-inequality constants and their growth exponent',
    'hum': 'Partial control of the first k modes on one window',
    'lr': 'Full switching-control synthesis with bound tracking',
    'observability': 'Observability constants, telescoping diagnostics and interpolation fit',
    'negative': 'Show a component at T that no control can reach',
    'schedule': 'Plan the active/passive stage schedule only',
}

for _name in PIPELINES:
    cli.add_command(_command(_name, COMMAND_HELP[_name]))


if __name__ == '__main__':
    cli()
