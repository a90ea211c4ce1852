import logging

import click

from mfsde_pipeline import (
    ConfigError,
    NumericalFailure,
    ProblemDefinitionError,
    __version__,
)
from mfsde_pipeline.process import (
    DUMP_FORMATS,
    ERROR_EPOCHS,
    KERNEL_MODES,
    MODES,
    PRESET_NAMES,
    STUDIES,
    autoprocess,
    load_run_config,
)

logger = logging.getLogger(__name__)

EXIT_CONFIG_ERROR = 1
EXIT_NUMERICAL_FAILURE = 2


@click.group()
@click.version_option(__version__, prog_name="mfsde-pipeline")
def main():
    """Mean-field SDE experiments: Fokker-Planck solves, SDE ensembles, studies."""


@main.command()
@click.option(
    "--config",
    "config_path",
    type=click.Path(dir_okay=False),
    help="JSON run configuration, or the manifest.json of a previous run.",
)
@click.option("--study", type=click.Choice(STUDIES))
@click.option("--example", type=int, help="Builtin example id (1, 2 or 3).")
@click.option(
    "--density", "density_path", help="Density dump to use instead of solving."
)
@click.option("--alpha", type=float, help="Half-width of the domain.")
@click.option("--M", "M", type=int, help="Nodes per half axis.")
@click.option("--N", "N", type=int, help="Time steps of the density.")
@click.option("--ladder", help="Comma separated resolutions, e.g. 32,64,128.")
@click.option("--reference", type=int, help="Reference resolution of the study.")
@click.option("--sde-N", "sde_N", type=int, help="Time steps of the SDE.")
@click.option("--paths", type=int, help="Number of SDE paths.")
@click.option("--particles", type=int, help="Particles per trial.")
@click.option("--trials", type=int, help="Independent particle systems.")
@click.option("--particle-N", "particle_N", type=int, help="Particle time steps.")
@click.option("--seed", type=int)
@click.option("--out", help="Output directory.")
@click.option("--preset", type=click.Choice(PRESET_NAMES))
@click.option("--diagnostics/--no-diagnostics", default=None)
@click.option("--mode", type=click.Choice(MODES), help="SDE interaction evaluation.")
@click.option("--kernel-mode", "kernel_mode", type=click.Choice(KERNEL_MODES))
@click.option("--error-epoch", "error_epoch", type=click.Choice(ERROR_EPOCHS))
@click.option("--workers", type=int, help="Threads for batches and ladders.")
@click.option("--dump-format", "dump_format", type=click.Choice(DUMP_FORMATS))
@click.option("--progress/--no-progress", default=None)
@click.pass_context
def run(ctx, config_path, **overrides):
    """Run one study. Exit 1 on configuration errors, 2 on numerical failures."""
    try:
        cfg = load_run_config(config_path, **overrides)
        autoprocess.run(cfg)
    except (ConfigError, ProblemDefinitionError) as err:
        click.echo(str(err), err=True)
        ctx.exit(EXIT_CONFIG_ERROR)
    except NumericalFailure as err:
        logger.error(str(err))
        click.echo(str(err), err=True)
        ctx.exit(EXIT_NUMERICAL_FAILURE)


if __name__ == "__main__":
    main()
