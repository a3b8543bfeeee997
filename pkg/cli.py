"""
FSI-HDG command line
Divergence-conforming HDG fluid-structure runs: convergence studies, the
pressure pulse benchmark, single runs and a quick invariant self-test.
"""
import logging
import sys
import time
from typing import List, Optional

import click
from dotenv import load_dotenv

from config import CaseConfig, Experiment, build_config, get_preset, log_level, parse_config, resolve_output_dir
from errors import FsiHdgError

# Load environment variables
load_dotenv()

# Configure logging
logging.basicConfig(
    level=log_level(),
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)
logger = logging.getLogger(__name__)


def load_case(config_path: Optional[str], preset: str, experiment: Experiment, jobs: Optional[int]) -> CaseConfig:
    """Config file if given, else the named preset; --jobs overrides the file."""
    if config_path:
        config = parse_config(config_path)
    else:
        logger.info(f"No --config given, using preset '{preset}'")
        config = build_config(get_preset(preset))
    if config.experiment != experiment:
        logger.warning(f"Config declares experiment '{config.experiment.value}', running '{experiment.value}'")
    if jobs is not None:
        config = config.model_copy(update={"jobs": jobs})
    return config


def create_cli():
    """Create the click command group."""

    @click.group()
    def cli():
        """Divergence-conforming HDG solver for linear fluid-structure interaction."""

    @cli.command()
    @click.option('--config', 'config_path', type=click.Path(dir_okay=False), default=None, help="TOML case file.")
    @click.option('--out', type=click.Path(file_okay=False), default=None, help="Output directory.")
    @click.option('--jobs', type=int, default=None, help="Parallel parameter sets.")
    def converge(config_path, out, jobs):
        """Mesh-sequence convergence study over a parameter grid."""
        from verify import run_convergence_study
        config = load_case(config_path, "example1", Experiment.CONVERGE, jobs)
        out_dir = resolve_output_dir(out, config)
        start = time.time()
        report = run_convergence_study(config, out_dir)
        click.echo(report.wide().to_string(index=False))
        logger.info(f"Convergence study finished in {time.time() - start:.1f}s, results in {out_dir}")

    @cli.command()
    @click.option('--config', 'config_path', type=click.Path(dir_okay=False), default=None, help="TOML case file.")
    @click.option('--out', type=click.Path(file_okay=False), default=None, help="Output directory.")
    def pulse2d(config_path, out):
        """Pressure pulse through the channel with line samples at the final time."""
        from verify import run_pulse_benchmark
        config = load_case(config_path, "example2", Experiment.PULSE2D, None)
        out_dir = resolve_output_dir(out, config)
        start = time.time()
        result = run_pulse_benchmark(config, out_dir)
        click.echo(f"steps: {result.transient.final.step}  average iterations: "
                   f"{result.transient.average_iterations:.1f}")
        logger.info(f"Pulse benchmark finished in {time.time() - start:.1f}s, results in {out_dir}")

    @cli.command()
    @click.option('--config', 'config_path', type=click.Path(dir_okay=False), default=None, help="TOML case file.")
    @click.option('--out', type=click.Path(file_okay=False), default=None, help="Output directory.")
    @click.option('--dump', is_flag=True, help="Also write mesh.txt and the system matrix system.coo.")
    def single(config_path, out, dump):
        """One transient run with per-step diagnostics."""
        from verify import run_single
        config = load_case(config_path, "example1", Experiment.SINGLE, None)
        out_dir = resolve_output_dir(out, config)
        summary = run_single(config, out_dir, dump=dump)
        if summary.error is not None:
            click.echo(f"L2 velocity error: {summary.error:.6e}")
        click.echo(f"average iterations: {summary.result.average_iterations:.1f}")

    @cli.command()
    @click.option('--group', 'groups', multiple=True, help="Restrict to these invariant groups.")
    def check(groups):
        """Run the invariant groups on tiny meshes; exit 0 iff all pass."""
        from verify import run_invariant_checks
        results = run_invariant_checks(groups)
        for r in results:
            status = "PASS" if r.passed else "FAIL"
            click.echo(f"{status}  {r.group:<8} {r.name}" + (f"  ({r.message})" if r.message else ""))
        failed = [r for r in results if not r.passed]
        if failed:
            raise FsiHdgError(f"{len(failed)} of {len(results)} checks failed")

    return cli


def main(argv: Optional[List[str]] = None) -> int:
    """Run the CLI and return a process exit code."""
    cli = create_cli()
    try:
        cli.main(args=argv, prog_name="fsihdg", standalone_mode=False)
    except FsiHdgError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return 1
    except click.exceptions.Abort:
        logger.error("Aborted")
        return 130
    except click.ClickException as e:
        e.show()
        return e.exit_code
    return 0


if __name__ == '__main__':
    sys.exit(main())
