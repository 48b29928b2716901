# app.py
#PARAMDET CLI

from dotenv import load_dotenv
# Load environment variables
load_dotenv()

import logging
import os
import sys

import click

from config import load_config
from errors import EXIT_CONFIG, EXIT_INVARIANT, EXIT_IO, ConfigError, InvariantViolation, ParamDetError
import pipeline_service

# Configure logging
logging.basicConfig(level=getattr(logging, os.getenv('PARAMDET_LOG_LEVEL', 'INFO').upper(), logging.INFO),
                    format='%(asctime)s %(levelname)s %(name)s: %(message)s')
logger = logging.getLogger(__name__)


def exit_code_for(error: BaseException) -> int:
    """Map a pipeline failure to its process exit code"""
    if isinstance(error, ConfigError):
        return EXIT_CONFIG
    if isinstance(error, InvariantViolation):
        return EXIT_INVARIANT
    if isinstance(error, OSError):
        return EXIT_IO
    return 1


def _run(stage: str, fn, *args):
    try:
        return fn(*args)
    except (ParamDetError, OSError) as e:
        code = exit_code_for(e)
        logger.error(f"❌ {stage} failed ({type(e).__name__}): {str(e)}")
        sys.exit(code)


def _print_map(report):
    click.echo(f"mAP = {'n/a' if report.mean_ap is None else format(report.mean_ap, '.3f')}")


@click.group()
@click.option('--config', 'config_path', type=click.Path(dir_okay=False), default=None,
              help='JSON pipeline config (defaults are desk scale)')
@click.option('--seed', type=int, default=None, help='Global seed')
@click.option('--out', type=click.Path(file_okay=False), default=None, help='Output directory')
@click.option('--workers', type=int, default=None, help='Scene-parallel workers, 0 = logical cores')
@click.option('--budget', type=int, default=None, help='Point budget after FPS (full scale 32768)')
@click.option('--verbose', is_flag=True, help='Debug logging')
@click.pass_context
def cli(ctx, config_path, seed, out, workers, budget, verbose):
    """Parametric object detection pipeline: scenes, scans, stub predictions and evaluation."""
    if verbose:
        logging.getLogger().setLevel(logging.DEBUG)
    overrides = {'seed': seed, 'paths.out_dir': out, 'workers': workers, 'lidar.budget': budget}
    ctx.obj = _run('config', load_config, config_path, overrides)
    logger.info(f"🔧 Output directory {ctx.obj.paths.out_dir}, seed {ctx.obj.seed}")


@cli.command('gen-scenes')
@click.option('--count', type=int, default=None, help='Number of scenes (full scale 5000)')
@click.pass_obj
def gen_scenes(config, count):
    index = _run('gen-scenes', pipeline_service.cmd_gen_scenes, config, count)
    click.echo(f"{index['count']} scenes written")


@cli.command('scan')
@click.pass_obj
def scan(config):
    results = _run('scan', pipeline_service.cmd_scan, config)
    click.echo(f"{len(results)} scans written")


@cli.command('predict-stub')
@click.pass_obj
def predict_stub(config):
    results = _run('predict-stub', pipeline_service.cmd_predict_stub, config)
    click.echo(f"{len(results)} prediction files written")


@cli.command('eval')
@click.pass_obj
def evaluate(config):
    report = _run('eval', pipeline_service.cmd_eval, config)
    click.echo(report.render(), nl=False)
    _print_map(report)


@cli.command('bench')
@click.option('--count', type=int, default=None, help='Number of scenes to benchmark')
@click.pass_obj
def bench(config, count):
    timings = _run('bench', pipeline_service.cmd_bench, config, count)
    click.echo(timings.to_csv(index=False), nl=False)


@cli.command('run-all')
@click.option('--count', type=int, default=None, help='Number of scenes (full scale 5000)')
@click.pass_obj
def run_all(config, count):
    report = _run('run-all', pipeline_service.run_all, config, count)
    click.echo(report.render(), nl=False)
    _print_map(report)


if __name__ == "__main__":
    logger.info("🚀 Starting paramdet")
    cli()
