#!/usr/bin/env python3
"""
Command-line entry point: generate data, run the active-sampling experiments,
and summarize their logs.

    python main.py gen-data --profile desk --output pool.bin
    python main.py run --config experiment.txt --seed 3
    python main.py report runs/

Exit codes: 0 success, 1 usage or configuration error, 2 runtime error.
"""
import os
import sys
import glob
import json
from concurrent.futures import ThreadPoolExecutor
from typing import List, NamedTuple, Optional

import click
import pandas as pd
from rich.console import Console
from rich.table import Table

from active import (
    LOG_COLUMNS, TIMING_COLUMNS, FLOAT_FORMAT, run_active_loop, run_benchmark,
    write_log, write_loss_trace, write_selections,
)
from config import CHECKPOINTS_SUBDIR, CONFIG_ECHO_FILE, LOGS_SUBDIR, PROFILES, TRACES_SUBDIR
from datagen import Dataset, Pools, export_csv, generate_dataset, load_dataset, save_dataset, split_pools
from errors import ActiveCLRError, ConfigError, ReportError
from evaluation import BENCHMARK, mean_curves, runtime_table
from experiment_config import RunConfig, parse_config, write_config
from plotting import f1_curves_svg
from sampler import SamplerKind
from utils import logger

REPORT_SUBDIR = 'report'
SUMMARY_FILE = 'summary.csv'
RUNTIME_FILE = 'runtime.csv'
CURVES_FILE = 'f1_curves.svg'


class RunDirs(NamedTuple):
    root: str
    logs: str
    traces: str
    checkpoints: str


# === RUN ===

def _prepare_dirs(output_dir: str) -> RunDirs:
    dirs = RunDirs(
        root=output_dir,
        logs=os.path.join(output_dir, LOGS_SUBDIR),
        traces=os.path.join(output_dir, TRACES_SUBDIR),
        checkpoints=os.path.join(output_dir, CHECKPOINTS_SUBDIR),
    )
    for path in (dirs.logs, dirs.traces):
        os.makedirs(path, exist_ok=True)
    return dirs


def load_or_generate(config: RunConfig) -> Dataset:
    if config.dataset_path:
        logger.info(f"Loading dataset from {config.dataset_path}")
        dataset = load_dataset(config.dataset_path)
        if dataset.patch_side != config.dataset.patch_side:
            raise ConfigError(
                f"dataset.patch_side: {config.dataset_path} holds patches of side {dataset.patch_side}, "
                f"config says {config.dataset.patch_side}"
            )
        return dataset
    return generate_dataset(config.dataset_spec())


def _run_strategy(config: RunConfig, pools: Pools, sampler: SamplerKind, rep: int, dirs: RunDirs) -> str:
    run_id = f"{sampler.value}_rep{rep}"
    loop = config.loop_config(sampler, checkpoint_dir=os.path.join(dirs.checkpoints, run_id))
    result = run_active_loop(loop, pools, run_id=run_id, rep=rep)
    log_path = os.path.join(dirs.logs, f"{run_id}.csv")
    write_log(result, log_path)
    write_loss_trace(result, os.path.join(dirs.traces, f"{run_id}_loss.csv"))
    write_selections(result, os.path.join(dirs.traces, f"{run_id}_selections.csv"))
    if result.truncated:
        logger.warning(f"[{run_id}] Pool exhausted; {len(result.records)} of {loop.iterations} iterations ran")
    logger.info(f"[{run_id}] Wrote {log_path}")
    return log_path


def _run_benchmark(config: RunConfig, pools: Pools, dirs: RunDirs) -> str:
    loop = config.loop_config(SamplerKind.RANDOM, checkpoint_dir=dirs.checkpoints)
    result = run_benchmark(loop, pools, run_id=BENCHMARK, rep=0)
    log_path = os.path.join(dirs.logs, f"{BENCHMARK}.csv")
    write_log(result, log_path)
    write_loss_trace(result, os.path.join(dirs.traces, f"{BENCHMARK}_loss.csv"))
    logger.info(f"[{BENCHMARK}] Wrote {log_path}")
    return log_path


def cmd_run(config: RunConfig) -> List[str]:
    """
    Runs every strategy x repetition (and the benchmark once) and writes one log
    per run. Each log is written as soon as its run finishes.
    """
    dirs = _prepare_dirs(config.output_dir)
    write_config(config, os.path.join(dirs.root, CONFIG_ECHO_FILE))

    dataset = load_or_generate(config)
    pools = split_pools(dataset, config.split.labeled_size, config.split.test_size,
                        config.split_seed(), stratify_labeled=config.split.stratify_labeled)
    config.loop_config(SamplerKind.RANDOM).check_pool(len(pools.unlabeled))

    jobs = [(sampler, rep) for sampler in config.strategies for rep in range(config.repetitions)]
    logger.info(f"Running {len(jobs)} active run(s){' + benchmark' if config.run_benchmark else ''} "
                f"with {config.jobs} worker(s), output in {dirs.root}")

    if config.jobs == 1:
        paths = [_run_strategy(config, pools, sampler, rep, dirs) for sampler, rep in jobs]
        if config.run_benchmark:
            paths.append(_run_benchmark(config, pools, dirs))
        return paths

    with ThreadPoolExecutor(max_workers=config.jobs) as pool:
        futures = [pool.submit(_run_strategy, config, pools, sampler, rep, dirs) for sampler, rep in jobs]
        if config.run_benchmark:
            futures.append(pool.submit(_run_benchmark, config, pools, dirs))
        return [f.result() for f in futures]


# === REPORT ===

def read_logs(log_dir: str) -> pd.DataFrame:
    """Concatenates every experiment log in a directory after checking its columns."""
    paths = sorted(glob.glob(os.path.join(log_dir, '*.csv')))
    if not paths:
        raise ReportError(f"No experiment logs (*.csv) in {log_dir}")
    frames = []
    for path in paths:
        try:
            frame = pd.read_csv(path)
        except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
            raise ReportError(f"{path}: unreadable CSV ({e})") from e
        if list(frame.columns) != LOG_COLUMNS:
            missing = [c for c in LOG_COLUMNS if c not in frame.columns]
            extra = [c for c in frame.columns if c not in LOG_COLUMNS]
            raise ReportError(
                f"{path}: columns do not match the experiment log schema "
                f"(missing {missing or 'none'}, unexpected {extra or 'none'})"
            )
        if frame.empty:
            logger.warning(f"{path} holds no records; skipping it")
            continue
        frames.append(frame)
    if not frames:
        raise ReportError(f"Every experiment log in {log_dir} is empty")
    return pd.concat(frames, ignore_index=True)


def _render_runtime(table: pd.DataFrame) -> Table:
    def cell(value, fmt: str) -> str:
        return '-' if pd.isna(value) else format(value, fmt)

    out = Table(title='Runtime comparison')
    for name in ('Method', 'Avg runtime (s)', 'Time reduction (%)', 'Samples to reach', 'Sample reduction (%)', 'Reached'):
        out.add_column(name, justify='left' if name == 'Method' else 'right')
    for row in table.itertuples():
        out.add_row(
            row.method, cell(row.avg_runtime_s, '.2f'), cell(row.time_reduction_pct, '.1f'),
            cell(row.samples_to_reach, '.0f'), cell(row.sample_reduction_pct, '.1f'),
            f"{row.reached_runs}/{row.runs}",
        )
    return out


def cmd_report(path: str, output_dir: Optional[str] = None, console: Console = None) -> dict:
    """
    Writes summary.csv (mean P/R/F1 per strategy and iteration), runtime.csv and
    f1_curves.svg. `path` is a run directory or its logs/ subdirectory; outputs
    go to `<path>/report` unless `output_dir` is given. Nothing is written when
    the logs fail to load.
    """
    log_dir = os.path.join(path, LOGS_SUBDIR) if os.path.isdir(os.path.join(path, LOGS_SUBDIR)) else path
    frame = read_logs(log_dir)
    curves = mean_curves(frame)

    out_dir = output_dir or os.path.join(path, REPORT_SUBDIR)
    os.makedirs(out_dir, exist_ok=True)
    outputs = {}

    summary_path = os.path.join(out_dir, SUMMARY_FILE)
    curves.drop(columns=TIMING_COLUMNS).to_csv(summary_path, index=False, float_format=FLOAT_FORMAT)
    outputs['summary'] = summary_path

    bench = curves[curves['strategy'] == BENCHMARK]
    benchmark_f1 = float(bench['f1'].max()) if not bench.empty else None
    if benchmark_f1 is None:
        logger.warning("No benchmark log found; skipping the runtime table and the reference line")
    else:
        table = runtime_table(frame)
        runtime_path = os.path.join(out_dir, RUNTIME_FILE)
        table.to_csv(runtime_path, index=False, float_format=FLOAT_FORMAT)
        outputs['runtime'] = runtime_path
        (console or Console()).print(_render_runtime(table))

    svg_path = os.path.join(out_dir, CURVES_FILE)
    with open(svg_path, 'w', encoding='utf-8') as f:
        f.write(f1_curves_svg(curves, benchmark_f1))
    outputs['curves'] = svg_path
    logger.info(f"Report written to {out_dir}")
    return outputs


# === CLI ===

def config_options(func):
    func = click.option('--set', 'overrides', multiple=True, metavar='KEY=VALUE',
                        help='Override one config key, e.g. loop.budget=50. Repeatable.')(func)
    func = click.option('--seed', type=int, default=None, help='Master seed.')(func)
    func = click.option('--profile', type=click.Choice(sorted(PROFILES)), default=None,
                        help='Named set of defaults.')(func)
    func = click.option('--config', 'config_path', type=click.Path(dir_okay=False), default=None,
                        help='Config file with one key.path = value per line.')(func)
    return func


def _resolve(config_path, profile, seed, overrides, output_dir=None) -> RunConfig:
    extra = list(overrides)
    if seed is not None:
        extra.append(f"seed={seed}")
    if output_dir is not None:
        extra.append(f"output_dir={json.dumps(output_dir)}")
    return parse_config(config_path, extra, profile)


@click.group()
def cli():
    """Contrastive learning with active sampling on imbalanced patch pools."""


@cli.command('gen-data')
@config_options
@click.option('--output', 'output_path', type=click.Path(dir_okay=False), required=True,
              help='Binary dataset file to write.')
@click.option('--csv', 'csv_path', type=click.Path(dir_okay=False), default=None,
              help='Also export the patches as CSV.')
def gen_data(config_path, profile, seed, overrides, output_path, csv_path):
    """Generate a synthetic patch pool."""
    config = _resolve(config_path, profile, seed, overrides)
    dataset = generate_dataset(config.dataset_spec())
    parent = os.path.dirname(os.path.abspath(output_path))
    os.makedirs(parent, exist_ok=True)
    save_dataset(dataset, output_path)
    if csv_path:
        export_csv(dataset, csv_path)
    click.echo(f"{len(dataset)} patches ({dataset.positives} TUM) -> {output_path}")


@cli.command('run')
@config_options
@click.option('--output-dir', type=click.Path(file_okay=False), default=None, help='Run output directory.')
def run(config_path, profile, seed, overrides, output_dir):
    """Run every strategy x repetition and the full-pool benchmark."""
    config = _resolve(config_path, profile, seed, overrides, output_dir)
    paths = cmd_run(config)
    click.echo(f"{len(paths)} experiment log(s) in {os.path.join(config.output_dir, LOGS_SUBDIR)}")


@cli.command('report')
@click.argument('log_dir', type=click.Path(exists=True, file_okay=False))
@click.option('--output-dir', type=click.Path(file_okay=False), default=None,
              help='Where to write the report (default: LOG_DIR/report).')
def report(log_dir, output_dir):
    """Summarize experiment logs: mean curves, runtime table, SVG plot."""
    outputs = cmd_report(log_dir, output_dir)
    for name, path in outputs.items():
        click.echo(f"{name}: {path}")


def main(argv: Optional[List[str]] = None) -> int:
    try:
        result = cli.main(args=argv, prog_name='activeclr', standalone_mode=False)
    except click.exceptions.Abort:
        click.echo('Aborted.', err=True)
        return 1
    except click.ClickException as e:
        e.show()
        return 1
    except ConfigError as e:
        for problem in e.problems:
            click.echo(f"config error: {problem}", err=True)
        return 1
    except (ActiveCLRError, OSError) as e:
        logger.error(f"Run failed: {e}", exc_info=True)
        return 2
    return result if isinstance(result, int) else 0


if __name__ == '__main__':
    sys.exit(main())
