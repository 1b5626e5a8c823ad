"""Command-line interface for MPRNet training, evaluation and restoration."""

import logging
import sys
from collections import OrderedDict
from pathlib import Path

import click
import numpy as np

from mprnet import __version__
from mprnet.ablation import run_ablation
from mprnet.autograd.tensor import Tensor, count_ops
from mprnet.checkpoint import load_checkpoint, read_manifest
from mprnet.data.imageio import find_pairs, read_image, write_image
from mprnet.errors import CheckpointError, ConfigError, DimensionError, NonFiniteLossError, UsageError
from mprnet.generator import ReportGenerator
from mprnet.inference import restore as restore_image
from mprnet.network import early_exit_infer
from mprnet.parser import RunConfigParser, threads_from_env
from mprnet.selftest import run_selftest
from mprnet.training import degraded_baseline, evaluate, run_training
from mprnet.validator import validate_config

LOG_FORMAT = "%(asctime)s - %(levelname)s - %(name)s: %(message)s"

EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_CHECKPOINT = 3
EXIT_EMPTY = 4


@click.group()
@click.version_option(version=__version__)
@click.option('--verbose', '-v', is_flag=True, help='Show debug logging from the library')
@click.pass_context
def cli(ctx, verbose):
    """MPRNet multi-stage image restoration."""
    ctx.ensure_object(dict)
    ctx.obj['verbose'] = verbose
    logging.basicConfig(level=logging.DEBUG if verbose else logging.WARNING, format=LOG_FORMAT)


def _load_config(config_path, overrides):
    """Parse and validate a run config, exiting 2 on any problem."""
    parser = RunConfigParser()
    try:
        if config_path:
            config = parser.parse_file(config_path, overrides)
        else:
            config = parser.parse_lines([], overrides, source="<defaults>")
    except ConfigError as e:
        click.echo(f"❌ Config error: {e}", err=True)
        if e.key:
            click.echo(f"   offending key: {e.key}", err=True)
        for error in e.errors[1:]:
            click.echo(f"  • {error}", err=True)
        sys.exit(EXIT_CONFIG)

    is_valid, errors = validate_config(config)
    if not is_valid:
        click.echo("❌ Config validation failed:", err=True)
        for error in errors:
            click.echo(f"  • {error}", err=True)
        sys.exit(EXIT_CONFIG)
    return config


def _workers():
    try:
        return threads_from_env()
    except ConfigError as e:
        click.echo(f"❌ {e}", err=True)
        sys.exit(EXIT_CONFIG)


def _load_model(checkpoint):
    try:
        return load_checkpoint(checkpoint)
    except CheckpointError as e:
        click.echo(f"❌ Checkpoint error: {e}", err=True)
        sys.exit(EXIT_CHECKPOINT)


def _stage_path(output: Path, stage: int) -> Path:
    return output.with_name(f"{output.stem}.stage{stage}{output.suffix}")


@cli.command()
@click.option('--config', '-c', 'config_path', type=click.Path(), help='Run config file (key=value lines)')
@click.option('--set', 'overrides', multiple=True, metavar='KEY=VALUE', help='Override a config key (repeatable)')
@click.option('--out', '-o', type=click.Path(), help='Run directory (default: train.out_dir from the config)')
def train(config_path, overrides, out):
    """
    Train a model and write checkpoints, logs and a report.

    Example:
        mprnet train --config configs/toy.cfg --set iters=10
    """
    config = _load_config(config_path, overrides)
    workers = _workers()
    out_dir = Path(out or config.train.out_dir)
    click.echo(f"🔨 Training {config.model.n_stages}-stage model for {config.train.iters} iterations")
    click.echo(f"   degradation: {config.degrade.degradation}, patch {config.train.patch_size}, "
               f"batch {config.train.batch_size}")
    try:
        result = run_training(config, out_dir, progress=True, workers=workers)
    except (NonFiniteLossError, DimensionError, UsageError) as e:
        click.echo(f"❌ {e}", err=True)
        sys.exit(EXIT_FAILURE)

    click.echo("\n✅ Training complete!")
    click.echo(ReportGenerator(out_dir).render_metric_table(result.reports, result.baseline))
    if result.log.best_psnr is not None:
        click.echo(f"\n✓ Best validation PSNR {result.log.best_psnr:.3f} dB at iteration {result.log.best_iteration}")
    click.echo(f"\n📦 Run directory: {out_dir}")
    for name in ("train.log", "val.log", "best.mprf", "last.mprf", "manifest.json", "README.md"):
        if (out_dir / name).exists():
            click.echo(f"   • {name}")


@cli.command(name='eval')
@click.argument('checkpoint', type=click.Path())
@click.argument('test_dir', type=click.Path(exists=True, file_okay=False))
@click.option('--y-channel', is_flag=True, help='Score BT.601 luma instead of RGB')
@click.option('--peak', type=float, default=1.0, show_default=True, help='Peak value; 255 scores 8-bit quantized images')
@click.option('--exit-stage', type=int, help='Only evaluate this stage')
def eval_command(checkpoint, test_dir, y_channel, peak, exit_stage):
    """
    Print per-stage PSNR/SSIM over <name>.clean.png / <name>.degraded.png pairs.

    Example:
        mprnet eval runs/latest/best.mprf data/test --y-channel
    """
    model = _load_model(checkpoint)
    workers = _workers()
    matched, unpaired = find_pairs(test_dir)
    for path in unpaired:
        click.echo(f"⚠️  Skipping unpaired file: {path.name}", err=True)
    if not matched:
        click.echo(f"❌ No clean/degraded pairs found in {test_dir}", err=True)
        sys.exit(EXIT_EMPTY)

    try:
        pairs = [(read_image(clean), read_image(degraded)) for _, clean, degraded in matched]
        reports = evaluate(model, pairs, exit_stage=exit_stage, y_channel=y_channel, peak=peak, workers=workers)
    except (DimensionError, UsageError) as e:
        click.echo(f"❌ {e}", err=True)
        sys.exit(EXIT_FAILURE)
    baseline = degraded_baseline(pairs, y_channel=y_channel, peak=peak, dtype=model.dtype)
    click.echo(f"📄 {len(pairs)} image pair(s), evaluated on {reports[0].evaluated_on}")
    click.echo(ReportGenerator(Path(test_dir)).render_metric_table(reports, baseline))


@cli.command()
@click.argument('checkpoint', type=click.Path())
@click.argument('input_image', type=click.Path(exists=True, dir_okay=False))
@click.argument('output', type=click.Path(dir_okay=False))
@click.option('--exit-stage', type=int, help='Stop after this stage and write only its output')
def restore(checkpoint, input_image, output, exit_stage):
    """
    Restore one image; without --exit-stage every stage is written.

    Example:
        mprnet restore runs/latest/best.mprf noisy.png clean.png
    """
    model = _load_model(checkpoint)
    try:
        outputs = restore_image(model, read_image(input_image), exit_stage)
    except (DimensionError, UsageError) as e:
        click.echo(f"❌ {e}", err=True)
        sys.exit(EXIT_FAILURE)

    output = Path(output)
    if exit_stage is not None:
        write_image(output, outputs[-1][1])
        click.echo(f"✓ Stage {exit_stage} written to {output}")
        return
    for stage, restored in outputs:
        path = _stage_path(output, stage)
        write_image(path, restored)
        click.echo(f"✓ Stage {stage} written to {path}")
    write_image(output, outputs[-1][1])
    click.echo(f"✓ Final stage written to {output}")


@cli.command()
@click.argument('checkpoint', type=click.Path())
@click.option('--image-size', type=int, help='Count primitive ops per exit stage on a square image of this size')
def inspect(checkpoint, image_size):
    """
    Display checkpoint configuration and parameter layout.

    Example:
        mprnet inspect runs/latest/best.mprf --image-size 64
    """
    model = _load_model(checkpoint)
    manifest = read_manifest(checkpoint)

    click.echo(f"\n{'='*60}")
    click.echo(f"📦 {Path(checkpoint).name} ({manifest.get('format')})")
    click.echo(f"{'='*60}\n")

    click.echo("⚙️  Model config:")
    for key, value in model.config.model_dump().items():
        click.echo(f"    {key}: {value}")
    metadata = manifest.get("metadata") or {}
    if metadata:
        click.echo("\n🏷️  Metadata:")
        for key, value in metadata.items():
            click.echo(f"    {key}: {value}")

    named = list(model.named_parameters())
    click.echo(f"\n🔢 Parameters: {model.param_count()}")
    breakdown: "OrderedDict[str, int]" = OrderedDict()
    for name, p in named:
        prefix = name.split(".", 1)[0]
        breakdown[prefix] = breakdown.get(prefix, 0) + p.size
    for prefix, count in breakdown.items():
        click.echo(f"    {prefix}: {count}")

    click.echo("\n📋 Parameter table:")
    for i, (name, p) in enumerate(named, 1):
        shape = "x".join(str(d) for d in p.shape)
        click.echo(f"    {i:4d}. {name:<48} {shape:>16} {p.size:>8}")

    if image_size:
        multiple = model.config.spatial_multiple
        if image_size % multiple:
            click.echo(f"\n❌ --image-size must be a multiple of {multiple}", err=True)
            sys.exit(EXIT_FAILURE)
        img = Tensor(np.zeros((1, 3, image_size, image_size)), dtype=model.dtype)
        click.echo(f"\n⚡ Primitive ops on a {image_size}x{image_size} image:")
        for stage in range(1, model.n_stages + 1):
            with count_ops() as counter:
                early_exit_infer(img, model, stage)
            click.echo(f"    exit at stage {stage}: {counter.total}")

    click.echo(f"\n{'='*60}\n")


@cli.command()
@click.option('--fault', metavar='OP', help='Scale the backward rule of OP to show the gradient checks fail')
def selftest(fault):
    """Run the fast invariant suite and report pass/fail per group."""
    results = run_selftest(fault=fault)
    failed = [r for r in results if not r.passed]
    group = None
    for result in results:
        if result.group != group:
            group = result.group
            click.echo(f"\n🔍 {group}")
        mark = "✓" if result.passed else "❌"
        detail = f" ({result.detail})" if result.detail else ""
        click.echo(f"  {mark} {result.name}{detail}")

    if failed:
        click.echo(f"\n❌ {len(failed)} of {len(results)} checks failed", err=True)
        sys.exit(EXIT_FAILURE)
    click.echo(f"\n✅ All {len(results)} checks passed")


@cli.command()
@click.option('--config', '-c', 'config_path', type=click.Path(), help='Run config file shared by every cell')
@click.option('--set', 'overrides', multiple=True, metavar='KEY=VALUE', help='Override a config key (repeatable)')
@click.option('--out', '-o', type=click.Path(), help='Directory for per-cell runs and ablation.md')
def ablate(config_path, overrides, out):
    """
    Train the stage/SAM/CSFF grid with one seed and iteration count and report the gates.

    Example:
        mprnet ablate --config configs/toy.cfg --out runs/ablation
    """
    config = _load_config(config_path, overrides)
    workers = _workers()
    out_dir = Path(out or Path(config.train.out_dir) / "ablation")
    try:
        result = run_ablation(config, out_dir, progress=True, workers=workers)
    except NonFiniteLossError as e:
        click.echo(f"❌ {e}", err=True)
        sys.exit(EXIT_FAILURE)

    click.echo("\n📊 Ablation grid (final stage):")
    for cell in result.cells:
        click.echo(f"    {cell.label:<24} {cell.report.psnr:8.3f} dB  SSIM {cell.report.ssim:.4f}  params {cell.params}")
    click.echo("")
    for gate, passed in result.gates.items():
        click.echo(f"  {'✓' if passed else '❌'} {gate}")
    click.echo(f"\n📦 Report: {out_dir / 'ablation.md'}")
    if not result.passed:
        sys.exit(EXIT_FAILURE)


def main():
    """Entry point for CLI."""
    cli(obj={})


if __name__ == '__main__':
    main()
