"""Command line entry-point for the CFM lab."""

from __future__ import annotations

import logging
from contextlib import contextmanager
from pathlib import Path
from typing import Iterator, List, Optional, Sequence

import click
import typer
from dotenv import load_dotenv

from cfm.core.config import SynthConfig, TrainConfig, load_config
from cfm.core.errors import CfmError, ConfigError, DatasetError
from cfm.core.settings import get_data_dir, get_runs_dir
from cfm.services import attention as attention_service
from cfm.services import evaluation as evaluation_service
from cfm.services import report as report_service
from cfm.services.checkpoint import load_checkpoint
from cfm.services.dataset import generate_dataset, read_dataset, read_ppm, write_dataset
from cfm.services.perturb import DEFAULT_SEVERITY
from cfm.services.trainer import CHECKPOINT_NAME, TELEMETRY_NAME, train as train_service
from worker.experiments import ABLATION_NAME, ExperimentRunner, MetricsStore, variants_for

logger = logging.getLogger(__name__)

app = typer.Typer(help="Desk-scale Critical Forgery Mining lab", no_args_is_help=True)

EXIT_USAGE = 1
EXIT_RUNTIME = 2


def _configure_logging(verbose: bool) -> None:
    level = logging.DEBUG if verbose else logging.INFO
    logging.basicConfig(level=level, format="%(levelname)s %(message)s")


@contextmanager
def _errors() -> Iterator[None]:
    """Map lab errors onto exit codes: config problems 1, everything else 2."""

    try:
        yield
    except ConfigError as exc:
        typer.echo(f"Error: {exc}", err=True)
        raise typer.Exit(code=EXIT_USAGE)
    except (CfmError, OSError) as exc:
        typer.echo(f"Error: {exc}", err=True)
        raise typer.Exit(code=EXIT_RUNTIME)


def _parse_seeds(raw: str) -> List[int]:
    parts = [value.strip() for value in raw.split(",") if value.strip()]
    if not parts:
        raise typer.BadParameter("Provide at least one seed")
    seeds: List[int] = []
    for part in parts:
        try:
            seeds.append(int(part))
        except ValueError as exc:
            raise typer.BadParameter(f"Invalid seed '{part}'") from exc
    return seeds


def _train_config(config: Optional[Path], overrides: Sequence[str]) -> TrainConfig:
    return load_config(config, overrides, model=TrainConfig)


def _dataset(data: Optional[Path]):
    return read_dataset(data or get_data_dir())


@app.callback()
def main(
    verbose: bool = typer.Option(
        False,
        "--verbose",
        is_flag=True,
        help="Enable debug logging",
    )
) -> None:
    _configure_logging(verbose)


@app.command("gen-data")
def gen_data(
    out: Optional[Path] = typer.Option(None, "--out", "-o", help="Dataset directory (default: $CFM_DATA_DIR)"),
    seed: Optional[int] = typer.Option(None, "--seed", help="Generator seed (overrides the config)"),
    config: Optional[Path] = typer.Option(None, "--config", "-c", help="Generator config file (key=value)"),
    override: List[str] = typer.Option([], "--override", help="Generator key=value override; repeatable"),
) -> None:
    """Generate the synthetic real/fake video dataset."""

    with _errors():
        overrides = list(override) + ([f"seed={seed}"] if seed is not None else [])
        synth = load_config(config, overrides, model=SynthConfig)
        dataset = generate_dataset(synth)
        root = write_dataset(dataset.manifest, out or get_data_dir(), dataset, synth)
    typer.echo(f"Wrote {len(dataset.manifest)} videos to {root}.")


@app.command()
def train(
    config: Optional[Path] = typer.Option(None, "--config", "-c", help="Training config file (key=value)"),
    override: List[str] = typer.Option([], "--override", help="Config key=value override; repeatable"),
    data: Optional[Path] = typer.Option(None, "--data", "-d", help="Dataset directory (default: $CFM_DATA_DIR)"),
    out: Optional[Path] = typer.Option(None, "--out", "-o", help="Run directory (default: $CFM_RUNS_DIR/train)"),
    resume: Optional[Path] = typer.Option(None, "--resume", help="Checkpoint directory to continue from"),
) -> None:
    """Train a student/teacher pair and write checkpoint plus telemetry."""

    with _errors():
        checkpoint = None
        if resume is not None:
            checkpoint = load_checkpoint(resume)
            settings = checkpoint.config
            if config is not None or override:
                raise ConfigError("--resume continues with the checkpoint's own config; drop --config/--override")
        else:
            settings = _train_config(config, override)
        run_dir = out or get_runs_dir() / "train"
        result = train_service(_dataset(data), settings, run_dir, checkpoint=checkpoint)
    typer.echo(
        f"Trained {result.checkpoint.iteration} iteration(s); checkpoint at {run_dir / CHECKPOINT_NAME}, "
        f"telemetry at {run_dir / TELEMETRY_NAME} ({len(result.telemetry)} rows)."
    )


@app.command("eval")
def evaluate(
    checkpoint: Path = typer.Option(..., "--checkpoint", "-k", help="Checkpoint directory"),
    data: Optional[Path] = typer.Option(None, "--data", "-d", help="Dataset directory (default: $CFM_DATA_DIR)"),
    protocol: str = typer.Option("intra", "--protocol", "-p", help="intra or cross-manip"),
    out: Optional[Path] = typer.Option(None, "--out", "-o", help="Output directory for metrics CSVs"),
) -> None:
    """Score a checkpoint under the intra or cross-manipulation protocol."""

    if protocol not in ("intra", "cross-manip"):
        raise typer.BadParameter("protocol must be intra or cross-manip", param_hint="--protocol")
    with _errors():
        state = load_checkpoint(checkpoint)
        report = evaluation_service.evaluate(state, _dataset(data), protocol)
        written = report.write(out or checkpoint.parent / f"eval_{protocol}")
    for row in report.metrics:
        typer.echo(f"{row.protocol} {row.level}: ACC {row.acc:.4f} AUC {row.auc:.4f} EER {row.eer:.4f}")
    average = report.cross_average()
    if average is not None:
        typer.echo(f"{evaluation_service.CROSS_AVG}: AUC {average:.4f}")
    typer.echo(f"Wrote {len(written)} file(s).")


@app.command()
def robustness(
    checkpoint: Path = typer.Option(..., "--checkpoint", "-k", help="Checkpoint directory"),
    data: Optional[Path] = typer.Option(None, "--data", "-d", help="Dataset directory (default: $CFM_DATA_DIR)"),
    severity: int = typer.Option(DEFAULT_SEVERITY, "--severity", min=1, max=5, help="Perturbation severity 1-5"),
    all_levels: bool = typer.Option(False, "--all-levels", is_flag=True, help="Evaluate severities 1-5"),
    out: Optional[Path] = typer.Option(None, "--out", "-o", help="Output directory for robustness.csv"),
) -> None:
    """AUC under the seven perturbations relative to clean test frames."""

    with _errors():
        state = load_checkpoint(checkpoint)
        report = evaluation_service.evaluate_robustness(
            state, _dataset(data), severity=severity, all_levels=all_levels
        )
        report.write(out or checkpoint.parent / "robustness")
    for row in report.robustness:
        typer.echo(f"{row.kind:<22} sev {row.severity}  AUC {row.auc:.4f}  drop {row.drop:+.4f}")


@app.command()
def ablate(
    config: Optional[Path] = typer.Option(None, "--config", "-c", help="Base training config file"),
    override: List[str] = typer.Option([], "--override", help="Base config key=value override; repeatable"),
    data: Optional[Path] = typer.Option(None, "--data", "-d", help="Dataset directory (default: $CFM_DATA_DIR)"),
    grid: str = typer.Option(
        "components",
        "--grid",
        "-g",
        help="components, masking, augmentation, pairing, params or weighting",
    ),
    seeds: str = typer.Option("0", "--seeds", help="Comma separated training seeds"),
    family: str = typer.Option("A", "--family", help="Manipulation family every variant trains on"),
    out: Optional[Path] = typer.Option(None, "--out", "-o", help="Output directory (default: $CFM_RUNS_DIR/ablate)"),
) -> None:
    """Train and score every variant of an ablation grid."""

    seed_list = _parse_seeds(seeds)
    with _errors():
        variants_for(grid)
        base = _train_config(config, override)
        out_dir = out or get_runs_dir() / "ablate"
        store = MetricsStore(out_dir / ABLATION_NAME)
        runner = ExperimentRunner(_dataset(data), base, store, seeds=seed_list, train_family=family, out_dir=out_dir)
        rows = runner.run_grid(grid)
        path = store.write()
    for row in rows:
        typer.echo(f"{row.variant:<24} seed {row.seed:<5} intra {row.intra_auc:.4f} held-out {row.held_out_auc:.4f}")
    typer.echo(f"Wrote {path}.")


@app.command()
def attention(
    checkpoint: Path = typer.Option(..., "--checkpoint", "-k", help="Checkpoint directory"),
    image: Optional[Path] = typer.Option(None, "--image", "-i", help="PPM frame to explain"),
    data: Optional[Path] = typer.Option(None, "--data", "-d", help="Dataset directory, used with --video"),
    video: Optional[str] = typer.Option(None, "--video", help="Video id in the dataset"),
    frame: int = typer.Option(0, "--frame", min=0, help="Frame index within --video"),
    out: Path = typer.Option(..., "--out", "-o", help="Heatmap PGM path"),
) -> None:
    """Write a Grad-CAM heatmap of the fake score as PGM."""

    if (image is None) == (video is None):
        raise typer.BadParameter("Provide exactly one of --image or --video", param_hint="--image/--video")
    with _errors():
        state = load_checkpoint(checkpoint)
        if image is not None:
            pixels = read_ppm(image)
        else:
            pixels = _dataset(data).frame(video, frame)
        expected = state.config.model.image_size
        if pixels.shape != (expected, expected, 3):
            raise DatasetError(f"frame is {pixels.shape[:2]}, the model expects {expected}x{expected}")
        heatmap = attention_service.grad_cam(state.model, pixels)
        attention_service.write_heatmap(out, heatmap)
    typer.echo(f"Wrote heatmap to {out} (max {heatmap.max():.3f}).")


@app.command()
def report(
    paths: List[Path] = typer.Argument(..., help="Result directories or CSV files"),
) -> None:
    """Render metrics, ablation, robustness and change-ratio tables from CSVs."""

    with _errors():
        text = report_service.render_report(paths)
    typer.echo(text, nl=False)


def run(argv: Optional[Sequence[str]] = None) -> int:
    """Invoke the CLI and return its exit code: 0 ok, 1 usage, 2 runtime failure."""

    load_dotenv()
    try:
        result = app(args=list(argv) if argv is not None else None, prog_name="cfm", standalone_mode=False)
    except click.exceptions.UsageError as exc:
        typer.echo(f"Error: {exc.format_message()}", err=True)
        return EXIT_USAGE
    except click.exceptions.Abort:
        return EXIT_USAGE
    except click.exceptions.Exit as exc:
        return exc.exit_code
    return result if isinstance(result, int) else 0


if __name__ == "__main__":
    raise SystemExit(run())
