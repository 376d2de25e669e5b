"""Command line interface: serve checkpoints, run training ops.

Exit codes: 0 success, 1 usage or configuration failure, 2 training
divergence.
"""
from __future__ import annotations

import sys
from pathlib import Path

import click

from . import __version__
from .errors import SidecarError, TrainingDiverged
from .training import (
    CONTRASTIVE_SCHEMA,
    GENERATOR_SCHEMA,
    MASKED_ENTITY_SCHEMA,
    TrainResult,
    load_config,
    pretrain_generator,
    train_contrastive,
    train_masked_entity,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_TRAINING = 2

SERVE_SCHEMA = {
    "encoder": None,
    "generator": None,
    "host": "127.0.0.1",
    "port": 8400,
    "max_batch": 64,
    "max_waiting": 32,
    "device": "cpu",
    "mask_token": None,
}


@click.group()
@click.version_option(__version__, prog_name="esekit-sidecar")
def cli():
    """Model sidecar: trains small neural models and serves them over
    the provider wire protocol."""


@cli.command()
@click.option("--config", "config_path", type=click.Path(path_type=Path), default=None, help="Serve settings as YAML.")
@click.option("--encoder", type=click.Path(path_type=Path), default=None, help="Encoder checkpoint.")
@click.option("--generator", type=click.Path(path_type=Path), default=None, help="Generator checkpoint.")
@click.option("--host", default=None)
@click.option("--port", type=int, default=None)
@click.option("--max-batch", type=int, default=None, help="Largest embedding batch per forward pass.")
def serve(config_path, encoder, generator, host, port, max_batch):
    """Serve both checkpoints on one port."""
    import uvicorn

    from .service import create_app

    settings = load_config(config_path or {}, SERVE_SCHEMA, "serve")
    if encoder is not None:
        settings["encoder"] = encoder
    if generator is not None:
        settings["generator"] = generator
    if host is not None:
        settings["host"] = host
    if port is not None:
        settings["port"] = port
    if max_batch is not None:
        settings["max_batch"] = max_batch

    app = create_app(
        settings["encoder"],
        settings["generator"],
        max_batch=int(settings["max_batch"]),
        max_waiting=int(settings["max_waiting"]),
        device=str(settings["device"]),
        mask_token=settings["mask_token"],
    )
    uvicorn.run(app, host=settings["host"], port=int(settings["port"]), log_level="warning")


def _report(result: TrainResult):
    click.echo(f"steps: {result.steps}")
    click.echo(f"loss: {result.first_loss:.6f} -> {result.final_loss:.6f}")
    if result.holdout_before is not None:
        click.echo(f"holdout loss: {result.holdout_before:.6f} -> {result.holdout_after:.6f}")
    click.echo(f"checkpoint: {result.checkpoint}")


@cli.command("train-masked-entity")
@click.option("--config", "config_path", type=click.Path(path_type=Path), required=True)
def train_masked_entity_command(config_path):
    """Train the encoder to recover masked entities from context."""
    _report(train_masked_entity(config_path))


@cli.command("train-contrastive")
@click.option("--config", "config_path", type=click.Path(path_type=Path), required=True)
def train_contrastive_command(config_path):
    """Train the encoder's projection head on mined context pairs."""
    _report(train_contrastive(config_path))


@cli.command("pretrain-generator")
@click.option("--config", "config_path", type=click.Path(path_type=Path), required=True)
def pretrain_generator_command(config_path):
    """Pre-train (or continue pre-training) the causal generator."""
    _report(pretrain_generator(config_path))


# Keep the schemas importable next to the commands that consume them.
SCHEMAS = {
    "serve": SERVE_SCHEMA,
    "train-masked-entity": MASKED_ENTITY_SCHEMA,
    "train-contrastive": CONTRASTIVE_SCHEMA,
    "pretrain-generator": GENERATOR_SCHEMA,
}


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
        return EXIT_OK
    except TrainingDiverged as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_TRAINING
    except SidecarError as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_USAGE
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return EXIT_USAGE
    except click.ClickException as exc:
        exc.show()
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
