"""Python access to the dualprior core: data generation, metrics, sampling and the CLI."""

from ._core import (
    ConfigError,
    DataError,
    Error,
    IoError,
    NumericError,
    dice_iou,
    diversity,
    forward_diffuse,
    frechet_distance,
    gate_w_a,
    generate_dataset,
    generator_defaults,
    image_features,
    kid,
    load_dataset,
    run_cli,
    sample,
    single_step_x0,
    texture_fidelity,
    transform_mask,
)

__version__ = "0.1.0"


def cli(*args: str) -> int:
    """Run a dualprior command, e.g. cli("gen-data", "--n", "4", "--out", "d")."""
    return run_cli([str(a) for a in args])
