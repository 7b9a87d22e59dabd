"""Python bindings for the gradconceal C++ core."""

from ._core import (
    Classifier,
    ConfigError,
    ContractError,
    Error,
    FormatError,
    IntegrityError,
    IoError,
    NumericError,
    ShapeError,
    accuracy,
    attack,
    attack_robustness,
    build_smallcnn,
    gcm_apply,
    gcm_grad_multiplier,
    load_checkpoint,
    local_sign_entropy,
    project,
    render_sign_map,
    run_experiment,
    sign_map,
)

__all__ = [name for name in dir() if not name.startswith("_")]
