"""Python interface to the mtlta multi-task text classification core."""

from ._core import (
    CommandResult,
    ConfigError,
    DataError,
    ShapeError,
    accuracy,
    ci95_t,
    f1_macro,
    f1_positive,
    gradcheck_suite,
    kfold,
    make_tai_input,
    report,
    run,
    synth,
    synthesize,
    tokenize,
)

__all__ = [
    "CommandResult",
    "ConfigError",
    "DataError",
    "ShapeError",
    "accuracy",
    "ci95_t",
    "f1_macro",
    "f1_positive",
    "gradcheck_suite",
    "kfold",
    "make_tai_input",
    "report",
    "run",
    "synth",
    "synthesize",
    "tokenize",
]
