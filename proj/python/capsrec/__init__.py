"""Sequential recommendation for shared accounts: graph capsule network core.

The heavy lifting lives in the compiled ``_core`` extension; this package
re-exports its public surface.
"""

from ._core import (
    ConfigError,
    Dataset,
    DataError,
    DivergenceError,
    GraphError,
    Model,
    NumericError,
    __version__,
    expected_param_count,
    load_dataset,
    split_train_test,
    synthesize,
)

__all__ = [
    "ConfigError",
    "DataError",
    "Dataset",
    "DivergenceError",
    "GraphError",
    "Model",
    "NumericError",
    "__version__",
    "expected_param_count",
    "load_dataset",
    "split_train_test",
    "synthesize",
]
