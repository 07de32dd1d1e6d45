from ._core import (
    ConfigError,
    ContractError,
    DimensionError,
    Error,
    NumericError,
    config_hash,
    default_config,
    ecdf,
    evaluate,
    evaluate_function,
    families,
    meta_train,
    normalize_config,
    sign_test,
    verify_theory,
)

__all__ = [
    "ConfigError",
    "ContractError",
    "DimensionError",
    "Error",
    "NumericError",
    "config_hash",
    "default_config",
    "ecdf",
    "evaluate",
    "evaluate_function",
    "families",
    "meta_train",
    "normalize_config",
    "sign_test",
    "verify_theory",
]
