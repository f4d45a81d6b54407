"""Stackelberg-game machine unlearning toolkit."""

from sgunlearn._core import (
    ContractError,
    DatasetBundle,
    ForgetPartition,
    Model,
    NumericError,
    ParseError,
    SolverError,
    audit_report,
    fine_tune,
    gen_gaussian_mixture,
    gradient_ascent,
    influence_unlearn,
    ks_two_sample,
    l1_sparse,
    load_ckpt,
    load_csv,
    random_label,
    retrain,
    save_ckpt,
    save_csv,
    sg_unlearn,
    split_forget_classwise,
    split_forget_random,
    train,
    wasserstein1,
)

__all__ = [
    "ContractError",
    "DatasetBundle",
    "ForgetPartition",
    "Model",
    "NumericError",
    "ParseError",
    "SolverError",
    "audit_report",
    "fine_tune",
    "gen_gaussian_mixture",
    "gradient_ascent",
    "influence_unlearn",
    "ks_two_sample",
    "l1_sparse",
    "load_ckpt",
    "load_csv",
    "random_label",
    "retrain",
    "save_ckpt",
    "save_csv",
    "sg_unlearn",
    "split_forget_classwise",
    "split_forget_random",
    "train",
    "wasserstein1",
]

__version__ = "0.1.0"
