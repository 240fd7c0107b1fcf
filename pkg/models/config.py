"""
Pipeline configuration.
Handles built-in defaults, flat key=value config files, TMER_* environment
variables and CLI overrides, and records where every value came from.
"""

import os
import logging
from dataclasses import dataclass, fields, asdict
from typing import Any, Dict, Mapping, Optional, Tuple, Union, get_args, get_origin

import numpy as np
import psutil
from dotenv import dotenv_values

from .errors import ContractViolation

# Get logger for this module
logger = logging.getLogger(__name__)

ENV_PREFIX = "TMER_"

# order fixes the per-stage seed streams; append only
STAGES = ("prepare", "init-embed", "sample-paths", "encode-paths", "train", "evaluate", "explain")

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


@dataclass
class PipelineConfig:
    workdir: str = "work"
    interactions: str = ""
    metadata: str = ""
    dataset: str = ""
    seed: int = 0
    debug: bool = False
    # ingestion
    history_length: int = 12
    bridge_size: int = 2
    train_size: int = 4
    keep_short: bool = False
    include_test_buys: bool = False
    # node embeddings
    dim: int = 100
    walks_per_node: int = 10
    walk_length: int = 40
    window: int = 5
    walk_epochs: int = 5
    # path sampling
    k_paths: int = 5
    schema_set: str = "all"
    schema_file: str = "metapath_schemas.json"
    resample_paths: bool = False
    # model and training
    heads: int = 4
    n_neg: int = 4
    lr: Optional[float] = None
    epochs: int = 30
    batch_size: int = 32
    patience: int = 5
    val_negatives: int = 100
    ablation: str = "full"
    loss: str = "standard"
    # evaluation and explanation
    n_negatives: int = 500
    top_k: int = 10
    explain_users: int = 10
    workers: Optional[int] = None

    def __post_init__(self):
        if self.seed < 0:
            raise ContractViolation(f"seed must be non-negative, got {self.seed}")
        if self.dim % self.heads:
            raise ContractViolation(f"dim {self.dim} is not divisible by heads {self.heads}")
        if self.ablation not in ("full", "RUI", "RII"):
            raise ContractViolation(f"unknown ablation {self.ablation!r}")
        if self.loss == "negative-only":
            self.loss = "paper-literal"
        if self.loss not in ("standard", "paper-literal"):
            raise ContractViolation(f"unknown loss {self.loss!r}")

    @property
    def parallel_workers(self) -> int:
        """Worker count for walk generation, corpus sampling and evaluation."""
        return self.workers if self.workers is not None else default_workers()

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def default_workers() -> int:
    return psutil.cpu_count(logical=True) or 1


def normalize_key(key: str) -> str:
    return key.strip().lower().replace("-", "_")


_FIELDS = {f.name: f for f in fields(PipelineConfig)}


def _coerce(name: str, value: Any) -> Any:
    target = _FIELDS[name].type
    if get_origin(target) is Union:
        if value is None or (isinstance(value, str) and value.strip().lower() in ("", "none")):
            return None
        target = next(arg for arg in get_args(target) if arg is not type(None))
    if not isinstance(value, str):
        return target(value)
    text = value.strip()
    try:
        if target is bool:
            if text.lower() in _TRUE:
                return True
            if text.lower() in _FALSE:
                return False
            raise ValueError(text)
        return target(text)
    except ValueError:
        raise ContractViolation(f"config key {name!r}: cannot read {value!r} as {target.__name__}")


def read_config_file(path: str) -> Dict[str, str]:
    """Flat key=value file; keys may use hyphens or underscores."""
    if not os.path.isfile(path):
        raise ContractViolation(f"config file not found: {path}")
    values = {}
    for key, value in dotenv_values(path).items():
        name = normalize_key(key)
        if name not in _FIELDS:
            raise ContractViolation(f"unknown config key {key!r} in {path}")
        values[name] = value
    return values


def _from_environment(environ: Mapping[str, str]) -> Dict[str, str]:
    values = {}
    for key, value in environ.items():
        if not key.startswith(ENV_PREFIX):
            continue
        name = normalize_key(key[len(ENV_PREFIX):])
        if name in _FIELDS:
            values[name] = value
    return values


def load_config(cli_overrides: Optional[Mapping[str, Any]] = None, config_file: Optional[str] = None,
                environ: Optional[Mapping[str, str]] = None) -> Tuple[PipelineConfig, Dict[str, str]]:
    """
    Resolve the effective configuration.

    Precedence is CLI flag > config file > TMER_* environment > built-in
    default.

    Args:
        cli_overrides: Values given on the command line (None entries are ignored)
        config_file: Optional flat key=value file
        environ: Environment mapping; os.environ when omitted

    Returns:
        (PipelineConfig, {key: source}) with source one of cli/file/env/default
    """
    layers = [
        ("env", _from_environment(os.environ if environ is None else environ)),
        ("file", read_config_file(config_file) if config_file else {}),
        ("cli", {normalize_key(k): v for k, v in (cli_overrides or {}).items() if v is not None}),
    ]
    values: Dict[str, Any] = {}
    sources = {name: "default" for name in _FIELDS}
    for source, layer in layers:
        for name, value in layer.items():
            if name not in _FIELDS:
                raise ContractViolation(f"unknown config key {name!r}")
            values[name] = _coerce(name, value)
            sources[name] = source
    return PipelineConfig(**values), sources


def log_config(cfg: PipelineConfig, sources: Mapping[str, str], stage: str) -> None:
    logger.info(f"Effective configuration for stage '{stage}':")
    for name, value in cfg.to_dict().items():
        logger.info(f"  {name} = {value!r} ({sources.get(name, 'default')})")
    if stage in STAGES:
        logger.info(f"  stage seed = {stage_seed(cfg.seed, stage)}")


def stage_seed(seed: int, stage: str) -> int:
    """Independent 32-bit seed of a stage, derived from the run seed."""
    if stage not in STAGES:
        raise ContractViolation(f"unknown stage {stage!r}")
    sequence = np.random.SeedSequence(seed, spawn_key=(STAGES.index(stage),))
    return int(sequence.generate_state(1)[0])
