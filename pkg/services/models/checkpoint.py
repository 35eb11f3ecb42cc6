"""
services/models/checkpoint.py
Model checkpoints in the workbench binary container. The header records the format
version, model kind, dimensions and the hash of the training config.
"""

from pathlib import Path
from typing import Any, Dict, Optional

from services.models.networks import Classifier, build_model
from shared.exceptions import SchemaError
from shared.schemas.schemas import TrainConfig
from shared.utils.container import read_container, write_container
from shared.utils.files import config_hash

CHECKPOINT_FORMAT = "sdw-model"
CHECKPOINT_VERSION = 1
MODEL_FILE = "model.bin"


def save_checkpoint(model: Classifier, path: Path, extra: Optional[Dict[str, Any]] = None) -> Path:
    meta = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "kind": model.kind,
        "dims": {"n_features": model.n_features, "n_static": model.n_static,
                 "hidden_size": model.config.hidden_size},
        "config_hash": config_hash(model.config),
        "train_config": model.config.model_dump(mode="json"),
        "extra": extra or {},
    }
    return write_container(path, meta, model.state())


def load_checkpoint(path: Path) -> Classifier:
    meta, arrays = read_container(path)
    if meta.get("format") != CHECKPOINT_FORMAT:
        raise SchemaError(f"{path} is not a model checkpoint")
    if meta.get("version") != CHECKPOINT_VERSION:
        raise SchemaError(f"{path}: checkpoint version {meta.get('version')} is not supported")
    config = TrainConfig.model_validate(meta["train_config"])
    dims = meta["dims"]
    model = build_model(meta["kind"], dims["n_features"], dims["n_static"], config)
    return model.load_state(arrays)


def checkpoint_meta(path: Path) -> Dict[str, Any]:
    meta, _ = read_container(path)
    return meta
