"""
shared/utils/files.py
Output-directory staging, config hashing and deterministic CSV/JSON writers.
"""

import hashlib
import json
import logging
import os
import shutil
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Iterator

import pandas as pd
from pydantic import BaseModel

from shared.exceptions import InputMissingError, OutputExistsError

logger = logging.getLogger(__name__)


# ── Hashing ───────────────────────────────────────────────────

def _jsonable(obj: Any) -> Any:
    if isinstance(obj, BaseModel):
        return obj.model_dump(mode="json")
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_jsonable)


def config_hash(obj: Any) -> str:
    """Short SHA-256 over the canonical JSON form of a config object."""
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()[:16]


# ── Writers ───────────────────────────────────────────────────

def write_json(path: Path, payload: Any) -> Path:
    path = Path(path)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=_jsonable) + "\n", encoding="utf-8")
    return path


def read_json(path: Path) -> Any:
    path = Path(path)
    if not path.is_file():
        raise InputMissingError(f"file not found: {path}")
    return json.loads(path.read_text(encoding="utf-8"))


def write_csv(df: pd.DataFrame, path: Path, float_format: str = "%.6f") -> Path:
    path = Path(path)
    df.to_csv(path, index=False, float_format=float_format, lineterminator="\n")
    return path


def require_file(path: Path, what: str = "input") -> Path:
    path = Path(path)
    if not path.exists():
        raise InputMissingError(f"{what} not found: {path}")
    return path


# ── Staged outputs ────────────────────────────────────────────

def check_output_dir(out: Path, force: bool) -> None:
    out = Path(out)
    if out.exists() and not out.is_dir():
        raise OutputExistsError(f"output path exists and is not a directory: {out}")
    if out.is_dir() and any(out.iterdir()) and not force:
        raise OutputExistsError(f"output directory {out} is not empty (use --force to overwrite)")


@contextmanager
def staged_output(out: Path, force: bool = False) -> Iterator[Path]:
    """
    Yield a sibling staging directory; on success it replaces ``out``, on failure it is
    removed so no partial outputs survive.
    """
    out = Path(out)
    check_output_dir(out, force)
    out.parent.mkdir(parents=True, exist_ok=True)
    staging = out.parent / f".{out.name}.staging-{os.getpid()}"
    if staging.exists():
        shutil.rmtree(staging)
    staging.mkdir()
    try:
        yield staging
    except BaseException:
        shutil.rmtree(staging, ignore_errors=True)
        raise
    if out.exists():
        shutil.rmtree(out)
    staging.rename(out)
    logger.debug(f"Committed outputs to {out}")
