"""
shared/utils/manifest.py
Run-manifest helpers: a timed stage context that records status, seconds and output
files (relative to the run directory) into a RunManifest.
"""

import time
from contextlib import contextmanager
from pathlib import Path
from typing import Iterator

from shared.schemas.schemas import CellStatus, RunManifest, StageRecord
from shared.utils.files import write_json

MANIFEST_FILE = "run_manifest.json"


def relative_outputs(record: StageRecord, root: Path) -> None:
    root = Path(root).resolve()
    rel = []
    for p in record.outputs:
        try:
            rel.append(str(Path(p).resolve().relative_to(root)))
        except ValueError:
            rel.append(str(p))
    record.outputs = sorted(set(rel))


@contextmanager
def recorded_stage(manifest: RunManifest, name: str, root: Path) -> Iterator[StageRecord]:
    """Failures are recorded on the stage and re-raised."""
    record = StageRecord(stage=name)
    start = time.perf_counter()
    try:
        yield record
    except BaseException as exc:
        record.status = CellStatus.FAILED
        record.error = str(exc)
        raise
    finally:
        record.seconds = round(time.perf_counter() - start, 3)
        relative_outputs(record, root)
        manifest.record(record)


def write_manifest_file(manifest: RunManifest, root: Path) -> Path:
    """Writes run_manifest.json and lists it under the last stage."""
    if manifest.stages and MANIFEST_FILE not in manifest.outputs:
        manifest.stages[-1].outputs.append(MANIFEST_FILE)
    return write_json(Path(root) / MANIFEST_FILE, manifest.model_dump(mode="json"))
