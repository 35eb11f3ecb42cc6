"""
services/evaluation/results.py
Long-form results, the grid table (rows: feature set × model, columns: year-agnostic plus
the four buckets, cells: mean ± std over seeds with the test size) and the writers.
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from shared.schemas.schemas import YEAR_BUCKETS, ExperimentResult, ModelKind, Regime, RunManifest
from shared.utils.files import write_csv
from shared.utils.manifest import write_manifest_file

RESULTS_FILE = "results.csv"
TABLE_FILE = "results_table.md"
AGNOSTIC_COLUMN = "all"

RESULT_COLUMNS = ["task", "feature_set", "model_kind", "regime", "test_bucket", "seed", "auc", "n", "n_pos"]
_MODEL_TITLES = {ModelKind.RNN.value: "RNN", ModelKind.LOGISTIC.value: "Logistic"}
_FEATURESET_TITLES = {"dascena": "Dascena", "epic": "Epic", "epic_minus_icd": "Epic minus ICD"}


@dataclass
class Cell:
    aucs: List[float] = field(default_factory=list)
    sizes: List[int] = field(default_factory=list)

    @property
    def mean(self) -> float:
        return float(np.mean(self.aucs))

    @property
    def std(self) -> float:
        return float(np.std(self.aucs, ddof=1)) if len(self.aucs) > 1 else 0.0

    def render(self) -> str:
        if not self.aucs:
            return "n/a"
        n = int(round(np.mean(self.sizes)))
        return f"{self.mean:.3f} ± {self.std:.3f} (n={n})"


class ResultsTable:
    def __init__(self, results: Sequence[ExperimentResult],
                 feature_sets: Optional[Sequence[str]] = None,
                 models: Optional[Sequence[str]] = None):
        self.results = list(results)
        self.feature_sets = list(feature_sets or dict.fromkeys(r.feature_set for r in self.results))
        self.models = list(models or dict.fromkeys(r.model_kind for r in self.results))
        self.columns = [AGNOSTIC_COLUMN, *YEAR_BUCKETS]
        self.cells: Dict[Tuple[str, str, str], Cell] = {}
        for r in self.results:
            column = AGNOSTIC_COLUMN if r.regime == Regime.YEAR_AGNOSTIC.value else r.test_bucket
            cell = self.cells.setdefault((r.feature_set, r.model_kind, column), Cell())
            cell.aucs.append(r.auc)
            cell.sizes.append(r.n)

    @property
    def rows(self) -> List[Tuple[str, str]]:
        return [(fs, m) for fs in self.feature_sets for m in self.models]

    def cell(self, feature_set: str, model: str, column: str) -> Cell:
        return self.cells.get((feature_set, model, column), Cell())

    def to_markdown(self, title: str = "") -> str:
        header = ["Feature set", "Model", "Year-agnostic", *YEAR_BUCKETS]
        lines = []
        if title:
            lines += [f"# {title}", ""]
        lines.append("| " + " | ".join(header) + " |")
        lines.append("|" + "|".join("---" for _ in header) + "|")
        for fs, model in self.rows:
            name = _FEATURESET_TITLES.get(fs, fs)
            cells = [self.cell(fs, model, c).render() for c in self.columns]
            lines.append("| " + " | ".join([name, _MODEL_TITLES.get(model, model), *cells]) + " |")
        lines += ["", "Test AUC, mean ± std over seeds; n is the test-set size."]
        return "\n".join(lines) + "\n"


def results_frame(results: Sequence[ExperimentResult]) -> pd.DataFrame:
    rows = [r.model_dump(mode="json") for r in results]
    frame = pd.DataFrame(rows, columns=RESULT_COLUMNS)
    return frame.sort_values(["feature_set", "model_kind", "regime", "test_bucket", "seed"], kind="mergesort")


def write_results(
    results: Sequence[ExperimentResult],
    out_dir: Path,
    manifest: Optional[RunManifest] = None,
    feature_sets: Optional[Sequence[str]] = None,
    models: Optional[Sequence[str]] = None,
    title: str = "",
) -> List[Path]:
    out_dir = Path(out_dir)
    paths = [
        write_csv(results_frame(results), out_dir / RESULTS_FILE, float_format="%.17g"),
    ]
    table = ResultsTable(results, feature_sets, models)
    (out_dir / TABLE_FILE).write_text(table.to_markdown(title), encoding="utf-8")
    paths.append(out_dir / TABLE_FILE)
    if manifest is not None:
        paths.append(write_manifest_file(manifest, out_dir))
    return paths
