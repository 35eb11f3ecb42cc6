"""
services/models/bundle.py
A trained model together with what scoring needs: the static encoder (frozen vocabularies),
the standardiser fit on the training split and the training curve.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional

from services.features.standardize import Standardizer
from services.features.static import StaticEncoder
from services.models.checkpoint import MODEL_FILE, load_checkpoint, save_checkpoint
from services.models.networks import Classifier
from services.models.training import TrainingHistory
from shared.exceptions import InputMissingError
from shared.schemas.schemas import FeatureSetSpec

ENCODER_FILE = "static_encoder.json"
SCALER_FILE = "standardizer.json"


@dataclass
class ModelBundle:
    model: Classifier
    encoder: StaticEncoder
    scaler: Standardizer
    history: Optional[TrainingHistory] = None

    def save(self, out_dir: Path) -> List[Path]:
        out_dir = Path(out_dir)
        paths = [
            save_checkpoint(self.model, out_dir / MODEL_FILE, extra={"featureset": self.encoder.spec.name}),
            self.encoder.save(out_dir / ENCODER_FILE),
            self.scaler.save(out_dir / SCALER_FILE),
        ]
        if self.history is not None:
            paths.append(self.history.write(out_dir))
        return paths

    @classmethod
    def load(cls, in_dir: Path, spec: FeatureSetSpec) -> "ModelBundle":
        in_dir = Path(in_dir)
        for name in (MODEL_FILE, ENCODER_FILE, SCALER_FILE):
            if not (in_dir / name).is_file():
                raise InputMissingError(f"model directory {in_dir} has no {name}")
        return cls(
            model=load_checkpoint(in_dir / MODEL_FILE),
            encoder=StaticEncoder.from_json(spec, (in_dir / ENCODER_FILE).read_text(encoding="utf-8")),
            scaler=Standardizer.from_json((in_dir / SCALER_FILE).read_text(encoding="utf-8")),
        )
