"""
services/labeling/onset.py
Suspicion-of-infection detection and Sepsis-3 onset, plus the LOS and ICU-mortality labels.
All times are real hours since ICU intime.
"""

import bisect
import math
from typing import List, Optional, Sequence

import numpy as np

from config.settings import Settings, settings as default_settings
from services.labeling.sofa import reference_totals
from shared.models.models import SofaSeries
from shared.schemas.schemas import AdmissionRecord, CohortStay, SepsisOnset, SuspicionOfInfection


def is_antibiotic(item_id: Optional[str], drug_name: Optional[str] = None,
                  settings: Optional[Settings] = None) -> bool:
    """GSN code match, or a configured drug name contained in the order text."""
    cfg = (settings or default_settings).antibiotics
    if item_id and item_id.strip() in cfg.gsn_codes:
        return True
    text = " ".join(t for t in (drug_name, item_id) if t).lower()
    return any(name in text for name in cfg.names)


def detect_soi(
    antibiotic_times: Sequence[float],
    culture_times: Sequence[float],
    settings: Optional[Settings] = None,
) -> List[SuspicionOfInfection]:
    """
    Antibiotic first: a culture within ``culture_window_h`` after it. Culture first: an
    antibiotic within ``abx_window_h`` after it. The SOI time is the earlier event; candidates
    sharing a clock hour are merged into the earliest one.
    """
    cfg = (settings or default_settings).soi
    abx = sorted(float(t) for t in antibiotic_times)
    cultures = sorted(float(t) for t in culture_times)
    if not abx or not cultures:
        return []

    candidates = []
    for a in abx:
        i = bisect.bisect_left(cultures, a)
        if i < len(cultures) and cultures[i] <= a + cfg.culture_window_h:
            candidates.append((a, a, cultures[i]))
    for c in cultures:
        i = bisect.bisect_left(abx, c)
        if i < len(abx) and abx[i] <= c + cfg.abx_window_h:
            candidates.append((c, abx[i], c))
    candidates.sort()

    merged: List[SuspicionOfInfection] = []
    seen_hours = set()
    for soi_time, abx_time, culture_time in candidates:
        hour = math.floor(soi_time)
        if hour in seen_hours:
            continue
        seen_hours.add(hour)
        merged.append(SuspicionOfInfection(
            soi_time=soi_time, antibiotic_time=abx_time, culture_time=culture_time,
        ))
    return merged


def label_sepsis3(
    sofa: SofaSeries,
    sois: Sequence[SuspicionOfInfection],
    settings: Optional[Settings] = None,
) -> Optional[SepsisOnset]:
    """Earliest hour inside any SOI window whose SOFA rise over the reference reaches ``sofa.delta``."""
    cfg = (settings or default_settings).sofa
    n = sofa.n_hours
    if n == 0 or not sois:
        return None
    rise = sofa.totals - reference_totals(sofa, settings)
    qualifying = rise >= cfg.delta

    best: Optional[SepsisOnset] = None
    for soi in sorted(sois, key=lambda s: s.soi_time):
        lo = max(0, math.ceil(soi.soi_time - cfg.window_pre_h))
        hi = min(n - 1, math.floor(soi.soi_time + cfg.window_post_h))
        if lo > hi:
            continue
        hits = np.flatnonzero(qualifying[lo:hi + 1])
        if not hits.size:
            continue
        hour = lo + int(hits[0])
        if best is None or hour < best.onset_time:
            best = SepsisOnset(onset_time=float(hour), soi=soi, sofa_delta=int(rise[hour]))
    return best


def label_los(stay: CohortStay, settings: Optional[Settings] = None) -> int:
    threshold = (settings or default_settings).cohort.los_label_h
    return int(stay.los_hours >= threshold)


def label_mortality(stay: CohortStay, admission: Optional[AdmissionRecord] = None) -> int:
    """Death inside the ICU stay. Falls back to the stay's own deathtime when no admission is given."""
    deathtime = admission.deathtime if admission is not None else stay.deathtime
    if deathtime is None:
        return 0
    return int(stay.intime <= deathtime <= stay.outtime)
