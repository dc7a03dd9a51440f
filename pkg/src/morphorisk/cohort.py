"""Cohort table ingestion and outcome derivation.

The cohort file is comma-separated UTF-8 with LF line endings, an exact
header, and empty cells for missing values.  Category bins are
recomputed from raw age/BMI and cross-checked against the provided
columns.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np
import pandas as pd

from .errors import BinMismatch, RangeViolation, SchemaMismatch

HORIZON_DAYS = 365

COLUMNS = [
    "patient_id", "cohort", "sex", "age", "height_m", "bmi",
    "age_cat", "bmi_cat", "smoker", "functional_status", "asa_class",
    "emergency", "mortality_30d", "any_complication",
    "serious_complication", "unplanned_readmission", "transfusion",
    "severe_infection", "pulmonary_complication", "last_followup_days",
    "vital_status", "death_day", "nsqip_mortality_risk", "mask_path",
]

BINARY_OUTCOMES = (
    "mortality_30d", "any_complication", "serious_complication",
    "unplanned_readmission", "transfusion", "severe_infection",
    "pulmonary_complication",
)

AGE_CATS = ("<65", "65-75", "75-85", ">85")
BMI_CATS = ("<18.5", "18.5-24.99", "25-29.99", ">=30")


def age_category(age: float) -> str:
    """Bin edges: 65 and 75 inclusive in the middle band, 85 inclusive
    in the third."""
    if age < 65:
        return "<65"
    if age <= 75:
        return "65-75"
    if age <= 85:
        return "75-85"
    return ">85"


def bmi_category(bmi: float) -> str:
    if bmi < 18.5:
        return "<18.5"
    if bmi < 25:
        return "18.5-24.99"
    if bmi < 30:
        return "25-29.99"
    return ">=30"


@dataclass
class PatientRecord:
    patient_id: str
    cohort: str                      # development | validation
    sex: str
    age: float
    height_m: Optional[float]
    bmi: Optional[float]
    age_cat: str
    bmi_cat: Optional[str]
    smoker: int
    functional_status: str           # independent | non-independent
    asa_class: int
    emergency: int
    mortality_30d: Optional[int]
    any_complication: Optional[int]
    serious_complication: Optional[int]
    unplanned_readmission: Optional[int]
    transfusion: Optional[int]
    severe_infection: Optional[int]
    pulmonary_complication: Optional[int]
    last_followup_days: float
    vital_status: str                # alive | died
    death_day: Optional[float]
    nsqip_mortality_risk: Optional[float]
    mask_path: Optional[str]


@dataclass(frozen=True)
class DerivedOutcome:
    """One-year status plus the censored survival pair used by Cox."""

    one_year_status: str   # deceased | alive | unknown
    survival_time_days: float
    event: int


def derive_outcome(vital_status, death_day, last_followup_days,
                   horizon=HORIZON_DAYS) -> DerivedOutcome:
    """Status rules: death within the horizon is deceased; alive with
    follow-up beyond the horizon is alive; alive with follow-up inside
    it is unknown.  A death after the horizon counts as alive for the
    binary endpoint and censors at the horizon."""
    if vital_status == "died":
        if death_day is None:
            raise RangeViolation("died without a death_day")
        if death_day <= horizon:
            return DerivedOutcome("deceased", float(death_day), 1)
        return DerivedOutcome("alive", float(horizon), 0)
    if last_followup_days > horizon:
        return DerivedOutcome("alive", float(horizon), 0)
    return DerivedOutcome("unknown", float(last_followup_days), 0)


def _parse_opt_float(cell):
    return None if cell == "" else float(cell)


def _parse_opt_int(cell):
    return None if cell == "" else int(cell)


def read_cohort(path):
    """Parse and validate a cohort table.

    Returns (records, outcomes); all validation errors carry the
    1-based data row number.
    """
    records = []
    outcomes = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaMismatch(f"{path}: empty file") from None
        if header != COLUMNS:
            raise SchemaMismatch(
                f"{path}: header mismatch; expected {COLUMNS}, got {header}")
        for rowno, row in enumerate(reader, 1):
            if len(row) != len(COLUMNS):
                raise SchemaMismatch(
                    f"{path}:{rowno}: {len(row)} cells, expected "
                    f"{len(COLUMNS)}")
            cell = dict(zip(COLUMNS, row))
            try:
                rec = PatientRecord(
                    patient_id=cell["patient_id"],
                    cohort=cell["cohort"],
                    sex=cell["sex"],
                    age=float(cell["age"]),
                    height_m=_parse_opt_float(cell["height_m"]),
                    bmi=_parse_opt_float(cell["bmi"]),
                    age_cat=cell["age_cat"],
                    bmi_cat=cell["bmi_cat"] or None,
                    smoker=int(cell["smoker"]),
                    functional_status=cell["functional_status"],
                    asa_class=int(cell["asa_class"]),
                    emergency=int(cell["emergency"]),
                    mortality_30d=_parse_opt_int(cell["mortality_30d"]),
                    any_complication=_parse_opt_int(
                        cell["any_complication"]),
                    serious_complication=_parse_opt_int(
                        cell["serious_complication"]),
                    unplanned_readmission=_parse_opt_int(
                        cell["unplanned_readmission"]),
                    transfusion=_parse_opt_int(cell["transfusion"]),
                    severe_infection=_parse_opt_int(
                        cell["severe_infection"]),
                    pulmonary_complication=_parse_opt_int(
                        cell["pulmonary_complication"]),
                    last_followup_days=float(cell["last_followup_days"]),
                    vital_status=cell["vital_status"],
                    death_day=_parse_opt_float(cell["death_day"]),
                    nsqip_mortality_risk=_parse_opt_float(
                        cell["nsqip_mortality_risk"]),
                    mask_path=cell["mask_path"] or None,
                )
            except ValueError as exc:
                raise SchemaMismatch(f"{path}:{rowno}: {exc}") from None
            _validate_record(rec, path, rowno)
            records.append(rec)
            outcomes.append(derive_outcome(
                rec.vital_status, rec.death_day, rec.last_followup_days))
    return records, outcomes


def _validate_record(rec, path, rowno):
    where = f"{path}:{rowno}"
    if rec.sex not in ("M", "F"):
        raise RangeViolation(f"{where}: sex {rec.sex!r}")
    if rec.cohort not in ("development", "validation"):
        raise RangeViolation(f"{where}: cohort {rec.cohort!r}")
    if rec.vital_status not in ("alive", "died"):
        raise RangeViolation(f"{where}: vital_status {rec.vital_status!r}")
    if rec.functional_status not in ("independent", "non-independent"):
        raise RangeViolation(
            f"{where}: functional_status {rec.functional_status!r}")
    if not 1 <= rec.asa_class <= 5:
        raise RangeViolation(f"{where}: asa_class {rec.asa_class}")
    if rec.height_m is not None and not (0.5 < rec.height_m < 2.6):
        raise RangeViolation(f"{where}: height_m {rec.height_m}")
    if rec.bmi is not None and not (8 < rec.bmi < 100):
        raise RangeViolation(f"{where}: bmi {rec.bmi}")
    if rec.nsqip_mortality_risk is not None and not (
            0 <= rec.nsqip_mortality_risk <= 1):
        raise RangeViolation(
            f"{where}: nsqip risk {rec.nsqip_mortality_risk}")
    if rec.death_day is not None and rec.death_day > rec.last_followup_days:
        raise RangeViolation(
            f"{where}: death_day {rec.death_day} after last follow-up "
            f"{rec.last_followup_days}")
    if rec.vital_status == "died" and rec.death_day is None:
        raise RangeViolation(f"{where}: died without a death_day")
    expect_age = age_category(rec.age)
    if rec.age_cat != expect_age:
        raise BinMismatch(
            f"{where}: age_cat {rec.age_cat!r} != recomputed "
            f"{expect_age!r} for age {rec.age}")
    if rec.bmi is not None:
        expect_bmi = bmi_category(rec.bmi)
        if rec.bmi_cat != expect_bmi:
            raise BinMismatch(
                f"{where}: bmi_cat {rec.bmi_cat!r} != recomputed "
                f"{expect_bmi!r} for bmi {rec.bmi}")


def _cell(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_cohort(path, records):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(COLUMNS)
        for rec in records:
            writer.writerow([_cell(getattr(rec, c)) for c in COLUMNS])


def cohort_frame(records, outcomes) -> pd.DataFrame:
    """Flat analysis frame with derived one-year columns.

    ``mortality_1y`` is NaN for patients whose one-year status is
    unknown; ``surv_time``/``surv_event`` carry the censored pair.
    """
    rows = []
    for rec, out in zip(records, outcomes):
        row = {c: getattr(rec, c) for c in COLUMNS}
        row["one_year_status"] = out.one_year_status
        row["mortality_1y"] = (
            np.nan if out.one_year_status == "unknown"
            else float(out.one_year_status == "deceased"))
        row["surv_time"] = out.survival_time_days
        row["surv_event"] = out.event
        rows.append(row)
    frame = pd.DataFrame(rows)
    for col in ("height_m", "bmi", "nsqip_mortality_risk") + BINARY_OUTCOMES:
        frame[col] = pd.to_numeric(frame[col])
    return frame
