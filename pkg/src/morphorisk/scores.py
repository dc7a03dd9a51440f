"""Body-composition score catalog.

Direct tissue areas/volumes and densities, within-body ratios,
demographic-adjusted indices, and sex-normalized variants, measured at
nine planar levels (T12..L4 plus inter-level midplanes) and over the
T12..L4 3D block.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import (CatalogError, MissingDemographic, MissingStats,
                     OutOfRange)
from .volume import (ALL_LEVELS, PLANAR_LEVELS, Demographics, LabeledVolume,
                     LevelId, TissueLabel, VertebralMap, slice_for_level,
                     z_range_3d)

# Direct per-region measurements
DIRECT_METRICS = ("SMA", "SMD", "SFA", "VFA", "MFA", "BODY")

# Within-body derived scores (SMFD is density-valued and computed from
# voxel HU sums alongside SMD rather than from areas)
RATIO_METRICS = ("SMFA", "SMFD", "MFR", "VFA/SFA", "SFA/SMA", "VFA/SMA",
                 "MFA/SMA", "SFA/BODY", "VFA/BODY", "MFA/BODY")

# Demographic-adjusted scores; SMI/FMI/SOI live at L3 only
L3_ONLY_METRICS = ("SMI", "FMI", "SOI")
DEMO_METRICS = L3_ONLY_METRICS + ("VFA/BMI",)

# Every metric except BODY has a sex-normalized N_ variant
UNNORMALIZED = frozenset({"BODY"})

_AREA_OF = {"SMA": TissueLabel.SKELETAL_MUSCLE,
            "SFA": TissueLabel.SUBCUTANEOUS_FAT,
            "VFA": TissueLabel.VISCERAL_FAT,
            "MFA": TissueLabel.INTERMUSCULAR_FAT}

_LEVEL_ORDER = {lv: i for i, lv in enumerate(ALL_LEVELS)}


def unit_for(metric: str, level: LevelId) -> str:
    base = metric[2:] if metric.startswith("N_") else metric
    if metric.startswith("N_"):
        return "dimensionless"
    if base in ("SMA", "SFA", "VFA", "MFA", "BODY", "SMFA"):
        return "mm3" if level == LevelId.VOL3D else "mm2"
    if base in ("SMD", "SMFD"):
        return "HU"
    if base in ("SMI", "FMI"):
        return "cm2/m2"
    return "dimensionless"


def catalog_keys():
    """Canonical ordered key list of the full catalog (the constant K).

    Ordered by (metric name, anatomical level order); normalized N_
    variants share their base metric's levels.
    """
    keys = []
    for m in DIRECT_METRICS + RATIO_METRICS:
        for lv in ALL_LEVELS:
            keys.append((m, lv))
            if m not in UNNORMALIZED:
                keys.append((f"N_{m}", lv))
    for m in L3_ONLY_METRICS:
        keys.append((m, LevelId.L3))
        keys.append((f"N_{m}", LevelId.L3))
    for lv in ALL_LEVELS:
        keys.append(("VFA/BMI", lv))
        keys.append(("N_VFA/BMI", lv))
    keys.sort(key=lambda k: (k[0], _LEVEL_ORDER[k[1]]))
    return keys


CATALOG_KEYS = catalog_keys()
CATALOG_SIZE = len(CATALOG_KEYS)


def column_name(metric: str, level: LevelId) -> str:
    return f"{metric}@{level.value}"


def parse_column(name: str):
    metric, _, lv = name.rpartition("@")
    return metric, LevelId(lv)


@dataclass
class ScoreVector:
    """Ordered (metric, level) -> value map; None marks a missing value
    (empty defining region or unavailable normalization stats)."""

    values: dict = field(default_factory=dict)

    def set(self, metric, level, value):
        key = (metric, level)
        if key in self.values:
            raise ValueError(f"duplicate score key {key}")
        self.values[key] = value

    def get(self, metric, level):
        return self.values[(metric, level)]

    def __len__(self):
        return len(self.values)

    def items(self):
        return self.values.items()

    def sorted(self):
        """Copy with keys in canonical (metric, level-order) order."""
        out = ScoreVector()
        for key in sorted(self.values,
                          key=lambda k: (k[0], _LEVEL_ORDER[k[1]])):
            out.values[key] = self.values[key]
        return out


@dataclass
class CohortNormStats:
    """Per-(metric, level, sex) mean/sd used for z-score normalization.

    Entries with non-positive sd are rejected at construction.
    """

    entries: dict = field(default_factory=dict)
    provenance: str = ""

    def __post_init__(self):
        for key, (mean, sd) in self.entries.items():
            if not sd > 0:
                raise ValueError(f"sd must be > 0 for {key}, got {sd}")

    def add(self, metric, level, sex, mean, sd):
        if not sd > 0:
            raise ValueError(f"sd must be > 0 for {(metric, level, sex)}")
        self.entries[(metric, level, sex)] = (float(mean), float(sd))

    def lookup(self, metric, level, sex):
        return self.entries.get((metric, level, sex))

    @classmethod
    def fit(cls, catalogs, sexes, provenance=""):
        """Fit per-sex moments over a cohort of raw score vectors.

        Metrics whose within-sex values are all missing, singleton, or
        constant get no entry (normalization then yields Missing).
        """
        by_key = {}
        for sv, sex in zip(catalogs, sexes):
            for (metric, level), value in sv.items():
                if metric.startswith("N_") or value is None:
                    continue
                by_key.setdefault((metric, level, sex), []).append(value)
        stats = cls(provenance=provenance)
        for key, vals in sorted(by_key.items()):
            if len(vals) < 2:
                continue
            arr = np.asarray(vals, dtype=np.float64)
            sd = float(arr.std(ddof=1))
            if sd > 0:
                stats.entries[key] = (float(arr.mean()), sd)
        return stats


def tissue_area_2d(vol: LabeledVolume, z: int, tissue: TissueLabel) -> float:
    """Cross-sectional area (mm^2) of one tissue at slice z."""
    vol.check_z(z)
    count = int(np.count_nonzero(vol.labels[:, :, z] == int(tissue)))
    sx, sy, _ = vol.spacing
    return count * sx * sy


def tissue_volume_3d(vol, z_lo, z_hi, tissue) -> float:
    """Tissue volume (mm^3) over the inclusive slice range [z_lo, z_hi]."""
    vol.check_z(z_lo)
    vol.check_z(z_hi)
    if z_lo > z_hi:
        raise OutOfRange(f"z_lo {z_lo} > z_hi {z_hi}")
    count = int(np.count_nonzero(
        vol.labels[:, :, z_lo:z_hi + 1] == int(tissue)))
    sx, sy, sz = vol.spacing
    return count * sx * sy * sz


def mean_hu(vol, region, tissues):
    """Mean HU over voxels whose label is in ``tissues``.

    ``region`` is a slice index or an inclusive (z_lo, z_hi) range.
    Returns None when no voxel qualifies (never 0: 0 HU is water).
    """
    if isinstance(region, tuple):
        z_lo, z_hi = region
        vol.check_z(z_lo)
        vol.check_z(z_hi)
        if z_lo > z_hi:
            raise OutOfRange(f"z_lo {z_lo} > z_hi {z_hi}")
        lab = vol.labels[:, :, z_lo:z_hi + 1]
        hu = vol.hu[:, :, z_lo:z_hi + 1]
    else:
        vol.check_z(region)
        lab = vol.labels[:, :, region]
        hu = vol.hu[:, :, region]
    mask = np.isin(lab, [int(t) for t in tissues])
    count = int(np.count_nonzero(mask))
    if count == 0:
        return None
    return float(hu[mask].astype(np.float64).sum()) / count


def body_area(vol, z) -> float:
    """Area (mm^2) of all voxels with HU strictly above -1000 at slice z.

    The label grid is deliberately not consulted.
    """
    vol.check_z(z)
    count = int(np.count_nonzero(
        vol.hu[:, :, z] > kernels.BODY_HU_THRESHOLD))
    sx, sy, _ = vol.spacing
    return count * sx * sy


def _ratio(num, den):
    if num is None or den is None or den == 0:
        return None
    return num / den


def derived_scores(direct: ScoreVector, level: LevelId) -> ScoreVector:
    """Within-body ratio scores at one level from its direct scores.

    SMFD is density-valued and is produced by the direct extraction pass
    (it needs voxel HU sums), so it is not emitted here.
    """
    sma = direct.get("SMA", level)
    sfa = direct.get("SFA", level)
    vfa = direct.get("VFA", level)
    mfa = direct.get("MFA", level)
    body = direct.get("BODY", level)
    out = ScoreVector()
    smfa = None if (sma is None or mfa is None) else sma + mfa
    out.set("SMFA", level, smfa)
    out.set("MFR", level, _ratio(sma, None if vfa is None or sfa is None
                                 else vfa + sfa))
    out.set("VFA/SFA", level, _ratio(vfa, sfa))
    out.set("SFA/SMA", level, _ratio(sfa, sma))
    out.set("VFA/SMA", level, _ratio(vfa, sma))
    out.set("MFA/SMA", level, _ratio(mfa, sma))
    out.set("SFA/BODY", level, _ratio(sfa, body))
    out.set("VFA/BODY", level, _ratio(vfa, body))
    out.set("MFA/BODY", level, _ratio(mfa, body))
    return out


def demographic_scores(direct: ScoreVector, demo: Demographics) -> ScoreVector:
    """Height/BMI-adjusted scores: SMI, FMI, SOI at L3 (mm^2 -> cm^2 is
    /100) and VFA/BMI at every level."""
    if demo.height_m is None or demo.bmi is None:
        raise MissingDemographic("height and bmi required")
    out = ScoreVector()
    sma_l3 = direct.get("SMA", LevelId.L3)
    sfa_l3 = direct.get("SFA", LevelId.L3)
    vfa_l3 = direct.get("VFA", LevelId.L3)
    h2 = demo.height_m ** 2
    smi = None if sma_l3 is None else (sma_l3 / 100.0) / h2
    fmi = None if sfa_l3 is None else (sfa_l3 / 100.0) / h2
    out.set("SMI", LevelId.L3, smi)
    out.set("FMI", LevelId.L3, fmi)
    out.set("SOI", LevelId.L3, _ratio(smi, vfa_l3))
    for lv in ALL_LEVELS:
        out.set("VFA/BMI", lv, _ratio(direct.get("VFA", lv), demo.bmi))
    return out


def sex_normalize(raw: ScoreVector, demo: Demographics,
                  stats: CohortNormStats, strict=True) -> ScoreVector:
    """Z-score each metric against its within-sex cohort moments.

    Missing raw values propagate.  With strict=True an absent stats
    entry raises MissingStats; otherwise it yields Missing.
    """
    out = ScoreVector()
    for (metric, level), value in raw.items():
        if metric.startswith("N_") or metric in UNNORMALIZED:
            continue
        entry = stats.lookup(metric, level, demo.sex)
        if entry is None:
            if strict:
                raise MissingStats(f"no stats for {(metric, level, demo.sex)}")
            out.set(f"N_{metric}", level, None)
            continue
        mean, sd = entry
        norm = None if value is None else (value - mean) / sd
        out.set(f"N_{metric}", level, norm)
    return out


def _direct_from_slice_stats(counts, hu_sums, body_counts, spacing,
                             vmap: VertebralMap) -> ScoreVector:
    """Direct + density scores for all levels from one-pass voxel tallies."""
    sx, sy, sz = spacing
    pix = sx * sy
    out = ScoreVector()

    def emit(level, c, h, b, factor):
        for m, t in _AREA_OF.items():
            out.set(m, level, c[int(t)] * factor)
        out.set("BODY", level, b * factor)
        m_ct = c[int(TissueLabel.SKELETAL_MUSCLE)]
        f_ct = c[int(TissueLabel.INTERMUSCULAR_FAT)]
        m_hu = h[int(TissueLabel.SKELETAL_MUSCLE)]
        f_hu = h[int(TissueLabel.INTERMUSCULAR_FAT)]
        out.set("SMD", level, None if m_ct == 0 else m_hu / m_ct)
        smf_ct = m_ct + f_ct
        out.set("SMFD", level,
                None if smf_ct == 0 else (m_hu + f_hu) / smf_ct)

    for level in PLANAR_LEVELS:
        z = slice_for_level(vmap, level)
        emit(level, counts[z], hu_sums[z], body_counts[z], pix)
    z_lo, z_hi = z_range_3d(vmap)
    c3 = counts[z_lo:z_hi + 1].sum(axis=0)
    h3 = hu_sums[z_lo:z_hi + 1].sum(axis=0)
    b3 = body_counts[z_lo:z_hi + 1].sum()
    emit(LevelId.VOL3D, c3, h3, b3, pix * sz)
    return out


def compute_catalog(vol: LabeledVolume, vmap: VertebralMap,
                    demo: Demographics, stats: CohortNormStats) -> ScoreVector:
    """Full per-patient score catalog, canonically ordered.

    Always emits exactly CATALOG_SIZE entries; inapplicable or
    undefined values are Missing, never dropped.
    """
    vmap.validate_against(vol)
    failures = []
    counts, hu_sums, body_counts = kernels.slice_label_stats(
        np.ascontiguousarray(vol.labels, dtype=np.uint8),
        np.ascontiguousarray(vol.hu, dtype=np.int16))
    out = _direct_from_slice_stats(counts, hu_sums, body_counts,
                                   vol.spacing, vmap)
    for level in ALL_LEVELS:
        try:
            ratios = derived_scores(out, level)
        except Exception as exc:  # keyed failure, keep going
            failures.append(("derived", level, exc))
            continue
        for (m, lv), v in ratios.items():
            if (m, lv) not in out.values:
                out.set(m, lv, v)
    try:
        for (m, lv), v in demographic_scores(out, demo).items():
            out.set(m, lv, v)
    except MissingDemographic as exc:
        failures.append(("demographic", LevelId.L3, exc))
    for (m, lv), v in sex_normalize(out, demo, stats, strict=False).items():
        out.set(m, lv, v)
    if failures:
        raise CatalogError(failures)
    result = out.sorted()
    assert len(result) == CATALOG_SIZE
    return result
