"""Seeded synthetic cohorts: geometric phantoms with rasterized truth
counts, planted-effect outcomes, and fully reproducible file output.

The generator doubles as the test oracle: every tissue region is painted
from explicit coordinate masks whose voxel counts and HU sums are
recorded as they are assigned, independently of the catalog's one-pass
tally over the finished grid.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .cohort import (PatientRecord, age_category, bmi_category,
                     write_cohort)
from .errors import ConfigInvalid
from .mvol import write_mvol, write_vertebral_map
from .volume import LabeledVolume, TissueLabel

HU_AIR = -1024
HU_MUSCLE = 45
HU_FAT = -95
HU_IMF = -60
HU_ORGAN = 40


@dataclass
class PhantomTruth:
    """Rasterized ground truth accumulated while painting."""

    counts: np.ndarray    # (nz, 5) voxels per label per slice
    hu_sums: np.ndarray   # (nz, 5)
    body: np.ndarray      # (nz,) voxels with HU > -1000


def generate_phantom(rng, dims=(48, 48, 40), spacing=(1.5, 1.5, 4.0),
                     body_r=20.0, muscle_r=15.0, visceral_r=9.0,
                     muscle_hu=HU_MUSCLE, imf_rate=0.05,
                     organ_r=3.0):
    """Concentric-ring torso phantom.

    Outside-in per slice: air, subcutaneous fat ring, muscle annulus
    (with a sprinkle of intermuscular fat), visceral fat disc, and an
    unlabeled organ blob (tests that BODY ignores the label grid).
    Radii get a small per-slice wobble so 2D and 3D scores differ.
    """
    nx, ny, nz = dims
    if not (0 < visceral_r < muscle_r < body_r):
        raise ConfigInvalid(
            f"radii must nest: {visceral_r} < {muscle_r} < {body_r}")
    muscle_hu_z = np.broadcast_to(
        np.asarray(muscle_hu, dtype=np.int64), (nz,))
    hu = np.full(dims, HU_AIR, dtype=np.int16)
    labels = np.zeros(dims, dtype=np.uint8)
    counts = np.zeros((nz, 5), dtype=np.int64)
    hu_sums = np.zeros((nz, 5), dtype=np.float64)
    body = np.zeros(nz, dtype=np.int64)
    cx, cy = (nx - 1) / 2.0, (ny - 1) / 2.0
    xs, ys = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    r2 = (xs - cx) ** 2 + (ys - cy) ** 2
    for z in range(nz):
        wobble = 1.0 + 0.08 * math.sin(2.0 * math.pi * z / nz)
        rb = body_r * wobble
        rm = muscle_r * wobble
        rv = visceral_r * wobble
        in_body = r2 <= rb * rb
        in_muscle_band = r2 <= rm * rm
        in_visceral = r2 <= rv * rv
        sub_mask = in_body & ~in_muscle_band
        mus_mask = in_muscle_band & ~in_visceral
        organ_mask = ((xs - cx - rv / 2.0) ** 2 + (ys - cy) ** 2
                      <= organ_r * organ_r) & in_visceral
        vis_mask = in_visceral & ~organ_mask

        def paint(mask, label, base_hu):
            idx = np.flatnonzero(mask)
            n = len(idx)
            if n == 0:
                return 0
            jitter = rng.integers(-3, 4, size=n)
            vals = (base_hu + jitter).astype(np.int16)
            flat_hu = hu[:, :, z].ravel()
            flat_lab = labels[:, :, z].ravel()
            flat_hu[idx] = vals
            flat_lab[idx] = int(label)
            hu[:, :, z] = flat_hu.reshape(nx, ny)
            labels[:, :, z] = flat_lab.reshape(nx, ny)
            counts[z, int(label)] += n
            hu_sums[z, int(label)] += float(vals.sum(dtype=np.int64))
            body[z] += n  # every painted HU is > -1000
            return n

        paint(sub_mask, TissueLabel.SUBCUTANEOUS_FAT, HU_FAT)
        # intermuscular fat: a deterministic sprinkle inside the annulus
        mus_idx = np.flatnonzero(mus_mask)
        n_imf = int(round(imf_rate * len(mus_idx)))
        imf_sel = rng.choice(len(mus_idx), size=n_imf, replace=False) \
            if n_imf else np.empty(0, dtype=int)
        imf_mask = np.zeros_like(mus_mask)
        imf_mask.ravel()[mus_idx[imf_sel]] = True
        paint(mus_mask & ~imf_mask, TissueLabel.SKELETAL_MUSCLE,
              int(muscle_hu_z[z]))
        paint(imf_mask, TissueLabel.INTERMUSCULAR_FAT, HU_IMF)
        paint(vis_mask, TissueLabel.VISCERAL_FAT, HU_FAT)
        # the organ stays BACKGROUND-labeled but contributes to BODY
        n_organ = paint(organ_mask, TissueLabel.BACKGROUND, HU_ORGAN)
        # remaining voxels are air: label 0, HU -1024
        n_air = nx * ny - int(counts[z, 1:].sum()) - n_organ
        counts[z, 0] += n_air
        hu_sums[z, 0] += float(n_air) * HU_AIR
    vol = LabeledVolume(hu=hu, labels=labels, spacing=spacing)
    return vol, PhantomTruth(counts=counts, hu_sums=hu_sums, body=body)


def default_vertebral_centroids(nz=40):
    """Evenly spaced centroids; z grows from head to feet, so the map is
    written with z_increases_toward_head=False."""
    step = nz // 8
    return {"T12": step, "L1": 2 * step + 1, "L2": 4 * step - 1,
            "L3": 5 * step, "L4": 7 * step - 1}


@dataclass
class SynthConfig:
    """Knobs of the planted-truth generator."""

    n_patients: int = 60
    dims: tuple = (48, 48, 40)
    spacing: tuple = (1.5, 1.5, 4.0)
    dev_fraction: float = 0.5
    # hazard: lambda_i = base_rate * exp(frailty_log_hr * frailty_i)
    base_rate: float = 1.0 / 2000.0
    frailty_log_hr: float = 0.9
    censor_rate: float = 0.2
    # muscle HU decreases with frailty: the planted image signal
    muscle_hu_base: float = 48.0
    muscle_hu_slope: float = -7.0
    # when set, the HU signal is confined to that vertebra's slice and
    # the remaining slices carry frailty-independent noise
    planted_level: str = ""
    # logistic complications on the frailty + asa effect
    complication_intercept: float = -1.6
    complication_frailty_beta: float = 0.8
    # NSQIP-analog risk correlated with frailty
    nsqip_frailty_beta: float = 1.2
    nsqip_intercept: float = -3.4
    followup_max_days: int = 1200

    def validate(self):
        if self.n_patients < 0:
            raise ConfigInvalid("n_patients must be >= 0")
        if not 0 <= self.censor_rate <= 1:
            raise ConfigInvalid("censor_rate must be in [0, 1]")
        if not 0 < self.dev_fraction <= 1:
            raise ConfigInvalid("dev_fraction must be in (0, 1]")


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def generate_synthetic_cohort(config: SynthConfig, seed, out_dir):
    """Emit MVOL phantoms, vertebral maps, the cohort table, and a
    ground-truth sidecar; fully reproducible from the seed."""
    config.validate()
    out = Path(out_dir)
    masks = out / "masks"
    maps = out / "maps"
    masks.mkdir(parents=True, exist_ok=True)
    maps.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed))
    n = config.n_patients
    nz = config.dims[2]
    centroids = default_vertebral_centroids(nz)
    records = []
    n_dev = int(round(config.dev_fraction * n))
    for i in range(n):
        prng = np.random.default_rng(
            np.random.SeedSequence(entropy=seed, spawn_key=(1, i)))
        frailty = float(prng.normal())
        sex = "M" if prng.uniform() < 0.5 else "F"
        age = float(np.round(prng.uniform(45, 84), 1))
        height = float(np.round(prng.normal(1.75 if sex == "M" else 1.62,
                                            0.07), 3))
        height = min(max(height, 1.4), 2.1)
        bmi = float(np.round(prng.uniform(19, 41), 2))
        smoker = int(prng.uniform() < 0.25)
        functional = ("non-independent" if prng.uniform() < 0.2
                      else "independent")
        asa = int(prng.choice([2, 3, 4], p=[0.35, 0.5, 0.15]))
        signal_hu = int(round(config.muscle_hu_base
                              + config.muscle_hu_slope * frailty))
        if config.planted_level:
            if config.planted_level not in centroids:
                raise ConfigInvalid(
                    f"planted_level {config.planted_level!r} is not a "
                    f"mapped vertebra")
            muscle_hu = np.rint(config.muscle_hu_base
                                + 3.0 * prng.normal(size=nz)).astype(int)
            muscle_hu[centroids[config.planted_level]] = signal_hu
        else:
            muscle_hu = signal_hu
        body_r = 16.0 + 0.22 * bmi + (0.8 if sex == "M" else 0.0)
        muscle_r = 0.72 * body_r + 0.4 * prng.normal()
        visceral_r = 0.45 * body_r
        vol, _ = generate_phantom(
            prng, dims=config.dims, spacing=config.spacing,
            body_r=body_r, muscle_r=muscle_r, visceral_r=visceral_r,
            muscle_hu=muscle_hu)
        pid = f"P{i:04d}"
        write_mvol(masks / f"{pid}.mvol", vol,
                   z_increases_toward_head=False)
        write_vertebral_map(maps / f"{pid}.vmap", centroids)
        # survival: exponential with frailty-scaled hazard
        lam = config.base_rate * math.exp(config.frailty_log_hr * frailty)
        death = float(prng.exponential(1.0 / lam)) + 1.0
        censor = (float(prng.uniform(30, config.followup_max_days))
                  if prng.uniform() < config.censor_rate
                  else float(config.followup_max_days))
        if death <= censor:
            vital, death_day = "died", float(round(death, 1))
            followup = death_day
        else:
            vital, death_day = "alive", None
            followup = float(round(censor, 1))
        eta = (config.complication_intercept
               + config.complication_frailty_beta * frailty
               + 0.3 * (asa - 2))
        complication = int(prng.uniform() < _sigmoid(eta))
        serious = int(complication and prng.uniform() < 0.6)
        nsqip = float(np.round(_sigmoid(
            config.nsqip_intercept + config.nsqip_frailty_beta * frailty
            + 0.02 * (age - 60) + 0.3 * prng.normal()), 6))
        mort30 = int(vital == "died" and death_day <= 30)
        records.append(PatientRecord(
            patient_id=pid,
            cohort="development" if i < n_dev else "validation",
            sex=sex, age=age, height_m=height, bmi=bmi,
            age_cat=age_category(age), bmi_cat=bmi_category(bmi),
            smoker=smoker, functional_status=functional, asa_class=asa,
            emergency=int(prng.uniform() < 0.12),
            mortality_30d=mort30,
            any_complication=complication,
            serious_complication=serious,
            unplanned_readmission=int(prng.uniform() < 0.13),
            transfusion=int(prng.uniform() < _sigmoid(eta - 0.5)),
            severe_infection=int(prng.uniform() < 0.12),
            pulmonary_complication=int(prng.uniform() < 0.07),
            last_followup_days=followup,
            vital_status=vital, death_day=death_day,
            nsqip_mortality_risk=nsqip,
            mask_path=f"masks/{pid}.mvol",
        ))
    write_cohort(out / "cohort.csv", records)
    truth = {
        "seed": seed,
        "n_patients": n,
        "frailty_log_hr": config.frailty_log_hr,
        "base_rate": config.base_rate,
        "muscle_hu_base": config.muscle_hu_base,
        "muscle_hu_slope": config.muscle_hu_slope,
        "complication_intercept": config.complication_intercept,
        "complication_frailty_beta": config.complication_frailty_beta,
        "nsqip_frailty_beta": config.nsqip_frailty_beta,
        "censor_rate": config.censor_rate,
        "dev_fraction": config.dev_fraction,
    }
    with open(out / "truth.txt", "w", encoding="utf-8",
              newline="\n") as fh:
        for k, v in truth.items():
            fh.write(f"{k}={v}\n")
    return {"records": records, "truth": truth,
            "cohort_path": out / "cohort.csv"}
