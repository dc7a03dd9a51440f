"""Core volumetric types: labeled CT volumes, vertebral maps, levels."""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum, IntEnum

import numpy as np

from .errors import MissingVertebra, NonPositiveSpacing, OutOfRange

HU_MIN = -1024
HU_MAX = 3071


class TissueLabel(IntEnum):
    """Stable integer codes; bit-exact in the MVOL container."""

    BACKGROUND = 0
    SKELETAL_MUSCLE = 1
    SUBCUTANEOUS_FAT = 2
    VISCERAL_FAT = 3
    INTERMUSCULAR_FAT = 4


class LevelId(str, Enum):
    """Measurement planes: five vertebral levels, four inter-level
    midplanes, and the whole T12..L4 3D block."""

    T12 = "T12"
    T12_L1 = "T12-L1"
    L1 = "L1"
    L1_L2 = "L1-L2"
    L2 = "L2"
    L2_L3 = "L2-L3"
    L3 = "L3"
    L3_L4 = "L3-L4"
    L4 = "L4"
    VOL3D = "3D"

    def __str__(self):
        return self.value


VERTEBRAE = ("T12", "L1", "L2", "L3", "L4")

PLANAR_LEVELS = (
    LevelId.T12, LevelId.T12_L1, LevelId.L1, LevelId.L1_L2, LevelId.L2,
    LevelId.L2_L3, LevelId.L3, LevelId.L3_L4, LevelId.L4,
)

ALL_LEVELS = PLANAR_LEVELS + (LevelId.VOL3D,)

# Inter-level plane -> its flanking vertebrae
_INTER_LEVEL = {
    LevelId.T12_L1: ("T12", "L1"),
    LevelId.L1_L2: ("L1", "L2"),
    LevelId.L2_L3: ("L2", "L3"),
    LevelId.L3_L4: ("L3", "L4"),
}


@dataclass(frozen=True)
class LabeledVolume:
    """HU grid + tissue label grid + voxel spacing (mm).

    Arrays are indexed (x, y, z); both grids must share dims and every
    spacing component must be strictly positive.
    """

    hu: np.ndarray       # int16, (nx, ny, nz)
    labels: np.ndarray   # uint8, (nx, ny, nz)
    spacing: tuple       # (sx, sy, sz) mm

    def __post_init__(self):
        if self.hu.shape != self.labels.shape:
            raise ValueError(
                f"hu dims {self.hu.shape} != label dims {self.labels.shape}")
        if len(self.hu.shape) != 3:
            raise ValueError("volume grids must be 3-D")
        if any(s <= 0 for s in self.spacing):
            raise NonPositiveSpacing(f"spacing {self.spacing}")
        bad = np.flatnonzero(
            (self.labels.ravel() < 0) | (self.labels.ravel() > 4))
        if bad.size:
            raise ValueError(f"illegal tissue label at flat index {bad[0]}")

    @property
    def dims(self):
        return self.hu.shape

    @property
    def nz(self):
        return self.hu.shape[2]

    def check_z(self, z):
        if not (0 <= z < self.nz):
            raise OutOfRange(f"slice {z} outside [0, {self.nz})")


@dataclass(frozen=True)
class VertebralMap:
    """Vertebral-body centroid slice index for each of T12..L4.

    z-indices must be strictly monotonic in anatomical order, in the
    direction declared by ``z_increases_toward_head``.
    """

    centroids: dict = field(default_factory=dict)  # vertebra -> z index
    z_increases_toward_head: bool = True

    def __post_init__(self):
        missing = [v for v in VERTEBRAE if v not in self.centroids]
        if missing:
            raise MissingVertebra(f"vertebral map lacks {missing}")
        zs = [self.centroids[v] for v in VERTEBRAE]
        # T12 is superior to L4: toward the head means larger z when the
        # direction flag is set, so z must strictly decrease T12 -> L4.
        diffs = np.diff(zs)
        if self.z_increases_toward_head:
            ok = np.all(diffs < 0)
        else:
            ok = np.all(diffs > 0)
        if not ok:
            raise ValueError(
                f"centroids {dict(self.centroids)} not monotonic for "
                f"z_increases_toward_head={self.z_increases_toward_head}")

    def z_of(self, vertebra):
        try:
            return self.centroids[vertebra]
        except KeyError:
            raise MissingVertebra(vertebra) from None

    def validate_against(self, volume: LabeledVolume):
        for v in VERTEBRAE:
            volume.check_z(self.centroids[v])


@dataclass(frozen=True)
class Demographics:
    sex: str          # "M" | "F"
    height_m: float
    bmi: float

    def __post_init__(self):
        if self.sex not in ("M", "F"):
            raise ValueError(f"sex must be M or F, got {self.sex!r}")
        if not (0.5 < self.height_m < 2.6):
            raise ValueError(f"height {self.height_m} m outside (0.5, 2.6)")
        if not (8 < self.bmi < 100):
            raise ValueError(f"bmi {self.bmi} outside (8, 100)")


def slice_for_level(vmap: VertebralMap, level: LevelId) -> int:
    """Axial slice index for a planar level.

    Vertebral levels return the stored centroid; inter-level planes
    return the midpoint of the flanking centroids with half-voxel ties
    broken toward the lower z-index (floor of the average).
    """
    if level == LevelId.VOL3D:
        raise OutOfRange("VOL3D has no single slice")
    if level in _INTER_LEVEL:
        a, b = _INTER_LEVEL[level]
        return (vmap.z_of(a) + vmap.z_of(b)) // 2
    return vmap.z_of(level.value)


def z_range_3d(vmap: VertebralMap) -> tuple:
    """Inclusive [z_lo, z_hi] spanning T12..L4 regardless of storage
    direction."""
    a, b = vmap.z_of("T12"), vmap.z_of("L4")
    return (min(a, b), max(a, b))
