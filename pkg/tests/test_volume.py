import numpy as np
import pytest

from morphorisk.errors import MissingVertebra, NonPositiveSpacing, OutOfRange
from morphorisk.volume import (ALL_LEVELS, Demographics, LabeledVolume,
                               LevelId, VertebralMap, slice_for_level,
                               z_range_3d)


def _vol(nz=40):
    return LabeledVolume(hu=np.zeros((4, 4, nz), dtype=np.int16),
                         labels=np.zeros((4, 4, nz), dtype=np.uint8),
                         spacing=(1.0, 1.0, 2.0))


def _vmap(**kw):
    centroids = {"T12": 5, "L1": 11, "L2": 18, "L3": 25, "L4": 31}
    centroids.update(kw)
    return VertebralMap(centroids=centroids,
                        z_increases_toward_head=False)


def test_levels_enumeration():
    assert len(ALL_LEVELS) == 10
    assert LevelId.VOL3D.value == "3D"
    assert str(LevelId.L2_L3) == "L2-L3"


def test_volume_validation():
    with pytest.raises(ValueError):
        LabeledVolume(hu=np.zeros((2, 2, 2), dtype=np.int16),
                      labels=np.zeros((2, 2, 3), dtype=np.uint8),
                      spacing=(1, 1, 1))
    with pytest.raises(NonPositiveSpacing):
        LabeledVolume(hu=np.zeros((2, 2, 2), dtype=np.int16),
                      labels=np.zeros((2, 2, 2), dtype=np.uint8),
                      spacing=(1, 0, 1))
    bad = np.zeros((2, 2, 2), dtype=np.uint8)
    bad[0, 0, 0] = 7
    with pytest.raises(ValueError):
        LabeledVolume(hu=np.zeros((2, 2, 2), dtype=np.int16),
                      labels=bad, spacing=(1, 1, 1))


def test_vertebral_map_requires_all_five():
    with pytest.raises(MissingVertebra):
        VertebralMap(centroids={"T12": 1, "L1": 2})


def test_vertebral_map_monotonicity_matches_direction():
    # T12 above L4: when z increases toward the head, T12 has larger z
    VertebralMap(centroids={"T12": 31, "L1": 25, "L2": 18, "L3": 11,
                            "L4": 5}, z_increases_toward_head=True)
    with pytest.raises(ValueError):
        VertebralMap(centroids={"T12": 5, "L1": 11, "L2": 18, "L3": 25,
                                "L4": 31}, z_increases_toward_head=True)
    _vmap()  # increasing z, flag False: valid


def test_interlevel_midpoint_floors_toward_lower_index():
    vmap = _vmap()
    assert slice_for_level(vmap, LevelId.T12) == 5
    # (5 + 11) // 2 = 8
    assert slice_for_level(vmap, LevelId.T12_L1) == 8
    # odd sum: (11 + 18) // 2 = 14 (14.5 floors down)
    assert slice_for_level(vmap, LevelId.L1_L2) == 14
    with pytest.raises(OutOfRange):
        slice_for_level(vmap, LevelId.VOL3D)


def test_z_range_3d_is_inclusive_and_direction_free():
    assert z_range_3d(_vmap()) == (5, 31)
    flipped = VertebralMap(
        centroids={"T12": 31, "L1": 25, "L2": 18, "L3": 11, "L4": 5},
        z_increases_toward_head=True)
    assert z_range_3d(flipped) == (5, 31)


def test_vmap_validate_against_volume_bounds():
    vmap = _vmap(L4=45)
    with pytest.raises(ValueError):
        VertebralMap(centroids={"T12": 5, "L1": 11, "L2": 18, "L3": 25,
                                "L4": 4}, z_increases_toward_head=False)
    with pytest.raises(OutOfRange):
        vmap.validate_against(_vol(nz=40))


def test_demographics_validation():
    Demographics("F", 1.6, 22.0)
    with pytest.raises(ValueError):
        Demographics("X", 1.6, 22.0)
    with pytest.raises(ValueError):
        Demographics("M", 3.0, 22.0)
    with pytest.raises(ValueError):
        Demographics("M", 1.6, 5.0)
