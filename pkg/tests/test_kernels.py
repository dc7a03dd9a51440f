"""Compiled and pure kernel backends must agree bit-for-bit."""
import numpy as np
import pytest

from morphorisk import _pure, kernels

try:
    from morphorisk import _fast
except ImportError:
    _fast = None

needs_fast = pytest.mark.skipif(_fast is None,
                                reason="compiled extension not built")


def _random_volume(rng, shape=(17, 13, 9)):
    labels = rng.integers(0, 5, size=shape).astype(np.uint8)
    hu = rng.integers(-1024, 3000, size=shape).astype(np.int16)
    return labels, hu


@needs_fast
def test_slice_label_stats_backends_identical():
    rng = np.random.default_rng(0)
    for _ in range(10):
        labels, hu = _random_volume(rng)
        cp, hp, bp = _pure.slice_label_stats(labels, hu)
        cf, hf, bf = _fast.slice_label_stats(labels, hu)
        assert np.array_equal(cp, cf)
        assert np.array_equal(hp, hf)  # exact: float64 sums of ints
        assert np.array_equal(bp, bf)


@needs_fast
def test_auc_backends_identical():
    rng = np.random.default_rng(1)
    for _ in range(20):
        n = int(rng.integers(2, 200))
        scores = rng.normal(size=n)
        # force some exact ties
        scores[rng.integers(0, n)] = scores[0]
        y = rng.integers(0, 2, size=n)
        if y.min() == y.max():
            continue
        assert _pure.auc_stat(scores, y) == _fast.auc_stat(scores, y)


@needs_fast
def test_concordance_backends_identical():
    rng = np.random.default_rng(2)
    for _ in range(20):
        n = int(rng.integers(2, 120))
        pred = rng.normal(size=n)
        time = rng.integers(1, 30, size=n).astype(np.float64)  # many ties
        event = rng.integers(0, 2, size=n)
        assert (_pure.concordance_counts(pred, time, event)
                == _fast.concordance_counts(pred, time, event))


def test_slice_label_stats_counts_every_voxel():
    rng = np.random.default_rng(3)
    labels, hu = _random_volume(rng)
    counts, hu_sums, body = kernels.slice_label_stats(labels, hu)
    nx, ny, nz = labels.shape
    assert counts.shape == (nz, 5)
    assert (counts.sum(axis=1) == nx * ny).all()
    assert np.isclose(hu_sums.sum(), float(hu.sum(dtype=np.int64)))
    for z in range(nz):
        assert body[z] == np.count_nonzero(hu[:, :, z] > -1000)


def test_backend_env_override(monkeypatch):
    import importlib

    monkeypatch.setenv("MORPHORISK_PURE", "1")
    mod = importlib.reload(kernels)
    assert mod.BACKEND == "pure"
    monkeypatch.delenv("MORPHORISK_PURE")
    mod = importlib.reload(kernels)
    assert mod.BACKEND in ("pure", "compiled")
