"""Pure-numpy reference implementations of the hot kernels.

Used when the compiled extension is unavailable (or forced via
MORPHORISK_PURE=1).  Must stay numerically identical to ``_fast``; the
test suite asserts agreement between the two backends.
"""
import numpy as np

N_LABELS = 5
BODY_HU_THRESHOLD = -1000  # strict: a voxel counts iff hu > threshold


def slice_label_stats(labels, hu):
    """Per-slice tallies over a labeled volume.

    Parameters
    ----------
    labels : (nx, ny, nz) uint8 array of tissue codes 0..4
    hu : (nx, ny, nz) int16 array of Hounsfield units

    Returns
    -------
    counts : (nz, 5) int64 -- voxel count per slice per label
    hu_sums : (nz, 5) float64 -- HU sum per slice per label
    body : (nz,) int64 -- voxels with hu > -1000 per slice (labels ignored)
    """
    nz = labels.shape[2]
    counts = np.zeros((nz, N_LABELS), dtype=np.int64)
    hu_sums = np.zeros((nz, N_LABELS), dtype=np.float64)
    body = np.zeros(nz, dtype=np.int64)
    for z in range(nz):
        lab = labels[:, :, z].ravel()
        h = hu[:, :, z].ravel().astype(np.float64)
        counts[z] = np.bincount(lab, minlength=N_LABELS)
        hu_sums[z] = np.bincount(lab, weights=h, minlength=N_LABELS)
        body[z] = int(np.count_nonzero(h > BODY_HU_THRESHOLD))
    return counts, hu_sums, body


def _midranks(x):
    """Average ranks (1-based) with ties sharing their midrank."""
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    n = len(x)
    ranks = np.empty(n, dtype=np.float64)
    i = 0
    while i < n:
        j = i
        while j + 1 < n and xs[j + 1] == xs[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def auc_stat(scores, labels):
    """Mann-Whitney AUC: P(score+ > score-) + half credit for ties.

    Both classes must be present (caller enforces).
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = len(labels) - n_pos
    ranks = _midranks(scores)
    rank_sum = float(ranks[pos].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def concordance_counts(pred, time, event):
    """Harrell pair counts: (concordant, tied-predictor, usable).

    A pair is usable iff the member with the strictly earlier time had an
    event.  Concordant when the earlier-failing member has the higher
    predictor; tied predictors get half credit (applied by the caller).
    """
    pred = np.asarray(pred, dtype=np.float64)
    time = np.asarray(time, dtype=np.float64)
    event = np.asarray(event, dtype=np.int64)
    n = len(pred)
    concordant = 0
    tied = 0
    usable = 0
    ev_idx = np.flatnonzero(event == 1)
    for i in ev_idx:
        later = time > time[i]
        m = int(later.sum())
        if m == 0:
            continue
        usable += m
        pi = pred[i]
        pj = pred[later]
        concordant += int(np.count_nonzero(pj < pi))
        tied += int(np.count_nonzero(pj == pi))
    return concordant, tied, usable
