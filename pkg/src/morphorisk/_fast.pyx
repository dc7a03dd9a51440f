# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: voxel tallies, rank AUC, concordance pair counts.

Mirrors morphorisk._pure exactly; the suite checks bit agreement.
"""
import numpy as np
cimport numpy as cnp

cnp.import_array()

DEF N_LABELS = 5
DEF BODY_HU_THRESHOLD = -1000


def slice_label_stats(cnp.uint8_t[:, :, ::1] labels, cnp.int16_t[:, :, ::1] hu):
    cdef Py_ssize_t nx = labels.shape[0]
    cdef Py_ssize_t ny = labels.shape[1]
    cdef Py_ssize_t nz = labels.shape[2]
    counts_arr = np.zeros((nz, N_LABELS), dtype=np.int64)
    hu_sums_arr = np.zeros((nz, N_LABELS), dtype=np.float64)
    body_arr = np.zeros(nz, dtype=np.int64)
    cdef cnp.int64_t[:, ::1] counts = counts_arr
    cdef double[:, ::1] hu_sums = hu_sums_arr
    cdef cnp.int64_t[::1] body = body_arr
    cdef Py_ssize_t x, y, z
    cdef int lab
    cdef cnp.int16_t h
    for x in range(nx):
        for y in range(ny):
            for z in range(nz):
                lab = labels[x, y, z]
                h = hu[x, y, z]
                counts[z, lab] += 1
                hu_sums[z, lab] += h
                if h > BODY_HU_THRESHOLD:
                    body[z] += 1
    return counts_arr, hu_sums_arr, body_arr


def auc_stat(scores, labels):
    scores = np.ascontiguousarray(scores, dtype=np.float64)
    labels = np.ascontiguousarray(labels, dtype=np.int64)
    cdef double[::1] s = scores
    cdef cnp.int64_t[::1] lab = labels
    cdef Py_ssize_t n = s.shape[0]
    order_arr = np.argsort(scores, kind="mergesort")
    cdef cnp.intp_t[::1] order = order_arr
    cdef Py_ssize_t i = 0, j, k
    cdef double midrank, rank_sum = 0.0
    cdef Py_ssize_t n_pos = 0
    cdef Py_ssize_t pos_in_block
    while i < n:
        j = i
        while j + 1 < n and s[order[j + 1]] == s[order[i]]:
            j += 1
        midrank = 0.5 * (i + j) + 1.0
        for k in range(i, j + 1):
            if lab[order[k]] == 1:
                rank_sum += midrank
                n_pos += 1
        i = j + 1
    cdef Py_ssize_t n_neg = n - n_pos
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (<double>n_pos * n_neg)


def concordance_counts(pred, time, event):
    pred = np.ascontiguousarray(pred, dtype=np.float64)
    time = np.ascontiguousarray(time, dtype=np.float64)
    event = np.ascontiguousarray(event, dtype=np.int64)
    cdef double[::1] p = pred
    cdef double[::1] t = time
    cdef cnp.int64_t[::1] e = event
    cdef Py_ssize_t n = p.shape[0]
    cdef Py_ssize_t i, j
    cdef long long concordant = 0, tied = 0, usable = 0
    for i in range(n):
        if e[i] != 1:
            continue
        for j in range(n):
            if t[j] > t[i]:
                usable += 1
                if p[j] < p[i]:
                    concordant += 1
                elif p[j] == p[i]:
                    tied += 1
    return int(concordant), int(tied), int(usable)
