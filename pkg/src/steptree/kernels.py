"""Cosine-similarity kernels behind the knowledge-base scan.

Two interchangeable backends compute the same quantities: a numba ``@njit``
path (default) and a pure-numpy path selected by setting ``RPM_PURE_NUMPY=1``
in the environment (also used automatically when numba is unavailable).

Every reduction is a fixed left-to-right accumulation in float64 so that
results are bit-identical across backends, across runs, and against a plain
Python reference loop. Do not replace the dots with BLAS calls: ``np.dot``
reassociates the sum and breaks bit-level reproducibility of scores.
"""

from __future__ import annotations

import math
import os

import numpy as np

PURE_NUMPY_ENV = "RPM_PURE_NUMPY"

_CHUNK_ROWS = 4096


def _env_wants_pure_numpy() -> bool:
    return os.environ.get(PURE_NUMPY_ENV, "").strip() not in ("", "0", "false")


# --- pure-numpy backend -----------------------------------------------------
# cumsum is a sequential running sum, so taking its last element reproduces
# the left-to-right loop bit-for-bit.


def _dot_l2r_np(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.cumsum(a * b)[-1])


def _sq_norms_rows_np(matrix: np.ndarray) -> np.ndarray:
    out = np.empty(matrix.shape[0], dtype=np.float64)
    for start in range(0, matrix.shape[0], _CHUNK_ROWS):
        chunk = matrix[start : start + _CHUNK_ROWS]
        out[start : start + _CHUNK_ROWS] = np.cumsum(chunk * chunk, axis=1)[:, -1]
    return out


def _scan_cosines_np(matrix: np.ndarray, query: np.ndarray, row_sq_norms: np.ndarray, q_sq_norm: float) -> np.ndarray:
    scores = np.empty(matrix.shape[0], dtype=np.float64)
    q_norm = math.sqrt(q_sq_norm)
    for start in range(0, matrix.shape[0], _CHUNK_ROWS):
        chunk = matrix[start : start + _CHUNK_ROWS]
        dots = np.cumsum(chunk * query, axis=1)[:, -1]
        denom = np.sqrt(row_sq_norms[start : start + _CHUNK_ROWS]) * q_norm
        scores[start : start + _CHUNK_ROWS] = dots / denom
    return scores


# --- numba backend ----------------------------------------------------------

_HAVE_NUMBA = False
if not _env_wants_pure_numpy():
    try:
        from numba import njit

        _HAVE_NUMBA = True
    except ImportError:
        _HAVE_NUMBA = False

if _HAVE_NUMBA:

    @njit(cache=True)
    def _dot_l2r_nb(a, b):
        acc = 0.0
        for i in range(a.shape[0]):
            acc += a[i] * b[i]
        return acc

    @njit(cache=True)
    def _sq_norms_rows_nb(matrix):
        out = np.empty(matrix.shape[0], dtype=np.float64)
        for r in range(matrix.shape[0]):
            acc = 0.0
            for i in range(matrix.shape[1]):
                acc += matrix[r, i] * matrix[r, i]
            out[r] = acc
        return out

    @njit(cache=True)
    def _scan_cosines_nb(matrix, query, row_sq_norms, q_sq_norm):
        scores = np.empty(matrix.shape[0], dtype=np.float64)
        q_norm = math.sqrt(q_sq_norm)
        for r in range(matrix.shape[0]):
            acc = 0.0
            for i in range(matrix.shape[1]):
                acc += matrix[r, i] * query[i]
            scores[r] = acc / (math.sqrt(row_sq_norms[r]) * q_norm)
        return scores


USING_NUMBA = _HAVE_NUMBA


def _as_f64(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=np.float64)


def dot_l2r(a: np.ndarray, b: np.ndarray) -> float:
    """Left-to-right dot product of two 1-D float64 vectors."""
    a, b = _as_f64(a), _as_f64(b)
    if USING_NUMBA:
        return float(_dot_l2r_nb(a, b))
    return _dot_l2r_np(a, b)


def sq_norm(a: np.ndarray) -> float:
    return dot_l2r(a, a)


def sq_norms_rows(matrix: np.ndarray) -> np.ndarray:
    """Per-row left-to-right sum of squares of a 2-D float64 matrix."""
    matrix = _as_f64(matrix)
    if USING_NUMBA:
        return _sq_norms_rows_nb(matrix)
    return _sq_norms_rows_np(matrix)


def scan_cosines(matrix: np.ndarray, query: np.ndarray, row_sq_norms: np.ndarray, q_sq_norm: float) -> np.ndarray:
    """Cosine of ``query`` against every row, as dot/(sqrt(nr)*sqrt(nq))."""
    matrix, query = _as_f64(matrix), _as_f64(query)
    row_sq_norms = _as_f64(row_sq_norms)
    if USING_NUMBA:
        return _scan_cosines_nb(matrix, query, row_sq_norms, float(q_sq_norm))
    return _scan_cosines_np(matrix, query, row_sq_norms, float(q_sq_norm))
