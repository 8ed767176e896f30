"""Hot-path kernels for the dense statevector engine.

The strided two-site updates account for nearly all generation and
exact-replay time, so they get jitted loops; everything falls back to
numpy when numba is unavailable.
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAS_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        if args and callable(args[0]):
            return args[0]
        return wrap


@njit(cache=True)
def _middle_block_jit(amps, a_dim, b_dim, m00, m01, m10, m11):  # pragma: no cover - jitted
    for ia in range(a_dim):
        base = ia * 4 * b_dim
        for ib in range(b_dim):
            i01 = base + b_dim + ib
            i10 = base + 2 * b_dim + ib
            v01 = amps[i01]
            v10 = amps[i10]
            amps[i01] = m00 * v01 + m01 * v10
            amps[i10] = m10 * v01 + m11 * v10


@njit(cache=True)
def _pair_weights_jit(amps, a_dim, b_dim):  # pragma: no cover - jitted
    w1 = 0.0
    ws = 0.0
    wa = 0.0
    for ia in range(a_dim):
        base = ia * 4 * b_dim
        for ib in range(b_dim):
            v00 = amps[base + ib]
            v01 = amps[base + b_dim + ib]
            v10 = amps[base + 2 * b_dim + ib]
            v11 = amps[base + 3 * b_dim + ib]
            w1 += (v00.real * v00.real + v00.imag * v00.imag) + (v11.real * v11.real + v11.imag * v11.imag)
            plus = v01 + v10
            minus = v01 - v10
            ws += 0.5 * (plus.real * plus.real + plus.imag * plus.imag)
            wa += 0.5 * (minus.real * minus.real + minus.imag * minus.imag)
    return w1, ws, wa


@njit(cache=True)
def _project_jit(amps, a_dim, b_dim, code):  # pragma: no cover - jitted
    """Project onto outcome code 0='1', 1='s', 2='a'; returns the weight."""
    weight = 0.0
    for ia in range(a_dim):
        base = ia * 4 * b_dim
        for ib in range(b_dim):
            i00 = base + ib
            i01 = base + b_dim + ib
            i10 = base + 2 * b_dim + ib
            i11 = base + 3 * b_dim + ib
            if code == 0:
                v00 = amps[i00]
                v11 = amps[i11]
                weight += (v00.real * v00.real + v00.imag * v00.imag) + (v11.real * v11.real + v11.imag * v11.imag)
                amps[i01] = 0.0
                amps[i10] = 0.0
            else:
                if code == 1:
                    kept = 0.5 * (amps[i01] + amps[i10])
                    amps[i01] = kept
                    amps[i10] = kept
                else:
                    kept = 0.5 * (amps[i01] - amps[i10])
                    amps[i01] = kept
                    amps[i10] = -kept
                weight += 2.0 * (kept.real * kept.real + kept.imag * kept.imag)
                amps[i00] = 0.0
                amps[i11] = 0.0
    return weight


def middle_block_update(amps: np.ndarray, a_dim: int, b_dim: int, m: np.ndarray) -> None:
    if HAS_NUMBA:
        _middle_block_jit(amps, a_dim, b_dim, m[0, 0], m[0, 1], m[1, 0], m[1, 1])
        return
    view = amps.reshape(a_dim, 2, 2, b_dim)
    v01 = view[:, 0, 1, :]
    v10 = view[:, 1, 0, :]
    new01 = m[0, 0] * v01 + m[0, 1] * v10
    view[:, 1, 0, :] = m[1, 0] * v01 + m[1, 1] * v10
    view[:, 0, 1, :] = new01


def pair_weights(amps: np.ndarray, a_dim: int, b_dim: int) -> tuple[float, float, float]:
    if HAS_NUMBA:
        return _pair_weights_jit(amps, a_dim, b_dim)
    view = amps.reshape(a_dim, 2, 2, b_dim)
    w1 = float(np.vdot(view[:, 0, 0, :], view[:, 0, 0, :]).real + np.vdot(view[:, 1, 1, :], view[:, 1, 1, :]).real)
    plus = (view[:, 0, 1, :] + view[:, 1, 0, :]) / np.sqrt(2.0)
    minus = (view[:, 0, 1, :] - view[:, 1, 0, :]) / np.sqrt(2.0)
    return w1, float(np.vdot(plus, plus).real), float(np.vdot(minus, minus).real)


def project_pair(amps: np.ndarray, a_dim: int, b_dim: int, code: int) -> float:
    if HAS_NUMBA:
        return float(_project_jit(amps, a_dim, b_dim, code))
    view = amps.reshape(a_dim, 2, 2, b_dim)
    if code == 0:
        weight = float(np.vdot(view[:, 0, 0, :], view[:, 0, 0, :]).real + np.vdot(view[:, 1, 1, :], view[:, 1, 1, :]).real)
        view[:, 0, 1, :] = 0.0
        view[:, 1, 0, :] = 0.0
        return weight
    if code == 1:
        kept = 0.5 * (view[:, 0, 1, :] + view[:, 1, 0, :])
        view[:, 0, 1, :] = kept
        view[:, 1, 0, :] = kept
    else:
        kept = 0.5 * (view[:, 0, 1, :] - view[:, 1, 0, :])
        view[:, 0, 1, :] = kept
        view[:, 1, 0, :] = -kept
    weight = float(2.0 * np.vdot(kept, kept).real)
    view[:, 0, 0, :] = 0.0
    view[:, 1, 1, :] = 0.0
    return weight
