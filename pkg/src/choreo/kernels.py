"""Batch force/Jacobian kernels for many phase-space points at once.

These are the hot inner loops of collocation assembly: every Newton
iteration evaluates gravity and its position-Jacobian at all Gauss points
of the mesh.  Two implementations are kept in sync:

* ``*_numpy`` -- vectorized numpy, always available;
* numba ``@njit`` loop versions, compiled lazily on first use.

The active implementation is chosen at import time by the environment
variable ``CHOREO_NUMBA`` ("0"/"false" forces the numpy path; default is
to use numba when importable).  ``benchmarks/bench_kernels.py`` compares
the two.

Array conventions: ``pos`` and ``vel`` have shape ``(P, nb, 3)`` for P
evaluation points and nb bodies; ``masses`` has shape ``(nb,)``; ``lam``
holds the three unfolding coefficients.  The planar symplectic matrix is
J = [[0, 1], [-1, 0]], so the Coriolis acceleration is ``2*omega*J @ v``.
"""

import os

import numpy as np

USE_NUMBA = os.environ.get("CHOREO_NUMBA", "1").strip().lower() not in (
    "0",
    "false",
    "no",
    "off",
)
if USE_NUMBA:
    try:
        from numba import njit
    except ImportError:  # pragma: no cover - numba is a declared dependency
        USE_NUMBA = False


def accel_batch_numpy(pos, vel, masses, omega, lam):
    """Accelerations at P points, including frame and unfolding terms.

    Returns ``(acc, rmin)`` where ``acc`` is (P, nb, 3) and ``rmin`` the
    smallest pairwise distance over all points (collision checks are the
    caller's job; the kernel never raises).
    """
    pos = np.asarray(pos, dtype=np.float64)
    vel = np.asarray(vel, dtype=np.float64)
    d = pos[:, None, :, :] - pos[:, :, None, :]  # d[p, a, b] = x_b - x_a
    r2 = np.einsum("pabi,pabi->pab", d, d)
    nb = pos.shape[1]
    ii = np.arange(nb)
    r2[:, ii, ii] = np.inf
    rmin = float(np.sqrt(r2.min())) if pos.shape[0] else np.inf
    inv_r3 = r2 ** (-1.5)
    acc = np.einsum("pab,b,pabi->pai", inv_r3, masses, d)
    acc[:, :, 0] += omega * omega * pos[:, :, 0] + 2.0 * omega * vel[:, :, 1]
    acc[:, :, 1] += omega * omega * pos[:, :, 1] - 2.0 * omega * vel[:, :, 0]
    acc[:, :, 2] += lam[0]
    acc[:, :, 0] += lam[1] * pos[:, :, 1]
    acc[:, :, 1] -= lam[1] * pos[:, :, 0]
    acc += lam[2] * vel
    return acc, rmin


def accel_jac_pos_batch_numpy(pos, masses, omega, lam2):
    """d(acceleration)/d(position) blocks, shape (P, 3*nb, 3*nb)."""
    pos = np.asarray(pos, dtype=np.float64)
    P, nb, _ = pos.shape
    d = pos[:, None, :, :] - pos[:, :, None, :]
    r2 = np.einsum("pabi,pabi->pab", d, d)
    ii = np.arange(nb)
    r2[:, ii, ii] = np.inf
    inv_r3 = r2 ** (-1.5)
    inv_r5 = inv_r3 / r2
    eye3 = np.eye(3)
    # S[p,a,b] = m_b * (I / r^3 - 3 d d^T / r^5) for b != a
    S = (
        inv_r3[:, :, :, None, None] * eye3[None, None, None, :, :]
        - 3.0 * inv_r5[:, :, :, None, None] * d[:, :, :, :, None] * d[:, :, :, None, :]
    )
    S *= masses[None, None, :, None, None]
    S[:, ii, ii] = 0.0
    diag = -S.sum(axis=2)
    S[:, ii, ii] = diag[:, ii]
    out = S.transpose(0, 1, 3, 2, 4).reshape(P, 3 * nb, 3 * nb)
    idx = 3 * np.arange(nb)
    out[:, idx, idx] += omega * omega
    out[:, idx + 1, idx + 1] += omega * omega
    out[:, idx, idx + 1] += lam2
    out[:, idx + 1, idx] -= lam2
    return out


def min_pair_distance_numpy(pos):
    """Smallest pairwise distance over (P, nb, 3) positions."""
    pos = np.asarray(pos, dtype=np.float64)
    d = pos[:, None, :, :] - pos[:, :, None, :]
    r2 = np.einsum("pabi,pabi->pab", d, d)
    nb = pos.shape[1]
    ii = np.arange(nb)
    r2[:, ii, ii] = np.inf
    return float(np.sqrt(r2.min()))


def _accel_batch_loops(pos, vel, masses, omega, lam):
    P, nb, _ = pos.shape
    acc = np.zeros((P, nb, 3))
    rmin2 = np.inf
    for p in range(P):
        for a in range(nb):
            for b in range(a + 1, nb):
                dx = pos[p, b, 0] - pos[p, a, 0]
                dy = pos[p, b, 1] - pos[p, a, 1]
                dz = pos[p, b, 2] - pos[p, a, 2]
                r2 = dx * dx + dy * dy + dz * dz
                if r2 < rmin2:
                    rmin2 = r2
                inv_r3 = 1.0 / (r2 * np.sqrt(r2))
                ca = masses[b] * inv_r3
                cb = masses[a] * inv_r3
                acc[p, a, 0] += ca * dx
                acc[p, a, 1] += ca * dy
                acc[p, a, 2] += ca * dz
                acc[p, b, 0] -= cb * dx
                acc[p, b, 1] -= cb * dy
                acc[p, b, 2] -= cb * dz
        for a in range(nb):
            acc[p, a, 0] += (
                omega * omega * pos[p, a, 0]
                + 2.0 * omega * vel[p, a, 1]
                + lam[1] * pos[p, a, 1]
                + lam[2] * vel[p, a, 0]
            )
            acc[p, a, 1] += (
                omega * omega * pos[p, a, 1]
                - 2.0 * omega * vel[p, a, 0]
                - lam[1] * pos[p, a, 0]
                + lam[2] * vel[p, a, 1]
            )
            acc[p, a, 2] += lam[0] + lam[2] * vel[p, a, 2]
    return acc, np.sqrt(rmin2)


def _accel_jac_pos_loops(pos, masses, omega, lam2):
    P, nb, _ = pos.shape
    out = np.zeros((P, 3 * nb, 3 * nb))
    for p in range(P):
        for a in range(nb):
            for b in range(nb):
                if b == a:
                    continue
                dx = pos[p, b, 0] - pos[p, a, 0]
                dy = pos[p, b, 1] - pos[p, a, 1]
                dz = pos[p, b, 2] - pos[p, a, 2]
                r2 = dx * dx + dy * dy + dz * dz
                inv_r3 = 1.0 / (r2 * np.sqrt(r2))
                inv_r5 = inv_r3 / r2
                for i in range(3):
                    if i == 0:
                        di = dx
                    elif i == 1:
                        di = dy
                    else:
                        di = dz
                    for j in range(3):
                        if j == 0:
                            dj = dx
                        elif j == 1:
                            dj = dy
                        else:
                            dj = dz
                        s = -3.0 * inv_r5 * di * dj
                        if i == j:
                            s += inv_r3
                        s *= masses[b]
                        out[p, 3 * a + i, 3 * b + j] += s
                        out[p, 3 * a + i, 3 * a + j] -= s
        for a in range(nb):
            out[p, 3 * a, 3 * a] += omega * omega
            out[p, 3 * a + 1, 3 * a + 1] += omega * omega
            out[p, 3 * a, 3 * a + 1] += lam2
            out[p, 3 * a + 1, 3 * a] -= lam2
    return out


if USE_NUMBA:
    accel_batch_numba = njit(cache=True)(_accel_batch_loops)
    accel_jac_pos_batch_numba = njit(cache=True)(_accel_jac_pos_loops)
    accel_batch = accel_batch_numba
    accel_jac_pos_batch = accel_jac_pos_batch_numba
else:
    accel_batch_numba = None
    accel_jac_pos_batch_numba = None
    accel_batch = accel_batch_numpy
    accel_jac_pos_batch = accel_jac_pos_batch_numpy
