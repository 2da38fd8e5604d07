"""Periodic boundary-value solver: collocation at Gauss points.

A periodic orbit is represented on a mesh of N intervals of [0, 1] (the
period is rescaled to 1 and kept as an unknown T).  On each interval the
state is the Lagrange interpolant through m+1 equally spaced nodes; the
differential equations are enforced at the m Gauss points per interval.
Endpoint nodes are shared between intervals, so the state unknowns are
the D * (N*m + 1) node values, plus T and the three unfolding parameters.

Equations:
  * collocation      h_i * (x'(t_ig) - T f(x(t_ig), lam)) = 0    (D*N*m)
  * periodicity      x(1) - x(0) = 0                             (D)
  * phase integrals  I1 = int y_ref dt = 0                       (1)
                     I2 = int z_ref dt = 0                       (1)
                     I3 = int (x_ref - xt_ref) . xt'_ref dt = 0  (1)
one short of square; a continuation equation supplied by the caller
closes the bordered system.  I1/I2/I3 remove the rotation, z-translation
and time-shift degeneracies; xt is the previous family member ("ref"
denotes the reference body, ring body n).  Collocation rows are scaled
by the interval width h_i so that residual round-off stays near machine
precision even on strongly graded meshes (near-collision orbits); the
reported residual norm refers to these scaled rows.

The bordered sparse matrix is factorized with SuperLU in natural order:
the matrix is block-banded with a cyclic corner and 4 border rows and
columns, and partial pivoting absorbs the near-singularity of the
unbordered core (the symmetry Floquet multipliers at 1).  The sign of
its determinant is monitored by the continuation driver to locate branch
points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import kernels
from .errors import CollisionProximity, NoConvergence, SingularJacobian
from .nbody import DELTA_COLLISION, SystemConfig

DEFAULT_INTERVALS = 100
DEFAULT_DEGREE = 4


class CollocationBasis:
    """Lagrange basis on m+1 equispaced nodes of [0,1], collocated at the
    m Gauss points; cached per degree."""

    _cache: dict[int, "CollocationBasis"] = {}

    def __init__(self, degree: int):
        if not 2 <= degree <= 7:
            raise ValueError(f"collocation degree must be in 2..7, got {degree}")
        m = degree
        x, w = np.polynomial.legendre.leggauss(m)
        self.degree = m
        self.gauss = 0.5 * (x + 1.0)
        self.weights = 0.5 * w
        self.nodes = np.arange(m + 1) / m
        vand = np.vander(self.nodes, m + 1, increasing=True)
        self._coef = np.linalg.inv(vand)  # [:, l] = power coeffs of basis_l
        self.W = self.eval_matrix(self.gauss)
        self.D = self.deriv_matrix(self.gauss)
        # row giving the (constant) m-th derivative of the interpolant
        self.high_deriv = math.factorial(m) * self._coef[m, :]

    @classmethod
    def get(cls, degree: int) -> "CollocationBasis":
        if degree not in cls._cache:
            cls._cache[degree] = cls(degree)
        return cls._cache[degree]

    def eval_matrix(self, sigma) -> np.ndarray:
        """E[s, l] = basis_l(sigma_s)."""
        sigma = np.atleast_1d(np.asarray(sigma, dtype=float))
        return np.vander(sigma, self.degree + 1, increasing=True) @ self._coef

    def deriv_matrix(self, sigma) -> np.ndarray:
        sigma = np.atleast_1d(np.asarray(sigma, dtype=float))
        m = self.degree
        powers = np.vander(sigma, m + 1, increasing=True)
        dpow = np.zeros_like(powers)
        dpow[:, 1:] = powers[:, :-1] * np.arange(1, m + 1)
        return dpow @ self._coef


@dataclass(frozen=True)
class Mesh:
    """Breakpoints of [0,1] plus the collocation degree.

    Production meshes use N >= 10 intervals; smaller meshes are allowed
    so that deliberate under-resolution can be exercised.
    """

    breakpoints: np.ndarray
    degree: int = DEFAULT_DEGREE

    def __post_init__(self):
        bp = np.asarray(self.breakpoints, dtype=float)
        object.__setattr__(self, "breakpoints", bp)
        if bp.ndim != 1 or bp.size < 2:
            raise ValueError("need at least one interval")
        if abs(bp[0]) > 1e-15 or abs(bp[-1] - 1.0) > 1e-15:
            raise ValueError("breakpoints must span [0, 1]")
        if np.any(np.diff(bp) <= 0.0):
            raise ValueError("breakpoints must be strictly increasing")
        CollocationBasis.get(self.degree)  # validates the degree range

    @property
    def intervals(self) -> int:
        return self.breakpoints.size - 1

    @property
    def n_nodes(self) -> int:
        return self.intervals * self.degree + 1

    def widths(self) -> np.ndarray:
        return np.diff(self.breakpoints)

    def node_times(self) -> np.ndarray:
        """Global node abscissae, endpoint nodes shared between intervals."""
        b = CollocationBasis.get(self.degree)
        t = (self.breakpoints[:-1, None] + np.outer(self.widths(), b.nodes))[
            :, : self.degree
        ].ravel()
        return np.concatenate([t, [1.0]])

    def gauss_times(self) -> np.ndarray:
        """Collocation abscissae, shape (N, degree)."""
        b = CollocationBasis.get(self.degree)
        return self.breakpoints[:-1, None] + np.outer(self.widths(), b.gauss)

    @classmethod
    def uniform(cls, intervals: int = DEFAULT_INTERVALS, degree: int = DEFAULT_DEGREE):
        return cls(np.linspace(0.0, 1.0, intervals + 1), degree)


def _wrap_time(t: np.ndarray) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    out = np.where((t < 0.0) | (t > 1.0), t - np.floor(t), t)
    return out


@dataclass
class OrbitSolution:
    """A periodic orbit: collocation mesh, node values, period, parameters."""

    mesh: Mesh
    values: np.ndarray  # (n_nodes, D)
    period: float
    lambdas: np.ndarray  # (3,)
    config: SystemConfig
    wave_number: int = 0
    family: str = "planar"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.lambdas = np.asarray(self.lambdas, dtype=float)
        if self.values.shape != (self.mesh.n_nodes, self.config.dim):
            raise ValueError(
                f"values shape {self.values.shape} does not match mesh/config "
                f"({self.mesh.n_nodes}, {self.config.dim})"
            )

    @property
    def dim(self) -> int:
        return self.config.dim

    def _locate(self, t):
        t = np.atleast_1d(_wrap_time(t))
        bp = self.mesh.breakpoints
        idx = np.clip(np.searchsorted(bp, t, side="right") - 1, 0, self.mesh.intervals - 1)
        sigma = (t - bp[idx]) / self.mesh.widths()[idx]
        return t, idx, sigma

    def _node_blocks(self) -> np.ndarray:
        m = self.mesh.degree
        n_int = self.mesh.intervals
        return np.arange(n_int)[:, None] * m + np.arange(m + 1)[None, :]

    def evaluate(self, t) -> np.ndarray:
        """Interpolated state at phases t (reduced mod 1); shape (len(t), D)."""
        scalar = np.isscalar(t) or np.ndim(t) == 0
        t, idx, sigma = self._locate(t)
        basis = CollocationBasis.get(self.mesh.degree)
        E = basis.eval_matrix(sigma)
        vals = self.values[self._node_blocks()[idx]]
        out = np.einsum("tl,tld->td", E, vals)
        return out[0] if scalar else out

    def derivative(self, t) -> np.ndarray:
        """d(state)/d(phase); divide by the period for a time derivative."""
        scalar = np.isscalar(t) or np.ndim(t) == 0
        t, idx, sigma = self._locate(t)
        basis = CollocationBasis.get(self.mesh.degree)
        Dm = basis.deriv_matrix(sigma) / self.mesh.widths()[idx][:, None]
        vals = self.values[self._node_blocks()[idx]]
        out = np.einsum("tl,tld->td", Dm, vals)
        return out[0] if scalar else out

    def positions_at_nodes(self) -> np.ndarray:
        nb = self.config.body_count
        return self.values[:, : 3 * nb].reshape(-1, nb, 3)

    def min_pairwise_distance(self) -> float:
        return kernels.min_pair_distance_numpy(self.positions_at_nodes())

    def max_abs_z(self) -> float:
        nb = self.config.body_count
        return float(np.abs(self.values[:, 2 : 3 * nb : 3]).max())

    def copy(self) -> "OrbitSolution":
        return replace(self, values=self.values.copy(), lambdas=self.lambdas.copy())


def evaluate_orbit(orbit: OrbitSolution, t) -> np.ndarray:
    """Module-level alias for :meth:`OrbitSolution.evaluate`."""
    return orbit.evaluate(t)


@dataclass
class PhaseConstraints:
    """Reference orbit anchoring the time-shift phase integral I3.

    Along a family this is the previously accepted member; for the first
    correction it is the predictor itself.
    """

    reference: OrbitSolution


@dataclass
class ContinuationEquation:
    """Linear closure coeffs . U = target over the full unknown vector."""

    coeffs: np.ndarray
    target: float


def pack_unknowns(orbit: OrbitSolution) -> np.ndarray:
    return np.concatenate(
        [orbit.values.ravel(), [orbit.period], orbit.lambdas]
    )


def unpack_unknowns(U: np.ndarray, template: OrbitSolution) -> OrbitSolution:
    n_state = template.mesh.n_nodes * template.dim
    return replace(
        template,
        values=U[:n_state].reshape(template.mesh.n_nodes, template.dim).copy(),
        period=float(U[n_state]),
        lambdas=U[n_state + 1 :].copy(),
    )


class Assembler:
    """Residual/Jacobian assembly for one (mesh, config, reference) triple.

    The sparse index pattern is computed once; each Newton iteration only
    refills the value vector and refactorizes.
    """

    def __init__(self, mesh: Mesh, config: SystemConfig, constraints: PhaseConstraints):
        self.mesh = mesh
        self.config = config
        self.basis = CollocationBasis.get(mesh.degree)
        self.masses = config.masses()
        self.omega = config.frame_freq
        N, m, D = mesh.intervals, mesh.degree, config.dim
        self.N, self.m, self.D = N, m, D
        nb = config.body_count
        self.nb = nb
        self.n_nodes = mesh.n_nodes
        self.Mc = D * self.n_nodes
        self.M = self.Mc + 4
        self.h = mesh.widths()
        self.node_blocks = np.arange(N)[:, None] * m + np.arange(m + 1)[None, :]
        self._build_quadrature_rows(constraints)
        self._build_pattern()

    # -- phase-integral rows -------------------------------------------------

    def _accumulate_row(self, samples: np.ndarray) -> np.ndarray:
        """Row r with r . x_nodes = int phi(t) x(t) dt for samples phi(t_ig)."""
        b = self.basis
        contrib = np.einsum(
            "i,g,gl,ig->il", self.h, b.weights, b.W, samples
        )
        row = np.zeros(self.n_nodes)
        np.add.at(row, self.node_blocks, contrib)
        return row

    def _build_quadrature_rows(self, constraints: PhaseConstraints):
        D, ref = self.D, self.config.reference_index
        tg = self.mesh.gauss_times()
        ones = np.ones_like(tg)
        qw = self._accumulate_row(ones)  # plain quadrature weights per node
        self.i1_cols = D * np.arange(self.n_nodes) + 3 * ref + 1
        self.i2_cols = D * np.arange(self.n_nodes) + 3 * ref + 2
        self.i1_vals = qw
        self.i2_vals = qw
        # I3 row from the reference orbit's interpolant
        ref_orbit = constraints.reference
        flat_t = tg.ravel()
        ref_states = ref_orbit.evaluate(flat_t)
        ref_deriv = ref_orbit.derivative(flat_t)
        sl = slice(3 * ref, 3 * ref + 3)
        xt = ref_states[:, sl].reshape(self.N, self.m, 3)
        xtp = ref_deriv[:, sl].reshape(self.N, self.m, 3)
        rows3 = np.stack(
            [self._accumulate_row(xtp[:, :, c]) for c in range(3)], axis=1
        )  # (n_nodes, 3)
        self.i3_cols = (D * np.arange(self.n_nodes)[:, None] + (3 * ref + np.arange(3))[None, :]).ravel()
        self.i3_vals = rows3.ravel()
        self.i3_const = float(
            np.einsum("i,g,igc,igc->", self.h, self.basis.weights, xt, xtp)
        )

    # -- sparse pattern -------------------------------------------------------

    def _build_pattern(self):
        N, m, D, nb = self.N, self.m, self.D, self.nb
        Mc, M = self.Mc, self.M
        b = self.basis
        d3 = 3 * nb
        i_ix = np.arange(N)
        g_ix = np.arange(m)
        l_ix = np.arange(m + 1)
        row_base = (D * (i_ix[:, None] * m + g_ix[None, :]))  # (N, m)
        col_node = D * self.node_blocks  # (N, m+1)

        rows, cols = [], []

        # A: derivative-identity entries, value D[g,l] (constant; rows are
        # pre-scaled by the interval width)
        c_ix = np.arange(D)
        rA = (row_base[:, :, None, None] + c_ix[None, None, None, :]).repeat(m + 1, axis=2)
        cA = (col_node[:, None, :, None] + c_ix[None, None, None, :]).repeat(m, axis=1)
        rows.append(rA.ravel())
        cols.append(cA.ravel())
        self._vals_A = np.broadcast_to(
            b.D[None, :, :, None], (N, m, m + 1, D)
        ).ravel().copy()
        self.nA = self._vals_A.size

        # B: position rows, d xdot / d v = identity; value -T * h_i * W[g,l]
        p_ix = np.arange(d3)
        rB = (row_base[:, :, None, None] + p_ix[None, None, None, :]).repeat(m + 1, axis=2)
        cB = (col_node[:, None, :, None] + d3 + p_ix[None, None, None, :]).repeat(m, axis=1)
        rows.append(rB.ravel())
        cols.append(cB.ravel())
        self._tmpl_B = np.broadcast_to(
            (self.h[:, None, None, None] * b.W[None, :, :, None]),
            (N, m, m + 1, d3),
        ).ravel().copy()
        self.nB = self._tmpl_B.size

        # C: velocity rows w.r.t. positions; value -T * W[g,l] * A_px[i,g,q,d]
        q_ix = np.arange(d3)
        rC = (
            row_base[:, :, None, None, None]
            + d3
            + q_ix[None, None, None, :, None]
        )
        rC = np.broadcast_to(rC, (N, m, m + 1, d3, d3))
        cC = col_node[:, None, :, None, None] + q_ix[None, None, None, None, :]
        cC = np.broadcast_to(cC, (N, m, m + 1, d3, d3))
        rows.append(rC.ravel())
        cols.append(cC.ravel())
        self.nC = N * m * (m + 1) * d3 * d3

        # Dv: velocity rows w.r.t. velocities, per-body 3x3 Coriolis + lam3
        b_ix = np.arange(nb)
        qq = np.arange(3)
        rDv = (
            row_base[:, :, None, None, None, None]
            + d3
            + 3 * b_ix[None, None, None, :, None, None]
            + qq[None, None, None, None, :, None]
        )
        rDv = np.broadcast_to(rDv, (N, m, m + 1, nb, 3, 3))
        cDv = (
            col_node[:, None, :, None, None, None]
            + d3
            + 3 * b_ix[None, None, None, :, None, None]
            + qq[None, None, None, None, None, :]
        )
        cDv = np.broadcast_to(cDv, (N, m, m + 1, nb, 3, 3))
        rows.append(rDv.ravel())
        cols.append(cDv.ravel())
        self._tmpl_Dv = np.broadcast_to(
            (self.h[:, None, None, None, None, None]
             * b.W[None, :, :, None, None, None]),
            (N, m, m + 1, nb, 3, 3),
        ).ravel().copy()
        self.nDv = self._tmpl_Dv.size

        # T column: -f over all collocation rows
        rT = (row_base[:, :, None] + np.arange(D)[None, None, :]).ravel()
        rows.append(rT)
        cols.append(np.full(rT.size, Mc))
        self.nT = rT.size

        # lambda columns (velocity rows only)
        rL1 = (row_base[:, :, None] + d3 + 3 * b_ix[None, None, :] + 2).ravel()
        rows.append(rL1)
        cols.append(np.full(rL1.size, Mc + 1))
        self.nL1 = rL1.size

        rL2 = (
            row_base[:, :, None, None] + d3 + 3 * b_ix[None, None, :, None] + np.arange(2)[None, None, None, :]
        ).ravel()
        rows.append(rL2)
        cols.append(np.full(rL2.size, Mc + 2))
        self.nL2 = rL2.size

        rL3 = (row_base[:, :, None] + d3 + p_ix[None, None, :]).ravel()
        rows.append(rL3)
        cols.append(np.full(rL3.size, Mc + 3))
        self.nL3 = rL3.size

        # periodicity rows for residual x(1) - x(0)
        rP = Mc - D + np.arange(D)
        rows.append(np.concatenate([rP, rP]))
        cols.append(np.concatenate([np.arange(D), D * (self.n_nodes - 1) + np.arange(D)]))
        self._vals_P = np.concatenate([-np.ones(D), np.ones(D)])
        self.nP = 2 * D

        # integral rows
        rows.append(np.full(self.n_nodes, Mc))
        cols.append(self.i1_cols)
        rows.append(np.full(self.n_nodes, Mc + 1))
        cols.append(self.i2_cols)
        rows.append(np.full(self.i3_cols.size, Mc + 2))
        cols.append(self.i3_cols)
        self.nI = 2 * self.n_nodes + self.i3_cols.size

        # continuation row (dense)
        rows.append(np.full(M, Mc + 3))
        cols.append(np.arange(M))
        self.nQ = M

        self._rows = np.concatenate(rows).astype(np.int32)
        self._cols = np.concatenate(cols).astype(np.int32)

    # -- evaluation ------------------------------------------------------------

    def interval_values(self, values: np.ndarray) -> np.ndarray:
        return values[self.node_blocks]  # (N, m+1, D)

    def collocation_states(self, values: np.ndarray):
        """States at the Gauss points: (pos, vel) with shapes (P, nb, 3)."""
        Xi = self.interval_values(values)
        Xg = np.einsum("gl,ild->igd", self.basis.W, Xi)
        P = self.N * self.m
        d3 = 3 * self.nb
        flat = Xg.reshape(P, self.D)
        pos = np.ascontiguousarray(flat[:, :d3]).reshape(P, self.nb, 3)
        vel = np.ascontiguousarray(flat[:, d3:]).reshape(P, self.nb, 3)
        return Xg, pos, vel

    def _field(self, pos, vel, lam, collision_radius):
        acc, rmin = kernels.accel_batch(pos, vel, self.masses, self.omega, lam)
        if collision_radius > 0.0 and rmin < collision_radius:
            raise CollisionProximity(rmin, collision_radius)
        P = pos.shape[0]
        d3 = 3 * self.nb
        f = np.empty((P, self.D))
        f[:, :d3] = vel.reshape(P, d3)
        f[:, d3:] = acc.reshape(P, d3)
        return f

    def residual(
        self,
        orbit: OrbitSolution,
        continuation: ContinuationEquation | None,
        collision_radius: float = DELTA_COLLISION,
    ) -> np.ndarray:
        """Stacked residual; includes the continuation row when given."""
        values, T, lam = orbit.values, orbit.period, orbit.lambdas
        Xi = self.interval_values(values)
        Xg, pos, vel = self.collocation_states(values)
        f = self._field(pos, vel, lam, collision_radius)
        dX = np.einsum("gl,ild->igd", self.basis.D, Xi)
        r_coll = dX - (T * self.h)[:, None, None] * f.reshape(
            self.N, self.m, self.D
        )
        r_per = values[-1] - values[0]
        flat = values.ravel()
        i1 = float(self.i1_vals @ flat[self.i1_cols])
        i2 = float(self.i2_vals @ flat[self.i2_cols])
        i3 = float(self.i3_vals @ flat[self.i3_cols]) - self.i3_const
        parts = [r_coll.ravel(), r_per, [i1, i2, i3]]
        if continuation is not None:
            U = pack_unknowns(orbit)
            parts.append([float(continuation.coeffs @ U) - continuation.target])
        return np.concatenate(parts)

    def jacobian(
        self,
        orbit: OrbitSolution,
        continuation: ContinuationEquation,
        collision_radius: float = DELTA_COLLISION,
    ) -> sp.csc_matrix:
        values, T, lam = orbit.values, orbit.period, orbit.lambdas
        N, m, D, nb = self.N, self.m, self.D, self.nb
        d3 = 3 * nb
        b = self.basis
        Xg, pos, vel = self.collocation_states(values)
        f = self._field(pos, vel, lam, collision_radius)
        a_px = kernels.accel_jac_pos_batch(pos, self.masses, self.omega, lam[1])
        a_px = a_px.reshape(N, m, d3, d3)

        w = self.omega
        B3 = np.array(
            [[lam[2], 2.0 * w, 0.0], [-2.0 * w, lam[2], 0.0], [0.0, 0.0, lam[2]]]
        )

        vals = np.empty(self._rows.size)
        o = 0
        vals[o : o + self.nA] = self._vals_A
        o += self.nA
        vals[o : o + self.nB] = -T * self._tmpl_B
        o += self.nB
        vC = -T * np.einsum("i,gl,igqd->iglqd", self.h, b.W, a_px)
        vals[o : o + self.nC] = vC.ravel()
        o += self.nC
        vDv = -T * self._tmpl_Dv.reshape(N, m, m + 1, nb, 3, 3) * B3[None, None, None, None, :, :]
        vals[o : o + self.nDv] = vDv.ravel()
        o += self.nDv
        f_scaled = self.h[:, None, None] * f.reshape(N, m, D)
        vals[o : o + self.nT] = -f_scaled.ravel()
        o += self.nT
        hb = np.broadcast_to(self.h[:, None, None], (N, m, nb))
        vals[o : o + self.nL1] = (-T * hb).ravel()
        o += self.nL1
        u_xy = pos[:, :, :2].reshape(N, m, nb, 2)
        vL2 = np.empty((N, m, nb, 2))
        vL2[..., 0] = -T * hb * u_xy[..., 1]
        vL2[..., 1] = T * hb * u_xy[..., 0]
        vals[o : o + self.nL2] = vL2.ravel()
        o += self.nL2
        vL3 = -T * self.h[:, None, None] * vel.reshape(N, m, d3)
        vals[o : o + self.nL3] = vL3.ravel()
        o += self.nL3
        vals[o : o + self.nP] = self._vals_P
        o += self.nP
        vals[o : o + self.n_nodes] = self.i1_vals
        o += self.n_nodes
        vals[o : o + self.n_nodes] = self.i2_vals
        o += self.n_nodes
        vals[o : o + self.i3_vals.size] = self.i3_vals
        o += self.i3_vals.size
        vals[o : o + self.nQ] = continuation.coeffs
        o += self.nQ
        assert o == vals.size
        return sp.csc_matrix(
            (vals, (self._rows, self._cols)), shape=(self.M, self.M)
        )


def assemble_residual(
    candidate: OrbitSolution,
    constraints: PhaseConstraints,
    collision_radius: float = DELTA_COLLISION,
) -> np.ndarray:
    """Residual of all equations except the continuation closure.

    Length ``D*(N*m + 1) + 3``, one short of the unknown count.
    """
    asm = Assembler(candidate.mesh, candidate.config, constraints)
    return asm.residual(candidate, None, collision_radius)


def _perm_parity(perm: np.ndarray) -> int:
    perm = np.asarray(perm)
    seen = np.zeros(perm.size, dtype=bool)
    parity = 1
    for start in range(perm.size):
        if seen[start]:
            continue
        length = 0
        j = start
        while not seen[j]:
            seen[j] = True
            j = perm[j]
            length += 1
        if length % 2 == 0:
            parity = -parity
    return parity


def lu_det_sign(lu) -> tuple[int, float]:
    """(sign, log|det|) of a SuperLU factorization."""
    diag = lu.U.diagonal()
    if np.any(diag == 0.0):
        return 0, -np.inf
    sign = int(np.prod(np.sign(diag)))
    sign *= _perm_parity(lu.perm_r) * _perm_parity(lu.perm_c)
    # L has unit diagonal in SuperLU's convention but guard anyway
    ldiag = lu.L.diagonal()
    sign *= int(np.prod(np.sign(ldiag)))
    logabs = float(np.sum(np.log(np.abs(diag))) + np.sum(np.log(np.abs(ldiag))))
    return sign, logabs


def _factorize(J: sp.csc_matrix):
    try:
        return spla.splu(J, permc_spec="NATURAL")
    except RuntimeError as exc:
        if "singular" in str(exc).lower():
            raise SingularJacobian(str(exc)) from exc
        raise


@dataclass
class NewtonResult:
    orbit: OrbitSolution
    iterations: int
    residual_norm: float
    det_sign: int
    logabsdet: float
    lu: object
    assembler: Assembler


def newton_correct(
    guess: OrbitSolution,
    constraints: PhaseConstraints,
    continuation_equation: ContinuationEquation,
    tol: float = 1e-10,
    max_iterations: int = 20,
    collision_radius: float = DELTA_COLLISION,
) -> NewtonResult:
    """Damped Newton on the bordered system; max-norm tolerance.

    Raises NoConvergence when the iteration stalls or the budget runs out,
    and SingularJacobian when the factorization hits an exact zero pivot
    (the caller treats that as "bifurcation nearby").
    """
    asm = Assembler(guess.mesh, guess.config, constraints)
    orbit = guess.copy()
    r = asm.residual(orbit, continuation_equation, collision_radius)
    rnorm = float(np.abs(r).max())
    lu = None
    for it in range(1, max_iterations + 1):
        if rnorm < tol and lu is not None:
            sign, logabs = lu_det_sign(lu)
            return NewtonResult(orbit, it - 1, rnorm, sign, logabs, lu, asm)
        J = asm.jacobian(orbit, continuation_equation, collision_radius)
        lu = _factorize(J)
        dU = lu.solve(r)
        if not np.all(np.isfinite(dU)):
            raise SingularJacobian("non-finite Newton correction")
        U = pack_unknowns(orbit)
        step = 1.0
        accepted = None
        for _ in range(6):
            trial = unpack_unknowns(U - step * dU, orbit)
            try:
                r_trial = asm.residual(trial, continuation_equation, collision_radius)
            except CollisionProximity:
                step *= 0.5
                continue
            tnorm = float(np.abs(r_trial).max())
            if tnorm < rnorm or tnorm < tol:
                accepted = (trial, r_trial, tnorm)
                break
            step *= 0.5
        if accepted is None:
            raise NoConvergence(
                f"damping failed at iteration {it} (residual {rnorm:.3e})",
                residual=rnorm,
                iterations=it,
            )
        orbit, r, rnorm = accepted
    if rnorm < tol:
        sign, logabs = lu_det_sign(lu)
        return NewtonResult(orbit, max_iterations, rnorm, sign, logabs, lu, asm)
    raise NoConvergence(
        f"no convergence after {max_iterations} iterations (residual {rnorm:.3e})",
        residual=rnorm,
        iterations=max_iterations,
    )


def tangent_vector(result: NewtonResult) -> np.ndarray:
    """Null direction of the equations: solves J t = e_(continuation row)."""
    e = np.zeros(result.assembler.M)
    e[-1] = 1.0
    t = result.lu.solve(e)
    if not np.all(np.isfinite(t)):
        raise SingularJacobian("tangent solve produced non-finite values")
    return t


def adapt_mesh(orbit: OrbitSolution, target_intervals: int | None = None) -> OrbitSolution:
    """Redistribute breakpoints to equidistribute local interpolation error.

    The monitor is the jump of the (constant per interval) highest
    derivative of the interpolant across neighbouring intervals, a proxy
    for the next derivative that controls the local error.  A constant
    orbit therefore yields a uniform mesh, and re-adapting an already
    adapted mesh moves breakpoints only marginally.
    """
    mesh = orbit.mesh
    N = target_intervals or mesh.intervals
    m = mesh.degree
    basis = CollocationBasis.get(m)
    Xi = orbit.values[
        np.arange(mesh.intervals)[:, None] * m + np.arange(m + 1)[None, :]
    ]
    pm = np.einsum("l,ild->id", basis.high_deriv, Xi) / mesh.widths()[:, None] ** m
    jumps = np.linalg.norm(np.diff(pm, axis=0), axis=1)
    density = np.zeros(mesh.intervals)
    if jumps.size:
        est = jumps / np.maximum(0.5 * (mesh.widths()[:-1] + mesh.widths()[1:]), 1e-14)
        density[:-1] += 0.5 * est
        density[1:] += 0.5 * est
    density = density ** (1.0 / (m + 1))
    if density.max() <= 0.0:
        new_bp = np.linspace(0.0, 1.0, N + 1)
    else:
        density = np.maximum(density, 1e-3 * density.max())
        cum = np.concatenate([[0.0], np.cumsum(density * mesh.widths())])
        cum /= cum[-1]
        new_bp = np.interp(np.linspace(0.0, 1.0, N + 1), cum, mesh.breakpoints)
        new_bp[0], new_bp[-1] = 0.0, 1.0
    new_mesh = Mesh(new_bp, m)
    new_values = orbit.evaluate(new_mesh.node_times())
    return replace(orbit, mesh=new_mesh, values=new_values)
