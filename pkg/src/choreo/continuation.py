"""Pseudo-arclength continuation of periodic-orbit families.

A family starts from a linear mode of the equilibrium, is advanced with
adaptive pseudo-arclength steps (the period is an unknown, so folds are
traversed without special handling), and stops at a period bound, a
near-collision, a step failure, or the step budget.  Along the way the
sign of the bordered-Jacobian determinant is recorded; a sign change
brackets a branch point, which is then located by bisection and can be
switched onto with :func:`branch_switch`.

The arclength metric weights state components by 1/n_nodes (a quadrature
proxy) and the period and unfolding parameters by 1, so step sizes are
comparable across meshes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .bvp import (
    ContinuationEquation,
    Mesh,
    NewtonResult,
    OrbitSolution,
    PhaseConstraints,
    adapt_mesh,
    newton_correct,
    pack_unknowns,
    tangent_vector,
    unpack_unknowns,
)
from .errors import (
    CollisionProximity,
    DegenerateMode,
    NoConvergence,
    NotBracketed,
    NullSpaceAmbiguous,
    SingularJacobian,
    StepFailure,
)
from .nbody import DELTA_COLLISION, SystemConfig
from .spectrum import ModeRecord, lyapunov_predictor, mode_displacement


@dataclass
class ContinuationSettings:
    initial_step: float = 0.05
    min_step: float = 1e-7
    max_step: float = 0.5
    max_steps: int = 500
    initial_amplitude: float = 3e-3
    period_range: tuple = (0.05, 40.0)
    collision_radius: float = DELTA_COLLISION
    newton_tol: float = 1e-10
    max_newton_iterations: int = 20
    n_intervals: int = 100
    degree: int = 4
    adapt_every: int = 5
    fast_iterations: int = 3
    grow_after: int = 4
    grow_factor: float = 1.3
    branch_point_tol: float = 1e-8

    def __post_init__(self):
        if not 0.0 < self.min_step <= self.initial_step <= self.max_step:
            raise ValueError("need 0 < min_step <= initial_step <= max_step")


@dataclass
class EventRecord:
    kind: str  # branch_point | fold | collision | period_bound | max_steps | step_failure
    step_index: int
    orbit: OrbitSolution | None = None
    info: dict = field(default_factory=dict)


@dataclass
class FamilyBranch:
    """Ordered family members plus continuation metadata."""

    config: SystemConfig
    settings: ContinuationSettings
    family: str
    wave_number: int
    branch_id: str
    orbits: list = field(default_factory=list)
    tangents: list = field(default_factory=list)
    det_signs: list = field(default_factory=list)
    # post-adaptation copy of det_signs: comparable with the NEXT step,
    # which is corrected on the adapted mesh
    det_signs_fwd: list = field(default_factory=list)
    logdets: list = field(default_factory=list)
    newton_iterations: list = field(default_factory=list)
    events: list = field(default_factory=list)
    termination: str | None = None
    provenance: dict = field(default_factory=dict)
    current_step: float = 0.0

    def periods(self) -> np.ndarray:
        return np.array([o.period for o in self.orbits])

    def period_range(self) -> tuple[float, float]:
        p = self.periods()
        return float(p.min()), float(p.max())

    def __len__(self) -> int:
        return len(self.orbits)


def metric_weights(orbit: OrbitSolution) -> np.ndarray:
    n_nodes = orbit.mesh.n_nodes
    return np.concatenate(
        [np.full(n_nodes * orbit.dim, 1.0 / n_nodes), np.ones(4)]
    )


def _normalized(vec: np.ndarray, wgt: np.ndarray) -> np.ndarray:
    return vec / math.sqrt(float(vec @ (wgt * vec)))


def _arclength_equation(tangent, wgt, anchor_U, ds) -> ContinuationEquation:
    coeffs = tangent * wgt
    return ContinuationEquation(coeffs, float(coeffs @ anchor_U) + ds)


def _reexpress(orbit: OrbitSolution, mesh: Mesh) -> OrbitSolution:
    if orbit.mesh is mesh:
        return orbit
    return replace(orbit, mesh=mesh, values=orbit.evaluate(mesh.node_times()))


def _reexpress_vector(vec: np.ndarray, src: OrbitSolution, mesh: Mesh) -> np.ndarray:
    """Re-sample the state part of an unknown-space vector onto a new mesh."""
    n_state = src.mesh.n_nodes * src.dim
    carrier = replace(src, values=vec[:n_state].reshape(src.mesh.n_nodes, src.dim))
    return np.concatenate([carrier.evaluate(mesh.node_times()).ravel(), vec[n_state:]])


def _append(branch: FamilyBranch, res: NewtonResult, tangent: np.ndarray):
    branch.orbits.append(res.orbit)
    branch.tangents.append(tangent)
    branch.det_signs.append(res.det_sign)
    branch.det_signs_fwd.append(res.det_sign)
    branch.logdets.append(res.logabsdet)
    branch.newton_iterations.append(res.iterations)


def start_family(
    mode: ModeRecord, config: SystemConfig, settings: ContinuationSettings
) -> FamilyBranch:
    """Grow a family from a simple linear mode of the equilibrium.

    The first orbit is the corrected small-amplitude predictor (amplitude
    pinned by the mode-direction closure); afterwards the family is
    advanced until a termination condition fires and recorded on the
    branch.
    """
    if mode.degenerate:
        raise DegenerateMode(
            f"{mode.family_type} mode k={mode.wave_number} "
            f"(frequency {mode.frequency:.8f}) is clustered; refusing continuation"
        )
    guess, _ = lyapunov_predictor(
        mode, settings.initial_amplitude, config,
        n_intervals=settings.n_intervals, degree=settings.degree,
    )
    wgt = metric_weights(guess)
    tau = guess.mesh.node_times()
    direction = np.concatenate(
        [mode_displacement(mode, 1.0, tau).ravel(), np.zeros(4)]
    )
    direction = _normalized(direction, wgt)
    equation = ContinuationEquation(
        direction * wgt, float((direction * wgt) @ pack_unknowns(guess))
    )
    res = newton_correct(
        guess, PhaseConstraints(guess), equation,
        tol=settings.newton_tol, max_iterations=settings.max_newton_iterations,
        collision_radius=settings.collision_radius,
    )
    tangent = _normalized(tangent_vector(res), wgt)
    if float(tangent @ (wgt * direction)) < 0.0:
        tangent = -tangent
    branch = FamilyBranch(
        config=config,
        settings=settings,
        family=mode.family_type,
        wave_number=mode.wave_number,
        branch_id=f"n{config.n}-mu{config.mu:g}-k{mode.wave_number}-"
        f"{mode.family_type}-f{mode.frequency:.6f}",
        provenance={"mode_frequency": mode.frequency},
        current_step=settings.initial_step,
    )
    _append(branch, res, tangent)
    _advance(branch)
    return branch


def arclength_step(branch: FamilyBranch) -> None:
    """One predictor-corrector step; halves the step on failure and grows
    it after a run of fast-converging steps.  Raises StepFailure at the
    minimum step size."""
    settings = branch.settings
    prev = branch.orbits[-1]
    tangent = branch.tangents[-1]
    wgt = metric_weights(prev)
    U_prev = pack_unknowns(prev)
    constraints = PhaseConstraints(prev)
    ds = branch.current_step
    while True:
        U_pred = U_prev + ds * tangent
        guess = unpack_unknowns(U_pred, prev)
        equation = _arclength_equation(tangent, wgt, U_prev, ds)
        try:
            res = newton_correct(
                guess, constraints, equation,
                tol=settings.newton_tol,
                max_iterations=settings.max_newton_iterations,
                collision_radius=settings.collision_radius,
            )
            break
        except (NoConvergence, CollisionProximity, SingularJacobian):
            ds *= 0.5
            if ds < settings.min_step:
                raise StepFailure(
                    f"step collapsed below {settings.min_step:g} "
                    f"at T={prev.period:.6f}"
                )
    new_tangent = _normalized(tangent_vector(res), wgt)
    if float(new_tangent @ (wgt * tangent)) < 0.0:
        new_tangent = -new_tangent
    branch.current_step = ds
    _append(branch, res, new_tangent)


def _adapt_last(branch: FamilyBranch, force: bool = False) -> None:
    """Re-mesh the newest orbit and refresh tangent/determinant baselines."""
    settings = branch.settings
    last = branch.orbits[-1]
    adapted = adapt_mesh(last)
    shift = float(
        np.abs(adapted.mesh.breakpoints - last.mesh.breakpoints).max()
    )
    if shift < 1e-12 and not force:
        return
    tangent = _reexpress_vector(branch.tangents[-1], last, adapted.mesh)
    wgt = metric_weights(adapted)
    tangent = _normalized(tangent, wgt)
    equation = _arclength_equation(tangent, wgt, pack_unknowns(adapted), 0.0)
    try:
        res = newton_correct(
            adapted, PhaseConstraints(adapted), equation,
            tol=settings.newton_tol,
            max_iterations=settings.max_newton_iterations,
            collision_radius=settings.collision_radius,
        )
    except (NoConvergence, CollisionProximity, SingularJacobian):
        return  # keep the un-adapted representation
    new_tangent = _normalized(tangent_vector(res), wgt)
    if float(new_tangent @ (wgt * tangent)) < 0.0:
        new_tangent = -new_tangent
    branch.orbits[-1] = res.orbit
    branch.tangents[-1] = new_tangent
    branch.det_signs_fwd[-1] = res.det_sign
    branch.logdets[-1] = res.logabsdet


def _advance(branch: FamilyBranch) -> None:
    settings = branch.settings
    fast_run = 0
    steps = 0
    while True:
        if steps >= settings.max_steps:
            branch.termination = "max_steps"
            branch.events.append(EventRecord("max_steps", len(branch) - 1))
            return
        try:
            arclength_step(branch)
        except StepFailure:
            # the frontier representation may simply be under-resolved:
            # re-mesh once and retry before giving up
            _adapt_last(branch, force=True)
            try:
                arclength_step(branch)
            except StepFailure:
                near = branch.orbits[-1].min_pairwise_distance()
                kind = (
                    "collision"
                    if near < 10.0 * settings.collision_radius
                    else "step_failure"
                )
                branch.termination = kind
                branch.events.append(
                    EventRecord(kind, len(branch) - 1, info={"min_distance": near})
                )
                return
        steps += 1
        orbit = branch.orbits[-1]
        # fold monitor: period component of the oriented tangent flips sign
        n_state = orbit.mesh.n_nodes * orbit.dim
        if len(branch) >= 3:
            dT_now = branch.tangents[-1][n_state]
            dT_before = branch.tangents[-2][
                branch.orbits[-2].mesh.n_nodes * orbit.dim
            ]
            if dT_now * dT_before < 0.0 and abs(dT_before) > 1e-12:
                branch.events.append(
                    EventRecord("fold", len(branch) - 1, info={"period": orbit.period})
                )
        rmin = orbit.min_pairwise_distance()
        if rmin < 2.0 * settings.collision_radius:
            branch.termination = "collision"
            branch.events.append(
                EventRecord("collision", len(branch) - 1, info={"min_distance": rmin})
            )
            return
        if not settings.period_range[0] <= orbit.period <= settings.period_range[1]:
            branch.termination = "period_bound"
            branch.events.append(
                EventRecord("period_bound", len(branch) - 1, info={"period": orbit.period})
            )
            return
        if branch.newton_iterations[-1] <= settings.fast_iterations:
            fast_run += 1
            if fast_run >= settings.grow_after:
                branch.current_step = min(
                    branch.current_step * settings.grow_factor, settings.max_step
                )
                fast_run = 0
        else:
            fast_run = 0
        # adapt on cadence, and every step once close encounters develop
        if settings.adapt_every and (
            steps % settings.adapt_every == 0 or rmin < 0.2
        ):
            _adapt_last(branch)


def _null_direction(res: NewtonResult, wgt: np.ndarray, rng=None):
    """Null vector of the bordered Jacobian by two-vector inverse iteration.

    Returns (phi, growth_ratio); growth_ratio near 1 means a second
    near-null direction exists (ambiguous null space).
    """
    rng = rng or np.random.default_rng(7)
    M = res.assembler.M
    x1 = rng.standard_normal(M)
    x2 = rng.standard_normal(M)
    g1 = g2 = 0.0
    for _ in range(3):
        y1 = res.lu.solve(x1)
        g1 = math.sqrt(float(y1 @ (wgt * y1)))
        x1 = y1 / g1
        y2 = res.lu.solve(x2)
        y2 = y2 - float(y2 @ (wgt * x1)) * x1
        g2 = math.sqrt(float(y2 @ (wgt * y2)))
        if g2 == 0.0:
            break
        x2 = y2 / g2
    return x1, (g2 / g1 if g1 > 0.0 else 0.0)


def _oriented_sign(res: NewtonResult, row: np.ndarray):
    """Row-independent orientation of the equations at a solution point.

    det[G_U; row] is linear in the closure row and vanishes exactly on the
    row space of G_U, so sign(det) * sign(row . tangent) is the same for
    every admissible row; it flips only where G_U itself drops rank.
    Returns (orientation, raw tangent solve).
    """
    t_raw = tangent_vector(res)
    overlap = float(row @ t_raw)
    return res.det_sign * (1 if overlap > 0 else -1), t_raw


def detect_branch_points(branch: FamilyBranch, limit: int | None = None) -> list[EventRecord]:
    """Locate rank-drop points of the equations by bisection.

    The per-step determinant signs are canonical orientations (every step
    row has positive overlap with the local tangent), so a sign change
    between consecutive members brackets a point where the unbordered
    equations drop rank.  Bisection re-corrects at interior points,
    tracking the orientation with the local tangent as the closure row;
    the located orbit, the transversal null direction and diagnostics go
    into the event record.  Pure folds do not flip the orientation (the
    period is an unknown here) and are instead flagged on the fly by the
    tangent monitor in the advance loop.
    """
    settings = branch.settings
    found: list[EventRecord] = []
    for i in range(len(branch) - 1):
        if branch.det_signs_fwd[i] * branch.det_signs[i + 1] >= 0:
            continue
        lo = branch.orbits[i]
        hi = _reexpress(branch.orbits[i + 1], lo.mesh)
        wgt = metric_weights(lo)
        row = branch.tangents[i] * wgt
        U_lo, U_hi = pack_unknowns(lo), pack_unknowns(hi)
        sign_lo = branch.det_signs_fwd[i]
        constraints = PhaseConstraints(lo)
        res_mid = None
        located = None
        frac = 0.5
        for _ in range(64):
            if abs(hi.period - lo.period) < settings.branch_point_tol:
                break
            U_mid = U_lo + frac * (U_hi - U_lo)
            equation = ContinuationEquation(row, float(row @ U_mid))
            try:
                res_mid = newton_correct(
                    unpack_unknowns(U_mid, lo), constraints, equation,
                    tol=settings.newton_tol,
                    max_iterations=settings.max_newton_iterations,
                    collision_radius=settings.collision_radius,
                )
            except (NoConvergence, CollisionProximity, SingularJacobian):
                frac *= 0.5  # retry closer to the lo endpoint
                if frac < 1e-3:
                    break
                continue
            frac = 0.5
            orient, t_raw = _oriented_sign(res_mid, row)
            located = res_mid
            if orient == sign_lo:
                U_lo = pack_unknowns(res_mid.orbit)
                lo = res_mid.orbit
            else:
                U_hi = pack_unknowns(res_mid.orbit)
                hi = res_mid.orbit
            t_loc = _normalized(t_raw if float(row @ t_raw) > 0 else -t_raw, wgt)
            row = t_loc * wgt
        if located is None:
            continue
        phi_raw, ratio = _null_direction(located, wgt)
        t_here = _normalized(tangent_vector(located), wgt)
        alignment = abs(float(phi_raw @ (wgt * t_here)))
        phi = phi_raw - float(phi_raw @ (wgt * t_here)) * t_here
        transversal = math.sqrt(max(float(phi @ (wgt * phi)), 0.0))
        if transversal < 1e-6:
            kind = "fold"
            phi = t_here
        else:
            kind = "branch_point"
            phi = _normalized(phi, wgt)
        event = EventRecord(
            kind,
            i,
            orbit=located.orbit,
            info={
                "null_vector": phi,
                "null_ratio": ratio,
                "tangent_alignment": alignment,
                "period": located.orbit.period,
            },
        )
        branch.events.append(event)
        found.append(event)
        if limit is not None and len(found) >= limit:
            break
    return found


def branch_switch(
    branch: FamilyBranch,
    event: EventRecord,
    settings: ContinuationSettings | None = None,
    direction: int = 1,
) -> FamilyBranch:
    """Continue the branch that crosses at a located branch point.

    The bifurcation orbit is perturbed along the null direction of the
    singular bordered Jacobian, corrected with the null direction as the
    closure, and then advanced as a new family with provenance back to
    the parent branch.
    """
    settings = settings or branch.settings
    if event.kind != "branch_point":
        raise NullSpaceAmbiguous(
            f"cannot switch at a '{event.kind}' event: no transversal branch"
        )
    if event.orbit is None or "null_vector" not in event.info:
        raise ValueError("event does not carry a located bifurcation orbit")
    if event.info.get("null_ratio", 0.0) > 0.33:
        raise NullSpaceAmbiguous(
            f"null space not one-dimensional (growth ratio "
            f"{event.info['null_ratio']:.3f})"
        )
    base = event.orbit
    phi = np.asarray(event.info["null_vector"]) * float(direction)
    wgt = metric_weights(base)
    phi = _normalized(phi, wgt)
    U_star = pack_unknowns(base)
    ds = settings.initial_step
    res = None
    while True:
        U_pred = U_star + ds * phi
        equation = _arclength_equation(phi, wgt, U_star, ds)
        try:
            res = newton_correct(
                unpack_unknowns(U_pred, base), PhaseConstraints(base), equation,
                tol=settings.newton_tol,
                max_iterations=settings.max_newton_iterations,
                collision_radius=settings.collision_radius,
            )
            break
        except (NoConvergence, CollisionProximity, SingularJacobian):
            ds *= 0.5
            if ds < settings.min_step:
                raise StepFailure("could not correct onto the bifurcating branch")
    if res.orbit.max_abs_z() < 1e-8:
        new_family = "planar"
    elif branch.family == "vertical":
        new_family = "axial"
    else:
        new_family = branch.family
    tangent = _normalized(tangent_vector(res), wgt)
    if float(tangent @ (wgt * phi)) < 0.0:
        tangent = -tangent
    child = FamilyBranch(
        config=branch.config,
        settings=settings,
        family=new_family,
        wave_number=branch.wave_number,
        branch_id=f"{branch.branch_id}-sw{event.step_index}d{direction:+d}",
        provenance={
            "parent": branch.branch_id,
            "event_step": event.step_index,
            "direction": direction,
            "parent_family": branch.family,
        },
        current_step=ds,
    )
    orbit = replace(res.orbit, family=new_family)
    res = replace(res, orbit=orbit)
    _append(child, res, tangent)
    _advance(child)
    return child


def locate_period(branch: FamilyBranch, T_target: float) -> OrbitSolution:
    """Newton-corrected orbit with the requested period, found by a
    secant/bisection hybrid between the bracketing family members."""
    settings = branch.settings
    periods = branch.periods()
    for i, orbit in enumerate(branch.orbits):
        if abs(orbit.period - T_target) <= 1e-9 * abs(T_target):
            return orbit
    bracket = None
    for i in range(len(periods) - 1):
        if (periods[i] - T_target) * (periods[i + 1] - T_target) < 0.0:
            bracket = i
            break
    if bracket is None:
        raise NotBracketed(
            f"period {T_target:.6f} outside the computed range "
            f"[{periods.min():.6f}, {periods.max():.6f}] "
            "or not bracketed by consecutive members"
        )
    lo = branch.orbits[bracket]
    hi = _reexpress(branch.orbits[bracket + 1], lo.mesh)
    tangent = branch.tangents[bracket]
    wgt = metric_weights(lo)
    U_lo = pack_unknowns(lo)
    constraints = PhaseConstraints(lo)
    coeffs = tangent * wgt
    s_lo, f_lo = 0.0, lo.period - T_target
    s_hi = float(coeffs @ (pack_unknowns(hi) - U_lo))
    f_hi = hi.period - T_target
    best = None
    for _ in range(80):
        # secant proposal, clamped into the bracket interior
        denom = f_hi - f_lo
        s_new = s_lo - f_lo * (s_hi - s_lo) / denom if denom != 0.0 else 0.5 * (s_lo + s_hi)
        lob, hib = sorted((s_lo, s_hi))
        if not lob + 1e-3 * (hib - lob) <= s_new <= hib - 1e-3 * (hib - lob):
            s_new = 0.5 * (s_lo + s_hi)
        U_pred = U_lo + s_new * tangent
        equation = ContinuationEquation(coeffs, float(coeffs @ U_lo) + s_new)
        res = newton_correct(
            unpack_unknowns(U_pred, lo), constraints, equation,
            tol=settings.newton_tol,
            max_iterations=settings.max_newton_iterations,
            collision_radius=settings.collision_radius,
        )
        f_new = res.orbit.period - T_target
        best = res.orbit
        if abs(f_new) <= 1e-9 * abs(T_target):
            return replace(best, family=branch.family, wave_number=branch.wave_number)
        if f_new * f_lo < 0.0:
            s_hi, f_hi = s_new, f_new
        else:
            s_lo, f_lo = s_new, f_new
    raise NoConvergence(
        f"period location stalled at T={best.period if best else float('nan'):.9f}"
    )
