"""Problem registry, manufactured solutions, error metrics, and time stepping.

The elliptic registry covers the experiment families the solver is exercised
on: the free-space Green's function problems for Laplace and Helmholtz, the
gravity-modulated Helmholtz source problem, the Helmholtz problem on a
sinusoidally mapped domain (which forces Legendre face grids), and the
implicit step operator of the convection-diffusion model.  Each family has a
2D analogue so small dense cross-checks stay cheap.

Parabolic problems are advanced by Crank–Nicolson: the implicit half-step
operator is built and factorized once, and every step reuses it with a new
reduced load.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence

import numpy as np
from scipy.special import y0 as bessel_y0

from . import condensation
from .condensation import BatchSchedule, InterfaceSystem
from .errors import ConfigError
from .geometry import Discretization, DomainBox, ParameterMap, sinusoidal_map
from .local_ops import DROP_CORNERS, CoefficientField, isotropic_field

# Canonical experiment domains (unit-scale boxes away from the origin).
POISSON_DOMAIN_3D = DomainBox(lo=(-1.1, 1.0, 1.2), hi=(0.1, 2.0, 2.2))
POISSON_DOMAIN_2D = DomainBox(lo=(-1.1, 1.0), hi=(0.1, 2.0))
GRAVITY_DOMAIN_3D = DomainBox(lo=(1.1, -1.0, -1.2), hi=(2.1, 0.0, -0.2))
GRAVITY_DOMAIN_2D = DomainBox(lo=(1.1, -1.0), hi=(2.1, 0.0))
CONVDIFF_DOMAIN_3D = DomainBox(lo=(-0.5, -0.5, -0.5), hi=(0.5, 0.5, 0.5))
CONVDIFF_DOMAIN_2D = DomainBox(lo=(-0.5, -0.5), hi=(0.5, 0.5))
UNIT_CUBE = DomainBox(lo=(0.0, 0.0, 0.0), hi=(1.0, 1.0, 1.0))
UNIT_SQUARE = DomainBox(lo=(0.0, 0.0), hi=(1.0, 1.0))


@dataclass
class ProblemSpec:
    """One boundary value problem: operator, load, boundary data, optional truth."""

    name: str
    coeffs: CoefficientField
    f: Callable[[np.ndarray], np.ndarray]
    g: Callable[[np.ndarray], np.ndarray]
    domain: DomainBox
    exact: Optional[Callable[[np.ndarray], np.ndarray]] = None
    parameter_map: Optional[ParameterMap] = None

    @property
    def requires_legendre_faces(self) -> bool:
        return self.coeffs.has_cross_terms


@dataclass
class TimeStepConfig:
    dt: float
    t_end: float
    u0: Callable[[np.ndarray], np.ndarray]

    def __post_init__(self):
        if not self.dt > 0.0:
            raise ConfigError("dt must be positive")
        if self.t_end < self.dt:
            raise ConfigError("t_end must cover at least one step")

    @property
    def steps(self) -> int:
        return int(round(self.t_end / self.dt))


@dataclass
class ParabolicProblem:
    """du/dt = diffusivity*Lap(u) - div(velocity*u), homogeneous Dirichlet."""

    name: str
    domain: DomainBox
    diffusivity: float
    velocity: Optional[Callable[[np.ndarray], np.ndarray]] = None
    div_velocity: Optional[Callable[[np.ndarray], np.ndarray]] = None
    u0: Optional[Callable[[np.ndarray], np.ndarray]] = None
    exact: Optional[Callable[[np.ndarray, float], np.ndarray]] = None


def _zero(x: np.ndarray) -> np.ndarray:
    return np.zeros(x.shape[0])


def _check_origin_excluded(domain: DomainBox) -> None:
    if all(lo <= 0.0 <= hi for lo, hi in zip(domain.lo, domain.hi)):
        raise ConfigError("domain must exclude the origin for the free-space "
                          "Green's function")


# ---------------------------------------------------------------------------
# Elliptic registry
# ---------------------------------------------------------------------------

def poisson_green(domain: Optional[DomainBox] = None, d: int = 3) -> ProblemSpec:
    """Laplace with the free-space Green's function as exact solution."""
    domain = domain or (POISSON_DOMAIN_3D if d == 3 else POISSON_DOMAIN_2D)
    _check_origin_excluded(domain)

    if domain.d == 3:
        def exact(x):
            return 1.0 / (4.0 * np.pi * np.linalg.norm(x, axis=1))
    else:
        def exact(x):
            return -np.log(np.linalg.norm(x, axis=1)) / (2.0 * np.pi)

    return ProblemSpec(name="poisson_green", coeffs=isotropic_field(domain.d),
                       f=_zero, g=exact, exact=exact, domain=domain)


def helmholtz_green(domain: Optional[DomainBox] = None, kappa: float = 16.0,
                    d: int = 3) -> ProblemSpec:
    """Constant-coefficient Helmholtz, Green's-function manufactured solution."""
    domain = domain or (POISSON_DOMAIN_3D if d == 3 else POISSON_DOMAIN_2D)
    _check_origin_excluded(domain)
    kappa = float(kappa)

    if domain.d == 3:
        def exact(x):
            r = np.linalg.norm(x, axis=1)
            return np.cos(kappa * r) / (4.0 * np.pi * r)
    else:
        def exact(x):
            return bessel_y0(kappa * np.linalg.norm(x, axis=1))

    coeffs = isotropic_field(domain.d,
                             zeroth=lambda x: np.full(x.shape[0], -kappa * kappa))
    return ProblemSpec(name="helmholtz_green", coeffs=coeffs, f=_zero, g=exact,
                       exact=exact, domain=domain)


def gravity_helmholtz(domain: Optional[DomainBox] = None, kappa: float = 12.0,
                      d: int = 3) -> ProblemSpec:
    """Helmholtz with depth-dependent wave speed, unit source, zero boundary.

    Lap(u) + kappa^2 (1 - x_last) u = -1 with g = 0; no closed-form solution,
    so accuracy is judged against an over-resolved self-solution.
    """
    domain = domain or (GRAVITY_DOMAIN_3D if d == 3 else GRAVITY_DOMAIN_2D)
    kappa = float(kappa)
    last = domain.d - 1

    coeffs = isotropic_field(
        domain.d, zeroth=lambda x: -kappa * kappa * (1.0 - x[:, last]))
    return ProblemSpec(name="gravity_helmholtz", coeffs=coeffs,
                       f=lambda x: np.ones(x.shape[0]), g=_zero, domain=domain)


def curved_helmholtz(kappa: float = 16.0, d: int = 3, amplitude: float = 0.25,
                     frequency: float = 6.0,
                     domain: Optional[DomainBox] = None) -> ProblemSpec:
    """Helmholtz on a sinusoidally widened domain, pulled back to a box.

    The physical domain scales the second axis by 1/psi(x1); the transformed
    operator has a mixed x1-x2 derivative, so Legendre face grids are forced.
    The manufactured solution composes the free-space Green's function with
    the forward map.
    """
    domain = domain or (GRAVITY_DOMAIN_3D if d == 3 else GRAVITY_DOMAIN_2D)
    kappa = float(kappa)
    pmap = sinusoidal_map(amplitude, frequency)
    base = isotropic_field(domain.d,
                           zeroth=lambda x: np.full(x.shape[0], -kappa * kappa))
    coeffs = pmap.coefficient_transform(base)

    if domain.d == 3:
        def physical(y):
            r = np.linalg.norm(y, axis=1)
            return np.cos(kappa * r) / (4.0 * np.pi * r)
    else:
        def physical(y):
            return bessel_y0(kappa * np.linalg.norm(y, axis=1))

    def exact(x):
        return physical(pmap.forward(x))

    return ProblemSpec(name="curved_helmholtz", coeffs=coeffs, f=_zero, g=exact,
                       exact=exact, domain=domain, parameter_map=pmap)


def _rotation_velocity(d: int):
    """Horizontal circulation used by the contaminant transport model."""
    if d == 3:
        def velocity(x):
            b = np.empty_like(x)
            b[:, 0] = -np.cos(x[:, 0]) * np.sin(x[:, 1]) * x[:, 2]
            b[:, 1] = np.sin(x[:, 0]) * np.cos(x[:, 1]) * x[:, 2]
            b[:, 2] = 0.0
            return b
    else:
        def velocity(x):
            b = np.empty_like(x)
            b[:, 0] = -np.cos(x[:, 0]) * np.sin(x[:, 1])
            b[:, 1] = np.sin(x[:, 0]) * np.cos(x[:, 1])
            return b
    # div b = sin(x1)sin(x2)x3 - sin(x1)sin(x2)x3 = 0 (same cancellation in 2D)
    return velocity, _zero


def gaussian_bump(center: Sequence[float], variance: float = 0.002):
    c = np.asarray(center, dtype=float)

    def u0(x):
        return np.exp(-((x - c[None, :]) ** 2).sum(axis=1) / variance)

    return u0


def convection_diffusion(d: int = 3, diffusivity: float = 1e-4) -> ParabolicProblem:
    """Contaminant transport in a circular horizontal flow, zero boundary."""
    domain = CONVDIFF_DOMAIN_3D if d == 3 else CONVDIFF_DOMAIN_2D
    velocity, div_velocity = _rotation_velocity(domain.d)
    center = (0.0, -0.3, 0.0)[:domain.d]
    return ParabolicProblem(name="convection_diffusion", domain=domain,
                            diffusivity=float(diffusivity), velocity=velocity,
                            div_velocity=div_velocity,
                            u0=gaussian_bump(center))


def heat_manufactured(d: int = 3) -> ParabolicProblem:
    """Heat equation on the unit box with a separable decaying solution."""
    domain = UNIT_CUBE if d == 3 else UNIT_SQUARE
    rate = domain.d * np.pi ** 2

    def exact(x, t):
        return math.exp(-rate * t) * np.prod(np.sin(np.pi * x), axis=1)

    return ParabolicProblem(name="heat_manufactured", domain=domain,
                            diffusivity=1.0, u0=lambda x: exact(x, 0.0),
                            exact=exact)


def cn_step_fields(prob: ParabolicProblem, dt: float):
    """Coefficient fields of (I -+ dt/2 A) for the implicit/explicit CN halves.

    The two operators share the discretization and differ only in the sign in
    front of dt/2.
    """
    def make(sign: float) -> CoefficientField:
        half = sign * 0.5 * dt
        first = None
        if prob.velocity is not None:
            velocity = prob.velocity

            def first(x, _h=half):
                return _h * velocity(x)

        div_v = prob.div_velocity

        def zeroth(x, _h=half):
            out = np.ones(x.shape[0])
            if div_v is not None:
                out = out + _h * div_v(x)
            return out

        return isotropic_field(prob.domain.d, diffusion=half * prob.diffusivity,
                               zeroth=zeroth, first=first)

    return make(1.0), make(-1.0)


def convdiff_step(domain: Optional[DomainBox] = None, d: int = 3,
                  dt: float = 0.05, diffusivity: float = 1e-4) -> ProblemSpec:
    """One implicit convection-diffusion half-step as a stationary problem.

    Bounded variable coefficients with a first-order term; the body load is
    the transport model's initial blob, boundary data zero.
    """
    prob = convection_diffusion(d=d, diffusivity=diffusivity)
    domain = domain or prob.domain
    implicit, _ = cn_step_fields(prob, dt)
    return ProblemSpec(name="convdiff_step", coeffs=implicit, f=prob.u0,
                       g=_zero, domain=domain)


ELLIPTIC_REGISTRY = {
    "poisson_green": poisson_green,
    "helmholtz_green": helmholtz_green,
    "gravity_helmholtz": gravity_helmholtz,
    "curved_helmholtz": curved_helmholtz,
    "convdiff_step": convdiff_step,
}

PARABOLIC_REGISTRY = {
    "heat_manufactured": heat_manufactured,
    "convection_diffusion": convection_diffusion,
}


def make_problem(name: str, d: int = 3, **params) -> ProblemSpec:
    if name not in ELLIPTIC_REGISTRY:
        raise ConfigError(
            f"unknown problem {name!r}; known: {sorted(ELLIPTIC_REGISTRY)}")
    return ELLIPTIC_REGISTRY[name](d=d, **params)


def make_parabolic(name: str, d: int = 3, **params) -> ParabolicProblem:
    if name not in PARABOLIC_REGISTRY:
        raise ConfigError(
            f"unknown parabolic problem {name!r}; known: {sorted(PARABOLIC_REGISTRY)}")
    return PARABOLIC_REGISTRY[name](d=d, **params)


# ---------------------------------------------------------------------------
# Error metrics and verification helpers
# ---------------------------------------------------------------------------

def relative_l2_error(u: np.ndarray, exact_values: np.ndarray) -> float:
    """||u - u_true||_2 / ||u_true||_2 over all retained nodes."""
    u = np.asarray(u, dtype=float)
    exact_values = np.asarray(exact_values, dtype=float)
    denom = float(np.linalg.norm(exact_values))
    if denom == 0.0:
        raise ConfigError("reference solution has zero norm")
    return float(np.linalg.norm(u - exact_values)) / denom


_STENCIL_1 = {-2: 1.0 / 12.0, -1: -8.0 / 12.0, 1: 8.0 / 12.0, 2: -1.0 / 12.0}
_STENCIL_2 = {-2: -1.0 / 12.0, -1: 16.0 / 12.0, 0: -30.0 / 12.0,
              1: 16.0 / 12.0, 2: -1.0 / 12.0}


def pde_residual(coeffs: CoefficientField, f: Callable,
                 u: Callable, points: np.ndarray, h: float = 1e-3) -> np.ndarray:
    """Finite-difference residual of Au - f at the given points.

    Fourth-order central stencils, independent of any collocation machinery;
    used to verify manufactured solutions against their operators.
    """
    points = np.asarray(points, dtype=float)
    n, d = points.shape

    def shift(i, a, j=None, b=0):
        x = points.copy()
        x[:, i] += a * h
        if j is not None:
            x[:, j] += b * h
        return u(x)

    a2 = np.asarray(coeffs.second_order(points), dtype=float)
    res = -f(points).astype(float)
    for i in range(d):
        dii = sum(c * shift(i, o) for o, c in _STENCIL_2.items()) / (h * h)
        res -= a2[:, i, i] * dii
        for j in range(i + 1, d):
            cij = a2[:, i, j] + a2[:, j, i]
            if np.any(cij):
                dij = sum(ca * cb * shift(i, oa, j, ob)
                          for oa, ca in _STENCIL_1.items()
                          for ob, cb in _STENCIL_1.items()) / (h * h)
                res -= cij * dij
    if coeffs.first_order is not None:
        a1 = np.asarray(coeffs.first_order(points), dtype=float)
        for i in range(d):
            if np.any(a1[:, i]):
                di = sum(c * shift(i, o) for o, c in _STENCIL_1.items()) / h
                res += a1[:, i] * di
    if coeffs.zeroth_order is not None:
        res += np.asarray(coeffs.zeroth_order(points), dtype=float) * u(points)
    return res


def interior_sample_points(domain: DomainBox, n: int, rng=None,
                           margin: float = 0.05) -> np.ndarray:
    """Random points strictly inside the domain (margin keeps stencils inside)."""
    rng = rng or np.random.default_rng(0)
    lo = np.asarray(domain.lo)
    hi = np.asarray(domain.hi)
    pad = margin * (hi - lo)
    return rng.uniform(lo + pad, hi - pad, size=(n, domain.d))


def evaluate_interior_interpolant(disc: Discretization, u: np.ndarray,
                                  points: np.ndarray) -> np.ndarray:
    """Evaluate a solution at arbitrary points via per-leaf tensor interpolation.

    Interpolates on each leaf's interior Chebyshev grid (corner and face nodes
    are not part of a full tensor grid), which is spectrally accurate for
    smooth solutions and lets runs at different orders be compared pointwise.
    """
    from .local_ops import interp_matrix

    points = np.asarray(points, dtype=float)
    d, p = disc.d, disc.p
    lo = np.asarray(disc.domain.lo)
    widths = np.asarray(disc.leaf_widths)
    nb = np.asarray(disc.mesh.boxes_per_dim)
    idx = np.clip(((points - lo[None, :]) / widths[None, :]).astype(int), 0, nb - 1)
    flat = np.ravel_multi_index(idx.T, nb)

    out = np.empty(points.shape[0])
    shape = (p - 2,) * d
    for leaf_id in np.unique(flat):
        leaf = disc.leaves[leaf_id]
        sel = np.flatnonzero(flat == leaf_id)
        vals = u[leaf.interior_ids].reshape(shape)
        grid1d = [disc.nodes1d[k][leaf.index[k]][1:-1] for k in range(d)]
        for row, pt in zip(sel, points[sel]):
            acc = vals
            for k in range(d):
                w = interp_matrix(grid1d[k], np.array([pt[k]]))[0]
                acc = np.tensordot(w, acc, axes=(0, 0))
            out[row] = float(acc)
    return out


def plane_mass_center(u: np.ndarray, nodes: np.ndarray,
                      split_axis: int = 2) -> np.ndarray:
    """Density-weighted center in the first two coordinates, upper half only.

    The transport model's mirror symmetry about the split plane makes the
    full-domain center cancel its own rotation, so the diagnostic follows the
    paper-style cross-section: nodes with positive split coordinate, weights
    clipped at zero.
    """
    mask = nodes[:, split_axis] > 0.0 if nodes.shape[1] > split_axis else slice(None)
    w = np.clip(u[mask], 0.0, None)
    total = w.sum()
    if total <= 0.0:
        raise ConfigError("no positive mass in the upper half domain")
    return (w[:, None] * nodes[mask][:, :2]).sum(axis=0) / total


def unwrap_angles(centers: Sequence[np.ndarray]) -> np.ndarray:
    angles = np.array([math.atan2(c[1], c[0]) for c in centers])
    return np.unwrap(angles)


# ---------------------------------------------------------------------------
# Crank–Nicolson time stepping
# ---------------------------------------------------------------------------

@dataclass
class Trajectory:
    times: List[float]
    states: List[np.ndarray]
    factorization_events: int
    step_seconds: List[float]
    system: InterfaceSystem

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


def crank_nicolson_run(disc: Discretization, prob: ParabolicProblem,
                       cfg: TimeStepConfig,
                       schedule: Optional[BatchSchedule] = None,
                       snapshot_stride: int = 1) -> Trajectory:
    """Advance a parabolic problem; the implicit operator is factorized once.

    Each step applies (I + dt/2 A) to the current state with the same leaf
    collocation operator used on the implicit side, then runs the solve stage
    with that reduced load and homogeneous Dirichlet data.
    """
    if snapshot_stride < 1:
        raise ConfigError("snapshot stride must be >= 1")
    implicit, explicit = cn_step_fields(prob, cfg.dt)
    if schedule is None:
        schedule = BatchSchedule(cache_leaf_factors=True)
    sys = condensation.build(disc, implicit, schedule)
    factorization_events = 1

    template = sys.template
    explicit_rows = []
    gather_cols = []
    for leaf in disc.leaves:
        grid = template.leaf_grid(disc.leaf_grid1d(leaf))
        explicit_rows.append(template.collocation_rows(explicit, grid))
        cols = np.concatenate([leaf.interior_ids, leaf.boundary_ids])
        gather_cols.append(cols)
    if disc.corner_mode == DROP_CORNERS:
        scatter_local = np.concatenate([template.interior_idx, template._bcols])
    else:
        raise ConfigError("time stepping uses corner-dropping meshes "
                          "(the step operators have no cross terms)")

    u0 = cfg.u0 or prob.u0
    if u0 is None:
        raise ConfigError("no initial condition available")
    u = np.empty(disc.n_total)
    for ids in (disc.index_interface, disc.index_dirichlet):
        if ids.size:
            u[ids] = u0(disc.nodes[ids])
    for leaf in disc.leaves:
        u[leaf.interior_ids] = u0(disc.nodes[leaf.interior_ids])

    times, states = [0.0], [u.copy()]
    step_seconds = []
    n_steps = cfg.steps
    for step in range(1, n_steps + 1):
        tic = time.perf_counter()
        w = np.zeros(disc.n_total)
        for leaf_id, leaf in enumerate(disc.leaves):
            full = np.zeros(template.n_grid)
            full[scatter_local] = u[gather_cols[leaf_id]]
            w[leaf.interior_ids] = explicit_rows[leaf_id] @ full
        report = condensation.run_solve_stage(sys, w, _zero)
        u = report.u
        step_seconds.append(time.perf_counter() - tic)
        if step % snapshot_stride == 0 or step == n_steps:
            times.append(step * cfg.dt)
            states.append(u.copy())

    return Trajectory(times=times, states=states,
                      factorization_events=factorization_events,
                      step_seconds=step_seconds, system=sys)
