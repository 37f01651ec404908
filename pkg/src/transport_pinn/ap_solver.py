"""Even/odd parity asymptotic-preserving solver and the diffusion-limit solver.

With r = ½[f(v) + f(−v)] and j = [f(v) − f(−v)]/(2ε) for v ∈ (0, 1], the
transport equation becomes

    ∂_t r + v ∂_x j = σ/ε² (ρ − r),      ρ = ∫_0^1 r dv,
    ∂_t j + v/ε² ∂_x r = −σ/ε² j,

which is advanced by an implicit relaxation step (explicit in practice since
ρ is invariant under it) followed by an explicit transport step.

Grid conventions: cells x_i = (i + ½) dx.  ``r[i]`` lives at x_i while
``j[i]`` is paired with the right face x_{i+½}: the relaxation step feeds it
the forward difference of r and the transport step takes the backward
difference of j, so the two compose to the compact second difference and
the ε → 0 limit is exactly the explicit scheme of :func:`diffusion_solve`.
For inflow walls an extra face value ``j_left`` (at x = 0) is kept and the
last face ``j[N-1]`` sits on x = 1.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .physics import ProblemSpec, VelocityQuadrature, gauss_legendre


class CFLError(ValueError):
    """Time step too large for the explicit part of a scheme."""


@dataclass
class APConfig:
    dx: float = 1.0 / 40
    dt: float | None = None
    epsilon: float = 1e-2
    sigma: Callable = None
    boundary: str = "periodic"
    quad: VelocityQuadrature = None
    # f(t, 0, v) for v > 0 and f(t, 1, −v) for v > 0
    inflow_left: Callable | None = None
    inflow_right: Callable | None = None

    def __post_init__(self):
        if self.dt is None:
            self.dt = 0.5 * self.dx**2
        if self.quad is None:
            self.quad = gauss_legendre(16, "half")
        if self.sigma is None:
            self.sigma = lambda x: np.ones_like(np.asarray(x, dtype=np.float64))
        if self.quad.range != "half" or np.any(self.quad.nodes <= 0):
            raise ValueError("AP solver needs a half-range rule with nodes in (0, 1]")
        if self.boundary not in ("periodic", "inflow"):
            raise ValueError("AP solver supports periodic and inflow boundaries")
        if not (self.dx > 0 and self.dt > 0 and self.epsilon > 0):
            raise ValueError("dx, dt and epsilon must be positive")
        n = 1.0 / self.dx
        if abs(n - round(n)) > 1e-9:
            raise ValueError("1/dx must be an integer")

    @classmethod
    def from_problem(cls, spec: ProblemSpec, dx: float = 1.0 / 40, dt: float | None = None, quad=None):
        return cls(
            dx=dx,
            dt=dt,
            epsilon=spec.epsilon,
            sigma=spec.sigma,
            boundary=spec.boundary,
            quad=quad,
            inflow_left=spec.inflow_left,
            inflow_right=lambda t, v: spec.inflow_right(t, -np.asarray(v)),
        )

    @property
    def n_cells(self) -> int:
        return int(round(1.0 / self.dx))

    @property
    def x(self) -> np.ndarray:
        return (np.arange(self.n_cells) + 0.5) * self.dx


@dataclass
class ParityField:
    r: np.ndarray  # (n_x, n_v)
    j: np.ndarray  # (n_x, n_v)
    time: float = 0.0
    j_left: np.ndarray | None = None  # (n_v,), inflow only

    def copy(self) -> "ParityField":
        return ParityField(
            self.r.copy(), self.j.copy(), self.time, None if self.j_left is None else self.j_left.copy()
        )


@dataclass
class DensityField:
    rho: np.ndarray
    time: float
    x: np.ndarray


def init_parity(spec: ProblemSpec, config: APConfig) -> ParityField:
    """Even/odd parts of the initial data at the cells and half-range nodes."""
    X, V = np.meshgrid(config.x, config.quad.nodes, indexing="ij")
    fp = np.asarray(spec.initial_condition(X, V), dtype=np.float64)
    fm = np.asarray(spec.initial_condition(X, -V), dtype=np.float64)
    r = 0.5 * (fp + fm)
    j = (fp - fm) / (2.0 * config.epsilon)
    j_left = None
    if config.boundary == "inflow":
        v = config.quad.nodes
        z = np.zeros_like(v)
        j_left = (spec.initial_condition(z, v) - spec.initial_condition(z, -v)) / (2.0 * config.epsilon)
        j_left = np.asarray(j_left, dtype=np.float64).reshape(-1)
    return ParityField(r, j, 0.0, j_left)


def _step_size(config: APConfig, dt):
    return config.dt if dt is None else dt


def relaxation_step(state: ParityField, config: APConfig, dt: float | None = None) -> ParityField:
    """Implicit relaxation of r toward ρ and of j toward −(v/σ) ∂_x r.

    Written as (ε² u + Δt σ target)/(ε² + Δt σ) so that tiny ε does not
    overflow.  ρ is unchanged by this step.
    """
    dt = _step_size(config, dt)
    eps2 = config.epsilon**2
    dx = config.dx
    v = config.quad.nodes[None, :]
    w = config.quad.weights
    x = config.x

    rho = state.r @ w
    sig_c = np.asarray(config.sigma(x), dtype=np.float64)[:, None]
    den_c = eps2 + dt * sig_c
    r_new = (eps2 * state.r + dt * sig_c * rho[:, None]) / den_c

    x_face = x + 0.5 * dx
    sig_f = np.asarray(config.sigma(x_face), dtype=np.float64)[:, None]
    den_f = eps2 + dt * sig_f
    j_new = np.empty_like(state.j)
    j_left = None
    if config.boundary == "periodic":
        dr = (np.roll(r_new, -1, axis=0) - r_new) / dx
        j_new[:] = (eps2 * state.j - dt * v * dr) / den_f
    else:
        dr = (r_new[1:] - r_new[:-1]) / dx
        j_new[:-1] = (eps2 * state.j[:-1] - dt * v * dr) / den_f[:-1]
        t_new = state.time + dt
        eps = config.epsilon
        vv = v[0]
        # wall faces sit dx/2 from the nearest cell; solve the wall relation
        # (r_b ± ε j_b = g) together with the relaxation update of j_b
        den_l = eps2 + dt * float(config.sigma(np.array(0.0)))
        a = 2.0 * dt * vv / (dx * den_l)
        c = eps2 * state.j_left / den_l
        g = np.asarray(config.inflow_left(t_new, vv), dtype=np.float64)
        r_b = (g - eps * c + eps * a * r_new[0]) / (1.0 + eps * a)
        j_left = c - a * (r_new[0] - r_b)

        den_r = eps2 + dt * float(config.sigma(np.array(1.0)))
        a = 2.0 * dt * vv / (dx * den_r)
        c = eps2 * state.j[-1] / den_r
        g = np.asarray(config.inflow_right(t_new, vv), dtype=np.float64)
        r_b = (g + eps * c + eps * a * r_new[-1]) / (1.0 + eps * a)
        j_new[-1] = c - a * (r_b - r_new[-1])
    return ParityField(r_new, j_new, state.time, j_left)


def check_cfl(config: APConfig, dt: float | None = None) -> None:
    """Stability bound of the split scheme: 2 Δt² v²_max / Δx² ≤ ε² + Δt σ_min.

    From the two-by-two amplification matrix of one relaxation + transport
    step for a Fourier mode; it holds for every ε when Δt ≤ ½ σ_min Δx².
    """
    dt = _step_size(config, dt)
    vmax = float(np.max(config.quad.nodes))
    sig_min = float(np.min(config.sigma(np.linspace(0.0, 1.0, 4 * config.n_cells + 1))))
    lhs = 2.0 * dt**2 * vmax**2 / config.dx**2
    rhs = config.epsilon**2 + dt * sig_min
    if lhs > rhs * (1.0 + 1e-12):
        raise CFLError(f"dt={dt:g} violates the parabolic CFL bound for dx={config.dx:g}")


def transport_step(state: ParityField, config: APConfig, dt: float | None = None) -> ParityField:
    """Explicit r ← r − Δt v ∂_x j (backward difference of the face values)."""
    dt = _step_size(config, dt)
    check_cfl(config, dt)
    v = config.quad.nodes[None, :]
    if config.boundary == "periodic":
        dj = (state.j - np.roll(state.j, 1, axis=0)) / config.dx
    else:
        prev = np.vstack([state.j_left[None, :], state.j[:-1]])
        dj = (state.j - prev) / config.dx
    r = state.r - dt * v * dj
    return ParityField(r, state.j.copy(), state.time, None if state.j_left is None else state.j_left.copy())


def step(state: ParityField, config: APConfig, dt: float | None = None) -> ParityField:
    dt = _step_size(config, dt)
    out = transport_step(relaxation_step(state, config, dt), config, dt)
    out.time = state.time + dt
    return out


def density(state: ParityField, config: APConfig) -> DensityField:
    """ρ_i = Σ_k w_k r(x_i, v_k)."""
    return DensityField(state.r @ config.quad.weights, state.time, config.x)


def reconstruct_f(state: ParityField, config: APConfig, v: float) -> np.ndarray:
    """f(x_i, v) = r ± ε j for a velocity ``v`` whose magnitude is a node."""
    hits = np.flatnonzero(np.isclose(config.quad.nodes, abs(v), rtol=0, atol=1e-12))
    if hits.size == 0:
        raise ValueError(f"|v| = {abs(v)} is not a quadrature node")
    k = hits[0]
    sign = 1.0 if v > 0 else -1.0
    return state.r[:, k] + sign * config.epsilon * state.j[:, k]


def _march(state, times, advance, dt):
    """Advance to each requested time, shortening the last step to land on it."""
    times = list(times)
    if any(b < a for a, b in zip(times, times[1:])) or (times and times[0] < state.time):
        raise ValueError("snapshot times must be sorted and not before the start time")
    out = []
    for target in times:
        while target - state.time > 1e-12 * max(1.0, target):
            h = min(dt, target - state.time)
            state = advance(state, h)
        state.time = target
        out.append(state)
    return out


def run(spec: ProblemSpec, config: APConfig, times: Sequence[float]) -> list[ParityField]:
    """Parity snapshots at the requested (sorted) times."""
    state = init_parity(spec, config)
    snaps = _march(state, times, lambda s, h: step(s, config, h), config.dt)
    return [s.copy() for s in snaps]


def solve_reference(spec: ProblemSpec, config: APConfig, times: Sequence[float]) -> list[DensityField]:
    return [density(s, config) for s in run(spec, config, times)]


# ---------------------------------------------------------------------------
# diffusion limit


def initial_density(spec: ProblemSpec, x, quad: VelocityQuadrature | None = None) -> np.ndarray:
    """ρ_0(x) = ∫_0^1 ½[f_0(x, v) + f_0(x, −v)] dv on a half-range rule."""
    quad = quad or gauss_legendre(16, "half")
    X, V = np.meshgrid(np.asarray(x, dtype=np.float64), quad.nodes, indexing="ij")
    r = 0.5 * (spec.initial_condition(X, V) + spec.initial_condition(X, -V))
    return np.asarray(r, dtype=np.float64) @ quad.weights


def diffusion_solve(
    spec: ProblemSpec,
    dx: float,
    dt: float,
    t_final: float,
    times: Sequence[float] | None = None,
    rho0=None,
    rho_left: float | None = None,
    rho_right: float | None = None,
) -> list[DensityField]:
    """Explicit conservative scheme for ∂_t ρ = ∂_x(1/(3σ) ∂_x ρ).

    Periodic problems wrap around; inflow problems use Dirichlet data
    (``rho_left``/``rho_right``, default: the mean inflow value) imposed at
    the walls half a cell from the first/last centre.  Returns snapshots at
    ``times`` (default: ``[t_final]``).
    """
    n = int(round(1.0 / dx))
    x = (np.arange(n) + 0.5) * dx
    sig_face = np.asarray(spec.sigma(x + 0.5 * dx), dtype=np.float64)
    sig_min = float(np.min(spec.sigma(np.linspace(0.0, 1.0, 4 * n + 1))))
    if dt > 1.5 * sig_min * dx**2 * (1.0 + 1e-12):
        raise CFLError(f"dt={dt:g} exceeds the explicit diffusion bound 1.5 σ_min dx²")
    rho = initial_density(spec, x) if rho0 is None else np.array(rho0, dtype=np.float64)
    periodic = spec.boundary == "periodic"
    if not periodic:
        if rho_left is None:
            rho_left = float(np.mean(spec.inflow_left(0.0, np.linspace(0, 1, 101))))
        if rho_right is None:
            rho_right = float(np.mean(spec.inflow_right(0.0, -np.linspace(0, 1, 101))))
        k_left = 1.0 / (3.0 * float(spec.sigma(np.array(0.0))))
        k_right = 1.0 / (3.0 * float(spec.sigma(np.array(1.0))))
    k_face = 1.0 / (3.0 * sig_face)

    def advance(field: DensityField, h: float) -> DensityField:
        r = field.rho
        if periodic:
            flux = k_face * (np.roll(r, -1) - r) / dx  # at i + 1/2
            div = (flux - np.roll(flux, 1)) / dx
        else:
            inner = k_face[:-1] * (r[1:] - r[:-1]) / dx
            left = k_left * (r[0] - rho_left) / (0.5 * dx)
            right = k_right * (rho_right - r[-1]) / (0.5 * dx)
            flux = np.concatenate([[left], inner, [right]])
            div = (flux[1:] - flux[:-1]) / dx
        return DensityField(r + h * div, field.time + h, x)

    times = [t_final] if times is None else list(times)
    snaps = _march(DensityField(rho, 0.0, x), times, advance, dt)
    return [replace(s, rho=s.rho.copy()) for s in snaps]


# ---------------------------------------------------------------------------
# file output


def write_density_csv(path, fields: Sequence[DensityField]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "x", "rho"])
        for fld in fields:
            for xi, ri in zip(fld.x, fld.rho):
                writer.writerow([repr(float(fld.time)), repr(float(xi)), repr(float(ri))])


def read_density_csv(path) -> list[DensityField]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    by_time: dict[float, list] = {}
    for row in rows:
        by_time.setdefault(float(row["t"]), []).append((float(row["x"]), float(row["rho"])))
    out = []
    for t in sorted(by_time):
        pts = np.array(by_time[t])
        out.append(DensityField(pts[:, 1], t, pts[:, 0]))
    return out


def write_f_csv(path, states: Sequence[ParityField], config: APConfig) -> None:
    """Full distribution snapshots, columns (t, x, v, f), at ±nodes."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "x", "v", "f"])
        for st in states:
            for vk in np.concatenate([-config.quad.nodes[::-1], config.quad.nodes]):
                f = reconstruct_f(st, config, vk)
                for xi, fi in zip(config.x, f):
                    writer.writerow([repr(float(st.time)), repr(float(xi)), repr(float(vk)), repr(float(fi))])
