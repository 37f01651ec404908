"""Linear transport model: quadratures, problems, collocation grids, losses.

The model is

    ε ∂_t f + v ∂_x f = (1/ε) σ(x) (½∫_{-1}^{1} f dv − f),   x ∈ [0, 1], v ∈ [−1, 1].

Loss functions operate on traced values (they must be called with an active
:class:`~transport_pinn.autodiff.Tape`); ``collision``, ``residual`` and
``density`` accept plain arrays as well.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterStore, TracedValue
from .mlp import NetworkConfig, forward

BOUNDARY_KINDS = ("periodic", "inflow", "specular")


# ---------------------------------------------------------------------------
# velocity quadrature


@dataclass(frozen=True)
class VelocityQuadrature:
    nodes: np.ndarray
    weights: np.ndarray
    range: str = "full"  # "full" for [-1, 1], "half" for [0, 1]

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=np.float64)
        weights = np.asarray(self.weights, dtype=np.float64)
        if nodes.shape != weights.shape or nodes.ndim != 1:
            raise ValueError("nodes and weights must be 1-d arrays of equal length")
        if np.any(weights <= 0):
            raise ValueError("quadrature weights must be positive")
        if self.range not in ("full", "half"):
            raise ValueError("range must be 'full' or 'half'")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)

    def __len__(self) -> int:
        return self.nodes.size

    @property
    def is_symmetric(self) -> bool:
        return bool(
            np.allclose(self.nodes, -self.nodes[::-1], rtol=0, atol=1e-14)
            and np.allclose(self.weights, self.weights[::-1], rtol=1e-14, atol=0)
        )


def gauss_legendre(n: int, range: str = "full") -> VelocityQuadrature:  # noqa: A002
    """n-point Gauss–Legendre rule on [-1, 1] (weights sum 2) or [0, 1] (sum 1)."""
    nodes, weights = np.polynomial.legendre.leggauss(n)
    if range == "half":
        return VelocityQuadrature(0.5 * (nodes + 1.0), 0.5 * weights, "half")
    # leggauss is symmetric only up to rounding; symmetrize exactly
    nodes = 0.5 * (nodes - nodes[::-1])
    weights = 0.5 * (weights + weights[::-1])
    return VelocityQuadrature(nodes, weights, "full")


def uniform_trapezoid(n: int, range: str = "full") -> VelocityQuadrature:  # noqa: A002
    """n equispaced nodes including the endpoints, trapezoid weights."""
    if n < 2:
        raise ValueError("need at least two nodes")
    lo = -1.0 if range == "full" else 0.0
    nodes = np.linspace(lo, 1.0, n)
    if range == "full":
        nodes = 0.5 * (nodes - nodes[::-1])
    h = (1.0 - lo) / (n - 1)
    weights = np.full(n, h)
    weights[[0, -1]] = 0.5 * h
    return VelocityQuadrature(nodes, weights, range)


def make_quadrature(rule: str, n: int, range: str = "full") -> VelocityQuadrature:  # noqa: A002
    rules = {"gauss": gauss_legendre, "uniform": uniform_trapezoid}
    if rule not in rules:
        raise ValueError(f"unknown velocity rule {rule!r}; choose from {sorted(rules)}")
    return rules[rule](n, range)


# ---------------------------------------------------------------------------
# problem statement


def _one(x):
    return np.ones_like(np.asarray(x, dtype=np.float64))


def _zero2(a, b):
    return np.zeros(np.broadcast(np.asarray(a), np.asarray(b)).shape)


@dataclass
class ProblemSpec:
    """One transport problem on x ∈ [0, 1].

    ``initial_condition(x, v)``, ``sigma(x)`` and the inflow data
    ``inflow_left(t, v)`` / ``inflow_right(t, v)`` must be vectorized.
    """

    epsilon: float
    t_final: float
    initial_condition: Callable
    sigma: Callable = _one
    boundary: str = "periodic"
    inflow_left: Callable = _zero2
    inflow_right: Callable = _zero2
    domain: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not self.t_final > 0:
            raise ValueError("t_final must be positive")
        if self.boundary not in BOUNDARY_KINDS:
            raise ValueError(f"boundary must be one of {BOUNDARY_KINDS}")
        probe = np.asarray(self.sigma(np.linspace(*self.domain, 101)))
        if np.any(probe <= 0):
            raise ValueError("sigma must be positive on the domain")


def ic_test1(x, v):
    """Double-peak Maxwellian initial data of the periodic benchmark."""
    x = np.asarray(x, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    rho0 = 1.0 + 0.5 * np.sin(2.0 * np.pi * x)
    temp0 = (5.0 + 2.0 * np.cos(2.0 * np.pi * x)) / 20.0
    return rho0 * (np.exp(-(((v - 0.75) / temp0) ** 2)) + np.exp(-(((v + 0.75) / temp0) ** 2)))


def periodic_problem(epsilon: float = 1e-2, t_final: float = 0.0625) -> ProblemSpec:
    return ProblemSpec(epsilon=epsilon, t_final=t_final, initial_condition=ic_test1, boundary="periodic")


def inflow_problem(epsilon: float = 1e-3, t_final: float = 97 * 0.5 / 25**2) -> ProblemSpec:
    """Zero initial data, f = 1 entering at x = 0 and f = 0 entering at x = 1."""
    return ProblemSpec(
        epsilon=epsilon,
        t_final=t_final,
        initial_condition=_zero2,
        boundary="inflow",
        inflow_left=lambda t, v: np.ones(np.broadcast(np.asarray(t), np.asarray(v)).shape),
        inflow_right=_zero2,
    )


# ---------------------------------------------------------------------------
# collocation grid


@dataclass
class CollocationGrid:
    """Tensor grid of training points.

    ``t`` holds ``Δt, 2Δt, ..., N_t Δt`` (the t = 0 slice is the initial
    set), ``x`` holds the cell centres ``(j + ½) Δx``.  Interior points are
    ordered ``(i, j, k)`` with the velocity index fastest.
    """

    t: np.ndarray
    x: np.ndarray
    quad: VelocityQuadrature
    boundary: str
    interior: np.ndarray = field(init=False)
    initial: np.ndarray = field(init=False)
    left: np.ndarray = field(init=False)
    right: np.ndarray = field(init=False)

    def __post_init__(self):
        if self.quad.range != "full":
            raise ValueError("training grid needs a full-range velocity rule")
        if self.boundary not in BOUNDARY_KINDS:
            raise ValueError(f"boundary must be one of {BOUNDARY_KINDS}")
        t, x, v = np.asarray(self.t, float), np.asarray(self.x, float), self.quad.nodes
        T, X, V = np.meshgrid(t, x, v, indexing="ij")
        self.interior = np.column_stack([T.ravel(), X.ravel(), V.ravel()])
        X0, V0 = np.meshgrid(x, v, indexing="ij")
        self.initial = np.column_stack([np.zeros(X0.size), X0.ravel(), V0.ravel()])
        if self.boundary == "inflow":
            v_left, v_right = v[v >= 0], v[v <= 0]
        else:
            if self.boundary == "specular" and not self.quad.is_symmetric:
                raise ValueError("specular boundary needs a symmetric velocity rule")
            v_left = v_right = v
        self.left = self._wall(t, 0.0, v_left)
        self.right = self._wall(t, 1.0, v_right)

    @staticmethod
    def _wall(t, x_wall, v):
        Tb, Vb = np.meshgrid(t, v, indexing="ij")
        return np.column_stack([Tb.ravel(), np.full(Tb.size, x_wall), Vb.ravel()])

    @classmethod
    def uniform(cls, n_t: int, n_x: int, dt: float, quad: VelocityQuadrature, boundary: str):
        t = dt * np.arange(1, n_t + 1)
        x = (np.arange(n_x) + 0.5) / n_x
        return cls(t, x, quad, boundary)

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.t.size, self.x.size, len(self.quad))

    @property
    def counts(self) -> dict:
        return {
            "ge": self.interior.shape[0],
            "ic": self.initial.shape[0],
            "bc": self.left.shape[0] if self.boundary == "periodic" else self.left.shape[0] + self.right.shape[0],
        }


@dataclass
class Evaluation:
    """Traced network values on one block of points, each of shape (n, 1)."""

    f: TracedValue
    f_t: TracedValue | None = None
    f_x: TracedValue | None = None


@dataclass
class GridEvaluations:
    interior: Evaluation
    initial: Evaluation
    left: Evaluation
    right: Evaluation


@dataclass
class LossWeights:
    lambda_g: float = 1.0
    lambda_i: float = 1.0
    lambda_b: float = 1.0


# ---------------------------------------------------------------------------
# operators


def _velocity_sum(f, weights):
    """Σ_k w_k f_k over the last axis, keeping it as a length-1 axis."""
    if isinstance(f, TracedValue):
        return ad.sum(ad.scale(f, weights), axis=-1, keepdims=True)
    return np.sum(np.asarray(f) * weights, axis=-1, keepdims=True)


def collision(f_values, sigma_x, quad: VelocityQuadrature):
    """σ(x)(ρ − f_k) with ρ = ½ Σ_m w_m f_m; the velocity axis is the last one."""
    if quad.range != "full":
        raise ValueError("collision needs a full-range quadrature")
    shape = f_values.shape if isinstance(f_values, TracedValue) else np.shape(f_values)
    if shape[-1] != len(quad):
        raise ValueError(f"velocity axis has {shape[-1]} entries, quadrature has {len(quad)}")
    rho = _velocity_sum(f_values, 0.5 * quad.weights)
    if isinstance(f_values, TracedValue):
        return ad.scale(rho - f_values, sigma_x)
    return np.asarray(sigma_x) * (rho - np.asarray(f_values, dtype=np.float64))


def residual(f, f_t, f_x, v, collision_value, epsilon):
    """ε f_t + v f_x − collision / ε (arrays or traced values)."""
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    if isinstance(f_t, TracedValue):
        return ad.scale(f_t, epsilon) + ad.scale(f_x, v) - ad.scale(collision_value, 1.0 / epsilon)
    return epsilon * f_t + v * f_x - collision_value / epsilon


def density(f_values, quad: VelocityQuadrature):
    """∫ f dv ≈ Σ_k w_k f_k over the last axis."""
    return np.sum(np.asarray(f_values, dtype=np.float64) * quad.weights, axis=-1)


# ---------------------------------------------------------------------------
# losses


def loss_ge(grid: CollocationGrid, evaluations: Evaluation, spec: ProblemSpec) -> TracedValue:
    """Mean squared transport residual over all interior points."""
    ev = evaluations
    n_t, n_x, n_v = grid.shape
    if ev.f.shape[0] != n_t * n_x * n_v or ev.f_t is None or ev.f_x is None:
        raise ValueError("interior evaluations must cover every grid point with f, f_t and f_x")
    shape = (n_t, n_x, n_v)
    f = ad.reshape(ev.f, shape)
    sigma_x = np.asarray(spec.sigma(grid.x), dtype=np.float64)[None, :, None]
    coll = collision(f, sigma_x, grid.quad)
    f_t = ad.reshape(ev.f_t, shape)
    f_x = ad.reshape(ev.f_x, shape)
    res = residual(f, f_t, f_x, grid.quad.nodes, coll, spec.epsilon)
    return ad.mean(ad.square(res))


def loss_ic(grid: CollocationGrid, evaluations: Evaluation, spec: ProblemSpec) -> TracedValue:
    """Mean squared mismatch with the initial data on the t = 0 slice."""
    pts = grid.initial
    target = np.asarray(spec.initial_condition(pts[:, 1], pts[:, 2]), dtype=np.float64).reshape(-1, 1)
    return ad.mean(ad.square(evaluations.f - target))


def loss_bc(
    grid: CollocationGrid, left: Evaluation, right: Evaluation, spec: ProblemSpec
) -> TracedValue:
    """Boundary penalty; its form follows ``spec.boundary``.

    inflow: squared mismatch with the incoming data, averaged per wall and
    then over the two walls; periodic: |f(t,0,v) − f(t,1,v)|²;
    specular: |f(t,wall,−v) − f(t,wall,v)|² at both walls.
    """
    if grid.boundary != spec.boundary:
        raise ValueError(f"grid boundary {grid.boundary!r} does not match problem {spec.boundary!r}")
    if spec.boundary == "inflow":
        gl = np.asarray(spec.inflow_left(grid.left[:, 0], grid.left[:, 2]), float).reshape(-1, 1)
        gr = np.asarray(spec.inflow_right(grid.right[:, 0], grid.right[:, 2]), float).reshape(-1, 1)
        return ad.scale(ad.mean(ad.square(left.f - gl)) + ad.mean(ad.square(right.f - gr)), 0.5)
    if spec.boundary == "periodic":
        return ad.mean(ad.square(left.f - right.f))
    n_t, _, n_v = grid.shape
    terms = []
    for ev in (left, right):
        f = ad.reshape(ev.f, (n_t, n_v))
        terms.append(ad.mean(ad.square(f - ad.getitem(f, (slice(None), slice(None, None, -1))))))
    return ad.scale(terms[0] + terms[1], 0.5)


def total_loss(ge, ic, bc, w: LossWeights):
    return w.lambda_g * ge + w.lambda_i * ic + w.lambda_b * bc


def evaluate_network(
    store: ParameterStore, config: NetworkConfig, grid: CollocationGrid
) -> GridEvaluations:
    """One traced forward pass over every training point, split by block."""
    blocks = [grid.interior, grid.initial, grid.left, grid.right]
    pts = np.concatenate(blocks)
    t = ad.lift_input(pts[:, 0:1], "t")
    x = ad.lift_input(pts[:, 1:2], "x")
    v = ad.lift_input(pts[:, 2:3], "v")
    out = forward(store, config, t, x, v)
    n_int = blocks[0].shape[0]
    f_int = ad.getitem(out, slice(0, n_int))
    interior = Evaluation(f_int, ad.tangent_t(f_int), ad.tangent_x(f_int))
    evs = []
    start = n_int
    for block in blocks[1:]:
        stop = start + block.shape[0]
        evs.append(Evaluation(ad.getitem(out, slice(start, stop))))
        start = stop
    return GridEvaluations(interior, *evs)


def compute_losses(store: ParameterStore, config: NetworkConfig, grid: CollocationGrid, spec: ProblemSpec):
    """Traced (ge, ic, bc) losses of the network on the active tape."""
    ev = evaluate_network(store, config, grid)
    ge = loss_ge(grid, ev.interior, spec)
    ic = loss_ic(grid, ev.initial, spec)
    bc = loss_bc(grid, ev.left, ev.right, spec)
    return ge, ic, bc


def network_density(store: ParameterStore, config: NetworkConfig, t: float, x, quad: VelocityQuadrature):
    """½ ∫ f^nn(t, x, v) dv at each x, the same normalisation as ∫_0^1 r dv."""
    from .mlp import predict

    x = np.asarray(x, dtype=np.float64)
    X, V = np.meshgrid(x, quad.nodes, indexing="ij")
    pts = np.column_stack([np.full(X.size, float(t)), X.ravel(), V.ravel()])
    f = predict(store, config, pts).reshape(X.shape)
    return 0.5 * density(f, quad)
