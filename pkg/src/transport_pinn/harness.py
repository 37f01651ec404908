"""Experiment pipeline: AP reference, PINN training and the comparison report.

A run is described by an :class:`ExperimentConfig` stored as JSON with one
nested section per module::

    {
      "test_id": "test1",
      "problem":   {"kind": "periodic", "epsilon": 0.01, "sigma": 1.0, "t_final": 0.0625},
      "grid":      {"n_t": 50, "n_x": 20, "dt": 0.00125, "velocity_rule": "gauss", "n_v": 17},
      "network":   {"widths": [3, 256, 256, 256, 1], "seed": 0},
      "training":  {"epochs": 2500, "learning_rate": 0.005, "step_size": 750, "gamma": 0.95,
                    "balance": true, "alpha": 0.9, "update_period": 10},
      "reference": {"dx": 0.025, "dt": null, "n_v": 16},
      "compare":   {"velocity_rule": "uniform", "n_v": 32, "x_window": null},
      "snapshot_times": [0.015625, 0.03125, 0.046875, 0.0625],
      "output_dir": "runs/test1"
    }

Every stage reads and writes plain files in ``output_dir`` so the stages can
also be run one at a time.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import ap_solver as ap
from . import mlp
from . import physics as ph
from . import trainer as tr

log = logging.getLogger(__name__)

REFERENCE_CSV = "reference.csv"
CHECKPOINT_JSON = "checkpoint.json"
HISTORY_CSV = "history.csv"
WEIGHTS_CSV = "weights.csv"
REPORT_JSON = "report.json"
CONFIG_JSON = "config.json"


class HarnessError(RuntimeError):
    """A pipeline stage failed; the message is a one-line diagnostic."""


# ---------------------------------------------------------------------------
# configuration


@dataclass
class ProblemSection:
    kind: str = "periodic"
    epsilon: float = 1e-2
    sigma: float = 1.0
    t_final: float = 0.0625


@dataclass
class GridSection:
    n_t: int = 50
    n_x: int = 20
    dt: float = 0.5 / 400
    velocity_rule: str = "gauss"
    n_v: int = 17


@dataclass
class NetworkSection:
    widths: list = field(default_factory=lambda: [3, 256, 256, 256, 1])
    seed: int = 0


@dataclass
class TrainingSection:
    epochs: int = 2500
    learning_rate: float = 0.005
    step_size: int = 750
    gamma: float = 0.95
    balance: bool = True
    alpha: float = 0.9
    update_period: int = 10


@dataclass
class ReferenceSection:
    dx: float = 1.0 / 40
    dt: float | None = None
    n_v: int = 16


@dataclass
class CompareSection:
    velocity_rule: str = "uniform"
    n_v: int = 32
    x_window: list | None = None


_SECTIONS = {
    "problem": ProblemSection,
    "grid": GridSection,
    "network": NetworkSection,
    "training": TrainingSection,
    "reference": ReferenceSection,
    "compare": CompareSection,
}


@dataclass
class ExperimentConfig:
    test_id: str = "test1"
    problem: ProblemSection = field(default_factory=ProblemSection)
    grid: GridSection = field(default_factory=GridSection)
    network: NetworkSection = field(default_factory=NetworkSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    reference: ReferenceSection = field(default_factory=ReferenceSection)
    compare: CompareSection = field(default_factory=CompareSection)
    snapshot_times: list | None = None
    output_dir: str = "runs/test1"

    def __post_init__(self):
        if self.snapshot_times is None:
            self.snapshot_times = [k * self.problem.t_final / 4 for k in (1, 2, 3, 4)]
        self.validate()

    def validate(self) -> None:
        if self.test_id not in ("test1", "test2", "custom"):
            raise ValueError(f"unknown test_id {self.test_id!r}")
        if self.problem.kind not in ("periodic", "inflow"):
            raise ValueError("problem.kind must be 'periodic' or 'inflow'")
        if not (self.problem.epsilon > 0 and self.problem.sigma > 0 and self.problem.t_final > 0):
            raise ValueError("epsilon, sigma and t_final must be positive")
        counts = (self.grid.n_t, self.grid.n_x, self.grid.n_v, self.reference.n_v, self.compare.n_v)
        if min(counts) <= 0 or self.grid.dt <= 0 or self.reference.dx <= 0:
            raise ValueError("all counts and step sizes must be positive")
        if self.training.epochs < 0:
            raise ValueError("epochs must be non-negative")
        times = np.asarray(self.snapshot_times, dtype=np.float64)
        if times.size == 0 or np.any(times < 0) or np.any(times > self.problem.t_final):
            raise ValueError("snapshot times must lie in [0, t_final]")
        if np.any(np.diff(times) <= 0):
            raise ValueError("snapshot times must be strictly increasing")

    # -- (de)serialisation --------------------------------------------------

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        base = preset(doc.get("test_id", "test1"))
        kwargs = {}
        for name in known:
            if name not in doc:
                continue
            if name in _SECTIONS:
                section = getattr(base, name)
                extra = set(doc[name]) - {f.name for f in fields(section)}
                if extra:
                    raise ValueError(f"unknown keys in section {name!r}: {sorted(extra)}")
                kwargs[name] = replace(section, **doc[name])
            else:
                kwargs[name] = doc[name]
        if "snapshot_times" not in doc and "problem" in doc:
            kwargs["snapshot_times"] = None
        return replace(base, **kwargs)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    # -- builders ---------------------------------------------------------

    def problem_spec(self) -> ph.ProblemSpec:
        p = self.problem
        sigma = p.sigma

        def sigma_fn(x):
            return np.full(np.shape(x), sigma, dtype=np.float64)

        if p.kind == "periodic":
            spec = ph.periodic_problem(epsilon=p.epsilon, t_final=p.t_final)
        else:
            spec = ph.inflow_problem(epsilon=p.epsilon, t_final=p.t_final)
        return replace(spec, sigma=sigma_fn)

    def collocation_grid(self) -> ph.CollocationGrid:
        g = self.grid
        quad = ph.make_quadrature(g.velocity_rule, g.n_v)
        return ph.CollocationGrid.uniform(g.n_t, g.n_x, g.dt, quad, self.problem.kind)

    def network_config(self) -> mlp.NetworkConfig:
        return mlp.NetworkConfig(tuple(int(w) for w in self.network.widths), seed=int(self.network.seed))

    def train_config(self) -> tr.TrainConfig:
        t = self.training
        return tr.TrainConfig(
            epochs=t.epochs,
            learning_rate=t.learning_rate,
            scheduler=tr.SchedulerConfig(t.step_size, t.gamma),
            balance=t.balance,
            alpha=t.alpha,
            update_period=t.update_period,
        )

    def ap_config(self) -> ap.APConfig:
        r = self.reference
        quad = ph.gauss_legendre(r.n_v, "half")
        return ap.APConfig.from_problem(self.problem_spec(), dx=r.dx, dt=r.dt, quad=quad)


def preset(test_id: str) -> ExperimentConfig:
    """Default configuration of one of the two benchmarks (``custom`` starts from test1)."""
    if test_id in ("test1", "custom"):
        return ExperimentConfig(test_id=test_id, output_dir=f"runs/{test_id}")
    if test_id == "test2":
        return ExperimentConfig(
            test_id="test2",
            problem=ProblemSection(kind="inflow", epsilon=1e-3, sigma=1.0, t_final=97 * 0.5 / 625),
            grid=GridSection(n_t=97, n_x=25, dt=0.5 / 625, velocity_rule="uniform", n_v=17),
            training=TrainingSection(epochs=400, learning_rate=5e-4, step_size=50, gamma=0.95),
            compare=CompareSection(x_window=[0.1, 0.9]),
            output_dir="runs/test2",
        )
    raise ValueError(f"unknown test_id {test_id!r}")


# ---------------------------------------------------------------------------
# stages


def _out(config: ExperimentConfig) -> Path:
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def run_reference(config: ExperimentConfig) -> Path:
    """AP solve on the reference mesh; densities at the snapshot times go to ``reference.csv``."""
    out = _out(config)
    try:
        fields_ = ap.solve_reference(config.problem_spec(), config.ap_config(), config.snapshot_times)
    except (ap.CFLError, ValueError) as exc:
        raise HarnessError(f"reference solve failed: {exc}") from exc
    path = out / REFERENCE_CSV
    ap.write_density_csv(path, fields_)
    return path


def _write_weights(path, history: tr.TrainingHistory) -> None:
    with open(path, "w") as fh:
        fh.write("epoch,lambda_i,lambda_b\n")
        for rec in history.records:
            fh.write(f"{rec.epoch},{rec.lambda_i!r},{rec.lambda_b!r}\n")


def run_train(config: ExperimentConfig, callback=None) -> Path:
    """Train the network; writes the checkpoint, the history and the weight trajectory.

    ``callback(epoch, store)`` is handed to the trainer unchanged.
    """
    out = _out(config)
    net = config.network_config()
    try:
        store, history = tr.train(
            config.problem_spec(), config.collocation_grid(), net, config.train_config(), callback=callback
        )
        failure = None
    except tr.TrainingAborted as exc:
        store, history, failure = exc.store, exc.history, exc
    mlp.save_checkpoint(out / CHECKPOINT_JSON, store, net)
    history.to_csv(out / HISTORY_CSV)
    _write_weights(out / WEIGHTS_CSV, history)
    if failure is not None:
        raise HarnessError(f"training aborted ({failure}); partial history in {out / HISTORY_CSV}")
    return out / CHECKPOINT_JSON


def run_compare(config: ExperimentConfig) -> dict:
    """Evaluate the trained network on the reference x-grid and write the report."""
    out = Path(config.output_dir)
    try:
        store, net = mlp.load_checkpoint(out / CHECKPOINT_JSON)
        reference = ap.read_density_csv(out / REFERENCE_CSV)
    except FileNotFoundError as exc:
        raise HarnessError(f"missing input: {exc.filename}") from exc

    times = [f.time for f in reference]
    if len(times) != len(config.snapshot_times) or not np.allclose(times, config.snapshot_times, rtol=0, atol=1e-12):
        raise HarnessError(f"reference times {times} do not match snapshot times {config.snapshot_times}")
    lo, hi = config.problem_spec().domain
    quad = ph.make_quadrature(config.compare.velocity_rule, config.compare.n_v)
    window = config.compare.x_window

    snapshots, files = [], [REFERENCE_CSV, CHECKPOINT_JSON]
    for k, ref in enumerate(reference):
        if ref.x.size == 0 or ref.x.min() < lo or ref.x.max() > hi:
            raise HarnessError(f"reference grid at t={ref.time} leaves the domain [{lo}, {hi}]")
        pred = ph.network_density(store, net, ref.time, ref.x, quad)
        entry = {
            "t": ref.time,
            "rel_err": tr.relative_error(pred, ref.rho) if np.any(ref.rho) else float(np.linalg.norm(pred)),
            "max_gap": float(np.max(np.abs(pred - ref.rho))),
        }
        if window is not None:
            mask = (ref.x >= window[0]) & (ref.x <= window[1])
            entry["rel_err_window"] = tr.relative_error(pred[mask], ref.rho[mask])
            entry["monotone_gap"] = float(np.max(np.diff(pred[mask]), initial=-np.inf))
        snapshots.append(entry)
        name = f"compare_{k}.csv"
        with open(out / name, "w") as fh:
            fh.write("x,rho_pred,rho_ref\n")
            for xi, a, b in zip(ref.x, pred, ref.rho):
                fh.write(f"{float(xi)!r},{float(a)!r},{float(b)!r}\n")
        files.append(name)

    history_path = out / HISTORY_CSV
    final_losses, weights = {}, {}
    if history_path.exists():
        files += [HISTORY_CSV, WEIGHTS_CSV]
        hist = tr.TrainingHistory.from_csv(history_path)
        if len(hist):
            last = hist.records[-1]
            final_losses = {"ge": last.loss_ge, "ic": last.loss_ic, "bc": last.loss_bc, "total": last.total}
            weights = {
                "lambda_i_final": last.lambda_i,
                "lambda_b_final": last.lambda_b,
                "lambda_i_max": float(hist.column("lambda_i").max()),
                "lambda_b_max": float(hist.column("lambda_b").max()),
            }

    report = {
        "test_id": config.test_id,
        "seed": config.network.seed,
        "snapshots": snapshots,
        "final_losses": final_losses,
        "weights": weights,
        "files": files,
    }
    (out / REPORT_JSON).write_text(json.dumps(report, indent=2) + "\n")
    return report


def run_all(config: ExperimentConfig, callback=None) -> dict:
    _out(config)
    config.save(Path(config.output_dir) / CONFIG_JSON)
    run_reference(config)
    run_train(config, callback)
    return run_compare(config)
