"""Experiment harness: build a problem, run DCG against the baselines, and
write traces, a JSON report and plots.

Config files are flat ``key = value`` text, one pair per line, ``#`` starts a
comment::

    scenario = localization     # localization | least_squares | raw_system
    n = 30
    dim = 2
    seed = 7
    solvers = dcg, richardson
    epsilon = 1e-14
"""
import configparser
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import linalg
from .applications import (
    NoiseModel,
    assemble_normal_rows,
    barycentric_rows,
    build_localization_rows,
    generate_scene,
    inject_noise,
    random_sparse_rows,
    random_spd_rows,
)
from .errors import (
    DcgError,
    DegenerateGeometry,
    DisconnectedNetwork,
    InsufficientNeighbors,
    NotPositiveDefinite,
    NotSymmetric,
)
from .network import generate_geometric_network, hop_diameter, is_connected
from .solvers import SolverConfig, dcg_round_bound, rows_to_dense, run_baseline, run_dcg

SCENARIOS = ("localization", "least_squares", "raw_system")
SOLVERS = ("dcg", "richardson", "jacobi", "gauss_seidel")
RESEED_ATTEMPTS = 20
CONDITION_LIMIT = 1e10


def default_range(n, dim):
    """``1.3 (ln n / n)^(1/dim)``, rounded to two decimals: a few times the
    connectivity threshold of a random geometric graph, so that most agents
    have enough mutually in-range neighbors for barycentric coordinates."""
    return round(1.3 * (math.log(n) / n) ** (1.0 / dim), 2)


@dataclass
class ExperimentConfig:
    scenario: str = "localization"
    n: int = 30
    dim: int = 2
    anchors: int = None
    reception_range: float = None
    seed: int = 7
    solvers: tuple = ("dcg", "richardson")
    epsilon: float = 1e-14
    t_max: int = None
    fidelity: str = "cached"
    max_rounds: int = 2_000_000
    matrix: str = "random"
    noise: NoiseModel = None
    output_dir: str = "out"

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"scenario must be one of {SCENARIOS}, got {self.scenario!r}")
        if self.dim not in (2, 3):
            raise ValueError(f"dim must be 2 or 3, got {self.dim}")
        if isinstance(self.solvers, str):
            self.solvers = tuple(s.strip() for s in self.solvers.split(",") if s.strip())
        self.solvers = tuple(self.solvers)
        if not self.solvers:
            raise ValueError("at least one solver is required")
        for s in self.solvers:
            if s not in SOLVERS:
                raise ValueError(f"unknown solver {s!r}; choose from {SOLVERS}")
        if len(set(self.solvers)) != len(self.solvers):
            raise ValueError("solvers must not repeat")
        if self.anchors is None:
            self.anchors = self.dim + 1
        if self.scenario == "localization" and self.anchors < self.dim + 1:
            raise ValueError(f"localization needs at least dim + 1 = {self.dim + 1} anchors")
        if self.reception_range is None:
            self.reception_range = default_range(self.n, self.dim)
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.matrix not in ("random", "identity"):
            raise ValueError("matrix must be 'random' or 'identity'")

    def to_dict(self):
        """Parameters that determine the results (the output directory does not)."""
        doc = asdict(self)
        doc["solvers"] = list(self.solvers)
        del doc["output_dir"]
        return doc


# ---------------------------------------------------------------- config files

_INT_KEYS = {"n", "dim", "anchors", "seed", "t_max", "max_rounds", "noise_seed"}
_FLOAT_KEYS = {"reception_range", "epsilon", "noise_matrix_scale", "noise_rhs_scale"}
_STR_KEYS = {"scenario", "solvers", "fidelity", "matrix", "output_dir", "noise_distribution"}
CONFIG_KEYS = _INT_KEYS | _FLOAT_KEYS | _STR_KEYS


def parse_config_text(text):
    """Parse ``key = value`` lines into a dict of typed values."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",), comment_prefixes=("#",),
                                       interpolation=None)
    parser.optionxform = str
    parser.read_string("[experiment]\n" + text)
    values = {}
    for key, raw in parser["experiment"].items():
        if key not in CONFIG_KEYS:
            raise ValueError(f"unknown config key {key!r}")
        values[key] = _coerce(key, raw.strip())
    return values


def _coerce(key, raw):
    if raw.lower() in ("", "none"):
        return None
    if key in _INT_KEYS:
        return int(raw)
    if key in _FLOAT_KEYS:
        return float(raw)
    return raw


def config_from_values(values):
    """Build an :class:`ExperimentConfig` from flat (file / flag) values."""
    values = {k: v for k, v in values.items() if v is not None}
    noise_keys = {k: values.pop(k) for k in list(values) if k.startswith("noise_")}
    noise = None
    if noise_keys:
        noise = NoiseModel(
            matrix_noise_scale=noise_keys.get("noise_matrix_scale", 0.0),
            rhs_noise_scale=noise_keys.get("noise_rhs_scale", 0.0),
            seed=noise_keys.get("noise_seed", 0),
            distribution=noise_keys.get("noise_distribution", "uniform"),
        )
    return ExperimentConfig(noise=noise, **values)


def load_config(path=None, overrides=None):
    values = {}
    if path is not None:
        values.update(parse_config_text(Path(path).read_text()))
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return config_from_values(values)


# ---------------------------------------------------------------- problems

@dataclass
class Problem:
    rows: list
    net: object
    ground_truth: np.ndarray
    seed: int
    scene: object = None
    lemma_margin: float = None


def _localization_problem(config, seed):
    scene = generate_scene(config.n, config.dim, config.anchors, config.reception_range, seed)
    if not is_connected(scene.net):
        raise DisconnectedNetwork("network is disconnected")
    bary = barycentric_rows(scene)
    rows, _ = build_localization_rows(scene, bary)
    return Problem(rows=rows, net=scene.net, ground_truth=scene.positions[scene.m:], seed=seed,
                   scene=scene)


def _network(config, seed):
    net = generate_geometric_network(config.n, config.dim, config.reception_range, seed)
    if not is_connected(net):
        raise DisconnectedNetwork("network is disconnected")
    return net


def _least_squares_problem(config, seed):
    net = _network(config, seed)
    rows, _ = random_sparse_rows(net, seed, noise=0.01)
    rows, _ = assemble_normal_rows(rows, net)
    a, b = rows_to_dense(rows)
    return Problem(rows=rows, net=net, ground_truth=linalg.direct_solve(a, b), seed=seed)


def _raw_problem(config, seed):
    net = _network(config, seed)
    rows, a, b = random_spd_rows(net, seed, identity=config.matrix == "identity")
    return Problem(rows=rows, net=net, ground_truth=linalg.direct_solve(a, b.reshape(-1, 1)), seed=seed)


def check_usable(rows):
    """Reject systems that are not symmetric positive definite or whose
    condition number exceeds ``1e10``.

    This is a setup gate, so it uses LAPACK's symmetric eigensolver: plain
    power iteration cannot resolve the smallest eigenvalue of a badly
    conditioned matrix reliably.
    """
    a, _ = rows_to_dense(rows)
    linalg.check_symmetric(a)
    evals = np.linalg.eigvalsh(a)
    if evals[0] <= 0.0 or evals[-1] / evals[0] > CONDITION_LIMIT:
        raise NotPositiveDefinite(
            f"system is singular or nearly so (eigenvalues {evals[0]:.3g} .. {evals[-1]:.3g})"
        )


_BUILDERS = {
    "localization": _localization_problem,
    "least_squares": _least_squares_problem,
    "raw_system": _raw_problem,
}


def build_problem(config):
    """Build the scenario's system, moving to ``seed + 1`` (at most 20 tries)
    when the network is disconnected or the system is unusable.

    Returns ``(problem, reseed_log)``.
    """
    log = []
    for attempt in range(RESEED_ATTEMPTS):
        seed = config.seed + attempt
        try:
            problem = _BUILDERS[config.scenario](config, seed)
            check_usable(problem.rows)
        except (DisconnectedNetwork, DegenerateGeometry, InsufficientNeighbors,
                NotPositiveDefinite, NotSymmetric) as exc:
            log.append({"seed": seed, "reason": f"{type(exc).__name__}: {exc}"})
            continue
        if config.noise is not None:
            problem.rows, problem.lemma_margin = inject_noise(problem.rows, config.noise)
        return problem, log
    raise DisconnectedNetwork(
        f"no usable problem after {RESEED_ATTEMPTS} seeds starting at {config.seed}: "
        + "; ".join(entry["reason"] for entry in log[-3:])
    )


# ---------------------------------------------------------------- runs

@dataclass
class SolverResult:
    solver: str
    status: str
    converged: bool
    rounds_to_converge: int = None
    engine_rounds: int = None
    outer_iterations: int = None
    final_mse: float = None
    messages_total: int = None
    speedup_vs_baseline: float = None
    omega: float = None
    round_bound: int = None
    within_round_bound: bool = None
    error: str = None


@dataclass
class ComparisonReport:
    config: dict
    seed_used: int
    reseed_log: list
    n_agents: int
    n_unknowns: int
    hop_diameter: int
    baseline: str
    lemma_margin: float = None
    results: dict = field(default_factory=dict)
    traces: dict = field(default_factory=dict, repr=False)

    @property
    def all_converged(self):
        return all(r.converged for r in self.results.values())

    def to_json(self):
        doc = {
            "config": self.config,
            "seed_used": self.seed_used,
            "reseed_log": self.reseed_log,
            "n_agents": self.n_agents,
            "n_unknowns": self.n_unknowns,
            "hop_diameter": self.hop_diameter,
            "baseline": self.baseline,
            "lemma_margin": _finite_or_none(self.lemma_margin),
            "solvers": {name: {f.name: _finite_or_none(getattr(res, f.name)) for f in fields(res)}
                        for name, res in self.results.items()},
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _finite_or_none(value):
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def _baseline_name(solvers):
    for name in ("richardson", "jacobi", "gauss_seidel"):
        if name in solvers:
            return name
    return None


def run_solver(name, problem, config, snapshots=False):
    """Run one solver; failures come back as a non-converged result."""
    solver_config = SolverConfig(epsilon=config.epsilon, t_max=config.t_max,
                                 fidelity=config.fidelity, max_rounds=config.max_rounds)
    n = len(problem.rows)
    try:
        if name == "dcg":
            trace, _, horizon = run_dcg(problem.rows, problem.net, solver_config,
                                        ground_truth=problem.ground_truth, snapshots=snapshots)
            bound = dcg_round_bound(horizon, n)
            result = SolverResult(solver=name, status=trace.status, converged=trace.converged,
                                  rounds_to_converge=trace.n_rounds, round_bound=bound,
                                  within_round_bound=trace.n_rounds <= bound)
        else:
            trace, omega = run_baseline(name, problem.rows, problem.net, solver_config,
                                        ground_truth=problem.ground_truth, snapshots=snapshots)
            # baselines are credited one round per iteration, relays excluded
            result = SolverResult(solver=name, status=trace.status, converged=trace.converged,
                                  rounds_to_converge=trace.outer_iterations, omega=omega)
    except DcgError as exc:
        return SolverResult(solver=name, status="failed", converged=False,
                            error=f"{type(exc).__name__}: {exc}"), None
    result.engine_rounds = trace.n_rounds
    result.outer_iterations = trace.outer_iterations
    result.messages_total = trace.messages_total
    result.final_mse = trace.mse_history[-1] if trace.mse_history else None
    return result, trace


def run_experiment(config, write=True):
    """Run every requested solver on one problem and (optionally) write
    ``trace_<solver>.csv``, ``report.json``, ``mse.svg`` and, for
    localization, ``trails.svg`` and ``scene.json`` into ``output_dir``."""
    problem, log = build_problem(config)
    baseline = _baseline_name(config.solvers)
    report = ComparisonReport(
        config=config.to_dict(),
        seed_used=problem.seed,
        reseed_log=log,
        n_agents=problem.net.n,
        n_unknowns=len(problem.rows),
        hop_diameter=hop_diameter(problem.net),
        baseline=baseline,
        lemma_margin=problem.lemma_margin,
    )
    snapshots = problem.scene is not None
    for name in config.solvers:
        result, trace = run_solver(name, problem, config, snapshots=snapshots)
        report.results[name] = result
        if trace is not None:
            report.traces[name] = trace
    base = report.results.get(baseline)
    for result in report.results.values():
        if base is not None and base.converged and result.converged and result.rounds_to_converge:
            result.speedup_vs_baseline = base.rounds_to_converge / result.rounds_to_converge
    if write:
        write_artifacts(report, problem, Path(config.output_dir))
    return report


def write_artifacts(report, problem, out):
    from . import plots

    out.mkdir(parents=True, exist_ok=True)
    for name, trace in report.traces.items():
        plots.emit_csv(trace, out / f"trace_{name}.csv")
    (out / "report.json").write_text(report.to_json())
    if report.traces:
        plots.emit_svg_mse(report.traces, out / "mse.svg")
    if problem.scene is not None:
        (out / "scene.json").write_text(problem.scene.to_json())
        if report.traces:
            plots.emit_svg_trails(problem.scene, report.traces, out / "trails.svg")

