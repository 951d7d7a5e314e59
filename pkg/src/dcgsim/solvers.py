"""Agent behaviors: distributed conjugate gradient and stationary baselines.

The DCG agent runs the outer loop

    residual -> sync(r) -> check -> [sync(r_prev)] -> direction -> sync(d)
    -> sync(T) -> step -> state update

where every ``sync`` is a flooding exchange of a partially known vector that
completes after ``H`` engine rounds (``H`` = hop diameter). Since every agent
ends up with the complete direction vector and computes the same step size,
it can also advance its copy of every other agent's estimate, so the residual
row ``(Omega X)_i`` never needs an extra exchange round. The synchronized
``r(t-1)`` is the same vector synchronized one iteration earlier; the default
``"cached"`` fidelity reuses it, ``"strict"`` re-floods it as written in the
original protocol. Both give bitwise-identical numbers.

Jacobi, Richardson and Gauss-Seidel agents exchange estimates with their
neighbors once per iteration; when a row references unknowns two hops away
(as normal-equation rows do) the exchange is relayed over two rounds.
"""
from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .errors import (
    DivergenceDetected,
    Incomplete,
    InconsistentShare,
    MissingNeighborState,
    SparsityViolation,
    ZeroCurvature,
    ZeroDiagonal,
    ZeroPrevResidual,
)
from .network import hop_diameter, hop_distances
from .simulator import (
    Agent,
    BYTES_PER_SCALAR,
    Monitor,
    PartialVectorShare,
    RoundReport,
    RunTrace,
    StateShare,
    run_synchronous,
    sequential_sweep,
)

MERGE_ATOL = 1e-9
CURVATURE_FLOOR = 1e-300
DIVERGENCE_LIMIT = 1e12


# ---------------------------------------------------------------- data

class PartialVector:
    """Length-``n`` vector (optionally with ``cols`` columns per entry) of which
    only some entries are known.

    Unknown entries are stored as NaN, so shared values must be finite.
    """

    __slots__ = ("data",)

    def __init__(self, data):
        self.data = data

    @classmethod
    def empty(cls, length, cols=1):
        return cls(np.full((length, cols), np.nan))

    @classmethod
    def single(cls, length, index, value):
        value = np.atleast_1d(np.asarray(value, dtype=float))
        pv = cls.empty(length, value.shape[0])
        pv.data[index] = value
        return pv

    @classmethod
    def from_dict(cls, length, mapping):
        cols = 1
        for value in mapping.values():
            cols = np.atleast_1d(value).shape[0]
            break
        pv = cls.empty(length, cols)
        for index, value in mapping.items():
            if not 0 <= index < length:
                raise IndexError(f"index {index} outside vector of length {length}")
            pv.data[index] = value
        return pv

    @property
    def length(self):
        return self.data.shape[0]

    @property
    def cols(self):
        return self.data.shape[1]

    @property
    def known(self):
        return ~np.isnan(self.data[:, 0])

    @property
    def values(self):
        """Entries with unknown positions reading as zero."""
        return np.nan_to_num(self.data, nan=0.0)

    @property
    def is_complete(self):
        return not np.isnan(self.data[:, 0]).any()

    def as_dict(self):
        squeeze = self.cols == 1
        return {
            int(i): (float(self.data[i, 0]) if squeeze else self.data[i].copy())
            for i in np.flatnonzero(self.known)
        }

    def complete_values(self):
        if not self.is_complete:
            missing = np.flatnonzero(~self.known)
            raise Incomplete(f"vector is missing indices {missing.tolist()[:10]}")
        return self.data

    def scalar_count(self):
        return int(np.count_nonzero(~np.isnan(self.data)))

    def __repr__(self):
        return f"PartialVector({self.as_dict()!r}, length={self.length})"


def merge(a, b):
    """Union of two partial vectors; ``a`` wins on overlapping indices.

    Raises :class:`InconsistentShare` if an overlapping entry differs by more
    than ``1e-9``.
    """
    return merge_all([a, b])


def merge_all(vectors):
    """Left fold of :func:`merge` over ``vectors``, done in one pass."""
    first = vectors[0].data
    if len(vectors) == 1:
        return PartialVector(first.copy())
    # fmax / fmin skip NaN, so their spread is the disagreement on known entries
    hi, lo = first.copy(), first.copy()
    for v in vectors[1:]:
        if v.data.shape != first.shape:
            raise ValueError("cannot merge partial vectors of different shapes")
        np.fmax(hi, v.data, out=hi)
        np.fmin(lo, v.data, out=lo)
    lo -= hi
    if np.fmin.reduce(lo, axis=None) < -MERGE_ATOL:
        raise InconsistentShare("partial vectors disagree on a shared index")
    # the left operand wins where it already knows the value
    np.copyto(hi, first, where=~np.isnan(first))
    return PartialVector(hi)

@dataclass(eq=False)
class RowSlice:
    """One agent's row of the system: nonzero coefficients keyed by unknown
    index, and its right-hand side (one entry per column)."""

    owner: int
    coefficients: dict
    rhs: np.ndarray
    index: int = None

    def __post_init__(self):
        if self.index is None:
            self.index = self.owner
        self.rhs = np.atleast_1d(np.asarray(self.rhs, dtype=float))
        self.coefficients = {int(j): float(v) for j, v in sorted(self.coefficients.items()) if v != 0.0}

    @property
    def dim(self):
        return self.rhs.shape[0]

    @property
    def diagonal(self):
        return self.coefficients.get(self.index, 0.0)


@dataclass
class SolverConfig:
    """Solver parameters.

    ``epsilon`` defaults to ``1e-10 * (1 + ||b||^2)`` and ``t_max`` to
    ``10 * n`` when left as ``None``.
    """

    epsilon: float = None
    t_max: int = None
    h_override: int = None
    omega: float = None
    fidelity: str = "cached"
    max_rounds: int = 1_000_000
    batched: bool = True

    def __post_init__(self):
        if self.epsilon is not None and not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.t_max is not None and self.t_max < 1:
            raise ValueError("t_max must be >= 1")
        if self.fidelity not in ("cached", "strict"):
            raise ValueError(f"fidelity must be 'cached' or 'strict', got {self.fidelity!r}")


def rows_to_dense(rows):
    """Dense ``(A, B)`` from a list of row slices (ordered by unknown index)."""
    n = len(rows)
    dim = rows[0].dim if rows else 1
    a = np.zeros((n, n))
    b = np.zeros((n, dim))
    for row in rows:
        for j, v in row.coefficients.items():
            a[row.index, j] = v
        b[row.index] = row.rhs
    return a, b


def rows_from_dense(a, b, owners=None):
    a = linalg.as_matrix(a)
    b = np.asarray(b, dtype=float)
    b = b.reshape(-1, 1) if b.ndim == 1 else b
    owners = range(a.shape[0]) if owners is None else owners
    return [
        RowSlice(owner=int(o), coefficients={j: a[i, j] for j in np.flatnonzero(a[i])}, rhs=b[i], index=i)
        for i, o in enumerate(owners)
    ]


def default_epsilon(rows):
    _, b = rows_to_dense(rows)
    return 1e-10 * (1.0 + float(np.sum(b * b)))


def _sorted_rows(rows):
    rows = sorted(rows, key=lambda r: r.index)
    if [r.index for r in rows] != list(range(len(rows))):
        raise ValueError("row indices must be exactly 0..n-1")
    return rows


# ---------------------------------------------------------------- DCG steps

def _full(v):
    return v.complete_values() if isinstance(v, PartialVector) else np.asarray(v, dtype=float)


def _col(x):
    x = np.asarray(x, dtype=float)
    return x.reshape(-1, 1) if x.ndim == 1 else x


def dcg_update_residual(row, estimates):
    """``r_i = -b_i + sum_j A_ij X_j`` over the row's nonzeros (self included).

    ``estimates`` maps unknown index to the current estimate (a dict or an
    array indexed by unknown).
    """
    r = -row.rhs
    for j, a_ij in row.coefficients.items():
        try:
            x_j = estimates[j]
        except (KeyError, IndexError):
            raise MissingNeighborState(f"no estimate for unknown {j} at agent {row.owner}") from None
        r = r + a_ij * np.asarray(x_j, dtype=float)
    return r


def squared_norm(v):
    """Per-column ``sum_i v_i^2`` of a complete vector."""
    full = _col(_full(v))
    return np.sum(full * full, axis=0)


def dcg_check_residual(r_full, epsilon):
    """True when ``r^T r < epsilon`` for every column."""
    return bool(np.all(squared_norm(r_full) < epsilon))


def dcg_update_direction(d_prev, r_own, r_full, r_prev_full):
    """``d_i = -r_i + (r^T r / r_prev^T r_prev) d_i(t-1)``."""
    rr = squared_norm(r_full)
    rr_prev = squared_norm(r_prev_full)
    if np.any(rr_prev == 0.0):
        raise ZeroPrevResidual("previous residual is exactly zero; the run should have halted")
    return -np.asarray(r_own, dtype=float) + (rr / rr_prev) * np.asarray(d_prev, dtype=float)


def dcg_curvature_component(row, d_full):
    """``T_i = sum_j A_ij d_j`` from the complete direction vector."""
    d_full = _col(_full(d_full))
    t = np.zeros(d_full.shape[1])
    for j, a_ij in row.coefficients.items():
        t = t + a_ij * d_full[j]
    return t


def dcg_update_step(d_full, r_full, t_full):
    """Global step ``alpha = -(d^T r) / (d^T T)``, one value per column."""
    d = _col(_full(d_full))
    r = _col(_full(r_full))
    t = _col(_full(t_full))
    numer = np.sum(d * r, axis=0)
    denom = np.sum(d * t, axis=0)
    if np.any(np.abs(denom) < CURVATURE_FLOOR):
        raise ZeroCurvature("d^T A d vanished; the system is not positive definite along d")
    return -numer / denom


# ---------------------------------------------------------------- synchronization

class SyncAgent(Agent):
    """Stand-alone run of the flooding exchange: every round, send the current
    partial vector to all neighbors and merge everything received."""

    def __init__(self, agent_id, neighbors, n, value, horizon):
        super().__init__(agent_id, neighbors, index=agent_id)
        self.vector = PartialVector.single(n, agent_id, value)
        self.horizon = int(horizon)
        self.rounds = 0

    def outbox(self):
        return self.broadcast(PartialVectorShare(self.vector))

    def receive(self, inbox):
        self.vector = merge_all([self.vector] + [m.payload.vector for m in inbox])
        self.rounds += 1
        if self.rounds >= self.horizon:
            self.halt("converged")


def synchronize_vector(net, values, horizon):
    """Flood one value per agent for ``horizon`` rounds.

    Returns ``(vectors, trace)`` with each agent's final partial vector.
    Raises :class:`Incomplete` if some agent is still missing an index.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    agents = [SyncAgent(i, net.neighbors(i), net.n, values[i], horizon) for i in range(net.n)]
    trace = run_synchronous(agents, net, horizon, monitor=Monitor(n_unknowns=net.n))
    vectors = [a.vector for a in agents]
    for i, pv in enumerate(vectors):
        if not pv.is_complete:
            missing = np.flatnonzero(~pv.known).tolist()
            raise Incomplete(f"agent {i} is missing indices {missing[:10]} after {horizon} rounds")
    return vectors, trace


# ---------------------------------------------------------------- DCG agent

class DcgAgent(Agent):
    """One agent's DCG state machine.

    ``row`` may be ``None``: the agent then owns no unknown and only relays
    the synchronization floods (used for anchors in localization).
    """

    def __init__(self, agent_id, neighbors, row, n, dim, horizon, epsilon, t_max,
                 fidelity="cached"):
        super().__init__(agent_id, neighbors, index=None if row is None else row.index)
        self.row = row
        self.n = n
        self.dim = dim
        self.horizon = max(1, int(horizon))
        self.epsilon = float(epsilon)
        self.t_max = int(t_max)
        self.strict = fidelity == "strict"

        self.x_full = np.zeros((n, dim))
        zero = np.zeros(dim)
        self.residual = zero if row is None else -row.rhs  # r_i(0) = -b_i
        self.residual_prev = self.residual
        self.direction = zero.copy()
        self.step_size = zero.copy()
        self.active = np.ones(dim, dtype=bool)
        self.r_full = None
        self.r_prev_full = None
        self.d_full = None
        self.rr = None
        self.outer_iteration = 1
        self.iterations = 0
        self.syncs = 0
        self.history = []

        self.phase = None
        self._pv = None
        self._sub = 0
        self._begin_iteration()

    # -- protocol plumbing

    def _start_sync(self, phase, own_value):
        self.phase = phase
        self._sub = 0
        self.syncs += 1
        if self.index is None:
            self._pv = PartialVector.empty(self.n, self.dim)
        else:
            self._pv = PartialVector.single(self.n, self.index, own_value)

    def outbox(self):
        if self.halted:
            return []
        return self.broadcast(PartialVectorShare(self._pv))

    def receive(self, inbox):
        if self.halted:
            return
        incoming = [m.payload.vector for m in inbox if isinstance(m.payload, PartialVectorShare)]
        self._pv = merge_all([self._pv] + incoming)
        self._sub += 1
        if self._sub < self.horizon:
            return
        full = self._pv.complete_values()
        handler = {
            "r": self._after_r,
            "r_prev": self._after_r_prev,
            "d": self._after_d,
            "T": self._after_t,
        }[self.phase]
        handler(full)

    def estimate(self):
        return None if self.index is None else self.x_full[self.index]

    # -- algorithm

    def _begin_iteration(self):
        if self.row is not None:
            self.residual = dcg_update_residual(self.row, self.x_full)
        self._start_sync("r", self.residual)

    def _after_r(self, full):
        self.r_full = full
        self.rr = squared_norm(full)
        self.active &= ~(self.rr < self.epsilon)
        if not self.active.any():
            self.phase = "done"
            self.halt("converged")
            return
        if self.strict:
            self._start_sync("r_prev", self.residual_prev)
        else:
            self._direction()

    def _after_r_prev(self, full):
        self.r_prev_full = full
        self._direction()

    def _direction(self):
        act = self.active
        if self.r_prev_full is None:
            # only at t = 1 in cached mode, where d(0) = 0 makes the ratio irrelevant
            ratio = np.zeros(self.dim)
        else:
            rr_prev = squared_norm(self.r_prev_full)
            if np.any(rr_prev[act] == 0.0):
                raise ZeroPrevResidual("previous residual is exactly zero")
            ratio = np.zeros(self.dim)
            ratio[act] = self.rr[act] / rr_prev[act]
        if self.row is not None:
            new = -self.residual + ratio * self.direction
            self.direction = np.where(act, new, self.direction)
        self._start_sync("d", self.direction)

    def _after_d(self, full):
        self.d_full = full
        curvature = None if self.row is None else dcg_curvature_component(self.row, full)
        self._start_sync("T", curvature)

    def _after_t(self, full):
        act = self.active
        d, r = self.d_full, self.r_full
        numer = np.sum(d * r, axis=0)
        denom = np.sum(d * full, axis=0)
        if np.any(np.abs(denom[act]) < CURVATURE_FLOOR):
            raise ZeroCurvature("d^T A d vanished; the system is not positive definite along d")
        alpha = np.zeros(self.dim)
        alpha[act] = -numer[act] / denom[act]
        self.step_size = alpha
        self.x_full = self.x_full + alpha * d
        self.history.append((self.outer_iteration, self.rr.copy(), alpha.copy()))
        self.iterations += 1

        self.residual_prev = self.residual
        self.r_prev_full = self.r_full
        self.outer_iteration += 1
        if self.outer_iteration > self.t_max:
            self.phase = "done"
            self.halt("max_iterations")
            return
        self._begin_iteration()


def dcg_agent(agent_id, net, row, n, dim, horizon, config, epsilon, t_max):
    return DcgAgent(agent_id, net.neighbors(agent_id), row, n, dim, horizon, epsilon, t_max,
                    fidelity=config.fidelity)


def dcg_round_bound(horizon, n):
    """The ``4 H n`` round bound."""
    return 4 * max(1, horizon) * n


def run_dcg(rows, net, config=None, ground_truth=None, snapshots=False):
    """Run DCG on ``rows`` (one per unknown) over ``net``.

    Agents without a row relay the synchronization floods. Returns
    ``(trace, agents, horizon)``.
    """
    config = config or SolverConfig()
    rows = _sorted_rows(rows)
    n = len(rows)
    dim = rows[0].dim
    by_owner = {}
    for row in rows:
        if row.owner in by_owner:
            raise ValueError(f"agent {row.owner} owns two rows")
        if any(j >= n for j in row.coefficients):
            raise ValueError(f"row {row.index} references an unknown outside 0..{n - 1}")
        by_owner[row.owner] = row
    horizon = config.h_override if config.h_override is not None else hop_diameter(net)
    epsilon = config.epsilon if config.epsilon is not None else default_epsilon(rows)
    t_max = config.t_max if config.t_max is not None else 10 * n

    agents = [dcg_agent(i, net, by_owner.get(i), n, dim, horizon, config, epsilon, t_max)
              for i in range(net.n)]
    a, b = rows_to_dense(rows)
    monitor = Monitor(matrix=a, rhs=b, ground_truth=ground_truth, n_unknowns=n, dim=dim,
                      snapshots=snapshots)
    max_rounds = (4 * t_max + 1) * max(1, horizon) + 1
    trace = run_synchronous(agents, net, max_rounds, monitor=monitor)
    return trace, agents, horizon


# ---------------------------------------------------------------- baselines

class StationaryAgent(Agent):
    """Jacobi / Richardson agent (Gauss-Seidel is the Jacobi rule run by the
    sequential sweep engine).

    ``depth`` is 1 when every unknown in the row belongs to a neighbor, 2 when
    some are two hops away; in the latter case each iteration takes two
    rounds: first own estimates, then each agent relays the table it just
    received.
    """

    def __init__(self, agent_id, neighbors, row, method, dim, omega=None, depth=1):
        super().__init__(agent_id, neighbors, index=None if row is None else row.index)
        if method not in ("jacobi", "richardson"):
            raise ValueError(f"unknown stationary method {method!r}")
        if row is not None and method == "jacobi" and row.diagonal == 0.0:
            raise ZeroDiagonal(f"row {row.index} has a zero diagonal")
        if method == "richardson" and not (omega is not None and omega > 0):
            raise ValueError("richardson needs omega > 0")
        self.row = row
        self.method = method
        self.omega = omega
        self.depth = depth
        self.dim = dim
        self.x = np.zeros(dim)
        self.cache = {} if row is None else {j: np.zeros(dim) for j in row.coefficients}
        self.iterations = 0
        self._phase = 0
        self._fresh = {}

    def outbox(self):
        if self.halted:
            return []
        if self._phase == 0:
            if self.row is None:
                return []
            return self.broadcast(StateShare(((self.index, tuple(self.x)),)))
        table = dict(self._fresh)
        if self.row is not None:
            table[self.index] = tuple(self.x)
        if not table:
            return []
        return self.broadcast(StateShare(tuple(sorted(table.items()))))

    def receive(self, inbox):
        if self.halted:
            return
        if self.depth == 2 and self._phase == 0:
            self._fresh = {}
            for msg in inbox:
                for j, values in msg.payload.entries:
                    self._fresh[j] = values
            self._absorb(self._fresh.items())
            self._phase = 1
            return
        for msg in inbox:
            self._absorb(msg.payload.entries)
        self._phase = 0
        self._update()

    def _absorb(self, entries):
        if self.row is None:
            return
        for j, values in entries:
            if j in self.cache and j != self.index:
                self.cache[j] = np.asarray(values, dtype=float)

    def _update(self):
        self.iterations += 1
        if self.row is None:
            return
        row, i = self.row, self.index
        self.cache[i] = self.x
        s = np.zeros(self.dim)
        if self.method == "jacobi":
            for j, a_ij in row.coefficients.items():
                if j != i:
                    s = s + a_ij * self.cache[j]
            self.x = (row.rhs - s) / row.diagonal
        else:
            for j, a_ij in row.coefficients.items():
                s = s + a_ij * self.cache[j]
            self.x = self.x + self.omega * (row.rhs - s)
        if np.linalg.norm(self.x) > DIVERGENCE_LIMIT:
            raise DivergenceDetected(f"estimate of unknown {i} exceeded {DIVERGENCE_LIMIT:g}")

    def estimate(self):
        return None if self.index is None else self.x


def jacobi_agent(agent_id, net, row, dim, depth=1):
    return StationaryAgent(agent_id, net.neighbors(agent_id), row, "jacobi", dim, depth=depth)


def richardson_agent(agent_id, net, row, dim, omega, depth=1):
    return StationaryAgent(agent_id, net.neighbors(agent_id), row, "richardson", dim,
                           omega=omega, depth=depth)


def gauss_seidel_agent(agent_id, net, row, dim):
    """Jacobi rule; under :func:`sequential_sweep` it sees fresh lower-id values."""
    return StationaryAgent(agent_id, net.neighbors(agent_id), row, "jacobi", dim, depth=1)


def relay_depth(rows, net):
    """Hops needed for every row to see all unknowns it references (1 or 2)."""
    owner = {row.index: row.owner for row in rows}
    hops = hop_distances(net)
    depth = 1
    for row in rows:
        for j in row.coefficients:
            if j == row.index:
                continue
            h = hops[row.owner, owner[j]]
            if h < 0 or h > 2:
                raise SparsityViolation(
                    f"row {row.index} references unknown {j} at agent {owner[j]}, "
                    f"{'unreachable' if h < 0 else f'{h} hops'} away"
                )
            depth = max(depth, int(h))
    return depth


def default_omega(rows):
    a, _ = rows_to_dense(rows)
    ext = linalg.eigen_extremes_spd(a)
    return 2.0 / (ext.lambda_max + ext.lambda_min)


def run_baseline(method, rows, net, config=None, ground_truth=None, snapshots=False):
    """Run ``"jacobi"``, ``"richardson"`` or ``"gauss_seidel"`` to the central
    residual threshold. Returns ``(trace, omega)``."""
    config = config or SolverConfig()
    rows = _sorted_rows(rows)
    n = len(rows)
    dim = rows[0].dim
    depth = relay_depth(rows, net)
    epsilon = config.epsilon if config.epsilon is not None else default_epsilon(rows)
    omega = None
    if method == "richardson":
        omega = config.omega if config.omega is not None else default_omega(rows)
    a, b = rows_to_dense(rows)
    monitor = Monitor(matrix=a, rhs=b, ground_truth=ground_truth, epsilon=epsilon,
                      n_unknowns=n, dim=dim, snapshots=snapshots)
    by_owner = {row.owner: row for row in rows}

    if method == "gauss_seidel":
        if depth != 1:
            raise SparsityViolation("gauss-seidel sweeps need every referenced unknown one hop away")
        agents = [gauss_seidel_agent(i, net, by_owner.get(i), dim) for i in range(net.n)]
        return sequential_sweep(agents, net, config.max_rounds, monitor=monitor), omega
    if method not in ("jacobi", "richardson"):
        raise ValueError(f"unknown baseline {method!r}")
    if config.batched:
        trace = run_stationary_batched(method, rows, net, depth, omega, monitor, config.max_rounds)
        return trace, omega
    agents = [StationaryAgent(i, net.neighbors(i), by_owner.get(i), method, dim, omega=omega, depth=depth)
              for i in range(net.n)]
    return run_synchronous(agents, net, config.max_rounds, monitor=monitor), omega


def run_stationary_batched(method, rows, net, depth, omega, monitor, max_rounds):
    """Array implementation of the lockstep Jacobi/Richardson engine run.

    Follows the same protocol as :func:`run_synchronous` over
    :class:`StationaryAgent` behaviors (same rounds, message and byte counts,
    stopping rule), but does each iteration as one dense matrix product. The
    estimates agree with the agent-by-agent run to rounding (the row sums are
    accumulated in a different order). It exists because the baselines need
    10^5+ rounds.
    """
    rows = _sorted_rows(rows)
    n = len(rows)
    dim = rows[0].dim
    for row in rows:
        if method == "jacobi" and row.diagonal == 0.0:
            raise ZeroDiagonal(f"row {row.index} has a zero diagonal")
    a, rhs = rows_to_dense(rows)
    diag = np.diag(a).reshape(-1, 1)
    off = a - np.diagflat(diag) if method == "jacobi" else a

    owners = {row.owner for row in rows}
    degree = [len(net.neighbors(i)) for i in range(net.n)]
    own_msgs = sum(degree[i] for i in owners)
    phases = [(own_msgs, own_msgs * dim * BYTES_PER_SCALAR)]
    if depth == 2:
        relay_msgs = relay_scalars = 0
        for i in range(net.n):
            table = (1 if i in owners else 0) + sum(1 for j in net.neighbors(i) if j in owners)
            if table:
                relay_msgs += degree[i]
                relay_scalars += degree[i] * table * dim
        phases.append((relay_msgs, relay_scalars * BYTES_PER_SCALAR))
    reports = [RoundReport(0, msgs, nbytes, tuple(False for _ in range(net.n)), msgs)
               for msgs, nbytes in phases]
    last = len(phases) - 1

    trace = RunTrace()
    x = np.zeros((n, dim))
    monitor.start(trace, x)
    rnd = 0
    iterations = 0
    stopped = False
    while not stopped and rnd < max_rounds:
        for k, template in enumerate(reports):
            rnd += 1
            if k == last:
                s = off @ x
                if method == "jacobi":
                    x = (rhs - s) / diag
                else:
                    x = x + omega * (rhs - s)
                iterations += 1
                if np.any(np.abs(x) > DIVERGENCE_LIMIT / np.sqrt(dim)) and np.any(
                        np.linalg.norm(x, axis=1) > DIVERGENCE_LIMIT):
                    raise DivergenceDetected(
                        f"an estimate exceeded {DIVERGENCE_LIMIT:g} at round {rnd}", round=rnd
                    )
            trace.rounds.append(template._replace(round=rnd))
            if monitor.observe(trace, rnd, x):
                stopped = True
                break
            if rnd >= max_rounds:
                break
    trace.status = "converged" if stopped else "max_rounds"
    trace.outer_iterations = iterations
    monitor.finish(trace, rnd, x)
    return trace
