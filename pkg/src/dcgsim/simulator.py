"""Deterministic synchronous-round message-passing engine.

One engine round is: every non-halted agent emits its outbox, the engine
delivers the messages, then every non-halted agent consumes its inbox (sorted
by sender id) and may halt. A message therefore crosses exactly one hop per
round, and an ``H``-hop flood completes in ``H`` rounds.

Agents only ever see their own state and their inbox. The harness-side
:class:`Monitor` is the one party allowed to read every estimate; it records
residual and error histories and can stop a run (the baselines use this for
their global stopping rule).
"""
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import NonNeighborSend

BYTES_PER_SCALAR = 8


# ---------------------------------------------------------------- payloads

@dataclass(frozen=True)
class ScalarShare:
    index: int
    value: float

    def scalar_count(self):
        return 1


@dataclass(frozen=True)
class PartialVectorShare:
    vector: object

    def scalar_count(self):
        return self.vector.scalar_count()


@dataclass(frozen=True)
class StateShare:
    """Estimates keyed by unknown index: ``((index, (v_1, ..., v_d)), ...)``."""

    entries: tuple

    def scalar_count(self):
        return sum(len(values) for _, values in self.entries)


@dataclass(frozen=True)
class RowShare:
    """One agent's row: ``((column, value), ...)`` plus its right-hand side."""

    index: int
    entries: tuple
    rhs: tuple = ()

    def scalar_count(self):
        return len(self.entries) + len(self.rhs)


class Message(NamedTuple):
    sender: int
    payload: object


# ---------------------------------------------------------------- agents

class Agent:
    """Base behavior. Subclasses override :meth:`outbox` and :meth:`receive`.

    ``index`` is the unknown this agent owns (``None`` for agents that own no
    unknown, e.g. pure relays).
    """

    def __init__(self, agent_id, neighbors, index=None):
        self.agent_id = agent_id
        self.neighbors = tuple(neighbors)
        self.index = index
        self.halted = False
        self.status = "running"

    def outbox(self):
        return []

    def receive(self, inbox):
        pass

    def estimate(self):
        return None

    def halt(self, status="halted"):
        self.halted = True
        self.status = status

    def broadcast(self, payload):
        return [(j, payload) for j in self.neighbors]


# ---------------------------------------------------------------- traces

class RoundReport(NamedTuple):
    round: int
    messages_sent: int
    bytes_modeled: int
    per_agent_halted: tuple
    messages_delivered: int = 0


@dataclass
class RunTrace:
    rounds: list = field(default_factory=list)
    residual_sq_history: list = field(default_factory=list)
    mse_history: list = field(default_factory=list)
    final_estimates: np.ndarray = None
    status: str = "running"
    snapshots: list = field(default_factory=list)
    outer_iterations: int = 0

    @property
    def converged(self):
        return self.status == "converged"

    @property
    def n_rounds(self):
        return len(self.rounds)

    @property
    def messages_total(self):
        return sum(r.messages_sent for r in self.rounds)

    def fingerprint(self):
        """Hashable summary used by determinism checks."""
        return (
            tuple(self.rounds),
            tuple(self.residual_sq_history),
            tuple(self.mse_history),
            None if self.final_estimates is None else self.final_estimates.tobytes(),
            self.status,
        )


def snapshot_due(rnd):
    """Roughly 90 snapshots per decade of rounds."""
    if rnd <= 100:
        return True
    step = 10 ** (len(str(rnd)) - 2)
    return rnd % step == 0


class Monitor:
    """Central trace recorder.

    Parameters
    ----------
    matrix, rhs : array, optional
        The system ``A X = B`` being solved; enables the residual history
        ``||A X - B||_F^2``.
    ground_truth : array, optional
        ``(n_unknowns, d)`` reference solution; enables the MSE history
        (mean over unknowns of the squared Euclidean error).
    epsilon : float, optional
        Stop the run once the residual drops below this value.
    snapshots : bool
        Record estimate snapshots on a log-spaced round grid (for trails).
    """

    def __init__(self, matrix=None, rhs=None, ground_truth=None, epsilon=None,
                 n_unknowns=None, dim=None, snapshots=False):
        self.matrix = None if matrix is None else np.asarray(matrix, dtype=float)
        self.rhs = None if rhs is None else _as_block(rhs)
        self.ground_truth = None if ground_truth is None else _as_block(ground_truth)
        self.epsilon = epsilon
        self.snapshots = snapshots
        if n_unknowns is None:
            for ref in (self.rhs, self.ground_truth):
                if ref is not None:
                    n_unknowns = ref.shape[0]
                    break
        if dim is None:
            for ref in (self.rhs, self.ground_truth):
                if ref is not None:
                    dim = ref.shape[1]
                    break
        self.n_unknowns = n_unknowns
        self.dim = dim
        self._last_x = None
        self._last_values = (None, None)

    def gather(self, agents):
        n = self.n_unknowns
        if n is None:
            n = 1 + max((a.index for a in agents if a.index is not None), default=-1)
        dim = self.dim
        x = None
        for agent in agents:
            if agent.index is None:
                continue
            value = agent.estimate()
            if value is None:
                continue
            if not (isinstance(value, np.ndarray) and value.ndim == 1):
                value = np.atleast_1d(np.asarray(value, dtype=float))
            if x is None:
                x = np.zeros((n, dim if dim is not None else value.shape[0]))
            x[agent.index] = value
        if x is None:
            x = np.zeros((n, dim or 1))
        return x

    def residual_sq(self, x):
        if self.matrix is None or self.rhs is None:
            return None
        r = self.matrix @ x - self.rhs
        return float(np.sum(r * r))

    def mse(self, x):
        if self.ground_truth is None:
            return None
        err = x - self.ground_truth
        return float(np.sum(err * err) / max(x.shape[0], 1))

    def start(self, trace, x):
        if self.snapshots:
            trace.snapshots.append((0, x.copy()))

    def observe(self, trace, rnd, x):
        """Record one round; return True when the run must stop.

        Passing the very same array object as the previous call (nothing
        changed this round) reuses the previous residual and error.
        """
        if x is self._last_x:
            res, err = self._last_values
        else:
            res, err = self.residual_sq(x), self.mse(x)
            self._last_x, self._last_values = x, (res, err)
        if res is not None:
            trace.residual_sq_history.append(res)
        if err is not None:
            trace.mse_history.append(err)
        if self.snapshots and snapshot_due(rnd):
            trace.snapshots.append((rnd, x.copy()))
        return self.epsilon is not None and res is not None and res < self.epsilon

    def finish(self, trace, rnd, x):
        trace.final_estimates = x
        if self.snapshots and (not trace.snapshots or trace.snapshots[-1][0] != rnd):
            trace.snapshots.append((rnd, x.copy()))


def _as_block(a):
    a = np.asarray(a, dtype=float)
    return a.reshape(-1, 1) if a.ndim == 1 else a


def _check_agents(agents, net):
    if len(agents) != net.n:
        raise ValueError(f"need one behavior per agent: {len(agents)} != {net.n}")
    for i, agent in enumerate(agents):
        if agent.agent_id != i:
            raise ValueError(f"behavior at position {i} has agent_id {agent.agent_id}")


def _finalize_status(trace, agents):
    statuses = {a.status for a in agents}
    if statuses == {"converged"}:
        trace.status = "converged"
    else:
        trace.status = sorted(statuses - {"converged"})[0]


def _outer_iterations(agents):
    return max((getattr(a, "iterations", 0) for a in agents), default=0)


def run_synchronous(agents, net, max_rounds, ground_truth=None, monitor=None, order=None):
    """Run agents in lockstep rounds until all halt or ``max_rounds`` elapse.

    ``order`` optionally permutes the order in which agents are stepped inside
    a round; inboxes are always sorted by sender, so results must not depend
    on it.
    """
    if max_rounds < 1:
        raise ValueError("max_rounds must be >= 1")
    _check_agents(agents, net)
    if monitor is None:
        monitor = Monitor(ground_truth=ground_truth)
    nbr_sets = [frozenset(nbrs) for nbrs in net.adjacency]
    step_order = list(range(net.n)) if order is None else list(order)
    # inboxes fill in stepping order, which is already by sender unless permuted
    needs_sort = step_order != sorted(step_order)

    trace = RunTrace()
    monitor.start(trace, monitor.gather(agents))
    rnd = 0
    for rnd in range(1, max_rounds + 1):
        active = [i for i in step_order if not agents[i].halted]
        inboxes = [[] for _ in agents]
        sent = scalars = 0
        # broadcasts reuse one payload object; wrap and size it once
        wrapped = {}
        for i in active:
            nbrs = nbr_sets[i]
            for dest, payload in agents[i].outbox():
                if dest not in nbrs:
                    raise NonNeighborSend(f"agent {i} addressed non-neighbor {dest}")
                entry = wrapped.get(id(payload))
                if entry is None:
                    entry = wrapped[id(payload)] = (Message(i, payload), payload.scalar_count())
                sent += 1
                scalars += entry[1]
                inboxes[dest].append(entry[0])
        delivered = 0
        for i in active:
            inbox = inboxes[i]
            if needs_sort:
                inbox.sort(key=lambda m: m.sender)
            delivered += len(inbox)
            agents[i].receive(inbox)
        trace.rounds.append(RoundReport(
            round=rnd,
            messages_sent=sent,
            bytes_modeled=scalars * BYTES_PER_SCALAR,
            per_agent_halted=tuple(a.halted for a in agents),
            messages_delivered=delivered,
        ))
        x = monitor.gather(agents)
        if monitor.observe(trace, rnd, x):
            for agent in agents:
                if not agent.halted:
                    agent.halt("converged")
        if all(a.halted for a in agents):
            _finalize_status(trace, agents)
            break
    else:
        trace.status = "max_rounds"
    trace.outer_iterations = _outer_iterations(agents)
    monitor.finish(trace, rnd, monitor.gather(agents))
    return trace


def sequential_sweep(agents, net, max_sweeps, ground_truth=None, monitor=None):
    """Activate agents one at a time in ascending id order.

    An activated agent consumes everything addressed to it so far, updates,
    and its outbox is delivered immediately, so later agents in the same
    sweep see the fresh values. Each sweep produces one :class:`RoundReport`.
    """
    if max_sweeps < 1:
        raise ValueError("max_sweeps must be >= 1")
    _check_agents(agents, net)
    if monitor is None:
        monitor = Monitor(ground_truth=ground_truth)
    nbr_sets = [frozenset(nbrs) for nbrs in net.adjacency]
    pending = {}

    trace = RunTrace()
    monitor.start(trace, monitor.gather(agents))
    sweep = 0
    for sweep in range(1, max_sweeps + 1):
        sent = scalars = delivered = 0
        for i in range(net.n):
            agent = agents[i]
            if agent.halted:
                continue
            inbox = pending.pop(i, [])
            inbox.sort(key=lambda m: m.sender)
            delivered += len(inbox)
            agent.receive(inbox)
            for dest, payload in agent.outbox():
                if dest not in nbr_sets[i]:
                    raise NonNeighborSend(f"agent {i} addressed non-neighbor {dest}")
                sent += 1
                scalars += payload.scalar_count()
                pending.setdefault(dest, []).append(Message(i, payload))
        trace.rounds.append(RoundReport(
            round=sweep,
            messages_sent=sent,
            bytes_modeled=scalars * BYTES_PER_SCALAR,
            per_agent_halted=tuple(a.halted for a in agents),
            messages_delivered=delivered,
        ))
        x = monitor.gather(agents)
        if monitor.observe(trace, sweep, x):
            for agent in agents:
                if not agent.halted:
                    agent.halt("converged")
        if all(a.halted for a in agents):
            _finalize_status(trace, agents)
            break
    else:
        trace.status = "max_rounds"
    trace.outer_iterations = _outer_iterations(agents)
    monitor.finish(trace, sweep, monitor.gather(agents))
    return trace
