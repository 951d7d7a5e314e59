"""Problem builders that feed DCG: least squares and network localization.

Both applications end in per-agent :class:`~dcgsim.solvers.RowSlice` objects
over an SPD system ``Omega X = beta``, assembled by short message-passing
protocols so that each agent only ever uses data it owns or was sent by a
neighbor.
"""
import itertools
import json
from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .errors import (
    DegenerateGeometry,
    InsufficientNeighbors,
    NotPositiveDefinite,
    NotSymmetric,
    SparsityViolation,
)
from .network import Network, from_positions
from .simulator import Agent, Monitor, RowShare, StateShare, run_synchronous
from .solvers import RowSlice, SolverConfig, rows_to_dense, run_dcg

BARYCENTRIC_COND_LIMIT = 1e10
WEIGHT_SUM_ATOL = 1e-9
SPAN_RTOL = 1e-10


# ---------------------------------------------------------------- least squares

class _NormalRowAgent(Agent):
    """Sends its row of ``A`` and ``b``, then forms its row of ``A^T A`` and ``A^T b``."""

    def __init__(self, agent_id, neighbors, row):
        super().__init__(agent_id, neighbors, index=row.index)
        self.row = row
        self.result = None

    def outbox(self):
        if self.halted:
            return []
        share = RowShare(self.row.index, tuple(self.row.coefficients.items()), tuple(self.row.rhs))
        return self.broadcast(share)

    def receive(self, inbox):
        i = self.row.index
        received = {i: (self.row.coefficients, self.row.rhs)}
        for msg in inbox:
            p = msg.payload
            received[p.index] = (dict(p.entries), np.asarray(p.rhs, dtype=float))
        omega = {}
        beta = np.zeros(self.row.dim)
        for k in sorted(received):
            coeffs, rhs = received[k]
            a_ki = coeffs.get(i, 0.0)
            if a_ki == 0.0:
                continue
            for j, a_kj in coeffs.items():
                omega[j] = omega.get(j, 0.0) + a_ki * a_kj
            beta = beta + a_ki * rhs
        self.result = RowSlice(owner=self.agent_id, coefficients=omega, rhs=beta, index=i)
        self.halt("converged")


def check_row_sparsity(rows, net):
    owner = {row.index: row.owner for row in rows}
    for row in rows:
        nbrs = set(net.neighbors(row.owner))
        for j in row.coefficients:
            if j != row.index and owner.get(j) not in nbrs:
                raise SparsityViolation(
                    f"row {row.index} has a nonzero in column {j}, which is not a neighbor"
                )


def assemble_normal_rows(rows, net):
    """Distributed ``Omega = A^T A``, ``beta = A^T b`` in one exchange round.

    Every agent sends its full row; agent ``i`` then knows column ``i`` of
    ``A`` together with the rows it appears in, which is everything
    ``Omega_{i,:}`` and ``beta_i`` need (including two-hop columns).
    """
    check_row_sparsity(rows, net)
    by_owner = {row.owner: row for row in rows}
    if sorted(by_owner) != list(range(net.n)):
        raise ValueError("least squares assembly needs exactly one row per agent")
    agents = [_NormalRowAgent(i, net.neighbors(i), by_owner[i]) for i in range(net.n)]
    trace = run_synchronous(agents, net, max_rounds=1, monitor=Monitor(n_unknowns=net.n))
    return [a.result for a in agents], trace


def random_sparse_rows(net, seed, noise=0.0):
    """Non-symmetric, diagonally dominant ``A`` with the network's sparsity,
    a planted solution, and ``b = A x + noise``. Returns ``(rows, x_true)``."""
    rng = np.random.default_rng(seed)
    n = net.n
    a = np.zeros((n, n))
    for i in range(n):
        for j in net.neighbors(i):
            a[i, j] = rng.uniform(-1.0, 1.0)
        a[i, i] = len(net.neighbors(i)) + rng.uniform(0.5, 1.5)
    x_true = rng.uniform(-1.0, 1.0, size=n)
    b = a @ x_true + noise * rng.standard_normal(n)
    rows = [RowSlice(owner=i, coefficients={j: a[i, j] for j in np.flatnonzero(a[i])}, rhs=[b[i]])
            for i in range(n)]
    return rows, x_true


def random_spd_rows(net, seed, identity=False):
    """Random symmetric positive-definite system with the network's sparsity.

    Off-diagonal entries on edges are uniform in [-1, 1]; the diagonal shift
    puts the smallest eigenvalue in [0.2, 2]. Returns ``(rows, a, b)``.
    """
    rng = np.random.default_rng(seed)
    n = net.n
    if identity:
        a = np.eye(n)
    else:
        s = np.zeros((n, n))
        for i, j in net.edges:
            s[i, j] = s[j, i] = rng.uniform(-1.0, 1.0)
        shift = -np.linalg.eigvalsh(s)[0] + rng.uniform(0.2, 2.0)
        a = s + shift * np.eye(n)
    b = rng.uniform(-1.0, 1.0, size=n)
    rows = [RowSlice(owner=i, coefficients={j: a[i, j] for j in np.flatnonzero(a[i])}, rhs=[b[i]])
            for i in range(n)]
    return rows, a, b


# ---------------------------------------------------------------- noise

@dataclass(frozen=True)
class NoiseModel:
    matrix_noise_scale: float = 0.0
    rhs_noise_scale: float = 0.0
    seed: int = 0
    distribution: str = "uniform"

    def __post_init__(self):
        if self.matrix_noise_scale < 0 or self.rhs_noise_scale < 0:
            raise ValueError("noise scales must be non-negative")
        if self.distribution not in ("uniform", "gaussian"):
            raise ValueError(f"unknown noise distribution {self.distribution!r}")

    def draw(self, rng, scale, size=None):
        if self.distribution == "uniform":
            return rng.uniform(-scale, scale, size=size)
        return rng.normal(0.0, scale, size=size)


def inject_noise(rows, model, target_norm=None):
    """Perturb every existing nonzero and every right-hand-side entry.

    The sparsity pattern is preserved. A symmetric matrix gets a symmetric
    perturbation. With ``target_norm`` the matrix perturbation is rescaled to
    that spectral norm. Returns ``(noisy_rows, lemma_margin)`` where
    ``lemma_margin = lambda_min(A) - ||Delta A||_2`` (``nan`` if ``A`` is not
    SPD).
    """
    rng = np.random.default_rng(model.seed)
    rows = sorted(rows, key=lambda r: r.index)
    a, b = rows_to_dense(rows)
    symmetric = np.array_equal(a, a.T)
    delta = np.zeros_like(a)
    for i, j in zip(*np.nonzero(a)):
        if symmetric and j < i:
            continue
        value = model.draw(rng, model.matrix_noise_scale)
        delta[i, j] = value
        if symmetric:
            delta[j, i] = value
    delta_b = model.draw(rng, model.rhs_noise_scale, size=b.shape)
    norm = linalg.spectral_norm(delta)
    if target_norm is not None:
        if norm == 0.0:
            raise ValueError("cannot rescale a zero perturbation")
        delta *= target_norm / norm
        norm = linalg.spectral_norm(delta)
    try:
        margin = linalg.eigen_extremes_spd(a).lambda_min - norm
    except (NotSymmetric, NotPositiveDefinite):
        margin = float("nan")
    noisy = a + delta
    noisy_b = b + delta_b
    out = [
        RowSlice(owner=row.owner,
                 coefficients={j: noisy[row.index, j] for j in row.coefficients},
                 rhs=noisy_b[row.index], index=row.index)
        for row in rows
    ]
    return out, float(margin)


# ---------------------------------------------------------------- localization

@dataclass(frozen=True)
class BarycentricRow:
    owner: int
    weights: dict

    def __post_init__(self):
        total = sum(self.weights.values())
        if abs(total - 1.0) > WEIGHT_SUM_ATOL:
            raise ValueError(f"barycentric weights sum to {total}, not 1")


@dataclass
class LocalizationScene:
    """Network with ground-truth positions; anchors are agents ``0..m-1``."""

    net: Network
    anchors: tuple
    measured_distances: dict = field(default_factory=dict)

    def __post_init__(self):
        m = len(self.anchors)
        if tuple(self.anchors) != tuple(range(m)):
            raise ValueError("anchors must be the first m agent ids")
        if m < self.net.dim + 1:
            raise ValueError(f"need at least dim + 1 = {self.net.dim + 1} anchors")

    @property
    def dim(self):
        return self.net.dim

    @property
    def m(self):
        return len(self.anchors)

    @property
    def free(self):
        return tuple(range(self.m, self.net.n))

    @property
    def positions(self):
        return self.net.position_array()

    def distance(self, i, j):
        return self.measured_distances[(min(i, j), max(i, j))]

    def local_distances(self, owner):
        """Measured distances among ``owner`` and its neighbors (in-range pairs only)."""
        group = (owner,) + tuple(self.net.neighbors(owner))
        members = set(group)
        return {
            (i, j): d for (i, j), d in self.measured_distances.items()
            if i in members and j in members
        }

    def to_json(self):
        doc = {
            "network": json.loads(self.net.to_json()),
            "anchors": list(self.anchors),
            "measured_distances": [[i, j, d] for (i, j), d in sorted(self.measured_distances.items())],
        }
        return json.dumps(doc, indent=1)

    @classmethod
    def from_json(cls, text):
        doc = json.loads(text)
        net = Network.from_json(json.dumps(doc["network"]))
        dists = {(int(i), int(j)): float(d) for i, j, d in doc["measured_distances"]}
        return cls(net=net, anchors=tuple(doc["anchors"]), measured_distances=dists)


def _affine_condition(points):
    """Condition number of ``[points^T; 1^T]`` for ``dim + 1`` points."""
    s = np.vstack([np.asarray(points, dtype=float).T, np.ones(len(points))])
    return np.linalg.cond(s)


def generate_scene(n, dim, anchors, reception_range, seed, distance_noise=0.0, candidates=200):
    """Random scene: uniform points in the unit hypercube, anchors chosen as the
    best-conditioned ``anchors``-subset among random candidates and relabeled
    to ids ``0..anchors-1``."""
    if anchors < dim + 1:
        raise ValueError(f"need at least dim + 1 = {dim + 1} anchors")
    rng = np.random.default_rng(seed)
    pts = rng.uniform(0.0, 1.0, size=(n, dim))
    best, best_cond = None, np.inf
    for _ in range(candidates):
        subset = np.sort(rng.choice(n, size=anchors, replace=False))
        cond = _affine_condition(pts[subset])
        if cond < best_cond:
            best, best_cond = subset, cond
    rest = [i for i in range(n) if i not in set(best.tolist())]
    order = list(best) + rest
    net = from_positions(pts[order], reception_range)
    true = net.position_array()
    dists = {}
    for i, j in net.edges:
        d = float(np.linalg.norm(true[i] - true[j]))
        if distance_noise:
            d = abs(d + rng.normal(0.0, distance_noise))
        dists[(i, j)] = d
    return LocalizationScene(net=net, anchors=tuple(range(anchors)), measured_distances=dists)


def classical_mds(dist, dim):
    """Coordinates (``k x dim``) reproducing a Euclidean distance matrix."""
    k = dist.shape[0]
    centering = np.eye(k) - np.ones((k, k)) / k
    gram = -0.5 * centering @ (dist ** 2) @ centering
    evals, evecs = np.linalg.eigh(gram)
    order = np.argsort(evals)[::-1][:dim]
    scale = np.sqrt(np.clip(evals[order], 0.0, None))
    return evecs[:, order] * scale


def compute_barycentric_row(owner, local_distances, dim):
    """Barycentric weights of ``owner`` over its neighbors.

    Every mutually in-range ``(dim + 1)``-subset of neighbors is embedded
    together with the owner by classical MDS, and the affine system
    ``sum_j w_j q_j = q_owner``, ``sum_j w_j = 1`` is solved on it. Any affine
    combination of those per-simplex solutions is again a valid weight
    vector; the one returned is the minimum-norm such combination, which
    spreads the weight over as many neighbors as possible.
    """
    dists = {}
    for (i, j), d in local_distances.items():
        dists[(i, j)] = dists[(j, i)] = float(d)
    neighbors = sorted({j for (i, j) in dists if i == owner and j != owner})
    if len(neighbors) < dim + 1:
        raise InsufficientNeighbors(f"agent {owner} has {len(neighbors)} neighbors, needs {dim + 1}")

    position = {j: k for k, j in enumerate(neighbors)}
    solutions = []
    saw_clique = False
    for subset in itertools.combinations(neighbors, dim + 1):
        if any((u, v) not in dists for u, v in itertools.combinations(subset, 2)):
            continue
        saw_clique = True
        group = (owner,) + subset
        dist = np.array([[0.0 if u == v else dists[(u, v)] for v in group] for u in group])
        coords = classical_mds(dist, dim)
        system = np.vstack([coords[1:].T, np.ones(dim + 1)])
        cond = np.linalg.cond(system)
        if not np.isfinite(cond) or cond > BARYCENTRIC_COND_LIMIT:
            continue
        w = np.zeros(len(neighbors))
        w[[position[j] for j in subset]] = linalg.direct_solve(system, np.append(coords[0], 1.0))
        solutions.append(w)
    if not solutions:
        if not saw_clique:
            raise InsufficientNeighbors(f"agent {owner} has no mutually in-range simplex of neighbors")
        raise DegenerateGeometry(f"every neighbor simplex of agent {owner} is degenerate")

    base = solutions[0]
    if len(solutions) > 1:
        spread = np.array(solutions[1:]).T - base[:, None]
        u, sv, _ = np.linalg.svd(spread, full_matrices=False)
        u = u[:, sv > SPAN_RTOL * sv[0]]
        base = base - u @ (u.T @ base)
    return BarycentricRow(owner=owner, weights={j: float(base[position[j]]) for j in neighbors
                                                if base[position[j]] != 0.0})


def barycentric_rows(scene):
    return {i: compute_barycentric_row(i, scene.local_distances(i), scene.dim) for i in scene.free}


def central_localization_system(scene, bary):
    """Dense oracle: ``M = I - C``, ``B``, ``P_A``, ``Omega = M^T M``, ``beta = M^T B P_A``."""
    m, nf = scene.m, len(scene.free)
    c = np.zeros((nf, nf))
    b = np.zeros((nf, m))
    for i in scene.free:
        for j, w in bary[i].weights.items():
            if j < m:
                b[i - m, j] = w
            else:
                c[i - m, j - m] = w
    mat = np.eye(nf) - c
    p_a = scene.positions[:m]
    return {
        "M": mat,
        "B": b,
        "P_A": p_a,
        "Omega": mat.T @ mat,
        "beta": mat.T @ b @ p_a,
    }


class _LocalizationRowAgent(Agent):
    """Two-round assembly of ``Omega_{i,:}`` and ``beta_{i,:}``.

    Round 1: anchors send their positions, free agents their row of ``M``.
    Round 2: free agents send ``mu_i`` (the anchor part of their barycentric
    combination) and finish with ``Omega_{i,:} = sum_k M_ki M_{k,:}`` and
    ``beta_i = sum_k M_ki mu_k``, self term included.
    """

    def __init__(self, agent_id, neighbors, m, bary=None, position=None, dim=2):
        super().__init__(agent_id, neighbors, index=None if bary is None else agent_id - m)
        self.m = m
        self.bary = bary
        self.position = position
        self.dim = dim
        self.round = 0
        self.m_rows = {}
        self.anchor_positions = {}
        self.mu = None
        self.result = None
        if bary is not None:
            row = {self.index: 1.0}
            for j, w in bary.weights.items():
                if j >= m:
                    row[j - m] = row.get(j - m, 0.0) - w
            self.m_row = row

    def outbox(self):
        if self.halted:
            return []
        if self.round == 0:
            if self.bary is None:
                return self.broadcast(StateShare(((self.agent_id, tuple(self.position)),)))
            return self.broadcast(RowShare(self.index, tuple(sorted(self.m_row.items()))))
        return self.broadcast(StateShare(((self.index, tuple(self.mu)),)))

    def receive(self, inbox):
        self.round += 1
        if self.bary is None:
            self.halt("converged")
            return
        if self.round == 1:
            for msg in inbox:
                p = msg.payload
                if isinstance(p, RowShare):
                    self.m_rows[p.index] = dict(p.entries)
                else:
                    for aid, pos in p.entries:
                        self.anchor_positions[aid] = np.asarray(pos, dtype=float)
            self.m_rows[self.index] = self.m_row
            mu = np.zeros(self.dim)
            for j, w in sorted(self.bary.weights.items()):
                if j < self.m:
                    mu = mu + w * self.anchor_positions[j]
            self.mu = mu
            return
        mus = {self.index: self.mu}
        for msg in inbox:
            for k, values in msg.payload.entries:
                mus[k] = np.asarray(values, dtype=float)
        i = self.index
        omega = {}
        beta = np.zeros(self.dim)
        for k in sorted(self.m_rows):
            row_k = self.m_rows[k]
            m_ki = row_k.get(i, 0.0)
            if m_ki == 0.0:
                continue
            for j, m_kj in row_k.items():
                omega[j] = omega.get(j, 0.0) + m_ki * m_kj
            beta = beta + m_ki * mus[k]
        self.result = RowSlice(owner=self.agent_id, coefficients=omega, rhs=beta, index=i)
        self.halt("converged")


def build_localization_rows(scene, bary):
    """Per-free-agent rows of ``Omega = M^T M`` and ``beta = M^T B P_A``.

    Returns ``(rows, trace)``; row ``index`` is the free agent's position in
    ``scene.free``.
    """
    m = scene.m
    pos = scene.positions
    for i in scene.free:
        nbrs = set(scene.net.neighbors(i))
        if not set(bary[i].weights) <= nbrs:
            raise SparsityViolation(f"barycentric weights of agent {i} use non-neighbors")
    agents = []
    for i in range(scene.net.n):
        nbrs = scene.net.neighbors(i)
        if i < m:
            agents.append(_LocalizationRowAgent(i, nbrs, m, position=pos[i], dim=scene.dim))
        else:
            agents.append(_LocalizationRowAgent(i, nbrs, m, bary=bary[i], dim=scene.dim))
    monitor = Monitor(n_unknowns=len(scene.free), dim=scene.dim)
    trace = run_synchronous(agents, scene.net, max_rounds=2, monitor=monitor)
    return [a.result for a in agents[m:]], trace


@dataclass
class LocalizationResult:
    estimates: dict
    trace: object
    rows: list
    horizon: int = 0


def dcg_loc(scene, config=None, bary=None, snapshots=False):
    """Localize every free agent with DCG; anchors relay the synchronization.

    Returns a :class:`LocalizationResult` whose ``estimates`` maps free agent
    id to its estimated position.
    """
    config = config or SolverConfig()
    if not scene.free:
        return LocalizationResult(estimates={}, trace=None, rows=[])
    bary = bary if bary is not None else barycentric_rows(scene)
    rows, _ = build_localization_rows(scene, bary)
    truth = scene.positions[scene.m:]
    trace, agents, horizon = run_dcg(rows, scene.net, config, ground_truth=truth, snapshots=snapshots)
    estimates = {a.agent_id: a.estimate().copy() for a in agents if a.index is not None}
    return LocalizationResult(estimates=estimates, trace=trace, rows=rows, horizon=horizon)
