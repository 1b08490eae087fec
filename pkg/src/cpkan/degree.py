"""Per-neuron polynomial degree selection.

A layer's degree problem is summarised by a cost matrix ``costs[i, d]``:
the least-squares MSE of neuron ``i`` fitted at degree ``d`` (plus an
optional linear complexity penalty). Four solvers pick one degree per
neuron from it:

* ``qubo-sa`` - one-hot QUBO solved by simulated annealing
* ``exact`` - per-neuron argmin (the one-hot integer program decomposes)
* ``evolutionary`` - genetic search over degree vectors
* ``greedy`` - increasing-degree scan with a relative-improvement stop
"""

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .anneal import anneal_kernel
from .errors import InvalidInputError
from .lstsq import fit_coeffs
from .network import cumulative_transform

SOLVERS = ("qubo-sa", "exact", "evolutionary", "greedy")
METHOD_NAMES = {"qubo-sa": "QUBO-SA", "exact": "Exact",
                "evolutionary": "Evolutionary", "greedy": "Greedy"}

# costs within this relative distance count as ties (broken toward lower degree)
TIE_RTOL = 1e-12


@dataclass
class CostMatrix:
    costs: np.ndarray
    fitted_coeffs: list
    complexity_weight: float = 0.0
    ridge_fallbacks: int = 0

    @property
    def n_neurons(self):
        return self.costs.shape[0]

    @property
    def max_degree(self):
        return self.costs.shape[1] - 1

    def total(self, degrees):
        degrees = np.asarray(degrees, dtype=int)
        return float(self.costs[np.arange(self.n_neurons), degrees].sum())

    def to_csv(self):
        header = "neuron," + ",".join(f"d{d}" for d in range(self.max_degree + 1))
        rows = [f"{i}," + ",".join(repr(float(v)) for v in row) for i, row in enumerate(self.costs)]
        return "\n".join([header] + rows) + "\n"


@dataclass
class DegreeAssignment:
    degrees: np.ndarray
    total_cost: float
    method: str
    details: dict = field(default_factory=dict)


@dataclass
class AnnealSchedule:
    t_initial: float
    t_final: float
    sweeps: int = 200
    restarts: int = 8
    seed: int = 0
    pair_prob: float = 0.5

    def __post_init__(self):
        if not (self.t_initial > 0 and 0 < self.t_final < self.t_initial):
            raise InvalidInputError(f"need 0 < t_final < t_initial, got {self.t_final}, {self.t_initial}")
        if self.sweeps < 1 or self.restarts < 1:
            raise InvalidInputError("sweeps and restarts must be positive")
        if not 0.0 <= self.pair_prob <= 1.0:
            raise InvalidInputError(f"pair_prob must lie in [0, 1], got {self.pair_prob}")

    @property
    def cooling_factor(self):
        return (self.t_final / self.t_initial) ** (1.0 / self.sweeps)

    def temperatures(self):
        return self.t_initial * self.cooling_factor ** np.arange(self.sweeps)


def _check_costs(cost):
    costs = cost.costs if isinstance(cost, CostMatrix) else np.asarray(cost, dtype=float)
    if costs.ndim != 2 or costs.shape[0] < 1 or costs.shape[1] < 1:
        raise InvalidInputError(f"cost matrix must be 2-D and non-empty, got {costs.shape}")
    return costs


def _tie_tol(row):
    return TIE_RTOL * max(1.0, float(np.max(np.abs(row))))


def _lowest_tied(row, d):
    """Smallest degree whose cost is within tolerance of ``row[d]`` or better."""
    return int(np.flatnonzero(row <= row[d] + _tie_tol(row))[0])


def _as_cost_matrix(cost):
    if isinstance(cost, CostMatrix):
        return cost
    costs = _check_costs(cost)
    return CostMatrix(costs, [[None] * costs.shape[1] for _ in range(costs.shape[0])])


# -- cost matrix ----------------------------------------------------------------

def build_cost_matrix(layer, X, Y, max_degree, complexity_weight=0.0, ridge=0.0,
                      squash_mode="tanh", threads=1, weights=None):
    """Fit every (neuron, degree) pair of ``layer`` and tabulate the MSEs.

    ``Y`` holds one target column per neuron. Entry ``(i, d)`` is the MSE of
    regressing ``Y[:, i]`` on the first ``d + 1`` Chebyshev columns of
    neuron ``i``'s projection, plus ``complexity_weight * d``. With
    ``weights`` the rows are scaled by ``sqrt(w / mean(w))`` so each entry
    becomes a weighted MSE.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    if X.shape[0] < 1:
        raise InvalidInputError("empty batch")
    if Y.shape != (X.shape[0], layer.n_out):
        raise InvalidInputError(f"targets must be ({X.shape[0]}, {layer.n_out}), got {Y.shape}")
    if max_degree < 0 or complexity_weight < 0:
        raise InvalidInputError("max_degree and complexity_weight must be non-negative")

    scale = None
    if weights is not None:
        w = np.asarray(weights, dtype=float).ravel()
        if w.size != X.shape[0] or np.any(w < 0) or not w.sum() > 0:
            raise InvalidInputError("weights must be non-negative, one per row, with positive sum")
        scale = np.sqrt(w / w.mean())

    def row(i):
        phi = cumulative_transform(layer.neuron(i), X, max_degree, squash_mode)
        y = Y[:, i]
        if scale is not None:
            phi, y = phi * scale[:, None], y * scale
        return [fit_coeffs(phi[:, : d + 1], y, ridge) for d in range(max_degree + 1)]

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            rows = list(pool.map(row, range(layer.n_out)))
    else:
        rows = [row(i) for i in range(layer.n_out)]
    penalty = complexity_weight * np.arange(max_degree + 1)
    costs = np.array([[f.mse for f in fits] for fits in rows]) + penalty
    coeffs = [[f.coeffs for f in fits] for fits in rows]
    fallbacks = sum(f.ridge_used > ridge for fits in rows for f in fits)
    return CostMatrix(costs, coeffs, complexity_weight, fallbacks)


# -- QUBO -----------------------------------------------------------------------

@dataclass
class QuboProblem:
    """One-hot degree QUBO.

    Variable ``i * (D + 1) + d`` is 1 when neuron ``i`` takes degree ``d``.
    ``quad_i < quad_j`` index the upper-triangular couplings; ``offset`` is
    the constant left over from expanding the one-hot penalty, so
    :func:`qubo_energy` reproduces the penalised objective exactly.
    """

    n_neurons: int
    n_degrees: int
    linear: np.ndarray
    quad_i: np.ndarray
    quad_j: np.ndarray
    quad_v: np.ndarray
    offset: float
    penalty_alpha: float
    cost: CostMatrix

    @property
    def num_vars(self):
        return self.n_neurons * self.n_degrees

    @property
    def quadratic(self):
        return {(int(i), int(j)): float(v) for i, j, v in zip(self.quad_i, self.quad_j, self.quad_v)}

    def var_index(self, neuron, degree):
        return neuron * self.n_degrees + degree

    def var_key(self, index):
        return divmod(int(index), self.n_degrees)

    def one_hot(self, degrees):
        bits = np.zeros(self.num_vars, dtype=np.int8)
        bits[np.arange(self.n_neurons) * self.n_degrees + np.asarray(degrees, dtype=int)] = 1
        return bits

    def to_text(self):
        """Sparse export: header then ``i j coeff`` per term (``i == j`` for linear)."""
        lines = [f"# vars {self.num_vars} offset {self.offset!r}"]
        lines += [f"{j} {j} {v!r}" for j, v in enumerate(self.linear.tolist())]
        lines += [f"{i} {j} {v!r}" for i, j, v in
                  zip(self.quad_i.tolist(), self.quad_j.tolist(), self.quad_v.tolist())]
        return "\n".join(lines) + "\n"

    def _adjacency(self):
        m = self.num_vars
        rows = np.concatenate([self.quad_i, self.quad_j])
        cols = np.concatenate([self.quad_j, self.quad_i])
        vals = np.concatenate([self.quad_v, self.quad_v])
        order = np.lexsort((cols, rows))
        rows, cols, vals = rows[order], cols[order], vals[order]
        ptr = np.zeros(m + 1, dtype=np.int64)
        np.add.at(ptr, rows + 1, 1)
        return np.cumsum(ptr), cols.astype(np.int64), vals.astype(float)


def default_penalty(cost):
    """Penalty weight that makes every infeasible string lose to the best one-hot string.

    ``2 * max(spread, max row-minimum) + 1``: the spread term dominates
    multi-bit groups and the row-minimum term keeps an empty group (which
    costs exactly ``alpha``) above the group's best degree.
    """
    costs = _check_costs(cost)
    spread = float(np.max(costs.max(axis=1) - costs.min(axis=1)))
    floor = float(np.max(costs.min(axis=1)))
    return 2.0 * max(spread, floor) + 1.0


def build_qubo(cost, penalty_alpha=None):
    """Expand ``sum c q + alpha sum_i (sum_d q - 1)^2`` into QUBO form.

    Using ``q^2 = q``: linear terms ``c[i, d] - alpha``, couplings
    ``2 alpha`` between every pair of degrees of one neuron, and a constant
    ``N alpha``.
    """
    cost = _as_cost_matrix(cost)
    costs = _check_costs(cost)
    if penalty_alpha is None:
        penalty_alpha = default_penalty(costs)
    if not penalty_alpha > 0:
        raise InvalidInputError(f"penalty_alpha must be positive, got {penalty_alpha}")
    n, k = costs.shape
    iu, ju = np.triu_indices(k, 1)
    base = (np.arange(n) * k)[:, None]
    quad_i = (base + iu).ravel()
    quad_j = (base + ju).ravel()
    return QuboProblem(n, k, costs.ravel() - penalty_alpha, quad_i, quad_j,
                       np.full(quad_i.size, 2.0 * penalty_alpha), n * penalty_alpha,
                       float(penalty_alpha), cost)


def qubo_energy(q, bits):
    bits = np.asarray(bits, dtype=float).ravel()
    if bits.size != q.num_vars:
        raise InvalidInputError(f"bitstring length {bits.size} != {q.num_vars} variables")
    return float(q.linear @ bits + q.quad_v @ (bits[q.quad_i] * bits[q.quad_j]) + q.offset)


def decode_assignment(q, bits, cost=None):
    """Read one degree per neuron from a bitstring, repairing broken groups.

    An empty group takes the group's cheapest degree; a group with several
    bits set keeps the cheapest of those. Repairs are counted in
    ``details["repairs"]``.
    """
    cost = q.cost if cost is None else _as_cost_matrix(cost)
    costs = _check_costs(cost)
    bits = np.asarray(bits).ravel()
    if bits.size != q.num_vars:
        raise InvalidInputError(f"bitstring length {bits.size} != {q.num_vars} variables")
    groups = bits.reshape(q.n_neurons, q.n_degrees).astype(bool)
    degrees = np.empty(q.n_neurons, dtype=int)
    repairs = 0
    for i, g in enumerate(groups):
        on = np.flatnonzero(g)
        if on.size == 1:
            degrees[i] = on[0]
            continue
        repairs += 1
        candidates = on if on.size else np.arange(q.n_degrees)
        degrees[i] = candidates[np.argmin(costs[i, candidates])]
    return DegreeAssignment(degrees, cost.total(degrees), METHOD_NAMES["qubo-sa"], {"repairs": repairs})


def default_schedule(cost, seed=0, sweeps=200, restarts=8):
    """``t_initial`` = largest row spread, ``t_final`` = 1e-4 of that."""
    costs = _check_costs(cost)
    spread = float(np.max(costs.max(axis=1) - costs.min(axis=1)))
    t0 = spread if spread > 0 else 1.0
    return AnnealSchedule(t0, 1e-4 * t0, sweeps, restarts, seed)


def _one_restart(q, schedule, adjacency, restart):
    rng = np.random.default_rng([schedule.seed, restart])
    m = q.num_vars
    n_prop = schedule.sweeps * m
    start = rng.integers(0, q.n_degrees, size=q.n_neurons)
    bits = q.one_hot(start)
    prop_var = rng.integers(0, m, size=n_prop)
    prop_pair = rng.random(n_prop)
    prop_partner = rng.integers(0, 2**31 - 1, size=n_prop)
    prop_accept = rng.random(n_prop)
    group_start = np.arange(q.n_neurons, dtype=np.int64) * q.n_degrees
    group_size = np.full(q.n_neurons, q.n_degrees, dtype=np.int64)
    var_group = np.repeat(np.arange(q.n_neurons, dtype=np.int64), q.n_degrees)
    ptr, idx, val = adjacency
    best, _ = anneal_kernel(bits, q.linear, ptr, idx, val, group_start, group_size, var_group,
                            schedule.temperatures(), prop_var, prop_pair, prop_partner,
                            prop_accept, schedule.pair_prob, qubo_energy(q, bits))
    return best, qubo_energy(q, best)


def solve_sa(q, schedule=None, threads=1):
    """Simulated annealing over the QUBO, best state over all restarts.

    Each restart starts from a random valid one-hot string and draws its
    randomness from ``(seed, restart)``, so the result does not depend on
    ``threads``. Energies are recomputed exactly before comparison; ties go
    to the lower restart index.
    """
    if schedule is None:
        schedule = default_schedule(q.cost)
    adjacency = q._adjacency()
    run = lambda r: _one_restart(q, schedule, adjacency, r)
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(run, range(schedule.restarts)))
    else:
        results = [run(r) for r in range(schedule.restarts)]
    energies = [e for _, e in results]
    best = int(np.argmin(energies))
    result = decode_assignment(q, results[best][0])
    costs = q.cost.costs
    result.degrees = np.array([_lowest_tied(costs[i], d) for i, d in enumerate(result.degrees)])
    result.total_cost = q.cost.total(result.degrees)
    result.details.update(energy=energies[best], restart=best, restart_energies=energies)
    return result


# -- classical solvers ---------------------------------------------------------------

def solve_exact(cost):
    """Per-neuron argmin, ties toward the smaller degree.

    The one-hot integer program has no coupling between neurons, so
    solving each row independently is globally optimal.
    """
    cost = _as_cost_matrix(cost)
    costs = _check_costs(cost)
    degrees = np.array([_lowest_tied(row, int(np.argmin(row))) for row in costs])
    return DegreeAssignment(degrees, cost.total(degrees), METHOD_NAMES["exact"])


def _tournament(rng, fitness, size=3):
    contenders = rng.integers(0, fitness.size, size=size)
    return contenders[np.argmin(fitness[contenders])]


def solve_evolutionary(cost, pop_size=50, generations=30, crossover_rate=0.9,
                       mutation_rate=0.1, elitism=1, seed=0):
    """Genetic search over degree vectors; fitness is the summed cost.

    Tournament selection (size 3), single-point crossover, per-gene
    uniform mutation. The ``elitism`` fittest individuals pass to the next
    generation unchanged and in their original order.
    """
    cost = _as_cost_matrix(cost)
    costs = _check_costs(cost)
    if pop_size < 2 or generations < 0 or not 0 <= elitism <= pop_size:
        raise InvalidInputError("need pop_size >= 2, generations >= 0 and 0 <= elitism <= pop_size")
    if not (0 <= crossover_rate <= 1 and 0 <= mutation_rate <= 1):
        raise InvalidInputError("rates must lie in [0, 1]")
    n, k = costs.shape
    rows = np.arange(n)
    rng = np.random.default_rng(seed)

    def fitness_of(pop):
        return costs[rows, pop].sum(axis=1)

    pop = rng.integers(0, k, size=(pop_size, n))
    initial = pop.copy()
    fit = fitness_of(pop)
    best = pop[np.argmin(fit)].copy()
    best_fit = fit.min()
    initial_best = best_fit
    for _ in range(generations):
        elite = np.sort(np.argsort(fit, kind="stable")[:elitism])
        children = [pop[i].copy() for i in elite]
        while len(children) < pop_size:
            a = pop[_tournament(rng, fit)].copy()
            b = pop[_tournament(rng, fit)].copy()
            if n > 1 and rng.random() < crossover_rate:
                cut = rng.integers(1, n)
                a[cut:], b[cut:] = b[cut:].copy(), a[cut:].copy()
            for child in (a, b):
                mutate = rng.random(n) < mutation_rate
                child[mutate] = rng.integers(0, k, size=int(mutate.sum()))
                if len(children) < pop_size:
                    children.append(child)
        pop = np.array(children)
        fit = fitness_of(pop)
        if fit.min() < best_fit:
            best_fit = fit.min()
            best = pop[np.argmin(fit)].copy()
    degrees = np.array([_lowest_tied(costs[i], d) for i, d in enumerate(best)])
    return DegreeAssignment(degrees, cost.total(degrees), METHOD_NAMES["evolutionary"],
                            {"initial_best": float(initial_best), "initial_population": initial,
                             "final_population": pop})


def solve_greedy(cost, improvement_threshold=0.01):
    """Scan degrees upward per neuron and stop once gains flatten.

    The scan stops after degree ``d`` when the relative improvement
    ``(cost[d-1] - cost[d]) / cost[d-1]`` falls below the threshold, or when
    ``cost[d-1]`` is already zero. A threshold of 0 disables early stopping.
    """
    cost = _as_cost_matrix(cost)
    costs = _check_costs(cost)
    if not 0 <= improvement_threshold < 1:
        raise InvalidInputError(f"improvement_threshold must lie in [0, 1), got {improvement_threshold}")
    degrees = np.zeros(costs.shape[0], dtype=int)
    scanned = []
    for i, row in enumerate(costs):
        best = 0
        last = 0
        for d in range(1, row.size):
            last = d
            if row[d] < row[best]:
                best = d
            if improvement_threshold > 0:
                prev = row[d - 1]
                if prev == 0 or (prev - row[d]) / prev < improvement_threshold:
                    break
        degrees[i] = _lowest_tied(row, best)
        scanned.append(last)
    return DegreeAssignment(degrees, cost.total(degrees), METHOD_NAMES["greedy"],
                            {"last_scanned": scanned})


def solve(cost, solver, *, penalty_alpha=None, schedule=None, seed=0, threads=1,
          greedy_threshold=0.01, evo_params=None):
    """Dispatch to one of :data:`SOLVERS` and record wall time."""
    t0 = time.perf_counter()
    if solver == "qubo-sa":
        q = build_qubo(cost, penalty_alpha)
        result = solve_sa(q, schedule or default_schedule(cost, seed=seed), threads=threads)
    elif solver == "exact":
        result = solve_exact(cost)
    elif solver == "evolutionary":
        result = solve_evolutionary(cost, seed=seed, **(evo_params or {}))
    elif solver == "greedy":
        result = solve_greedy(cost, greedy_threshold)
    else:
        raise InvalidInputError(f"unknown solver {solver!r}; choose from {SOLVERS}")
    result.details["wall_ms"] = 1e3 * (time.perf_counter() - t0)
    return result
