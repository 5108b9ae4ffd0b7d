"""Ground-truth machinery for validating the samplers.

Three independent checks live here: an exact stationary analysis of the
resampling process on tiny samples (full 2^n subset state space), a
high-replication Monte Carlo estimate of field-design inclusion
probabilities, and a synthetic population generator for desk-scale
experiments where no restricted survey data are available.

The exact analysis shares only the Bernoulli rule constants with the
resampler (per-link tracing rate, per-node re-seeding rate, and the adaptive
removal rate); the set-to-set transition probabilities are derived
independently here so the oracle tests the chain rather than duplicating its
implementation.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import ConfigurationError, InvariantError
from .fieldsim import DesignConfig, SampleNetwork, run_survey
from .netpop import AttributeTable, PopulationGraph, from_edge_pairs
from .resampler import ResampleConfig, removal_prob

__all__ = [
    "StationaryResult",
    "FieldInclusionEstimate",
    "AttributeSpec",
    "SyntheticPopSpec",
    "exact_process_stationary",
    "mc_field_inclusion",
    "gen_population",
    "MAX_EXACT_NODES",
]

MAX_EXACT_NODES = 12


@dataclass(frozen=True)
class StationaryResult:
    """Exact stationary distribution of the resampling process.

    ``stationary[mask]`` is the long-run probability of the member subset
    encoded by bitmask ``mask`` (bit i = local member i present).
    """

    n: int
    stationary: np.ndarray
    marginals: np.ndarray
    pair_marginals: dict[tuple[int, int], float]
    iterations: int
    residual: float


@dataclass(frozen=True)
class FieldInclusionEstimate:
    """Monte Carlo estimate of first-stage inclusion probabilities."""

    pi: np.ndarray
    se: np.ndarray
    replications: int


def _neighbor_masks(sample: SampleNetwork) -> np.ndarray:
    masks = np.zeros(sample.n, dtype=np.int64)
    for a, b in sample.trace_edges:
        masks[a] |= 1 << int(b)
        masks[b] |= 1 << int(a)
    return masks


def exact_process_stationary(
    sample: SampleNetwork, cfg: ResampleConfig
) -> StationaryResult:
    """Solve the resampling process exactly on the 2^n subset space.

    Builds the one-step kernel as growth (independent per-node joins, where
    a non-member with L traceable links into the current set joins with
    probability 1 - (1-trace_p)^L * (1-reseed_p)) followed by thinning
    (independent removal at the adaptive rate), then power-iterates to the
    stationary distribution with an L1 residual below 1e-12.
    """
    if cfg.mode != "process":
        raise ConfigurationError("exact analysis applies to mode='process'")
    n = sample.n
    if n > MAX_EXACT_NODES:
        raise ConfigurationError(
            f"exact state space capped at {MAX_EXACT_NODES} nodes, got {n}"
        )
    if cfg.reseed_p == 0.0:
        raise ConfigurationError(
            "with reseed_p = 0 the process is reducible: the empty set is "
            "absorbing (sole closed class, stationary mass 1), so no useful "
            "global stationary distribution exists"
        )
    cfg.validate_for(n)

    n_states = 1 << n
    nbr_mask = _neighbor_masks(sample)
    popcount = np.array([bin(m).count("1") for m in range(n_states)], dtype=np.int64)
    keep_stay = 1.0 - cfg.trace_p
    keep_seed = 1.0 - cfg.reseed_p

    grow_rows, grow_cols, grow_probs = [], [], []
    thin_rows, thin_cols, thin_probs = [], [], []
    for state in range(n_states):
        # growth: each non-member joins independently
        masks = np.array([state], dtype=np.int64)
        probs = np.array([1.0])
        for v in range(n):
            if state >> v & 1:
                continue
            links_in = bin(state & int(nbr_mask[v])).count("1")
            join = 1.0 - keep_stay**links_in * keep_seed
            masks = np.concatenate([masks, masks | (1 << v)])
            probs = np.concatenate([probs * (1.0 - join), probs * join])
        grow_rows.extend([state] * len(masks))
        grow_cols.extend(masks.tolist())
        grow_probs.extend(probs.tolist())

        # thinning: members removed independently at the adaptive rate
        q = removal_prob(int(popcount[state]), cfg.target_m)
        if q == 0.0:
            thin_rows.append(state)
            thin_cols.append(state)
            thin_probs.append(1.0)
        else:
            masks = np.array([0], dtype=np.int64)
            probs = np.array([1.0])
            for v in range(n):
                if state >> v & 1:
                    masks = np.concatenate([masks, masks | (1 << v)])
                    probs = np.concatenate([probs * q, probs * (1.0 - q)])
            thin_rows.extend([state] * len(masks))
            thin_cols.extend(masks.tolist())
            thin_probs.extend(probs.tolist())

    grow_t = sp.coo_matrix(
        (grow_probs, (grow_cols, grow_rows)), shape=(n_states, n_states)
    ).tocsr()
    thin_t = sp.coo_matrix(
        (thin_probs, (thin_cols, thin_rows)), shape=(n_states, n_states)
    ).tocsr()

    x = np.full(n_states, 1.0 / n_states)
    residual = np.inf
    max_iter = 500_000
    for it in range(1, max_iter + 1):
        x_next = thin_t @ (grow_t @ x)
        x_next /= x_next.sum()
        residual = float(np.abs(x_next - x).sum())
        x = x_next
        if residual <= 1e-12:
            break
    else:
        raise InvariantError(
            f"power iteration did not converge (residual {residual:.2e})"
        )

    states = np.arange(n_states)
    marginals = np.array(
        [float(x[(states >> v & 1) == 1].sum()) for v in range(n)]
    )
    pair_marginals = {}
    for a, b in sample.trace_edges:
        both = ((states >> int(a) & 1) == 1) & ((states >> int(b) & 1) == 1)
        pair_marginals[(int(a), int(b))] = float(x[both].sum())
    return StationaryResult(
        n=n,
        stationary=x,
        marginals=marginals,
        pair_marginals=pair_marginals,
        iterations=it,
        residual=residual,
    )


def mc_field_inclusion(
    graph: PopulationGraph,
    cfg: DesignConfig,
    replications: int,
    rng_seed,
    seed_nodes=None,
) -> FieldInclusionEstimate:
    """Estimate per-node field inclusion probabilities by replication.

    Runs the field survey ``replications`` times with independent sub-seeds
    and counts inclusions; standard errors are binomial.
    """
    if replications < 1:
        raise ConfigurationError("replications must be >= 1")
    root = (
        rng_seed
        if isinstance(rng_seed, np.random.SeedSequence)
        else np.random.SeedSequence(rng_seed)
    )
    counts = np.zeros(graph.n_nodes, dtype=np.int64)
    for child in root.spawn(replications):
        sample = run_survey(graph, None, cfg, child, seed_nodes=seed_nodes)
        counts[sample.members] += 1
    pi = counts / replications
    se = np.sqrt(pi * (1.0 - pi) / replications)
    return FieldInclusionEstimate(pi=pi, se=se, replications=replications)


@dataclass(frozen=True)
class AttributeSpec:
    """Binary attribute: target prevalence and link homophily in [0, 1].

    Homophily h plants a fraction h of the positive group as a breadth-first
    ball around a random start (linked nodes tend to share the attribute);
    the rest is assigned uniformly.
    """

    name: str
    prevalence: float
    homophily: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.prevalence <= 1.0:
            raise ConfigurationError("prevalence must be in [0, 1]")
        if not 0.0 <= self.homophily <= 1.0:
            raise ConfigurationError("homophily must be in [0, 1]")


@dataclass(frozen=True)
class SyntheticPopSpec:
    """Recipe for a synthetic population graph plus attributes.

    ``degree_model='configuration'`` samples a degree sequence (geometric,
    poisson, or constant around mean_degree, clamped at min_degree), matches
    stubs, and erases self-loops/multi-edges. ``'two_component'`` builds two
    disconnected uniform random components with the given sizes and mean
    degrees.
    """

    n_nodes: int = 2000
    degree_model: str = "configuration"
    mean_degree: float = 8.0
    degree_distribution: str = "geometric"
    min_degree: int = 1
    component_sizes: tuple[int, int] = (1000, 1000)
    component_mean_degrees: tuple[float, float] = (12.0, 4.0)
    attributes: tuple[AttributeSpec, ...] = ()

    def __post_init__(self):
        if self.degree_model not in ("configuration", "two_component"):
            raise ConfigurationError(f"unknown degree_model {self.degree_model!r}")
        if self.degree_model == "configuration":
            if self.n_nodes < 2:
                raise ConfigurationError("n_nodes must be >= 2")
            if not 0 < self.mean_degree <= self.n_nodes - 1:
                raise ConfigurationError("mean_degree must be in (0, n_nodes-1]")
            if self.degree_distribution not in ("geometric", "poisson", "constant"):
                raise ConfigurationError(
                    f"unknown degree_distribution {self.degree_distribution!r}"
                )
        else:
            if any(s < 2 for s in self.component_sizes):
                raise ConfigurationError("component sizes must be >= 2")
            for size, deg in zip(self.component_sizes, self.component_mean_degrees):
                if not 0 < deg <= size - 1:
                    raise ConfigurationError(
                        "component mean degree must be in (0, size-1]"
                    )


def _degree_sequence(spec: SyntheticPopSpec, rng: np.random.Generator) -> np.ndarray:
    n = spec.n_nodes
    if spec.degree_distribution == "geometric":
        # support {0, 1, ...} with the requested mean, then clamp
        deg = rng.geometric(1.0 / (spec.mean_degree + 1.0), size=n) - 1
    elif spec.degree_distribution == "poisson":
        deg = rng.poisson(spec.mean_degree, size=n)
    else:
        deg = np.full(n, int(round(spec.mean_degree)))
    deg = np.maximum(deg, spec.min_degree).astype(np.int64)
    deg = np.minimum(deg, n - 1)
    if deg.sum() % 2 == 1:
        deg[rng.integers(n)] += 1
    return deg


def _uniform_component_pairs(
    offset: int, size: int, mean_degree: float, rng: np.random.Generator
) -> list[tuple[int, int]]:
    n_edges = int(round(size * mean_degree / 2.0))
    chosen: set[tuple[int, int]] = set()
    while len(chosen) < n_edges:
        need = n_edges - len(chosen)
        a = rng.integers(0, size, size=2 * need + 8)
        b = rng.integers(0, size, size=2 * need + 8)
        for i in range(len(a)):
            if a[i] == b[i]:
                continue
            pair = (int(min(a[i], b[i])), int(max(a[i], b[i])))
            chosen.add(pair)
            if len(chosen) == n_edges:
                break
    return [(offset + a, offset + b) for a, b in sorted(chosen)]


def _assign_attribute(
    graph: PopulationGraph, spec: AttributeSpec, rng: np.random.Generator
) -> np.ndarray:
    n = graph.n_nodes
    k_total = int(round(spec.prevalence * n))
    values = np.zeros(n)
    if k_total == 0:
        return values
    k_planted = int(round(spec.homophily * k_total))
    assigned: list[int] = []
    visited = np.zeros(n, dtype=bool)
    while len(assigned) < k_planted:
        start = int(rng.choice(np.nonzero(~visited)[0]))
        queue = deque([start])
        visited[start] = True
        while queue and len(assigned) < k_planted:
            node = queue.popleft()
            assigned.append(node)
            for nbr in graph.neighbors(node):
                if not visited[nbr]:
                    visited[nbr] = True
                    queue.append(int(nbr))
    remaining = np.nonzero(~np.isin(np.arange(n), assigned))[0]
    extra = rng.choice(remaining, size=k_total - len(assigned), replace=False)
    values[assigned] = 1.0
    values[extra] = 1.0
    return values


def gen_population(
    spec: SyntheticPopSpec, rng_seed
) -> tuple[PopulationGraph, AttributeTable]:
    """Generate a synthetic population; deterministic for a fixed seed."""
    rng = np.random.default_rng(rng_seed)
    if spec.degree_model == "configuration":
        deg = _degree_sequence(spec, rng)
        stubs = np.repeat(np.arange(spec.n_nodes, dtype=np.int64), deg)
        rng.shuffle(stubs)
        pairs = list(zip(stubs[0::2].tolist(), stubs[1::2].tolist()))
        n = spec.n_nodes
    else:
        size_a, size_b = spec.component_sizes
        deg_a, deg_b = spec.component_mean_degrees
        pairs = _uniform_component_pairs(0, size_a, deg_a, rng)
        pairs += _uniform_component_pairs(size_a, size_b, deg_b, rng)
        n = size_a + size_b
    graph = from_edge_pairs(pairs, n)
    names = tuple(a.name for a in spec.attributes)
    values = {a.name: _assign_attribute(graph, a, rng) for a in spec.attributes}
    return graph, AttributeTable(names=names, values=values)
