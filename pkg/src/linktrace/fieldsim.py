"""First-stage field survey: coupon-limited link-tracing recruitment.

The survey runs in discrete days. Members hold coupons (at most coupon_max,
fewer if they have fewer partners); each live coupon fires on a given day
with probability redeem_prob and recruits a uniformly chosen not-yet-sampled
partner of its holder. Coupons expire a fixed number of days after issue.
If the recruitment frontier dies out before the target size is reached,
fresh uniform seeds are added so the survey always completes. Recruitment
halts the instant the target is reached; same-day surplus recruits are
rejected uniformly at random (firing coupons are processed in a uniformly
shuffled order and cut off at the target).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DataError, InvariantError
from .netpop import AttributeTable, PopulationGraph, derived_variable

__all__ = [
    "DesignConfig",
    "SampleNetwork",
    "DESIGN_NAMES",
    "run_survey",
    "augment_plus",
    "save_sample",
    "load_sample",
]

DESIGN_NAMES = ("RDS", "RDS+", "SB", "SB+")

# Fraction of target_n added as fresh seeds on a day with an empty frontier.
RESEED_FRACTION = 0.01
_MAX_DAYS = 1_000_000


@dataclass(frozen=True)
class DesignConfig:
    """Field design parameters.

    ``redeem_prob`` is the per-coupon per-day redemption probability; the
    default 0.10 makes redemption within a 28-day expiry window roughly a
    95% event, which keeps growth branching without being instantaneous.
    """

    target_n: int = 1200
    seed_fraction: float = 0.20
    coupon_max: int = 3
    coupon_expiry_days: int = 28
    redeem_prob: float = 0.10
    plus_links: bool = False

    def __post_init__(self):
        if self.target_n < 1:
            raise ConfigurationError("target_n must be >= 1")
        if not 0.0 < self.seed_fraction <= 1.0:
            raise ConfigurationError("seed_fraction must be in (0, 1]")
        if self.coupon_max < 1:
            raise ConfigurationError("coupon_max must be >= 1")
        if self.coupon_expiry_days < 1:
            raise ConfigurationError("coupon_expiry_days must be >= 1")
        if not 0.0 < self.redeem_prob <= 1.0:
            raise ConfigurationError("redeem_prob must be in (0, 1]")

    @classmethod
    def for_design(cls, name: str, **overrides) -> "DesignConfig":
        """Preset for one of RDS, RDS+, SB, SB+ (coupon cap 3 or 15)."""
        if name not in DESIGN_NAMES:
            raise ConfigurationError(f"unknown design {name!r}; choose from {DESIGN_NAMES}")
        base = {"coupon_max": 15 if name.startswith("SB") else 3,
                "plus_links": name.endswith("+")}
        base.update(overrides)
        return cls(**base)


@dataclass(frozen=True)
class SampleNetwork:
    """Result of one field survey over a population graph.

    Members are stored in recruitment order with local indices 0..n-1;
    ``recruiter[i]`` is the local index of member i's recruiter, or -1 for a
    seed. ``plus_edges`` holds extra within-sample population links (local
    index pairs, i < j) revealed by a "+" design. ``degrees`` is the
    population degree of each member, standing in for accurate self-report.
    """

    members: np.ndarray
    recruiter: np.ndarray
    recruit_day: np.ndarray
    degrees: np.ndarray
    plus_edges: np.ndarray
    y: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.members)

    @property
    def seed_mask(self) -> np.ndarray:
        return self.recruiter < 0

    @property
    def recruitment_edges(self) -> np.ndarray:
        """Directed (recruiter, recruit) pairs in local indices."""
        recruits = np.nonzero(self.recruiter >= 0)[0]
        return np.column_stack([self.recruiter[recruits], recruits])

    @cached_property
    def trace_edges(self) -> np.ndarray:
        """Undirected traceable edges (local pairs, i < j): symmetrized
        recruitment links plus any plus-edges."""
        rec = self.recruitment_edges
        parts = []
        if len(rec):
            parts.append(np.sort(rec, axis=1))
        if len(self.plus_edges):
            parts.append(np.asarray(self.plus_edges, dtype=np.int64))
        if not parts:
            return np.empty((0, 2), dtype=np.int64)
        edges = np.unique(np.concatenate(parts, axis=0), axis=0)
        return edges.astype(np.int64)

    @cached_property
    def trace_adjacency(self) -> tuple[np.ndarray, np.ndarray]:
        """CSR adjacency (indptr, indices) over local member indices."""
        edges = self.trace_edges
        n = self.n
        if len(edges) == 0:
            return np.zeros(n + 1, dtype=np.int64), np.empty(0, dtype=np.int64)
        src = np.concatenate([edges[:, 0], edges[:, 1]])
        dst = np.concatenate([edges[:, 1], edges[:, 0]])
        perm = np.lexsort((dst, src))
        src, dst = src[perm], dst[perm]
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.add.at(indptr, src + 1, 1)
        return np.cumsum(indptr), dst

    def variable(self, name: str) -> np.ndarray:
        """Per-member values of a stored or degree-derived variable."""
        if name in self.y:
            return self.y[name]
        if name == "degree":
            return self.degrees.astype(np.float64)
        if name == "deg2plus":
            return (self.degrees >= 2).astype(np.float64)
        raise DataError(f"variable {name!r} not observed on this sample")

    def validate(self, graph: PopulationGraph, cfg: DesignConfig | None = None) -> None:
        """Structural checks: forest, coupon cap, distinctness, real links."""
        if len(np.unique(self.members)) != self.n:
            raise InvariantError("members are not distinct")
        rec = self.recruitment_edges
        # every non-seed has exactly one recruiter by construction; check
        # recruiter joined earlier, which rules out cycles
        for r, c in rec:
            if self.recruit_day[r] > self.recruit_day[c]:
                raise InvariantError("recruiter joined after recruit")
        if cfg is not None and len(rec):
            out_deg = np.bincount(rec[:, 0], minlength=self.n)
            if out_deg.max() > cfg.coupon_max:
                raise InvariantError("recruitment out-degree exceeds coupon_max")
        for a, b in self.trace_edges:
            pa, pb = self.members[a], self.members[b]
            if pb not in graph.neighbors(pa):
                raise InvariantError(f"traceable edge ({pa}, {pb}) is not a population link")


def run_survey(
    graph: PopulationGraph,
    attrs: AttributeTable | None,
    cfg: DesignConfig,
    rng_seed,
    seed_nodes=None,
) -> SampleNetwork:
    """Simulate one field survey; pure function of (graph, cfg, rng_seed).

    ``seed_nodes`` overrides the uniform day-0 seed draw with an explicit
    list of population indices (used for designed experiments such as
    placing equal seeds in separate components).
    """
    n_pop = graph.n_nodes
    if cfg.target_n > n_pop:
        raise ConfigurationError(f"target_n {cfg.target_n} exceeds population size {n_pop}")
    rng = np.random.default_rng(rng_seed)

    sampled = np.zeros(n_pop, dtype=bool)
    members: list[int] = []
    recruiter: list[int] = []
    recruit_day: list[int] = []
    # live coupons as parallel lists: holder local index, expiry day
    coupon_holder: list[int] = []
    coupon_expiry: list[int] = []
    pop_degrees = graph.degrees()

    def add_member(pop_idx: int, rec_local: int, day: int) -> None:
        local = len(members)
        sampled[pop_idx] = True
        members.append(pop_idx)
        recruiter.append(rec_local)
        recruit_day.append(day)
        n_coupons = min(cfg.coupon_max, int(pop_degrees[pop_idx]))
        expiry = day + cfg.coupon_expiry_days
        for _ in range(n_coupons):
            coupon_holder.append(local)
            coupon_expiry.append(expiry)

    if seed_nodes is None:
        n_seeds = min(cfg.target_n, max(1, int(round(cfg.seed_fraction * cfg.target_n))))
        initial = rng.choice(n_pop, size=n_seeds, replace=False)
    else:
        initial = np.asarray(seed_nodes, dtype=np.int64)
        if len(np.unique(initial)) != len(initial):
            raise ConfigurationError("seed_nodes contains duplicates")
        if len(initial) > cfg.target_n:
            raise ConfigurationError("more seed_nodes than target_n")
    for pop_idx in initial:
        if len(members) >= cfg.target_n:
            break
        add_member(int(pop_idx), -1, 0)

    reseed_batch = math.ceil(RESEED_FRACTION * cfg.target_n)
    day = 0
    while len(members) < cfg.target_n:
        day += 1
        if day > _MAX_DAYS:
            raise InvariantError("survey failed to reach target_n within the day cap")

        # drop expired coupons
        live = [k for k in range(len(coupon_holder)) if coupon_expiry[k] >= day]
        coupon_holder = [coupon_holder[k] for k in live]
        coupon_expiry = [coupon_expiry[k] for k in live]

        frontier_alive = any(
            not np.all(sampled[graph.neighbors(members[h])]) for h in set(coupon_holder)
        )
        if not frontier_alive:
            unsampled = np.nonzero(~sampled)[0]
            k = min(reseed_batch, len(unsampled), cfg.target_n - len(members))
            for pop_idx in rng.choice(unsampled, size=k, replace=False):
                add_member(int(pop_idx), -1, day)
            continue

        fired = np.nonzero(rng.random(len(coupon_holder)) < cfg.redeem_prob)[0]
        consumed: set[int] = set()
        for k in rng.permutation(fired):
            if len(members) >= cfg.target_n:
                break
            holder = coupon_holder[k]
            nbrs = graph.neighbors(members[holder])
            open_nbrs = nbrs[~sampled[nbrs]]
            consumed.add(int(k))  # a fired coupon is spent whether or not it recruits
            if len(open_nbrs) == 0:
                continue
            target = int(open_nbrs[rng.integers(len(open_nbrs))])
            add_member(target, holder, day)
        if consumed:
            keep = [k for k in range(len(coupon_holder)) if k not in consumed]
            coupon_holder = [coupon_holder[k] for k in keep]
            coupon_expiry = [coupon_expiry[k] for k in keep]

    members_arr = np.asarray(members, dtype=np.int64)
    y = {}
    if attrs is not None:
        y = {name: attrs.values[name][members_arr] for name in attrs.names}
    sample = SampleNetwork(
        members=members_arr,
        recruiter=np.asarray(recruiter, dtype=np.int64),
        recruit_day=np.asarray(recruit_day, dtype=np.int64),
        degrees=pop_degrees[members_arr],
        plus_edges=np.empty((0, 2), dtype=np.int64),
        y=y,
    )
    if cfg.plus_links:
        sample = augment_plus(sample, graph)
    return sample


def augment_plus(sample: SampleNetwork, graph: PopulationGraph) -> SampleNetwork:
    """Reveal all population links among sample members as plus-edges.

    Recruitment links are excluded (they are already traceable). Idempotent:
    the plus-edge set is recomputed from the graph, not extended.
    """
    local = {int(p): i for i, p in enumerate(sample.members)}
    rec_pairs = {tuple(sorted(e)) for e in sample.recruitment_edges.tolist()}
    pairs = []
    for i, pop_idx in enumerate(sample.members):
        for nbr in graph.neighbors(int(pop_idx)):
            j = local.get(int(nbr))
            if j is not None and i < j and (i, j) not in rec_pairs:
                pairs.append((i, j))
    plus = (
        np.asarray(sorted(pairs), dtype=np.int64)
        if pairs
        else np.empty((0, 2), dtype=np.int64)
    )
    return replace(sample, plus_edges=plus)


def save_sample(sample: SampleNetwork, graph: PopulationGraph, prefix) -> None:
    """Write members/recruitment/plus CSVs with population labels."""
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    labels = graph.labels
    with open(f"{prefix}members.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["node", "seed", "degree"])
        for i, pop_idx in enumerate(sample.members):
            w.writerow([labels[pop_idx], int(sample.recruiter[i] < 0), int(sample.degrees[i])])
    with open(f"{prefix}recruitment.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["recruiter", "recruit", "day"])
        for r, c in sample.recruitment_edges:
            w.writerow([labels[sample.members[r]], labels[sample.members[c]], int(sample.recruit_day[c])])
    with open(f"{prefix}plus.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["node_a", "node_b"])
        for a, b in sample.plus_edges:
            w.writerow([labels[sample.members[a]], labels[sample.members[b]]])


def load_sample(
    prefix, graph: PopulationGraph, attrs: AttributeTable | None = None
) -> SampleNetwork:
    """Rebuild a SampleNetwork from the CSVs written by save_sample."""
    prefix = Path(prefix)

    def read(path):
        with open(path, "r", newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        return rows[1:]

    member_rows = read(f"{prefix}members.csv")
    if not member_rows:
        raise DataError(f"{prefix}members.csv has no members")
    members, seed_flags = [], []
    for row in member_rows:
        idx = graph.label_index.get(row[0])
        if idx is None:
            raise DataError(f"unknown member label {row[0]!r}")
        members.append(idx)
        seed_flags.append(int(row[1]))
    members_arr = np.asarray(members, dtype=np.int64)
    local = {int(p): i for i, p in enumerate(members_arr)}

    recruiter = np.full(len(members_arr), -1, dtype=np.int64)
    recruit_day = np.zeros(len(members_arr), dtype=np.int64)
    for row in read(f"{prefix}recruitment.csv"):
        r = local[graph.label_index[row[0]]]
        c = local[graph.label_index[row[1]]]
        recruiter[c] = r
        recruit_day[c] = int(row[2])

    plus_path = Path(f"{prefix}plus.csv")
    pairs = []
    if plus_path.exists():
        for row in read(plus_path):
            a, b = local[graph.label_index[row[0]]], local[graph.label_index[row[1]]]
            pairs.append((min(a, b), max(a, b)))
    plus = (
        np.asarray(sorted(pairs), dtype=np.int64)
        if pairs
        else np.empty((0, 2), dtype=np.int64)
    )

    y = {}
    if attrs is not None:
        y = {name: attrs.values[name][members_arr] for name in attrs.names}
    return SampleNetwork(
        members=members_arr,
        recruiter=recruiter,
        recruit_day=recruit_day,
        degrees=graph.degrees()[members_arr],
        plus_edges=plus,
        y=y,
    )
