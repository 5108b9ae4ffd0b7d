"""Second-stage design: branching link-tracing resampling of a sample network.

Selects many resamples from a SampleNetwork and accumulates, for every
member, the fraction of resamples containing it. Two without-replacement
modes are provided: independent repeated resamples (each grown from Bernoulli
seeds to a target size) and a Markov sampling process (each resample obtained
from the previous one by tracing a few links out, re-seeding at a low rate,
and randomly removing members whenever the size overshoots its target). A
with-replacement process variant counts selections with multiplicity.

No coupons and no expiry apply here: the same resampling design serves every
field design. All randomness comes from one counter-based (Philox) stream per
run, so results are reproducible and runs are parallel-safe. Membership is a
boolean vector, so a without-replacement resample structurally cannot hold
duplicates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import ConfigurationError
from .fieldsim import SampleNetwork

__all__ = [
    "ResampleConfig",
    "InclusionFrequencies",
    "ResampleDiagnostics",
    "removal_prob",
    "run_repeated",
    "run_process",
    "run_process_wr",
    "pair_frequencies",
    "run",
]

MODES = ("repeated", "process", "process_wr")

# Per-mode default rates. The repeated-sample rates are the documented
# reference values; the process tracing rate 0.5 is our choice (the process
# tolerates a high tracing rate because removals offset the tracing).
_MODE_DEFAULTS = {
    "repeated": {"trace_p": 0.05, "seed_p": 0.0167, "reseed_p": 0.001},
    "process": {"trace_p": 0.5, "seed_p": 0.0, "reseed_p": 0.01},
    "process_wr": {"trace_p": 0.5, "seed_p": 0.0, "reseed_p": 0.01},
}

_N_BATCHES = 64  # batch-means blocks for chain standard errors


@dataclass(frozen=True)
class ResampleConfig:
    """Parameters of the second-stage design.

    ``trace_p``/``seed_p``/``reseed_p`` default per mode (None picks the
    mode default). ``burn_in=None`` uses the adaptive rule: discard
    iterations until the resample size first reaches target_m, plus
    ``burn_in_extra`` further iterations.
    """

    mode: str = "process"
    t_iterations: int = 10_000
    target_m: int = 400
    trace_p: float | None = None
    seed_p: float | None = None
    reseed_p: float | None = None
    burn_in: int | None = None
    burn_in_extra: int = 100
    step_cap_factor: int = 10

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigurationError(f"unknown resample mode {self.mode!r}")
        defaults = _MODE_DEFAULTS[self.mode]
        for name in ("trace_p", "seed_p", "reseed_p"):
            value = getattr(self, name)
            if value is None:
                object.__setattr__(self, name, defaults[name])
            elif not 0.0 <= value <= 1.0:
                raise ConfigurationError(f"{name} must be in [0, 1]")
        if self.t_iterations < 1:
            raise ConfigurationError("t_iterations must be >= 1")
        if self.target_m < 1:
            raise ConfigurationError("target_m must be >= 1")
        if self.burn_in is not None:
            if self.burn_in < 0:
                raise ConfigurationError("burn_in must be >= 0")
            if self.mode != "repeated" and self.t_iterations <= self.burn_in:
                raise ConfigurationError("t_iterations must exceed burn_in")
        if self.burn_in_extra < 0:
            raise ConfigurationError("burn_in_extra must be >= 0")
        if self.step_cap_factor < 1:
            raise ConfigurationError("step_cap_factor must be >= 1")

    def validate_for(self, n: int) -> None:
        if self.mode == "process_wr":
            if self.target_m > n:
                raise ConfigurationError("target_m may not exceed sample size")
        elif self.target_m >= n and n > 1:
            raise ConfigurationError(
                "without-replacement resampling needs target_m < sample size"
            )


@dataclass
class ResampleDiagnostics:
    """Run-level counters surfaced alongside the frequencies."""

    zero_frequency_members: int = 0
    stalled_resamples: int = 0
    burn_in_used: int = 0
    mean_resample_size: float = 0.0


@dataclass
class InclusionFrequencies:
    """Per-member inclusion frequencies from one resampling run.

    ``f[i]`` is the fraction of counted resamples containing member i (any
    zero frequency is floored at 1/(2*t_effective) so inverse weights stay
    finite; the guard is counted in diagnostics). ``f_pairs`` holds joint
    frequencies for traceable sample edges when requested, and ``g`` holds
    mean selection counts in with-replacement mode.
    """

    f: np.ndarray
    t_effective: int
    mode: str
    f_se: np.ndarray | None = None
    f_pairs: dict[tuple[int, int], float] | None = None
    g: np.ndarray | None = None
    diagnostics: ResampleDiagnostics = field(default_factory=ResampleDiagnostics)


@njit(cache=True, nogil=True)
def removal_prob(size: int, target: int) -> float:
    """Adaptive removal rate: expected removals bring the size back to
    target, so the resample size fluctuates around its target."""
    if size <= target:
        return 0.0
    return (size - target) / size


@njit(cache=True, nogil=True)
def _wor_process_kernel(
    indptr,
    indices,
    edge_a,
    edge_b,
    t_total,
    target_m,
    trace_p,
    seed_p,
    reseed_p,
    fixed_burn,
    extra_burn,
    track_pairs,
    n_batches,
    rng,
    counts,
    pair_counts,
    batch_counts,
):
    n = len(indptr) - 1
    member = np.zeros(n, dtype=np.bool_)
    cur = np.empty(n, dtype=np.int64)
    size = 0
    if seed_p > 0.0:
        for v in range(n):
            if rng.random() < seed_p:
                member[v] = True
                size += 1

    sentinel = t_total + 1
    burn_total = fixed_burn if fixed_burn >= 0 else sentinel
    batch_len = 0
    acc_t = 0
    size_sum = 0
    for t in range(1, t_total + 1):
        # phase 1: trace every link from the current members out; a link to a
        # node already added this step is skipped (the join outcome is the
        # same: at least one incident link fired)
        m = 0
        for v in range(n):
            if member[v]:
                cur[m] = v
                m += 1
        for i in range(m):
            u = cur[i]
            for k in range(indptr[u], indptr[u + 1]):
                v = indices[k]
                if not member[v] and rng.random() < trace_p:
                    member[v] = True
                    size += 1
        # phase 2: re-seed remaining non-members
        if reseed_p > 0.0:
            for v in range(n):
                if not member[v] and rng.random() < reseed_p:
                    member[v] = True
                    size += 1
        # phase 3: adaptive thinning of the whole union
        q = removal_prob(size, target_m)
        if q > 0.0:
            for v in range(n):
                if member[v] and rng.random() < q:
                    member[v] = False
                    size -= 1

        if burn_total == sentinel and size >= target_m:
            burn_total = t + extra_burn
            if burn_total >= t_total:
                return 0, -1, 0, 0
            planned = t_total - burn_total
            batch_len = planned // n_batches
        elif fixed_burn >= 0 and t == 1:
            batch_len = (t_total - fixed_burn) // n_batches

        if t > burn_total:
            acc_t += 1
            size_sum += size
            for v in range(n):
                if member[v]:
                    counts[v] += 1
            if batch_len > 0:
                b = (acc_t - 1) // batch_len
                if b < n_batches:
                    for v in range(n):
                        if member[v]:
                            batch_counts[b, v] += 1
            if track_pairs:
                for e in range(len(edge_a)):
                    if member[edge_a[e]] and member[edge_b[e]]:
                        pair_counts[e] += 1

    if burn_total == sentinel:
        return 0, -1, 0, 0
    return acc_t, burn_total, size_sum, batch_len


@njit(cache=True, nogil=True)
def _wor_repeated_kernel(
    indptr,
    indices,
    edge_a,
    edge_b,
    t_total,
    target_m,
    trace_p,
    seed_p,
    reseed_p,
    step_cap,
    track_pairs,
    rng,
    counts,
    pair_counts,
):
    n = len(indptr) - 1
    member = np.zeros(n, dtype=np.bool_)
    cur = np.empty(n, dtype=np.int64)
    added = np.empty(n, dtype=np.int64)
    stalled = 0
    size_sum = 0
    for _ in range(t_total):
        for v in range(n):
            member[v] = False
        size = 0
        n_add = 0
        for v in range(n):
            if rng.random() < seed_p:
                member[v] = True
                added[n_add] = v
                n_add += 1
                size += 1
        steps = 0
        while size < target_m and steps < step_cap:
            steps += 1
            n_add = 0
            m = 0
            for v in range(n):
                if member[v]:
                    cur[m] = v
                    m += 1
            for i in range(m):
                u = cur[i]
                for k in range(indptr[u], indptr[u + 1]):
                    v = indices[k]
                    if not member[v] and rng.random() < trace_p:
                        member[v] = True
                        added[n_add] = v
                        n_add += 1
                        size += 1
            if reseed_p > 0.0:
                for v in range(n):
                    if not member[v] and rng.random() < reseed_p:
                        member[v] = True
                        added[n_add] = v
                        n_add += 1
                        size += 1
        # overshoot: drop surplus uniformly among the final additions
        while size > target_m and n_add > 0:
            j = rng.integers(0, n_add)
            member[added[j]] = False
            added[j] = added[n_add - 1]
            n_add -= 1
            size -= 1
        if size < target_m:
            stalled += 1
        size_sum += size
        for v in range(n):
            if member[v]:
                counts[v] += 1
        if track_pairs:
            for e in range(len(edge_a)):
                if member[edge_a[e]] and member[edge_b[e]]:
                    pair_counts[e] += 1
    return stalled, size_sum


@njit(cache=True, nogil=True)
def _wr_process_kernel(
    indptr,
    indices,
    t_total,
    target_m,
    trace_p,
    seed_p,
    reseed_p,
    fixed_burn,
    extra_burn,
    n_batches,
    rng,
    presence_counts,
    g_sums,
    batch_sums,
):
    n = len(indptr) - 1
    c = np.zeros(n, dtype=np.int64)
    c_prev = np.zeros(n, dtype=np.int64)
    size = 0
    if seed_p > 0.0:
        for v in range(n):
            if rng.random() < seed_p:
                c[v] = 1
                size += 1

    sentinel = t_total + 1
    burn_total = fixed_burn if fixed_burn >= 0 else sentinel
    batch_len = 0
    acc_t = 0
    size_sum = 0
    for t in range(1, t_total + 1):
        for v in range(n):
            c_prev[v] = c[v]
        # trace: every copy of every selection traces each of its links
        for u in range(n):
            if c_prev[u] > 0:
                for k in range(indptr[u], indptr[u + 1]):
                    v = indices[k]
                    for _ in range(c_prev[u]):
                        if rng.random() < trace_p:
                            c[v] += 1
        if reseed_p > 0.0:
            for v in range(n):
                if rng.random() < reseed_p:
                    c[v] += 1
        size = 0
        for v in range(n):
            size += c[v]
        q = removal_prob(size, target_m)
        if q > 0.0:
            size = 0
            for v in range(n):
                kept = 0
                for _ in range(c[v]):
                    if rng.random() >= q:
                        kept += 1
                c[v] = kept
                size += kept

        if burn_total == sentinel and size >= target_m:
            burn_total = t + extra_burn
            if burn_total >= t_total:
                return 0, -1, 0, 0
            batch_len = (t_total - burn_total) // n_batches
        elif fixed_burn >= 0 and t == 1:
            batch_len = (t_total - fixed_burn) // n_batches

        if t > burn_total:
            acc_t += 1
            size_sum += size
            for v in range(n):
                g_sums[v] += c[v]
                if c[v] > 0:
                    presence_counts[v] += 1
            if batch_len > 0:
                b = (acc_t - 1) // batch_len
                if b < n_batches:
                    for v in range(n):
                        batch_sums[b, v] += c[v]

    if burn_total == sentinel:
        return 0, -1, 0, 0
    return acc_t, burn_total, size_sum, batch_len


def _make_rng(rng_seed) -> np.random.Generator:
    if isinstance(rng_seed, np.random.SeedSequence):
        return np.random.Generator(np.random.Philox(rng_seed))
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(rng_seed)))


def _batch_se(batch_counts: np.ndarray, batch_len: int, n_used: int) -> np.ndarray | None:
    """Standard error of the chain time-average from batch means."""
    if batch_len <= 0 or n_used < 2:
        return None
    means = batch_counts[:n_used] / batch_len
    center = means.mean(axis=0)
    var = np.sum((means - center) ** 2, axis=0) / (n_used - 1)
    return np.sqrt(var / n_used)


def _apply_zero_guard(
    counts: np.ndarray, t_eff: int, diagnostics: ResampleDiagnostics
) -> np.ndarray:
    f = counts / t_eff
    zero = f == 0.0
    diagnostics.zero_frequency_members = int(zero.sum())
    if diagnostics.zero_frequency_members:
        f = f.copy()
        f[zero] = 1.0 / (2.0 * t_eff)
    return f


def _pair_dict(
    edges: np.ndarray, pair_counts: np.ndarray, t_eff: int
) -> dict[tuple[int, int], float]:
    return {
        (int(a), int(b)): pair_counts[e] / t_eff
        for e, (a, b) in enumerate(edges)
    }


def run_repeated(
    sample: SampleNetwork, cfg: ResampleConfig, rng_seed, *, with_pairs: bool = False
) -> InclusionFrequencies:
    """Independent resamples, each grown from Bernoulli seeds to target size.

    A resample that cannot reach target_m within the step cap is kept at its
    achieved size and counted as stalled.
    """
    if cfg.mode != "repeated":
        raise ConfigurationError("run_repeated requires mode='repeated'")
    cfg.validate_for(sample.n)
    indptr, indices = sample.trace_adjacency
    edges = sample.trace_edges
    rng = _make_rng(rng_seed)
    counts = np.zeros(sample.n, dtype=np.int64)
    pair_counts = np.zeros(len(edges), dtype=np.int64)
    stalled, size_sum = _wor_repeated_kernel(
        indptr,
        indices,
        np.ascontiguousarray(edges[:, 0]) if len(edges) else np.empty(0, np.int64),
        np.ascontiguousarray(edges[:, 1]) if len(edges) else np.empty(0, np.int64),
        cfg.t_iterations,
        cfg.target_m,
        cfg.trace_p,
        cfg.seed_p,
        cfg.reseed_p,
        cfg.step_cap_factor * cfg.target_m,
        with_pairs,
        rng,
        counts,
        pair_counts,
    )
    t_eff = cfg.t_iterations
    diagnostics = ResampleDiagnostics(
        stalled_resamples=int(stalled),
        burn_in_used=0,
        mean_resample_size=size_sum / t_eff,
    )
    f = _apply_zero_guard(counts, t_eff, diagnostics)
    f_se = np.sqrt(f * (1.0 - f) / t_eff)
    return InclusionFrequencies(
        f=f,
        t_effective=t_eff,
        mode=cfg.mode,
        f_se=f_se,
        f_pairs=_pair_dict(edges, pair_counts, t_eff) if with_pairs else None,
        diagnostics=diagnostics,
    )


def run_process(
    sample: SampleNetwork, cfg: ResampleConfig, rng_seed, *, with_pairs: bool = False
) -> InclusionFrequencies:
    """Markov sampling process: trace a few, re-seed a few, thin overshoot.

    Iterations before burn-in are discarded; a member may re-enter after
    removal but never duplicates while present.
    """
    if cfg.mode != "process":
        raise ConfigurationError("run_process requires mode='process'")
    cfg.validate_for(sample.n)
    indptr, indices = sample.trace_adjacency
    edges = sample.trace_edges
    rng = _make_rng(rng_seed)
    counts = np.zeros(sample.n, dtype=np.int64)
    pair_counts = np.zeros(len(edges), dtype=np.int64)
    batch_counts = np.zeros((_N_BATCHES, sample.n), dtype=np.int64)
    t_eff, burn_used, size_sum, batch_len = _wor_process_kernel(
        indptr,
        indices,
        np.ascontiguousarray(edges[:, 0]) if len(edges) else np.empty(0, np.int64),
        np.ascontiguousarray(edges[:, 1]) if len(edges) else np.empty(0, np.int64),
        cfg.t_iterations,
        cfg.target_m,
        cfg.trace_p,
        cfg.seed_p,
        cfg.reseed_p,
        -1 if cfg.burn_in is None else cfg.burn_in,
        cfg.burn_in_extra,
        with_pairs,
        _N_BATCHES,
        rng,
        counts,
        pair_counts,
        batch_counts,
    )
    if t_eff <= 0:
        raise ConfigurationError(
            "no iterations left after burn-in; raise t_iterations or lower burn-in"
        )
    diagnostics = ResampleDiagnostics(
        burn_in_used=int(burn_used),
        mean_resample_size=size_sum / t_eff,
    )
    f = _apply_zero_guard(counts, t_eff, diagnostics)
    n_used = min(_N_BATCHES, t_eff // batch_len) if batch_len > 0 else 0
    f_se = _batch_se(batch_counts, batch_len, n_used)
    if f_se is None:
        f_se = np.sqrt(f * (1.0 - f) / t_eff)
    return InclusionFrequencies(
        f=f,
        t_effective=t_eff,
        mode=cfg.mode,
        f_se=f_se,
        f_pairs=_pair_dict(edges, pair_counts, t_eff) if with_pairs else None,
        diagnostics=diagnostics,
    )


def run_process_wr(
    sample: SampleNetwork, cfg: ResampleConfig, rng_seed
) -> InclusionFrequencies:
    """With-replacement sampling process; selections counted with
    multiplicity. ``g`` holds the mean selection count per iteration, and
    target_m may equal the sample size."""
    if cfg.mode != "process_wr":
        raise ConfigurationError("run_process_wr requires mode='process_wr'")
    cfg.validate_for(sample.n)
    indptr, indices = sample.trace_adjacency
    rng = _make_rng(rng_seed)
    presence = np.zeros(sample.n, dtype=np.int64)
    g_sums = np.zeros(sample.n, dtype=np.int64)
    batch_sums = np.zeros((_N_BATCHES, sample.n), dtype=np.int64)
    t_eff, burn_used, size_sum, batch_len = _wr_process_kernel(
        indptr,
        indices,
        cfg.t_iterations,
        cfg.target_m,
        cfg.trace_p,
        cfg.seed_p,
        cfg.reseed_p,
        -1 if cfg.burn_in is None else cfg.burn_in,
        cfg.burn_in_extra,
        _N_BATCHES,
        rng,
        presence,
        g_sums,
        batch_sums,
    )
    if t_eff <= 0:
        raise ConfigurationError(
            "no iterations left after burn-in; raise t_iterations or lower burn-in"
        )
    diagnostics = ResampleDiagnostics(
        burn_in_used=int(burn_used),
        mean_resample_size=size_sum / t_eff,
    )
    f = _apply_zero_guard(presence, t_eff, diagnostics)
    n_used = min(_N_BATCHES, t_eff // batch_len) if batch_len > 0 else 0
    g_se = _batch_se(batch_sums, batch_len, n_used)
    return InclusionFrequencies(
        f=f,
        t_effective=t_eff,
        mode=cfg.mode,
        f_se=g_se,
        g=g_sums / t_eff,
        diagnostics=diagnostics,
    )


def pair_frequencies(
    sample: SampleNetwork, cfg: ResampleConfig, rng_seed
) -> InclusionFrequencies:
    """Run a without-replacement mode with joint frequencies over the
    traceable sample edge set."""
    if cfg.mode == "repeated":
        return run_repeated(sample, cfg, rng_seed, with_pairs=True)
    if cfg.mode == "process":
        return run_process(sample, cfg, rng_seed, with_pairs=True)
    raise ConfigurationError("pair frequencies require a without-replacement mode")


def run(sample: SampleNetwork, cfg: ResampleConfig, rng_seed) -> InclusionFrequencies:
    """Dispatch on cfg.mode."""
    if cfg.mode == "repeated":
        return run_repeated(sample, cfg, rng_seed)
    if cfg.mode == "process":
        return run_process(sample, cfg, rng_seed)
    return run_process_wr(sample, cfg, rng_seed)
