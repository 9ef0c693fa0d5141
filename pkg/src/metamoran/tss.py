"""Coupled Trait Substitution Sequences: the rare-mutation limit.

In the mutation/migration timescale each patch is monomorphic and the
metapopulation is a K-site pure-jump Markov chain on dominant traits:

- mutation-fixation at site ``l``: proposals at rate
  ``N * theta(l/K, x_l)``, a mutant ``y`` drawn from the mutation kernel
  and accepted with the fixation probability ``alpha(l/K, y, x_l)``;
- migration-fixation for the ordered site pair ``(l, l')``: site ``l``
  adopts ``x_{l'}`` at rate
  ``(N^2/K) * lam(l/K, x_l, l'/K, x_{l'}) * alpha(l/K, x_{l'}, x_l)``.

Self-pairs are included as no-ops (the rate table ranges over all ordered
pairs; replacing a trait by itself changes nothing).  The simulation is an
exact embedded-chain scheme: mutation proposals fire at their exact rates
(per-site rates are O(1) to maintain), migration proposals are thinned
against the per-pair bound ``(N^2/K) * C_mig``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from metamoran import microsim
from metamoran.kernels import (
    RateBoundError,
    RateModel,
    Trait,
    as_trait,
    fixation_probability,
    sample_mutation,
)


@dataclass
class SiteConfiguration:
    """Dominant trait per patch at one instant; site ``l`` (0-based) sits
    at position ``(l+1)/K``."""

    x: List[Trait]
    time: float = 0.0

    def __post_init__(self):
        if not self.x:
            raise ValueError("SiteConfiguration needs at least one site")
        self.x = [as_trait(v) for v in self.x]

    @property
    def K(self) -> int:
        return len(self.x)

    def position(self, site: int) -> float:
        return (site + 1) / self.K

    def copy(self) -> "SiteConfiguration":
        return SiteConfiguration(x=list(self.x), time=self.time)


def tss_run(
    model: RateModel,
    init: SiteConfiguration,
    N: int,
    horizon: float,
    rng: np.random.Generator,
    record_jumps: bool = True,
) -> List[SiteConfiguration]:
    """Simulate the K-site jump chain from ``init`` to absolute time
    ``horizon``.  Returns the trajectory: the initial state, one snapshot
    per accepted jump (if ``record_jumps``), and the terminal state."""
    if horizon < init.time:
        raise ValueError("horizon must be >= the initial configuration's time")
    state = init.copy()
    K = state.K
    C_mig = model.migration_bound

    theta_rates = [N * _theta_checked(model, state.position(l), state.x[l]) for l in range(K)]
    mut_total = sum(theta_rates)
    mig_total = N * N * K * C_mig  # K^2 ordered pairs at the per-pair bound (N^2/K) C_mig

    trajectory = [state.copy()]
    t = state.time
    while True:
        total = mut_total + mig_total
        if total <= 0.0:
            break
        t += rng.exponential(1.0 / total)
        if t > horizon:
            break
        changed = False
        if rng.random() * total < mut_total:
            site = _pick_weighted(theta_rates, mut_total, rng)
            r = state.position(site)
            xl = state.x[site]
            y = as_trait(sample_mutation(model.mutation, r, xl, rng))
            if rng.random() < fixation_probability(model, r, y, xl, N):
                state.x[site] = y
                changed = y != xl
        else:
            site = int(rng.integers(K))
            src = int(rng.integers(K))
            r = state.position(site)
            xl = state.x[site]
            xs = state.x[src]
            rate = model.lam(r, xl, state.position(src), xs)
            if not math.isfinite(rate) or rate < 0.0 or rate > C_mig * (1.0 + 1e-9):
                raise RateBoundError(f"rate lambda={rate!r} outside [0, {C_mig}]")
            accept = rate * fixation_probability(model, r, xs, xl, N) / C_mig
            if accept > 1.0 + 1e-9:
                raise RateBoundError(f"migration acceptance {accept!r} exceeds 1")
            if rng.random() < accept:
                state.x[site] = xs
                changed = xs != xl
        if changed:
            theta_rates[site] = N * _theta_checked(model, state.position(site), state.x[site])
            mut_total = sum(theta_rates)
            if record_jumps:
                state.time = t
                trajectory.append(state.copy())
    state.time = horizon
    trajectory.append(state.copy())
    return trajectory


def _theta_checked(model: RateModel, r: float, x: Trait) -> float:
    v = model.theta(r, x)
    if not math.isfinite(v) or v < 0.0 or v > model.bound_C * (1.0 + 1e-9):
        raise RateBoundError(f"rate theta={v!r} outside [0, {model.bound_C}] at r={r!r}")
    return v


def _pick_weighted(weights: Sequence[float], total: float, rng: np.random.Generator) -> int:
    u = rng.random() * total
    acc = 0.0
    for i, w in enumerate(weights):
        acc += w
        if u < acc:
            return i
    return len(weights) - 1


# --- finite-trait vectorized engine -------------------------------------------


def migration_fixation_table(
    model: RateModel, K: int, traits: Sequence, N: int
) -> np.ndarray:
    """``tab[l, i, lp, j] = lam((l+1)/K, x_i, (lp+1)/K, x_j) * alpha((l+1)/K, x_j, x_i)``:
    the per-pair migration-fixation rate divided by ``N^2/K``."""
    traits = [as_trait(x) for x in traits]
    m = len(traits)
    pos = [(l + 1) / K for l in range(K)]
    tab = np.zeros((K, m, K, m))
    for l in range(K):
        for i in range(m):
            alpha_row = [fixation_probability(model, pos[l], traits[j], traits[i], N) for j in range(m)]
            for lp in range(K):
                for j in range(m):
                    lam = model.lam(pos[l], traits[i], pos[lp], traits[j])
                    if lam < 0 or lam > model.migration_bound * (1 + 1e-9):
                        raise RateBoundError(f"lambda={lam!r} outside [0, {model.migration_bound}]")
                    tab[l, i, lp, j] = lam * alpha_row[j]
    return tab


def tss_finite_batch(
    tab: np.ndarray,
    t_end: float,
    N: int,
    init_idx: np.ndarray,
    rng: np.random.Generator,
) -> np.ndarray:
    """Advance ``R`` replicates of a finite-trait, mutation-free TSS to
    time ``t_end`` simultaneously.

    ``tab`` is the table from :func:`migration_fixation_table`; ``init_idx``
    holds trait indices with shape (R, K).  Uniformization against the
    table maximum: candidates arrive at rate ``N^2 K max(tab)`` per
    replicate, an ordered site pair is drawn uniformly (self-pairs are
    no-ops) and accepted with rate/max.
    """
    K = tab.shape[0]
    state = np.array(init_idx, dtype=np.int8, copy=True)
    R = state.shape[0]
    max_rate = float(tab.max())
    if max_rate <= 0.0 or t_end <= 0.0:
        return state
    total = N * N * K * max_rate
    n_cand = rng.poisson(total * t_end, size=R)
    rows = np.arange(R)
    for step in range(int(n_cand.max())):
        active = n_cand > step
        dest = rng.integers(0, K, size=R)
        src = rng.integers(0, K, size=R)
        u = rng.random(R)
        rate = tab[dest, state[rows, dest], src, state[rows, src]]
        acc = active & (u * max_rate < rate)
        state[rows[acc], dest[acc]] = state[rows[acc], src[acc]]
    return state


def tss_finite_sequential(
    tab_h: np.ndarray,
    K: int,
    t_end: float,
    N: int,
    init_idx: Sequence[int],
    rng: np.random.Generator,
    snapshot_times: Optional[Sequence[float]] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """Single-trajectory finite-trait TSS for homogeneous kernels, with
    trait-fraction snapshots.

    ``tab_h[i, j]`` is the position-free ``lam(x_i, x_j) alpha(x_j, x_i)``
    table.  Returns ``(fractions, final_idx)`` where ``fractions`` has one
    row per snapshot time listing the fraction of sites in each trait.
    """
    m = tab_h.shape[0]
    state = np.array(init_idx, dtype=np.int64, copy=True)
    counts = np.bincount(state, minlength=m).astype(float)
    snaps = [] if snapshot_times is None else list(snapshot_times)
    fractions = np.empty((len(snaps), m))
    si = 0
    max_rate = float(tab_h.max())
    total = N * N * K * max_rate
    t = 0.0
    exp = rng.exponential
    uniform = rng.random
    randint = rng.integers
    while True:
        dt = exp(1.0 / total) if total > 0.0 else math.inf
        t_next = t + dt
        while si < len(snaps) and snaps[si] <= t_next and snaps[si] <= t_end:
            fractions[si] = counts / K
            si += 1
        if t_next > t_end or total <= 0.0:
            break
        t = t_next
        dest = int(randint(K))
        src = int(randint(K))
        i, j = state[dest], state[src]
        if uniform() * max_rate < tab_h[i, j]:
            if i != j:
                counts[i] -= 1.0
                counts[j] += 1.0
                state[dest] = j
    while si < len(snaps):
        fractions[si] = counts / K
        si += 1
    return fractions, state


# --- micro vs TSS comparison ----------------------------------------------------


@dataclass(frozen=True)
class CompareResult:
    """Divergence report between microscopic and TSS dominant-trait laws."""

    gamma: float
    t_star: float
    tv: float
    se: float
    micro_poly_fraction: float
    support: tuple
    micro_probs: tuple
    tss_probs: tuple


def tss_vs_micro_compare(
    model: RateModel,
    K: int,
    N: int,
    gamma: float,
    t_star: float,
    replicates: int,
    init_traits: Sequence,
    rng: np.random.Generator,
    poly_tolerance: float = 0.05,
) -> CompareResult:
    """Total-variation distance between the K-site dominant-trait-vector
    laws of the microscopic chain at time ``t_star / gamma`` and the TSS at
    time ``t_star``, each estimated from ``replicates`` runs.

    All patches start monomorphic at ``init_traits`` and the trait set is
    the (two-element) set of initial traits; mutation must be inactive.
    Microscopic patches still polymorphic at the snapshot are
    majority-rounded (ties to the first trait); if more than
    ``poly_tolerance`` of replicates contain a polymorphic patch the regime
    assumption is violated and an error is raised.
    """
    traits = sorted({as_trait(x) for x in init_traits})
    if len(traits) == 1:
        traits = traits * 2  # degenerate but harmless: single-trait support
    if len(traits) != 2:
        raise ValueError("compare requires a two-trait configuration")
    a, b = traits
    init_counts = [0 if as_trait(x) == a else N for x in init_traits]
    init_idx = np.array([0 if as_trait(x) == a else 1 for x in init_traits], dtype=np.int8)

    if gamma <= 0.0:
        raise ValueError("gamma must be > 0 for the comparison")
    micro = microsim.micro_two_trait_batch(
        model, K, N, gamma, (a, b), init_counts, t_star / gamma, replicates, rng
    )
    if micro.poly_fraction > poly_tolerance:
        raise RuntimeError(
            f"{micro.poly_fraction:.1%} of microscopic replicates are polymorphic at the snapshot; "
            f"gamma={gamma} is too large for the TSS regime"
        )
    micro_idx = micro.dominant_index()

    tab = migration_fixation_table(model, K, (a, b), N)
    tss_idx = tss_finite_batch(
        tab, t_star, N, np.tile(init_idx, (replicates, 1)), rng
    )

    return _tv_report(gamma, t_star, micro_idx, tss_idx, micro.poly_fraction, (a, b), K)


def _tv_report(gamma, t_star, micro_idx, tss_idx, poly_frac, traits, K) -> CompareResult:
    R = micro_idx.shape[0]
    weights = (2 ** np.arange(K)).astype(np.int64)
    micro_codes = micro_idx.astype(np.int64) @ weights
    tss_codes = tss_idx.astype(np.int64) @ weights
    n_codes = 2**K
    p = np.bincount(micro_codes, minlength=n_codes) / R
    q = np.bincount(tss_codes, minlength=n_codes) / R
    tv = 0.5 * float(np.abs(p - q).sum())
    se = 0.5 * float(np.sqrt(np.sum(p * (1 - p) / R + q * (1 - q) / R)))
    support = tuple(
        tuple(traits[(code >> l) & 1] for l in range(K)) for code in range(n_codes)
    )
    return CompareResult(
        gamma=gamma,
        t_star=t_star,
        tv=tv,
        se=se,
        micro_poly_fraction=poly_frac,
        support=support,
        micro_probs=tuple(p.tolist()),
        tss_probs=tuple(q.tolist()),
    )
