"""The large-K limit: deterministic measure flow, tagged sites, McKean-Vlasov
particles, and propagation-of-chaos diagnostics.

The limiting empirical measure ``nu_t`` solves a closed weak equation with
a mutation-fixation term (rate ``N theta alpha`` against the mutation
kernel) and a migration-fixation term (rate ``N^2 lam alpha`` against
``nu_t`` itself).  With finitely many trait values and an r-grid the weak
equation closes into an ODE system for atom weights, integrated here with
fixed-step RK4; position integrals use the midpoint rule on a uniform grid.

Conditional on ``nu``, finitely many tagged sites evolve as independent
time-inhomogeneous jump processes; under spatial homogeneity the single-site
process is a McKean-Vlasov jump process whose kernel reads its own law,
simulated by an M-particle system (equivalently: the TSS dynamics with
K = M sites).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from metamoran import tss as tss_mod
from metamoran.kernels import (
    DISCRETE_PM,
    RateBoundError,
    RateModel,
    Trait,
    as_trait,
    fixation_probability,
    sample_mutation,
)
from metamoran.measures import AtomicMeasure
from metamoran.tss import SiteConfiguration

logger = logging.getLogger("metamoran.meanfield")

MASS_TOL = 1e-10
WEIGHT_TOL = 1e-12
TRAIT_MATCH_TOL = 1e-9


@dataclass(frozen=True)
class TaggedSite:
    """A tagged location ``z`` in [0,1] carrying trait ``x``."""

    z: float
    x: Trait

    def __post_init__(self):
        if not 0.0 <= self.z <= 1.0:
            raise ValueError(f"tagged-site position must lie in [0,1], got {self.z}")
        object.__setattr__(self, "x", as_trait(self.x))


def uniform_grid(G: int) -> np.ndarray:
    """Midpoints of G equal cells of [0,1]."""
    return (np.arange(G) + 0.5) / G


@dataclass
class MeanFieldSolution:
    """Finite-type solution of the limiting measure flow.

    ``weights[s, i, g]`` is the mass of trait ``i`` in grid cell ``g`` at
    snapshot ``times[s]``; each snapshot's weights sum to 1.
    """

    times: np.ndarray
    weights: np.ndarray
    traits: tuple
    grid: np.ndarray

    def measure_at(self, index: int) -> AtomicMeasure:
        atoms = []
        w = self.weights[index]
        for i, x in enumerate(self.traits):
            for g, r in enumerate(self.grid):
                if w[i, g] > 0.0:
                    atoms.append((float(r), x, float(w[i, g])))
        return AtomicMeasure.from_atoms(atoms)

    def mean_weights(self) -> np.ndarray:
        """Per-trait total mass trajectory, shape (S, n)."""
        return self.weights.sum(axis=2)

    def interpolate_index(self, t: float) -> int:
        """Snapshot index for the left-limit convention: the latest
        snapshot strictly before ``t`` (or the first one)."""
        idx = int(np.searchsorted(self.times, t, side="left")) - 1
        return max(idx, 0)


class MassLeakError(RuntimeError):
    """The mutation kernel moves mass outside the declared finite trait set."""


def _mutation_transition_table(
    model: RateModel, traits: Sequence[Trait], grid: np.ndarray, theta_tab: np.ndarray
) -> np.ndarray:
    """``q[g, i, j]``: probability that a mutation of trait ``i`` at ``r_g``
    lands on trait ``j``.  Raises :class:`MassLeakError` when any support
    point with positive mutation rate falls outside the trait set."""
    n = len(traits)
    G = len(grid)
    q = np.zeros((G, n, n))
    fam = model.mutation
    if fam.inactive or not np.any(theta_tab > 0.0):
        return q
    if fam.kind != DISCRETE_PM:
        raise MassLeakError(
            f"mutation family {fam.kind!r} has continuous support and cannot stay inside "
            "a finite trait set; use theta == 0 or a degenerate family"
        )
    d = len(traits[0])
    signs = np.array(np.meshgrid(*([[-1.0, 1.0]] * d), indexing="ij")).reshape(d, -1).T
    prob = 1.0 / len(signs)
    arr = np.array([np.asarray(x) for x in traits])
    for g in range(G):
        for i, x in enumerate(traits):
            if theta_tab[g, i] == 0.0:
                continue
            for s in signs:
                target = np.asarray(x) + fam.epsilon * s
                dist = np.max(np.abs(arr - target), axis=1)
                j = int(np.argmin(dist))
                if dist[j] > TRAIT_MATCH_TOL:
                    raise MassLeakError(
                        f"mutation from trait {x} at r={grid[g]!r} reaches {tuple(target)} "
                        "outside the trait set"
                    )
                q[g, i, j] += prob
    return q


def meanfield_finite_solve(
    model: RateModel,
    init: AtomicMeasure,
    trait_set: Sequence,
    horizon: float,
    dt: float,
    N: int,
    grid_G: int = 64,
    snapshot_dt: Optional[float] = None,
) -> MeanFieldSolution:
    """Integrate the finite-type weight ODE system of the limiting measure
    flow with RK4 at fixed ``dt``.

    ``init`` must be supported on ``trait_set x`` the midpoint grid of
    ``grid_G`` cells.  Total mass is conserved to ``1e-10``; weights that
    dip below ``-1e-12`` abort, smaller negative excursions are clipped to
    zero with a logged warning.
    """
    traits = [as_trait(x) for x in trait_set]
    if len(set(traits)) != len(traits):
        raise ValueError("trait_set contains duplicates")
    n = len(traits)
    grid = uniform_grid(grid_G)
    w0 = _weights_from_measure(init, traits, grid)

    alpha_inv = np.empty((grid_G, n, n))  # alpha_inv[g, i, j]: trait i invades j at r_g
    theta_tab = np.empty((grid_G, n))
    for g, r in enumerate(grid):
        for j, xj in enumerate(traits):
            theta_tab[g, j] = model.theta(float(r), xj)
            for i, xi in enumerate(traits):
                alpha_inv[g, i, j] = fixation_probability(model, float(r), xi, xj, N)
    lam_tab = np.empty((grid_G, n, grid_G, n))
    for g, r in enumerate(grid):
        for i, xi in enumerate(traits):
            for gp, rp in enumerate(grid):
                for j, xj in enumerate(traits):
                    lam_tab[g, i, gp, j] = model.lam(float(r), xi, float(rp), xj)
    if np.any(lam_tab > model.migration_bound * (1 + 1e-9)) or np.any(lam_tab < 0):
        raise RateBoundError("migration kernel outside [0, bound] on the grid")
    q_tab = _mutation_transition_table(model, traits, grid, theta_tab)

    n2 = float(N) * N
    n1 = float(N)

    def rhs(w: np.ndarray) -> np.ndarray:
        # w has shape (n, G); all tables index positions first.
        wt = w.T  # (G, n)
        inflow = np.einsum("gipj,jp->gij", lam_tab, w)  # sum_gp lam * w[j, gp]
        loss = wt * np.einsum("gji,gij->gi", alpha_inv, inflow)
        gain_inner = np.einsum("gjpi,ip->gji", lam_tab, w)
        gain = np.einsum("gj,gij,gji->gi", wt, alpha_inv, gain_inner)
        dw = n2 * (gain - loss)
        if q_tab.any():
            mut_gain = np.einsum("gj,gj,gij,gji->gi", wt, theta_tab, alpha_inv, q_tab)
            mut_loss = wt * theta_tab * np.einsum("gji,gij->gi", alpha_inv, q_tab)
            dw = dw + n1 * (mut_gain - mut_loss)
        return dw.T

    steps = int(round(horizon / dt))
    if snapshot_dt is None:
        stride = 1
    else:
        stride = max(1, int(round(snapshot_dt / dt)))
    times = [0.0]
    snaps = [w0.copy()]
    w = w0.copy()
    for step in range(1, steps + 1):
        k1 = rhs(w)
        k2 = rhs(w + 0.5 * dt * k1)
        k3 = rhs(w + 0.5 * dt * k2)
        k4 = rhs(w + dt * k3)
        w = w + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        w = _clip_weights(w, step * dt)
        total = w.sum()
        if abs(total - 1.0) > MASS_TOL:
            raise RuntimeError(f"mass leak at t={step * dt}: total weight {total!r}")
        if step % stride == 0 or step == steps:
            times.append(step * dt)
            snaps.append(w.copy())
    return MeanFieldSolution(
        times=np.array(times), weights=np.array(snaps), traits=tuple(traits), grid=grid
    )


def _clip_weights(w: np.ndarray, t: float) -> np.ndarray:
    low = w.min()
    if low < -WEIGHT_TOL:
        raise RuntimeError(f"weight blow-up at t={t}: minimum weight {low!r}")
    if low < 0.0:
        logger.warning("clipping weight %r to 0 at t=%s", low, t)
        w = np.clip(w, 0.0, None)
    return w


def _weights_from_measure(init: AtomicMeasure, traits: List[Trait], grid: np.ndarray) -> np.ndarray:
    n, G = len(traits), len(grid)
    w = np.zeros((n, G))
    arr = np.array([np.asarray(x) for x in traits])
    for r, x, weight in init.atoms:
        g = int(np.argmin(np.abs(grid - r)))
        if abs(grid[g] - r) > TRAIT_MATCH_TOL:
            raise ValueError(f"atom position {r!r} is not on the midpoint grid of {G} cells")
        dist = np.max(np.abs(arr - np.asarray(x)), axis=1)
        i = int(np.argmin(dist))
        if dist[i] > TRAIT_MATCH_TOL:
            raise ValueError(f"atom trait {x} is not in the declared trait set")
        w[i, g] += weight
    return w


# --- tagged sites ------------------------------------------------------------


def tagged_sites_run(
    model: RateModel,
    sites: Sequence[TaggedSite],
    nu_trajectory,
    horizon: float,
    rng: np.random.Generator,
    N: int,
) -> List[List[Tuple[float, Trait]]]:
    """Simulate tagged sites against a stored measure flow.

    Each site jumps at rate ``N theta alpha Q + N^2 int lam alpha dnu``;
    between snapshots ``nu`` is taken piecewise-constant with the left-limit
    convention.  Sites are advanced with the caller's stream one after the
    other: conditional on ``nu`` they are independent, so no coupling is
    lost.  Returns one jump-time/trait list per site.
    """
    times, atom_tables = _normalize_trajectory(nu_trajectory)
    if times[0] > 0.0 or times[-1] < horizon - 1e-12:
        raise ValueError("nu trajectory must cover [0, horizon]")
    C = model.bound_C
    C_mig = model.migration_bound
    total = N * C + N * N * C_mig
    out = []
    for site in sites:
        z = site.z
        x = site.x
        path = [(0.0, x)]
        t = 0.0
        while total > 0.0:
            t += rng.exponential(1.0 / total)
            if t > horizon:
                break
            if rng.random() * total < N * C:
                theta = model.theta(z, x)
                if theta < 0 or theta > C * (1 + 1e-9):
                    raise RateBoundError(f"theta={theta!r} outside [0, {C}] at z={z!r}")
                if rng.random() * C < theta:
                    y = as_trait(sample_mutation(model.mutation, z, x, rng))
                    if rng.random() < fixation_probability(model, z, y, x, N):
                        if y != x:
                            x = y
                            path.append((t, x))
            else:
                snap = atom_tables[_left_limit_index(times, t)]
                rp, y = _sample_atom(snap, rng)
                lam = model.lam(z, x, rp, y)
                if lam < 0 or lam > C_mig * (1 + 1e-9):
                    raise RateBoundError(f"lambda={lam!r} outside [0, {C_mig}]")
                if rng.random() * C_mig < lam * fixation_probability(model, z, y, x, N):
                    if y != x:
                        x = y
                        path.append((t, x))
        out.append(path)
    return out


def _normalize_trajectory(nu_trajectory):
    if isinstance(nu_trajectory, MeanFieldSolution):
        times = np.asarray(nu_trajectory.times, dtype=float)
        tables = [
            _atom_table(nu_trajectory.measure_at(i)) for i in range(len(times))
        ]
        return times, tables
    times = np.array([float(t) for t, _ in nu_trajectory])
    tables = [_atom_table(measure) for _, measure in nu_trajectory]
    return times, tables


def _atom_table(measure: AtomicMeasure):
    rs = measure.positions()
    xs = measure.traits()
    ws = measure.weights()
    return rs, xs, np.cumsum(ws)


def _left_limit_index(times: np.ndarray, t: float) -> int:
    idx = int(np.searchsorted(times, t, side="left")) - 1
    return max(idx, 0)


def _sample_atom(table, rng: np.random.Generator):
    rs, xs, cum = table
    u = rng.random() * cum[-1]
    k = int(np.searchsorted(cum, u, side="right"))
    k = min(k, len(xs) - 1)
    return float(rs[k]), xs[k]


# --- McKean-Vlasov particle system ---------------------------------------------


@dataclass
class MVResult:
    """M-particle approximation of the homogeneous McKean-Vlasov process."""

    times: np.ndarray
    fractions: Optional[np.ndarray]  # (S, n) trait fractions on the finite fast path
    traits: Optional[tuple]
    final: SiteConfiguration


def mckean_vlasov_run(
    model: RateModel,
    M: int,
    mu0: AtomicMeasure,
    horizon: float,
    rng: np.random.Generator,
    N: int,
    snapshot_dt: Optional[float] = None,
) -> MVResult:
    """Simulate ``M`` interacting particles whose empirical law stands in
    for the McKean-Vlasov measure: mutation-fixation at rate
    ``N theta alpha`` and migration-fixation toward a uniformly drawn other
    particle at rate ``N^2 lam alpha / M`` per ordered pair.

    This is exactly the TSS dynamics with ``K = M`` sites and homogeneous
    kernels, and is implemented as such.  Initial trait counts are the
    largest-remainder rounding of ``M * mu0`` weights, assigned to
    particles in a random permutation (exchangeable marginals).
    """
    if M < 2:
        raise ValueError("McKean-Vlasov particle count M must be >= 2")
    if not model.homogeneous:
        raise ValueError("mckean_vlasov_run requires a homogeneous model")
    traits = [as_trait(x) for _, x, _ in mu0.atoms]
    weights = mu0.weights()
    counts = _largest_remainder(weights, M)
    idx0 = np.repeat(np.arange(len(traits)), counts)
    idx0 = rng.permutation(idx0)
    if snapshot_dt is None:
        snapshot_dt = horizon / 100.0 if horizon > 0 else 1.0
    snaps = np.arange(0.0, horizon + snapshot_dt * 0.5, snapshot_dt)

    if model.mutation.inactive or _theta_zero_on(model, traits):
        tab_h = np.empty((len(traits), len(traits)))
        for i, xi in enumerate(traits):
            for j, xj in enumerate(traits):
                lam = model.lam(0.5, xi, 0.5, xj)
                if lam < 0 or lam > model.migration_bound * (1 + 1e-9):
                    raise RateBoundError(f"lambda={lam!r} outside [0, {model.migration_bound}]")
                tab_h[i, j] = lam * fixation_probability(model, 0.5, xj, xi, N)
        fractions, final_idx = tss_mod.tss_finite_sequential(
            tab_h, M, horizon, N, idx0, rng, snapshot_times=snaps
        )
        final = SiteConfiguration(x=[traits[i] for i in final_idx], time=horizon)
        return MVResult(times=snaps, fractions=fractions, traits=tuple(traits), final=final)

    init = SiteConfiguration(x=[traits[i] for i in idx0], time=0.0)
    trajectory = tss_mod.tss_run(model, init, N, horizon, rng, record_jumps=False)
    return MVResult(times=snaps, fractions=None, traits=None, final=trajectory[-1])


def _theta_zero_on(model: RateModel, traits) -> bool:
    return all(model.theta(r, x) == 0.0 for r in (0.25, 0.75) for x in traits)


def _largest_remainder(weights: np.ndarray, M: int) -> np.ndarray:
    raw = weights * M
    counts = np.floor(raw).astype(int)
    short = M - counts.sum()
    if short > 0:
        order = np.argsort(-(raw - counts), kind="stable")
        counts[order[:short]] += 1
    return counts


# --- propagation of chaos -------------------------------------------------------


@dataclass(frozen=True)
class ChaosScanRow:
    K: int
    estimate: float
    stderr: float


def chaos_decay_scan(
    model: RateModel,
    K_list: Sequence[int],
    statistic: Callable[[Trait], float],
    t_star: float,
    replicates: int,
    N: int,
    mu0: AtomicMeasure,
    rng: np.random.Generator,
) -> List[ChaosScanRow]:
    """Correlation between a bounded statistic of sites 1 and 2 at ``t_star``
    for a homogeneous TSS with i.i.d. ``mu0`` initial sites, one row per K.

    Requires inactive mutation (finite trait support) so the batch engine
    applies.
    """
    if not model.homogeneous:
        raise ValueError("chaos_decay_scan requires a homogeneous model")
    traits = [as_trait(x) for _, x, _ in mu0.atoms]
    weights = mu0.weights()
    if not (model.mutation.inactive or _theta_zero_on(model, traits)):
        raise ValueError("chaos_decay_scan requires inactive mutation (finite trait support)")
    stat_values = np.array([statistic(x) for x in traits], dtype=float)
    rows = []
    for K in K_list:
        tab = _homogeneous_pair_table(model, traits, N, K)
        init_idx = rng.choice(len(traits), size=(replicates, K), p=weights).astype(np.int8)
        final = tss_mod.tss_finite_batch(tab, t_star, N, init_idx, rng)
        s1 = stat_values[final[:, 0]]
        s2 = stat_values[final[:, 1]]
        rows.append(ChaosScanRow(K=K, estimate=_corr(s1, s2), stderr=1.0 / math.sqrt(replicates)))
    return rows


def _homogeneous_pair_table(model: RateModel, traits, N: int, K: int) -> np.ndarray:
    m = len(traits)
    base = np.empty((m, m))
    for i, xi in enumerate(traits):
        for j, xj in enumerate(traits):
            base[i, j] = model.lam(0.5, xi, 0.5, xj) * fixation_probability(model, 0.5, xj, xi, N)
    return np.broadcast_to(base[None, :, None, :], (K, m, K, m))


def _corr(a: np.ndarray, b: np.ndarray) -> float:
    sa, sb = a.std(), b.std()
    if sa == 0.0 or sb == 0.0:
        return 0.0
    return float(np.corrcoef(a, b)[0, 1])
