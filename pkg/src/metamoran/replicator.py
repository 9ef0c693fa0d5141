"""Small-mutation, unaccelerated-time regime: spatial weight equations and
the homogeneous antisymmetric replicator ODE.

With mutation effects vanishing and time not rescaled, only migration-
fixation moves mass, so the trait support is frozen and the per-position
weights obey an integro-differential system.  Under spatial homogeneity the
mean weights satisfy conservative replicator dynamics

    d wbar_i / dt = wbar_i * sum_j a_ij wbar_j,

with the antisymmetric interaction matrix a_ij = G(x_i, x_j),
G(y, x) = N^2 (lam(x, y) alpha(y, x) - lam(y, x) alpha(x, y)):
the net migration-fixation flow from residents ``x`` toward trait ``y``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from metamoran.kernels import RateModel, as_trait, fixation_probability
from metamoran.meanfield import uniform_grid

logger = logging.getLogger("metamoran.replicator")

ANTISYMMETRY_TOL = 1e-12
BLOWUP_TOL = -1e-8


@dataclass(frozen=True)
class InteractionMatrix:
    """Antisymmetric pairwise interaction matrix over a finite trait list."""

    A: np.ndarray
    traits: tuple

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError("interaction matrix must be square")
        if np.max(np.abs(A + A.T)) > ANTISYMMETRY_TOL:
            raise ValueError("interaction matrix must be antisymmetric")
        object.__setattr__(self, "A", A)

    @property
    def n(self) -> int:
        return self.A.shape[0]


def build_interaction_matrix(model: RateModel, traits: Sequence, N: int) -> InteractionMatrix:
    """Evaluate ``a_ij = G(x_i, x_j)`` for a homogeneous model.

    The raw matrix is antisymmetrized numerically as ``(A - A^T)/2`` and the
    maximum asymmetry is logged; duplicate traits are rejected (their rows
    would be ambiguous zeros).
    """
    traits = [as_trait(x) for x in traits]
    if len(set(traits)) != len(traits):
        dupes = sorted({x for x in traits if traits.count(x) > 1})
        raise ValueError(f"duplicate traits in interaction matrix: {dupes}")
    if not model.homogeneous:
        raise ValueError("interaction matrices are defined for homogeneous models")
    n = len(traits)
    r = 0.5  # arbitrary: kernels are position-free in the homogeneous case
    raw = np.zeros((n, n))
    for i, xi in enumerate(traits):
        for j, xj in enumerate(traits):
            if i == j:
                continue
            gain = model.lam(r, xj, r, xi) * fixation_probability(model, r, xi, xj, N)
            loss = model.lam(r, xi, r, xj) * fixation_probability(model, r, xj, xi, N)
            raw[i, j] = N * N * (gain - loss)
    asym = float(np.max(np.abs(raw + raw.T)))
    if asym > 0.0:
        logger.info("max antisymmetry defect %.3e (removed by (A - A^T)/2)", asym)
    A = 0.5 * (raw - raw.T)
    return InteractionMatrix(A=A, traits=tuple(traits))


def replicator_integrate(
    A: InteractionMatrix,
    w0: Sequence[float],
    dt: float,
    horizon: float,
    record_stride: int = 1,
) -> Tuple[np.ndarray, np.ndarray]:
    """RK4 integration of the mean-weight replicator ODE.

    No renormalization is applied: conservation of total mass is a
    consequence of antisymmetry and is asserted by tests, not enforced.
    Aborts if any weight falls below -1e-8 (integration blow-up).
    Returns ``(times, W)`` with ``W[s]`` the weights at ``times[s]``.
    """
    w = np.asarray(w0, dtype=float).copy()
    if w.shape != (A.n,):
        raise ValueError(f"w0 must have length {A.n}")
    if np.any(w < 0):
        raise ValueError("initial weights must be nonnegative")
    mat = A.A

    def rhs(v: np.ndarray) -> np.ndarray:
        return v * (mat @ v)

    steps = int(round(horizon / dt))
    times = [0.0]
    snaps = [w.copy()]
    for step in range(1, steps + 1):
        k1 = rhs(w)
        k2 = rhs(w + 0.5 * dt * k1)
        k3 = rhs(w + 0.5 * dt * k2)
        k4 = rhs(w + dt * k3)
        w = w + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if np.min(w) < BLOWUP_TOL:
            raise RuntimeError(f"replicator weight blow-up at t={step * dt}: min={np.min(w)!r}")
        if step % record_stride == 0 or step == steps:
            times.append(step * dt)
            snaps.append(w.copy())
    return np.array(times), np.array(snaps)


def spatial_weights_integrate(
    model: RateModel,
    traits: Sequence,
    w0: np.ndarray,
    dt: float,
    horizon: float,
    N: int,
    record_stride: int = 1,
) -> Tuple[np.ndarray, np.ndarray]:
    """RK4 integration of the spatial weight system on a uniform r-grid.

    ``w0[i, g]`` is the weight density of trait ``i`` at grid midpoint
    ``r_g`` (G cells), normalized so that ``sum_i mean_g w0[i, g] == 1``.
    Position integrals use the midpoint rule.  Returns ``(times, W)`` with
    ``W[s, i, g]``.
    """
    traits = [as_trait(x) for x in traits]
    w = np.asarray(w0, dtype=float).copy()
    n, G = w.shape
    if n != len(traits):
        raise ValueError("w0 first axis must match the trait list")
    grid = uniform_grid(G)
    alpha_inv = np.empty((G, n, n))
    for g, r in enumerate(grid):
        for i, xi in enumerate(traits):
            for j, xj in enumerate(traits):
                alpha_inv[g, i, j] = fixation_probability(model, float(r), xi, xj, N)
    lam_tab = np.empty((G, n, G, n))
    for g, r in enumerate(grid):
        for i, xi in enumerate(traits):
            for gp, rp in enumerate(grid):
                for j, xj in enumerate(traits):
                    lam_tab[g, i, gp, j] = model.lam(float(r), xi, float(rp), xj)
    n2 = float(N) * N
    cell = 1.0 / G  # midpoint-rule cell width

    def rhs(v: np.ndarray) -> np.ndarray:
        vt = v.T
        inflow = cell * np.einsum("gipj,jp->gij", lam_tab, v)
        loss = vt * np.einsum("gji,gij->gi", alpha_inv, inflow)
        gain_inner = cell * np.einsum("gjpi,ip->gji", lam_tab, v)
        gain = np.einsum("gj,gij,gji->gi", vt, alpha_inv, gain_inner)
        return (n2 * (gain - loss)).T

    steps = int(round(horizon / dt))
    times = [0.0]
    snaps = [w.copy()]
    for step in range(1, steps + 1):
        k1 = rhs(w)
        k2 = rhs(w + 0.5 * dt * k1)
        k3 = rhs(w + 0.5 * dt * k2)
        k4 = rhs(w + dt * k3)
        w = w + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if np.min(w) < BLOWUP_TOL:
            raise RuntimeError(f"spatial weight blow-up at t={step * dt}: min={np.min(w)!r}")
        if step % record_stride == 0 or step == steps:
            times.append(step * dt)
            snaps.append(w.copy())
    return np.array(times), np.array(snaps)


def invasion_check(A: InteractionMatrix, w0: Sequence[float]) -> Optional[int]:
    """Index (0-based) of the trait guaranteed to invade: present initially
    and with a strictly positive interaction against every other trait.
    Antisymmetry makes such an index unique; returns None when absent."""
    w = np.asarray(w0, dtype=float)
    if w.shape != (A.n,):
        raise ValueError(f"w0 must have length {A.n}")
    for i in range(A.n):
        if w[i] > 0.0 and all(A.A[i, j] > 0.0 for j in range(A.n) if j != i):
            return i
    return None


def interior_equilibrium(A: InteractionMatrix) -> Optional[np.ndarray]:
    """Interior zero of ``A w = 0`` on the simplex, when one exists.

    For odd n an antisymmetric matrix has a nontrivial kernel; the kernel
    vector normalized to the simplex is the interior equilibrium if all its
    entries share a sign.  Returns None otherwise.
    """
    _, s, vt = np.linalg.svd(A.A)
    if s[0] > 0 and s[-1] > 1e-9 * s[0]:
        return None
    v = vt[-1]
    v = v * np.sign(v[np.argmax(np.abs(v))])
    if np.any(v < 1e-12):
        return None
    return v / v.sum()
