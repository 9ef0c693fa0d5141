"""Accelerated-time, slowed-migration regime: the canonical jump-diffusion.

The dominant trait at a fixed location ``z`` follows

    dX_t = (N-1)/2 * theta(z, X) * Sigma(z, X) . grad2 Fit(z, X, X) dt
           + sqrt(theta(z, X)) * sigma(z, X) . dB_t

plus migration-fixation jumps to a trait drawn against the measure flow:
rate ``N^2 int lam((z, x), (r, y)) alpha(z, y, x) xi_{t-}(dr, dy)``.  The
measure ``xi`` is always represented by an interacting particle ensemble;
the deterministic flow equation is never discretized directly.

Integration is Euler-Maruyama with a post-step thinned jump pass per dt
(weak order 1): each particle first diffuses, then with probability
``N^2 * C_mig * dt`` proposes a jump toward a uniformly drawn particle of
the pre-step ensemble, accepted with ``lam * alpha / C_mig``.  The step
size must keep the per-step jump probability below 0.1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from metamoran.kernels import (
    RateBoundError,
    RateModel,
    fitness_gradient,
    fixation_from_rho_vec,
    fixation_probability,
    sigma_scalar,
)

JUMP_PROB_LIMIT = 0.1


@dataclass
class XiEnsemble:
    """M equal-weight particles approximating the measure flow.

    Positions are frozen along a trajectory (sites do not move; traits do).
    """

    r: np.ndarray  # (M,)
    x: np.ndarray  # (M, d)
    time: float = 0.0

    def __post_init__(self):
        self.r = np.asarray(self.r, dtype=float)
        self.x = np.atleast_2d(np.asarray(self.x, dtype=float))
        if self.x.shape[0] != self.r.shape[0]:
            raise ValueError("positions and traits must have matching particle counts")
        if self.r.shape[0] < 2:
            raise ValueError("XiEnsemble needs at least 2 particles")

    @property
    def M(self) -> int:
        return self.r.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]

    def copy(self) -> "XiEnsemble":
        return XiEnsemble(r=self.r.copy(), x=self.x.copy(), time=self.time)


@dataclass
class XiTrajectory:
    times: np.ndarray
    snapshots: List[XiEnsemble]
    accepted_jumps: int = 0

    def left_limit(self, t: float) -> XiEnsemble:
        idx = int(np.searchsorted(self.times, t, side="left")) - 1
        return self.snapshots[max(idx, 0)]


def drift(model: RateModel, r: float, x, N: int) -> np.ndarray:
    """Canonical drift ``(N-1)/2 * theta * Sigma . grad2 Fit`` at ``(r, x)``.

    All supported mutation families are isotropic, so ``Sigma`` acts as the
    scalar ``sigma_scalar^2``.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    theta = model.theta(r, x)
    s2 = sigma_scalar(model.mutation, r, x) ** 2
    return 0.5 * (N - 1) * theta * s2 * fitness_gradient(model, r, x)


def _theta_vec(model: RateModel, r: np.ndarray, x: np.ndarray) -> np.ndarray:
    if model.theta_vec is not None:
        return np.asarray(model.theta_vec(r, x), dtype=float)
    return np.array([model.theta(float(ri), xi) for ri, xi in zip(r, x)])


def _lam_vec(model: RateModel, r, x, rp, y) -> np.ndarray:
    if model.lam_vec is not None:
        return np.asarray(model.lam_vec(r, x, rp, y), dtype=float)
    return np.array(
        [model.lam(float(a), xa, float(b), yb) for a, xa, b, yb in zip(r, x, rp, y)]
    )


def _c_vec(model: RateModel, r, x, y) -> np.ndarray:
    if model.c_vec is not None:
        return np.asarray(model.c_vec(r, x, y), dtype=float)
    return np.array([model.c(float(ri), xi, yi) for ri, xi, yi in zip(r, x, y)])


def _fitness_gradient_vec(model: RateModel, r: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Central-difference selection gradient for a whole ensemble.

    Uses a common step per batch (1e-5 * max(1, max-norm)); falls back to
    the scalar path when vectorized kernels are unavailable.
    """
    M, d = x.shape
    if model.c_vec is None:
        return np.array([fitness_gradient(model, float(ri), xi) for ri, xi in zip(r, x)])
    h = 1e-5 * max(1.0, float(np.max(np.linalg.norm(x, axis=1))))
    grad = np.empty((M, d))
    for k in range(d):
        hi = x.copy()
        lo = x.copy()
        hi[:, k] += h
        lo[:, k] -= h
        fit_hi = _fit_vec(model, r, hi, x)
        fit_lo = _fit_vec(model, r, lo, x)
        grad[:, k] = (fit_hi - fit_lo) / (2.0 * h)
    return grad


def _fit_vec(model: RateModel, r, y, x) -> np.ndarray:
    c_xy = _c_vec(model, r, x, y)
    c_yx = _c_vec(model, r, y, x)
    with np.errstate(all="ignore"):
        out = np.log(c_xy / c_yx)
    if not np.all(np.isfinite(out)):
        bad = int(np.argmin(np.isfinite(out)))
        raise RateBoundError(
            f"relative fitness undefined near r={r[bad] if np.ndim(r) else r!r}, x={x[bad]!r}"
        )
    return out


def _sigma_scalar_vec(model: RateModel, r: np.ndarray, x: np.ndarray) -> np.ndarray:
    fam = model.mutation
    if callable(fam.scale):
        return np.array([sigma_scalar(fam, float(ri), xi) for ri, xi in zip(r, x)])
    return np.full(x.shape[0], sigma_scalar(fam, 0.0, x[0], d=x.shape[1]))


def _alpha_vec(model: RateModel, z, y, x, N: int) -> np.ndarray:
    """Fixation probability of invader traits ``y`` against residents ``x``
    at positions ``z``, vectorized over particles."""
    c_xy = _c_vec(model, z, x, y)
    c_yx = _c_vec(model, z, y, x)
    with np.errstate(all="ignore"):
        rho = np.where(c_xy > 0.0, c_yx / c_xy, np.inf)
    alpha = fixation_from_rho_vec(rho, N)
    return np.where(c_xy > 0.0, alpha, 0.0)


def canonical_ensemble_run(
    model: RateModel,
    ensemble0: XiEnsemble,
    dt: float,
    horizon: float,
    rng: np.random.Generator,
    N: int,
    snapshot_dt: Optional[float] = None,
) -> XiTrajectory:
    """Advance an interacting particle ensemble with the operator-split
    Euler-Maruyama + jump-thinning scheme.

    Within a step every particle diffuses against its own position, then a
    single jump pass reads the frozen pre-step ensemble (synchronous
    update): with probability ``N^2 C_mig dt`` a particle proposes a jump,
    draws a target particle uniformly, and adopts its pre-step trait with
    probability ``lam * alpha / C_mig``.
    """
    jump_prob = N * N * model.migration_bound * dt
    if jump_prob >= JUMP_PROB_LIMIT:
        raise ValueError(
            f"per-step jump probability N^2*C*dt={jump_prob!r} must stay below {JUMP_PROB_LIMIT}; "
            "reduce dt or declare a tighter lambda bound"
        )
    ens = ensemble0.copy()
    M = ens.M
    steps = int(round(horizon / dt))
    if snapshot_dt is None:
        stride = max(1, steps // 100)
    else:
        stride = max(1, int(round(snapshot_dt / dt)))
    times = [ens.time]
    snapshots = [ens.copy()]
    accepted_jumps = 0
    sqrt_dt = math.sqrt(dt)
    coef = 0.5 * (N - 1)
    for step in range(1, steps + 1):
        x_prev = ens.x.copy()
        theta = _theta_vec(model, ens.r, ens.x)
        if np.any(theta < 0) or np.any(theta > model.bound_C * (1 + 1e-9)):
            raise RateBoundError("theta outside [0, bound_C] in canonical step")
        if np.any(theta > 0):
            s = _sigma_scalar_vec(model, ens.r, ens.x)
            grad = _fitness_gradient_vec(model, ens.r, ens.x)
            dB = rng.standard_normal(ens.x.shape) * sqrt_dt
            ens.x = (
                ens.x
                + (coef * theta * s * s)[:, None] * grad * dt
                + (np.sqrt(theta) * s)[:, None] * dB
            )
        if jump_prob > 0.0:
            u_prop = rng.random(M)
            targets = rng.integers(0, M, size=M)
            u_acc = rng.random(M)
            proposers = u_prop < jump_prob
            y = x_prev[targets]
            lam = _lam_vec(model, ens.r, ens.x, ens.r[targets], y)
            if np.any(lam < 0) or np.any(lam > model.migration_bound * (1 + 1e-9)):
                raise RateBoundError("lambda outside [0, bound] in canonical jump pass")
            alpha = _alpha_vec(model, ens.r, y, ens.x, N)
            accept = proposers & (u_acc * model.migration_bound < lam * alpha)
            if np.any(accept):
                ens.x[accept] = y[accept]
                accepted_jumps += int(accept.sum())
        ens.time = times[0] + step * dt
        if step % stride == 0 or step == steps:
            times.append(ens.time)
            snapshots.append(ens.copy())
    return XiTrajectory(times=np.array(times), snapshots=snapshots, accepted_jumps=accepted_jumps)


def tagged_canonical_run(
    model: RateModel,
    z: float,
    x0,
    xi_trajectory: XiTrajectory,
    dt: float,
    horizon: float,
    rng: np.random.Generator,
    N: int,
) -> Tuple[np.ndarray, np.ndarray]:
    """Single-particle canonical dynamics against stored measure snapshots.

    Same per-step scheme as the ensemble run, but jump targets are drawn
    from the stored ``xi`` snapshots with the left-limit convention.
    Returns ``(times, path)`` with the full per-step trajectory.
    """
    jump_prob = N * N * model.migration_bound * dt
    if jump_prob >= JUMP_PROB_LIMIT:
        raise ValueError(
            f"per-step jump probability N^2*C*dt={jump_prob!r} must stay below {JUMP_PROB_LIMIT}"
        )
    if xi_trajectory.times[0] > 0.0 or xi_trajectory.times[-1] < horizon - 1e-12:
        raise ValueError("xi trajectory must cover [0, horizon]")
    x = np.atleast_1d(np.asarray(x0, dtype=float)).copy()
    d = len(x)
    steps = int(round(horizon / dt))
    times = np.arange(steps + 1) * dt
    path = np.empty((steps + 1, d))
    path[0] = x
    sqrt_dt = math.sqrt(dt)
    coef = 0.5 * (N - 1)
    for step in range(1, steps + 1):
        t = times[step - 1]
        theta = model.theta(z, x)
        if theta < 0 or theta > model.bound_C * (1 + 1e-9):
            raise RateBoundError(f"theta={theta!r} outside [0, {model.bound_C}]")
        if theta > 0:
            s = sigma_scalar(model.mutation, z, x)
            g = fitness_gradient(model, z, x)
            x = x + coef * theta * s * s * g * dt + math.sqrt(theta) * s * sqrt_dt * rng.standard_normal(d)
        if jump_prob > 0.0 and rng.random() < jump_prob:
            snap = xi_trajectory.left_limit(t)
            k = int(rng.integers(snap.M))
            y = snap.x[k]
            lam = model.lam(z, x, float(snap.r[k]), y)
            if lam < 0 or lam > model.migration_bound * (1 + 1e-9):
                raise RateBoundError(f"lambda={lam!r} outside [0, {model.migration_bound}]")
            alpha = fixation_probability(model, z, y, x, N)
            if rng.random() * model.migration_bound < lam * alpha:
                x = np.asarray(y, dtype=float).copy()
        path[step] = x
    return times, path
