"""Canonical jump-diffusion oracles: exact Gaussian laws, exponential
holding times, weak-order scaling, jump-rate audits, the drift identity."""

import math

import numpy as np
import pytest

from conftest import degenerate_mutation, neutral_model
from metamoran import canonical, kernels
from metamoran.canonical import (
    XiEnsemble,
    XiTrajectory,
    canonical_ensemble_run,
    drift,
    tagged_canonical_run,
)
from metamoran.kernels import MutationFamily


def gaussian_family(scale=1.0):
    return MutationFamily(kind=kernels.GAUSSIAN, epsilon=1.0, scale=scale)


def exp_drift_model():
    """c = exp(y-x), theta = 1, Sigma = 1, lam = 0: drift (N-1)."""
    return kernels.model_from_expressions(
        c="exp(y-x)",
        theta="1",
        lam="0",
        mutation=gaussian_family(),
        bound_C=1e6,
        lam_bound=0.0,
        trait_box=(-6.0, 7.0),
    )


def symmetric_model():
    return kernels.model_from_expressions(
        c="1 + (x-y)^2",
        theta="1",
        lam="0",
        mutation=gaussian_family(),
        bound_C=500.0,
        lam_bound=0.0,
        trait_box=(-10.0, 10.0),
    )


def ou_model():
    """c = exp((x^2 - y^2)/2): Fit(y,x) = x^2 - y^2, drift = -(N-1) theta x."""
    return kernels.model_from_expressions(
        c="exp((x^2 - y^2)/2)",
        theta="1",
        lam="0",
        mutation=gaussian_family(),
        bound_C=1e9,
        lam_bound=0.0,
        trait_box=(-6.0, 6.0),
    )


def test_drift_zero_for_symmetric_kernel():
    assert drift(symmetric_model(), 0.3, (0.7,), N=4)[0] == pytest.approx(0.0, abs=1e-6)


def test_drift_exp_kernel_unit():
    # (N-1)/2 * theta * Sigma * grad Fit = 1/2 * 1 * 1 * 2 = 1 at N=2
    assert drift(exp_drift_model(), 0.1, (0.0,), N=2)[0] == pytest.approx(1.0, rel=1e-6)


def test_drift_scales_with_n():
    model = exp_drift_model()
    d2 = drift(model, 0.1, (0.2,), N=2)[0]
    d5 = drift(model, 0.1, (0.2,), N=5)[0]
    assert d5 == pytest.approx(4.0 * d2, rel=1e-9)


def test_jump_probability_precondition(rng):
    model = neutral_model(lam="1")
    ens = XiEnsemble(r=np.array([0.2, 0.8]), x=np.array([[0.0], [1.0]]))
    with pytest.raises(ValueError):
        canonical_ensemble_run(model, ens, dt=0.1, horizon=1.0, rng=rng, N=2)


def test_pure_brownian_moments(rng):
    # lam = 0, c symmetric, theta = 1, Sigma = 1: X_t is Brownian motion
    model = symmetric_model()
    M, t = 10_000, 1.0
    ens = XiEnsemble(r=np.full(M, 0.5), x=np.full((M, 1), 0.25))
    out = canonical_ensemble_run(model, ens, dt=1e-2, horizon=t, rng=rng, N=2)
    xs = out.snapshots[-1].x[:, 0]
    se_mean = math.sqrt(t / M)
    assert abs(xs.mean() - 0.25) <= 4 * se_mean
    se_var = math.sqrt(2.0 / M) * t
    assert abs(xs.var() - t) <= 4 * se_var


def test_constant_drift_mean(rng):
    model = exp_drift_model()
    M, t = 10_000, 1.0
    ens = XiEnsemble(r=np.full(M, 0.5), x=np.zeros((M, 1)))
    out = canonical_ensemble_run(model, ens, dt=1e-2, horizon=t, rng=rng, N=2)
    xs = out.snapshots[-1].x[:, 0]
    assert abs(xs.mean() - 1.0) <= 4 * math.sqrt(t / M)


def test_frozen_without_noise_or_jumps(rng):
    model = kernels.model_from_expressions(
        c="1", theta="0", lam="0", mutation=gaussian_family(), bound_C=1.0, lam_bound=0.0
    )
    ens = XiEnsemble(r=np.array([0.1, 0.9]), x=np.array([[0.3], [0.6]]))
    out = canonical_ensemble_run(model, ens, dt=1e-2, horizon=2.0, rng=rng, N=3)
    assert np.array_equal(out.snapshots[-1].x, ens.x)
    assert out.accepted_jumps == 0


def test_weak_order_variance_bias_halves(rng):
    # OU dynamics: Euler-Maruyama's terminal-variance bias scales like dt;
    # the pooled error ratio between dt and dt/2 lands in [1.3, 3].
    model = ou_model()
    T, M = 2.0, 100_000
    # drift -(N-1) theta x = -x at N=2: Var X_T = (1 - e^{-2T})/2
    exact_var = 0.5 * (1.0 - math.exp(-2.0 * T))
    errors = {0.1: [], 0.05: []}
    for seed in range(10):
        for dt in (0.1, 0.05):
            sub = np.random.default_rng(900 + seed)
            ens = XiEnsemble(r=np.full(M, 0.5), x=np.zeros((M, 1)))
            out = canonical_ensemble_run(model, ens, dt=dt, horizon=T, rng=sub, N=2)
            errors[dt].append(abs(out.snapshots[-1].x[:, 0].var() - exact_var))
    ratio = np.mean(errors[0.1]) / np.mean(errors[0.05])
    assert 1.3 <= ratio <= 3.0


def test_jump_rate_audit(rng):
    # theta = 0, lam and c constant: every particle jumps (visibly or not)
    # at rate N^2 lam alpha = N lam; total accepted jumps are Poisson.
    lam_value = 0.7
    model = kernels.model_from_expressions(
        c="1", theta="0", lam=repr(lam_value), mutation=degenerate_mutation(),
        bound_C=1.0, lam_bound=lam_value,
    )
    M, T, N, dt = 2_000, 4.0, 2, 0.005
    ens = XiEnsemble(r=np.full(M, 0.5), x=rng.normal(size=(M, 1)))
    out = canonical_ensemble_run(model, ens, dt=dt, horizon=T, rng=rng, N=N)
    mean = M * T * N * lam_value  # N^2 lam / N
    assert abs(out.accepted_jumps - mean) <= 4 * math.sqrt(mean)


def test_tagged_holding_time_exponential(rng):
    # xi = delta at (r*, y*), theta = 0: two-state jump process; the
    # holding-time mean matches [N^2 lam alpha]^{-1}
    lam_value = 1.0
    model = kernels.model_from_expressions(
        c="1", theta="0", lam=repr(lam_value), mutation=degenerate_mutation(),
        bound_C=1.0, lam_bound=lam_value,
    )
    N, dt = 2, 0.005
    y_star = np.array([[0.9], [0.9]])
    snap = XiEnsemble(r=np.array([0.4, 0.4]), x=y_star)
    horizon = 8.0
    xi = XiTrajectory(times=np.array([0.0, horizon]), snapshots=[snap, snap])
    rate = N * N * lam_value * (1.0 / N)
    holds = []
    for _ in range(1_200):
        times, path = tagged_canonical_run(model, 0.3, (0.1,), xi, dt, horizon, rng, N)
        jumps = np.nonzero(path[:, 0] != 0.1)[0]
        if len(jumps):
            holds.append(times[jumps[0]])
    assert len(holds) > 1_100
    mean = float(np.mean(holds))
    se = (1.0 / rate) / math.sqrt(len(holds))
    # dt/2 discretization bias is well inside the Monte Carlo band
    assert abs(mean - 1.0 / rate) <= 4 * se + dt


def test_tagged_matches_ensemble_without_jumps(rng):
    # lam = 0 reduces the tagged run to the SDE alone; its statistics match
    # the ensemble run's single-particle marginals
    model = ou_model()
    N, dt, T = 2, 0.01, 1.0
    M = 5_000
    ens = XiEnsemble(r=np.full(M, 0.5), x=np.full((M, 1), 0.8))
    out = canonical_ensemble_run(model, ens, dt=dt, horizon=T, rng=rng, N=N)
    ens_terminal = out.snapshots[-1].x[:, 0]
    dummy = XiTrajectory(times=np.array([0.0, T]), snapshots=[ens, ens])
    tagged_terminal = np.array([
        tagged_canonical_run(model, 0.5, (0.8,), dummy, dt, T, rng, N)[1][-1, 0]
        for _ in range(1_500)
    ])
    se = math.sqrt(ens_terminal.var() / M + tagged_terminal.var() / len(tagged_terminal))
    assert abs(ens_terminal.mean() - tagged_terminal.mean()) <= 4 * se


def test_tagged_zero_displacement_at_critical_point(rng):
    # OU critical point x = 0: zero drift, symmetric noise
    model = ou_model()
    N, dt, T = 2, 0.01, 0.25
    snap = XiEnsemble(r=np.array([0.5, 0.5]), x=np.array([[0.0], [0.0]]))
    xi = XiTrajectory(times=np.array([0.0, T]), snapshots=[snap, snap])
    finals = np.array([
        tagged_canonical_run(model, 0.5, (0.0,), xi, dt, T, rng, N)[1][-1, 0]
        for _ in range(600)
    ])
    assert abs(finals.mean()) <= 4 * finals.std() / math.sqrt(len(finals))


def test_homogeneous_tagged_vs_live_ensemble(rng):
    # with matching kernels, a tagged particle driven by the ensemble's own
    # snapshots reproduces the ensemble marginal statistics
    lam_value = 0.5
    model = kernels.model_from_expressions(
        c="1", theta="0", lam=repr(lam_value), mutation=degenerate_mutation(),
        bound_C=1.0, lam_bound=lam_value,
    )
    N, dt, T, M = 2, 0.01, 2.0, 4_000
    x0 = rng.choice([0.0, 1.0], size=(M, 1), p=[0.5, 0.5])
    ens = XiEnsemble(r=np.full(M, 0.5), x=x0)
    out = canonical_ensemble_run(model, ens, dt=dt, horizon=T, rng=rng, N=N, snapshot_dt=0.1)
    ens_mean = out.snapshots[-1].x[:, 0].mean()
    tagged_terminal = np.array([
        tagged_canonical_run(model, 0.5, (0.0,), out, dt, T, rng, N)[1][-1, 0]
        for _ in range(1_200)
    ])
    # the tagged particle starts at trait 0; its terminal mean must match
    # the ensemble's conditional motion; compare against the ensemble
    # particles that started at 0
    started_zero = x0[:, 0] == 0.0
    ens_cond = out.snapshots[-1].x[started_zero, 0]
    se = math.sqrt(ens_cond.var() / len(ens_cond) + tagged_terminal.var() / len(tagged_terminal))
    assert abs(ens_cond.mean() - tagged_terminal.mean()) <= 4 * se


def test_drift_identity_random_kernels(rng):
    # N grad2 alpha(z, x, x) equals ((N-1)/(2N)) * N grad2 Fit(z, x, x)
    # on smooth positive kernels (small random quadratic exponents)
    for trial in range(10):
        d = int(rng.integers(1, 4))
        u = rng.uniform(-0.5, 0.5, size=d)
        v = rng.uniform(-0.5, 0.5, size=d)
        W = rng.uniform(-0.3, 0.3, size=(d, d))

        def c(r, a, b):
            a = np.asarray(a)
            b = np.asarray(b)
            return math.exp(float(u @ a + v @ b + a @ W @ b))

        model = kernels.RateModel(
            c=c, theta=lambda r, x: 0.0, lam=lambda r, x, rp, y: 0.0,
            mutation=degenerate_mutation(), bound_C=1e9,
        )
        x = tuple(rng.uniform(-1, 1, size=d))
        for N in (2, 5, 10):
            g_alpha = kernels.fixation_gradient(model, 0.5, x, N)
            g_fit = kernels.fitness_gradient(model, 0.5, x)
            target = (N - 1) / (2 * N) * g_fit
            denom = max(np.linalg.norm(target), 1e-9)
            assert np.linalg.norm(g_alpha - target) / denom <= 1e-4
