"""Replicator oracles: interaction-matrix values from the worked kernels,
invasion verdicts, conservation, cycling, spatial reduction."""

import math

import numpy as np
import pytest

from conftest import example1_model, example2_model
from metamoran import replicator
from metamoran.replicator import (
    InteractionMatrix,
    build_interaction_matrix,
    interior_equilibrium,
    invasion_check,
    replicator_integrate,
    spatial_weights_integrate,
)

SQRT3 = math.sqrt(3.0)


def test_example1_matrix_values():
    # lam*alpha = x(1+y)/N^2 gives a_ij = x_j - x_i
    A = build_interaction_matrix(example1_model(), [(0.2,), (0.5,), (0.9,)], N=2)
    assert A.A[0, 1] == pytest.approx(0.3, abs=1e-12)
    assert A.A[0, 2] == pytest.approx(0.7, abs=1e-12)
    assert A.A[1, 2] == pytest.approx(0.4, abs=1e-12)


def test_diagonal_zero_and_antisymmetry():
    A = build_interaction_matrix(example1_model(), [(0.1,), (0.4,), (0.8,)], N=3)
    assert np.all(np.diag(A.A) == 0.0)
    assert np.max(np.abs(A.A + A.A.T)) <= 1e-12


def test_example2_matrix_value():
    # G(y, x) = 2 sin(2 pi (x - y)); a_12 = G(x1, x2) = 2 sin(2 pi / 3) = sqrt(3)
    A = build_interaction_matrix(example2_model(), [(0.0,), (1.0 / 3.0,)], N=2)
    assert A.A[0, 1] == pytest.approx(SQRT3, abs=1e-9)
    assert A.A[1, 0] == pytest.approx(-SQRT3, abs=1e-9)


def test_duplicate_traits_rejected():
    with pytest.raises(ValueError):
        build_interaction_matrix(example1_model(), [(0.2,), (0.2,)], N=2)


def test_single_trait_constant():
    A = InteractionMatrix(A=np.zeros((1, 1)), traits=((0.4,),))
    times, W = replicator_integrate(A, [1.0], dt=0.01, horizon=5.0)
    assert np.all(W == 1.0)


def test_invasion_check_example1():
    A = build_interaction_matrix(example1_model(), [(0.2,), (0.5,), (0.9,)], N=2)
    assert invasion_check(A, [1 / 3, 1 / 3, 1 / 3]) == 0  # smallest trait
    assert invasion_check(A, [0.0, 0.5, 0.5]) is None  # invader absent initially


def test_invasion_check_single_trait_vacuous():
    A = InteractionMatrix(A=np.zeros((1, 1)), traits=((0.4,),))
    assert invasion_check(A, [1.0]) == 0


def test_invasion_check_example2_none():
    A = build_interaction_matrix(example2_model(), [(0.0,), (1 / 3,), (2 / 3,)], N=2)
    assert invasion_check(A, [0.5, 0.3, 0.2]) is None


def test_smallest_trait_invades():
    A = build_interaction_matrix(example1_model(), [(0.2,), (0.5,), (0.9,)], N=2)
    times, W = replicator_integrate(A, [1 / 3, 1 / 3, 1 / 3], dt=1e-3, horizon=120.0,
                                    record_stride=100)
    assert W[-1, 0] > 0.99
    # S_t = 1 - w^{i*} is nonincreasing along the numerical trajectory
    s = 1.0 - W[:, 0]
    assert np.all(np.diff(s) <= 1e-9)


def test_conservation_and_positivity_short():
    A = build_interaction_matrix(example2_model(), [(0.0,), (1 / 3,), (2 / 3,)], N=2)
    times, W = replicator_integrate(A, [0.5, 0.3, 0.2], dt=1e-3, horizon=50.0,
                                    record_stride=10)
    assert np.max(np.abs(W.sum(axis=1) - 1.0)) <= 1e-10
    assert W.min() > 0.0


def test_interior_equilibrium_and_invariant():
    # classical constant of motion for antisymmetric replicator systems:
    # V(w) = sum_i w*_i log w_i drifts by < 1e-6 over [0, 100] at dt=1e-3
    A = build_interaction_matrix(example2_model(), [(0.0,), (1 / 3,), (2 / 3,)], N=2)
    w_star = interior_equilibrium(A)
    assert w_star is not None
    assert np.allclose(w_star, [1 / 3, 1 / 3, 1 / 3], atol=1e-9)
    times, W = replicator_integrate(A, [0.5, 0.3, 0.2], dt=1e-3, horizon=100.0,
                                    record_stride=1000)
    V = (np.log(W) @ w_star)
    assert np.max(np.abs(V - V[0])) < 1e-6


def test_interior_equilibrium_absent_for_invasion_matrix():
    A = build_interaction_matrix(example1_model(), [(0.2,), (0.5,), (0.9,)], N=2)
    assert interior_equilibrium(A) is None


def test_blowup_detection():
    # a forced non-conservative matrix is rejected at construction, so
    # blow-up can only come from huge steps; emulate with a big dt
    A = build_interaction_matrix(example1_model(), [(0.2,), (0.9,)], N=2)
    times, W = replicator_integrate(A, [0.5, 0.5], dt=0.5, horizon=50.0)
    assert W.min() >= -1e-8  # coarse but stable for this matrix


def test_spatial_uniform_matches_mean_field():
    model = example1_model()
    traits = [(0.2,), (0.5,), (0.9,)]
    n, G = 3, 8
    w_mean = np.array([0.4, 0.35, 0.25])
    w0 = np.tile(w_mean[:, None], (1, G))
    times, W = spatial_weights_integrate(model, traits, w0, dt=0.01, horizon=30.0, N=2,
                                         record_stride=10)
    A = build_interaction_matrix(model, traits, N=2)
    times_r, W_r = replicator_integrate(A, w_mean, dt=0.01, horizon=30.0, record_stride=10)
    means = W.mean(axis=2)
    assert np.max(np.abs(means - W_r)) <= 1e-8


def test_spatial_nonuniform_mean_reduction():
    # homogeneous kernels: the r-average of the spatial system obeys the
    # replicator ODE regardless of the spatial profile
    model = example1_model()
    traits = [(0.2,), (0.5,)]
    G = 16
    grid = np.linspace(0, 1, G, endpoint=False) + 0.5 / G
    w0 = np.stack([0.8 * np.sin(np.pi * grid) ** 2, 1.2 * np.cos(np.pi * grid) ** 2])
    w0 *= 1.0 / w0.mean(axis=1).sum()
    times, W = spatial_weights_integrate(model, traits, w0, dt=0.01, horizon=20.0, N=2)
    A = build_interaction_matrix(model, traits, N=2)
    _, W_r = replicator_integrate(A, w0.mean(axis=1), dt=0.01, horizon=20.0)
    assert np.max(np.abs(W.mean(axis=2) - W_r)) <= 1e-8


def test_spatial_single_trait_constant():
    model = example1_model()
    w0 = np.full((1, 8), 1.0)
    times, W = spatial_weights_integrate(model, [(0.3,)], w0, dt=0.01, horizon=5.0, N=2)
    assert np.allclose(W, 1.0)


def test_spatial_frozen_without_migration():
    from conftest import neutral_model

    model = neutral_model(lam="0", lam_bound=0.0)
    w0 = np.array([[0.8, 0.4], [0.2, 0.6]])
    times, W = spatial_weights_integrate(model, [(0.1,), (0.9,)], w0, dt=0.01, horizon=5.0, N=2)
    assert np.allclose(W, W[0])
