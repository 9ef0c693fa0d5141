"""Shared model builders for the test suite."""

import numpy as np
import pytest

from metamoran import kernels


def degenerate_mutation():
    return kernels.MutationFamily(kind=kernels.DEGENERATE, epsilon=0.0)


def neutral_model(lam="1", bound_C=1.0, lam_bound=None, mutation=None, d=1, trait_box=(0.0, 1.0)):
    """Constant resampling kernel (alpha = 1/N) with a configurable
    migration kernel."""
    return kernels.model_from_expressions(
        c="1",
        theta="0",
        lam=lam,
        mutation=mutation or degenerate_mutation(),
        bound_C=bound_C,
        d=d,
        lam_bound=lam_bound,
        trait_box=trait_box,
    )


def example1_model(N=2):
    """Migration-fixation rate lam*alpha = x(1+y)/N^2 realized with a
    neutral resampling kernel: lam(x, y) = x(1+y)/N."""
    return neutral_model(lam=f"x*(1+y)/{N}", bound_C=1.0)


def example2_model(N=2):
    """lam*alpha = (1+sin(2 pi (x-y)))/N^2 with neutral resampling:
    lam(x, y) = (1+sin(2 pi (x-y)))/N."""
    return neutral_model(lam=f"(1+sin(2*pi*(x-y)))/{N}", bound_C=1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)
