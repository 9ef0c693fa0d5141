"""Stochastic simulation of a spatially structured Moran metapopulation.

The package covers every scaling regime of the model and cross-checks them
against each other:

- ``microsim``   exact event-level dynamics of K coupled Moran patches
                 (resampling, mutation, migration) via uniformization.
- ``tss``        the rare-mutation limit: a K-site pure-jump process of
                 dominant traits (mutation-fixation / migration-fixation).
- ``meanfield``  the large-K limit: deterministic measure flow, tagged-site
                 jump processes, McKean-Vlasov particle systems, and
                 propagation-of-chaos diagnostics.
- ``replicator`` the small-mutation, unaccelerated regime: spatial weight
                 equations and the antisymmetric replicator ODE.
- ``canonical``  the accelerated-time, slowed-migration regime: a
                 jump-diffusion for the local trait coupled to its own law.
- ``kernels``    rate kernels, fixation probabilities, relative fitness,
                 mutation families and their covariances.
- ``exprlang``   a small deterministic expression language so rate kernels
                 can be defined in JSON configs.
- ``cli``        config validation, experiment orchestration, reproducible
                 CSV/JSON outputs.
"""

__version__ = "0.1.0"

from metamoran.kernels import (  # noqa: F401
    MutationFamily,
    RateModel,
    fixation_probability,
    model_from_expressions,
    relative_fitness,
)
from metamoran.measures import AtomicMeasure  # noqa: F401
