"""Rate kernels and closed-form model quantities.

Houses the model parameters (the resampling kernel ``c``, mutation rate
``theta``, migration kernel ``lam``, the mutation family, and the global
rate bound ``bound_C``) together with the derived quantities every regime
consumes: fixation probabilities, relative fitness and its gradient, and
mutation-step covariances.

Conventions used throughout the package:

- a *trait* is a length-``d`` sequence of finite floats (stored as tuples
  where bit-exact equality matters, as numpy arrays in numerics);
- ``c(r, x, y)`` is the rate at which an ``x``-individual is replaced by a
  copy of a ``y``-individual within the patch at position ``r``;
- ``lam(r, x, rp, y)`` is the rate kernel for an ``x``-individual at ``r``
  being replaced by a copy of a ``y``-individual living at ``rp``;
- ``fixation_probability(model, r, y, x, N)`` is the chance a single
  ``y``-invader takes over a patch of ``N`` ``x``-residents.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np

from metamoran import exprlang
from metamoran.exprlang import RateExpr

Trait = tuple  # tuple[float, ...]
TraitLike = Sequence

GAUSSIAN = "isotropic-gaussian"
UNIFORM_BALL = "uniform-ball"
DISCRETE_PM = "discrete-pm"
DEGENERATE = "degenerate"
MUTATION_KINDS = (GAUSSIAN, UNIFORM_BALL, DISCRETE_PM, DEGENERATE)

# |rho - 1| below this routes to the explicit series sum: the geometric
# closed form (1-rho)/(1-rho^N) loses ~eps/|1-rho| relative accuracy to
# cancellation, which wrecks finite-difference gradients of alpha near
# neutrality; the series is exact and stable there.
RHO_NEUTRAL_TOL = 1e-3


class RateBoundError(RuntimeError):
    """A rate kernel evaluated outside [0, bound_C] (Assumption-violating model)."""


class FitnessDomainError(ValueError):
    """Relative fitness is undefined: one of the paired resampling rates is zero."""


def as_trait(value: TraitLike) -> Trait:
    """Canonicalize a trait to a tuple of finite floats."""
    t = tuple(float(v) for v in np.atleast_1d(np.asarray(value, dtype=float)))
    if not all(math.isfinite(v) for v in t):
        raise ValueError(f"trait coordinates must be finite, got {t}")
    return t


# --- mutation families -----------------------------------------------------


@dataclass(frozen=True)
class MutationFamily:
    """A centered scaled-step law ``m(r, x, dh)`` plus the mutation scale.

    ``kind`` is one of ``isotropic-gaussian`` (step std ``scale`` per axis),
    ``uniform-ball`` (uniform on the ball of radius ``scale``),
    ``discrete-pm`` (independent +-1 per axis), or ``degenerate`` (no
    mutation).  ``scale`` may be a constant or a callable of ``(r, x)``.
    A proposed trait is always produced as ``y = x + epsilon * h`` with
    ``h ~ m(r, x, .)``.
    """

    kind: str
    epsilon: float = 1.0
    scale: Union[float, Callable] = 1.0

    def __post_init__(self):
        if self.kind not in MUTATION_KINDS:
            raise ValueError(f"unsupported mutation family {self.kind!r}")
        if self.epsilon < 0:
            raise ValueError("mutation scale epsilon must be >= 0")

    def scale_at(self, r: float, x: TraitLike) -> float:
        s = self.scale(r, x) if callable(self.scale) else float(self.scale)
        if s < 0:
            raise ValueError(f"mutation family scale must be >= 0, got {s}")
        return s

    @property
    def inactive(self) -> bool:
        """True when sampling can never change the trait."""
        return self.kind == DEGENERATE or self.epsilon == 0.0


@dataclass(frozen=True)
class MutationCovariance:
    """Covariance ``Sigma`` of the scaled mutation step and a factor with
    ``sigma @ sigma.T == Sigma``."""

    Sigma: np.ndarray
    sigma: np.ndarray


def sample_step(fam: MutationFamily, r: float, x: TraitLike, rng: np.random.Generator) -> np.ndarray:
    """Draw one scaled mutation step ``h ~ m(r, x, .)``."""
    d = len(x)
    if fam.kind == DEGENERATE:
        return np.zeros(d)
    if fam.kind == GAUSSIAN:
        return fam.scale_at(r, x) * rng.standard_normal(d)
    if fam.kind == DISCRETE_PM:
        return rng.integers(0, 2, size=d) * 2.0 - 1.0
    # uniform on the d-ball of radius scale
    v = rng.standard_normal(d)
    norm = np.linalg.norm(v)
    if norm == 0.0:
        return np.zeros(d)
    u = rng.random() ** (1.0 / d)
    return fam.scale_at(r, x) * u * v / norm


def sample_mutation(fam: MutationFamily, r: float, x: TraitLike, rng: np.random.Generator) -> np.ndarray:
    """Draw a mutant trait ``y = x + epsilon * h`` with ``h ~ m(r, x, .)``."""
    x = np.asarray(x, dtype=float)
    if fam.inactive:
        return x.copy()
    return x + fam.epsilon * sample_step(fam, r, x, rng)


def mutation_covariance(fam: MutationFamily, r: float, x: TraitLike, d: Optional[int] = None) -> MutationCovariance:
    """Closed-form covariance of the scaled step law for the supported families.

    gaussian: ``s^2 I``; uniform-ball of radius ``rho``: ``rho^2/(d+2) I``;
    discrete-pm: ``I``; degenerate: ``0``.  The factor ``sigma`` is the
    Cholesky factor when ``Sigma`` is positive definite and the spectral
    square root otherwise.
    """
    if d is None:
        d = len(x)
    if fam.kind == GAUSSIAN:
        var = fam.scale_at(r, x) ** 2
    elif fam.kind == UNIFORM_BALL:
        var = fam.scale_at(r, x) ** 2 / (d + 2)
    elif fam.kind == DISCRETE_PM:
        var = 1.0
    elif fam.kind == DEGENERATE:
        var = 0.0
    else:  # pragma: no cover - guarded in __post_init__
        raise ValueError(f"unsupported mutation family {fam.kind!r}")
    Sigma = var * np.eye(d)
    sigma = _matrix_sqrt(Sigma)
    return MutationCovariance(Sigma=Sigma, sigma=sigma)


def sigma_scalar(fam: MutationFamily, r: float, x: TraitLike, d: Optional[int] = None) -> float:
    """Per-axis standard deviation of the scaled step (all supported
    families are isotropic, so ``sigma = sigma_scalar * I``)."""
    if d is None:
        d = len(x)
    if fam.kind == GAUSSIAN:
        return fam.scale_at(r, x)
    if fam.kind == UNIFORM_BALL:
        return fam.scale_at(r, x) / math.sqrt(d + 2)
    if fam.kind == DISCRETE_PM:
        return 1.0
    return 0.0


def _matrix_sqrt(Sigma: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(Sigma)
    except np.linalg.LinAlgError:
        vals, vecs = np.linalg.eigh(Sigma)
        vals = np.clip(vals, 0.0, None)
        return vecs @ np.diag(np.sqrt(vals)) @ vecs.T


# --- rate model -------------------------------------------------------------


@dataclass(frozen=True)
class RateModel:
    """All model parameters for one run.

    ``c``, ``theta``, ``lam`` are deterministic nonnegative callables bounded
    by ``bound_C`` (checked by :func:`validate_rate_bounds` probes and again
    during simulation).  ``lam_bound`` is an optional tighter bound on the
    migration kernel alone, used for jump majorants; it defaults to
    ``bound_C``.  The optional ``*_vec`` callables evaluate the same kernels
    over numpy arrays (same values up to libm rounding; every simulation
    path sticks to one evaluator, keeping runs bit-reproducible).
    Instances are immutable and safe to share across threads; random
    streams are always caller-supplied.
    """

    c: Callable[[float, TraitLike, TraitLike], float]
    theta: Callable[[float, TraitLike], float]
    lam: Callable[[float, TraitLike, float, TraitLike], float]
    mutation: MutationFamily
    bound_C: float
    d: int = 1
    homogeneous: bool = False
    lam_bound: Optional[float] = None
    trait_box: tuple = (0.0, 1.0)
    c_vec: Optional[Callable] = None
    theta_vec: Optional[Callable] = None
    lam_vec: Optional[Callable] = None

    def __post_init__(self):
        if self.bound_C <= 0:
            raise ValueError("bound_C must be positive")
        if self.lam_bound is not None and not (0.0 <= self.lam_bound <= self.bound_C):
            raise ValueError("lam_bound must lie in [0, bound_C]")

    @property
    def migration_bound(self) -> float:
        return self.bound_C if self.lam_bound is None else self.lam_bound


def _check_rate(name: str, value: float, bound: float, where: str) -> float:
    if not math.isfinite(value) or value < 0.0 or value > bound * (1.0 + 1e-9):
        raise RateBoundError(
            f"rate {name}={value!r} outside [0, {bound}] at {where}"
        )
    return value


# --- fixation probability ---------------------------------------------------


def fixation_from_rates(c_xy: float, c_yx: float, N: int) -> float:
    """Fixation probability of a single invader from the paired resampling
    rates: ``c_xy`` replaces a resident by the invader type, ``c_yx`` the
    reverse.  Returns 0 when ``c_xy == 0``; otherwise
    ``1 / sum_{k=0}^{N-1} rho^k`` with ``rho = c_yx / c_xy``, evaluated via
    the geometric closed form away from ``rho = 1``.
    """
    if N <= 0:
        raise ValueError(f"patch size N must be >= 1, got {N}")
    if c_xy < 0.0 or c_yx < 0.0:
        raise ValueError("resampling rates must be nonnegative")
    if c_xy == 0.0:
        return 0.0
    rho = c_yx / c_xy
    if rho == 1.0:
        return 1.0 / N
    if abs(rho - 1.0) < RHO_NEUTRAL_TOL:
        s = 1.0
        p = 1.0
        for _ in range(N - 1):
            p *= rho
            s += p
        return 1.0 / s
    rho_N = rho**N
    if math.isinf(rho_N):
        return 0.0
    return (1.0 - rho) / (1.0 - rho_N)


def fixation_probability(model: RateModel, r: float, y: TraitLike, x: TraitLike, N: int) -> float:
    """Probability that a single ``y``-invader fixes in a patch of ``N``
    ``x``-residents at position ``r``.  Equals ``1/N`` in the neutral case
    ``c(r, x, y) == c(r, y, x)`` and 0 when ``c(r, x, y) == 0``."""
    c_xy = model.c(r, x, y)
    c_yx = model.c(r, y, x)
    if not (math.isfinite(c_xy) and math.isfinite(c_yx)):
        raise RateBoundError(f"non-finite resampling rate at r={r}, x={tuple(x)}, y={tuple(y)}")
    return fixation_from_rates(c_xy, c_yx, N)


def fixation_from_rho_vec(rho: np.ndarray, N: int) -> np.ndarray:
    """Vectorized fixation probability from the rate ratio ``rho``
    (``c_yx / c_xy``).  Entries with ``rho = inf`` map to 0."""
    if N <= 0:
        raise ValueError(f"patch size N must be >= 1, got {N}")
    rho = np.asarray(rho, dtype=float)
    with np.errstate(all="ignore"):
        geo = (1.0 - rho) / (1.0 - rho**N)
    near = np.abs(rho - 1.0) < RHO_NEUTRAL_TOL
    if np.any(near):
        s = np.ones_like(rho)
        p = np.ones_like(rho)
        for _ in range(N - 1):
            p = p * rho
            s = s + p
        geo = np.where(near, 1.0 / s, geo)
    geo = np.where(np.isinf(rho), 0.0, geo)
    return geo


# --- relative fitness and gradients ------------------------------------------


def relative_fitness(model: RateModel, r: float, y: TraitLike, x: TraitLike) -> float:
    """``Fit(r, y, x) = log(c(r, x, y) / c(r, y, x))``: the long-run
    advantage of trait ``y`` over resident ``x`` at position ``r``.
    Antisymmetric in (y, x); undefined (raises) when either rate is zero."""
    c_xy = model.c(r, x, y)
    c_yx = model.c(r, y, x)
    if c_xy <= 0.0 or c_yx <= 0.0:
        raise FitnessDomainError(
            f"relative fitness undefined: c(r,x,y)={c_xy!r}, c(r,y,x)={c_yx!r}"
        )
    return math.log(c_xy / c_yx)


def fd_step(x: TraitLike) -> float:
    """Central-difference step: 1e-5 * max(1, ||x||)."""
    return 1e-5 * max(1.0, float(np.linalg.norm(np.asarray(x, dtype=float))))


def fitness_gradient(model: RateModel, r: float, x: TraitLike, h: Optional[float] = None) -> np.ndarray:
    """Gradient of ``Fit(r, ., x)`` in its second argument, at ``y = x``,
    by central finite differences (the selection gradient of the canonical
    drift)."""
    x = np.asarray(x, dtype=float)
    step = fd_step(x) if h is None else h
    grad = np.empty(len(x))
    for k in range(len(x)):
        hi = x.copy()
        lo = x.copy()
        hi[k] += step
        lo[k] -= step
        grad[k] = (relative_fitness(model, r, hi, x) - relative_fitness(model, r, lo, x)) / (2.0 * step)
    return grad


def fixation_gradient(model: RateModel, r: float, x: TraitLike, N: int, h: Optional[float] = None) -> np.ndarray:
    """Finite-difference gradient of ``alpha(r, ., x)`` at ``y = x``.

    Satisfies the identity ``grad alpha = (N-1)/(2N) * grad Fit`` for smooth
    kernels, which the canonical drift relies on.
    """
    x = np.asarray(x, dtype=float)
    step = fd_step(x) if h is None else h
    grad = np.empty(len(x))
    for k in range(len(x)):
        hi = x.copy()
        lo = x.copy()
        hi[k] += step
        lo[k] -= step
        grad[k] = (
            fixation_probability(model, r, hi, x, N) - fixation_probability(model, r, lo, x, N)
        ) / (2.0 * step)
    return grad


# --- bound probing ------------------------------------------------------------


def validate_rate_bounds(
    model: RateModel,
    n_probes: int = 10_000,
    seed: int = 0xB07D,
) -> None:
    """Probe ``c``, ``theta``, ``lam`` at random inputs and abort if any
    evaluation leaves ``[0, bound_C]``.

    Positions are uniform on [0,1]; trait coordinates are uniform on the
    model's declared ``trait_box``.  The probe stream is fixed so the check
    is reproducible independently of run seeds.  This validates the
    declared bound on the operating domain; simulations additionally abort
    on any out-of-bound evaluation they encounter.
    """
    rng = np.random.default_rng(seed)
    lo, hi = model.trait_box
    C = model.bound_C
    for _ in range(n_probes):
        r = rng.random()
        rp = rng.random()
        x = tuple(rng.uniform(lo, hi, size=model.d))
        y = tuple(rng.uniform(lo, hi, size=model.d))
        _check_rate("c", model.c(r, x, y), C, f"r={r!r}, x={x}, y={y}")
        _check_rate("theta", model.theta(r, x), C, f"r={r!r}, x={x}")
        v = _check_rate("lambda", model.lam(r, x, rp, y), C, f"r={r!r}, x={x}, rp={rp!r}, y={y}")
        if v > model.migration_bound * (1.0 + 1e-9):
            raise RateBoundError(
                f"rate lambda={v!r} exceeds declared lambda bound {model.migration_bound}"
            )


# --- construction from expressions ---------------------------------------------


def _compile_scalar(expr: RateExpr, *, pair: bool):
    if pair:
        def f(r, x, rp=None, y=None):
            return exprlang.evaluate(expr, r=r, rp=rp, x=x, y=y)
    else:
        def f(r, x):
            return exprlang.evaluate(expr, r=r, x=x)
    return f


def model_from_expressions(
    c: Union[str, RateExpr],
    theta: Union[str, RateExpr],
    lam: Union[str, RateExpr],
    mutation: MutationFamily,
    bound_C: float,
    d: int = 1,
    lam_bound: Optional[float] = None,
    trait_box: tuple = (0.0, 1.0),
) -> RateModel:
    """Build a :class:`RateModel` from expression-language sources.

    ``c`` may read ``r, x, y``; ``theta`` reads ``r, x``; ``lam`` reads
    ``r, x, rp, y`` (``rp``/``y`` describe the source individual).  The
    model is flagged homogeneous when none of the kernels reads a patch
    position.
    """
    c_e = exprlang.parse(c) if isinstance(c, str) else c
    th_e = exprlang.parse(theta) if isinstance(theta, str) else theta
    la_e = exprlang.parse(lam) if isinstance(lam, str) else lam
    if "rp" in c_e.variables or "rp" in th_e.variables:
        raise ValueError("only the migration kernel may reference rp")
    if "y" in th_e.variables:
        raise ValueError("theta may not reference y")
    homogeneous = not (c_e.spatial or th_e.spatial or la_e.spatial)

    def c_fn(r, x, y):
        return exprlang.evaluate(c_e, r=r, x=x, y=y)

    def theta_fn(r, x):
        return exprlang.evaluate(th_e, r=r, x=x)

    def lam_fn(r, x, rp, y):
        return exprlang.evaluate(la_e, r=r, rp=rp, x=x, y=y)

    def c_vec(r, x, y):
        val = exprlang.evaluate_vec(c_e, r=r, x=x, y=y)
        return _vec_result(val, _batch_len(r=r, x=x, y=y))

    def theta_vec(r, x):
        val = exprlang.evaluate_vec(th_e, r=r, x=x)
        return _vec_result(val, _batch_len(r=r, x=x))

    def lam_vec(r, x, rp, y):
        val = exprlang.evaluate_vec(la_e, r=r, rp=rp, x=x, y=y)
        return _vec_result(val, _batch_len(r=r, x=x, rp=rp, y=y))

    return RateModel(
        c=c_fn,
        theta=theta_fn,
        lam=lam_fn,
        mutation=mutation,
        bound_C=float(bound_C),
        d=d,
        homogeneous=homogeneous,
        lam_bound=lam_bound,
        trait_box=tuple(trait_box),
        c_vec=c_vec,
        theta_vec=theta_vec,
        lam_vec=lam_vec,
    )


def _batch_len(r=None, x=None, rp=None, y=None) -> int:
    """Batch size implied by vectorized-eval inputs.

    Positions (``r``, ``rp``) are scalars or length-n arrays; traits
    (``x``, ``y``) are (n, d) arrays or sequences of per-coordinate
    columns (scalars or length-n arrays).
    """
    n = 1
    for pos in (r, rp):
        if isinstance(pos, np.ndarray) and pos.ndim >= 1:
            n = max(n, pos.shape[0])
    for tr in (x, y):
        if tr is None:
            continue
        if isinstance(tr, np.ndarray):
            if tr.ndim == 2:
                n = max(n, tr.shape[0])
        else:
            for col in tr:
                a = np.asarray(col)
                if a.ndim >= 1:
                    n = max(n, a.shape[0])
    return n


def _vec_result(val, n: int) -> np.ndarray:
    arr = np.asarray(val, dtype=float)
    if arr.ndim == 0:
        return np.full(n, float(arr))
    return arr
