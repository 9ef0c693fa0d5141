"""Configuration, orchestration, reproducibility, and output contracts.

A run is described by one JSON config (see README for the schema).  The
``run`` subcommand dispatches on ``regime``:

- ``micro``       event-level metapopulation trajectories, one CSV per
                  replicate with rows ``t, patch, x0..`` (one row per
                  individual per snapshot);
- ``tss``         dominant-trait trajectories, same row schema (one row
                  per site per snapshot);
- ``meanfield``   tasks ``finite_solve`` (atom list CSV ``t, r, x0..,
                  weight``), ``mckean_vlasov`` (same schema, homogeneous
                  placeholder position r=0.5), ``chaos_scan``
                  (``K, estimate, stderr``), ``tagged``;
- ``replicator``  mean weights ``t, wbar1..wbarn`` (and the spatial grid
                  ``t, trait_index, grid_index, w`` in spatial mode);
- ``canonical``   particle dumps ``t, particle, x0..`` plus per-coordinate
                  moments ``t, mean_x0, var_x0, ..``;
- ``compare``     micro-vs-TSS divergence table
                  ``gamma, t_star, tv, stderr, micro_poly_fraction``.

Every run writes ``manifest.json`` (config hash, code version, seed,
timestamps, output list) and ``summary.json`` (regime, invariant checks,
terminal statistics).  Data files are byte-identical across reruns with
the same config and seed: CSV numbers are shortest round-trip decimals,
newlines are LF, and each replicate derives its stream from
``(master_seed, replicate_index)`` only (see ``streams``), so thread count
does not affect content.  Exit status is 0 iff every runtime invariant
check passes.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import datetime
import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

import metamoran
from metamoran import canonical as canonical_mod
from metamoran import exprlang, kernels, meanfield, microsim, replicator, streams, tss

REGIMES = ("micro", "tss", "meanfield", "replicator", "canonical", "compare")
MEANFIELD_TASKS = ("finite_solve", "mckean_vlasov", "chaos_scan", "tagged")
CANONICAL_TASKS = ("ensemble", "tagged")
STATISTICS = {"coord0": lambda x: float(x[0])}


class ConfigError(ValueError):
    """Invalid run config; ``diagnostics`` lists (field path, message) pairs."""

    def __init__(self, diagnostics: List[Tuple[str, str]]):
        self.diagnostics = list(diagnostics)
        lines = "; ".join(f"{path}: {msg}" for path, msg in self.diagnostics)
        super().__init__(f"invalid config: {lines}")


@dataclass
class RunConfig:
    regime: str
    seed: int
    replicates: int
    model: kernels.RateModel
    sizes: dict
    scales: dict
    numerics: dict
    init: dict
    task: Optional[str]
    raw: dict
    source_bytes: bytes

    @property
    def d(self) -> int:
        return self.model.d


@dataclass
class Check:
    name: str
    passed: bool
    value: float
    tolerance: float

    def as_dict(self) -> dict:
        return {
            "name": self.name,
            "pass": bool(self.passed),
            "value": self.value,
            "tolerance": self.tolerance,
        }


# --- config loading and validation -------------------------------------------


def _expr_diag(diags, path, source, want_pair=False):
    try:
        expr = exprlang.parse(source)
    except exprlang.ExprSyntaxError as err:
        diags.append((path, f"syntax error at offset {err.offset}: {err}"))
        return None
    return expr


def validate_config(path) -> RunConfig:
    """Parse and validate a JSON config file.

    Checks field presence and types for the chosen regime, parses every
    embedded expression, and probes the declared rate bound.  Raises
    :class:`ConfigError` carrying (field path, message) diagnostics.
    """
    p = Path(path)
    source_bytes = p.read_bytes()
    try:
        raw = json.loads(source_bytes.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise ConfigError([("<file>", f"not valid UTF-8 JSON: {err}")]) from None
    return validate_config_dict(raw, source_bytes)


def validate_config_dict(raw: dict, source_bytes: Optional[bytes] = None) -> RunConfig:
    if source_bytes is None:
        source_bytes = json.dumps(raw, sort_keys=True).encode("utf-8")
    diags: List[Tuple[str, str]] = []

    regime = raw.get("regime")
    if regime not in REGIMES:
        diags.append(("regime", f"must be one of {REGIMES}, got {regime!r}"))
    seed = raw.get("seed")
    if not isinstance(seed, int) or not (0 <= seed < 2**64):
        diags.append(("seed", "must be an integer in [0, 2^64)"))
        seed = 0
    replicates = raw.get("replicates", 1)
    if not isinstance(replicates, int) or replicates < 1:
        diags.append(("replicates", "must be an integer >= 1"))
        replicates = 1

    sizes = raw.get("sizes", {})
    scales = raw.get("scales", {})
    numerics = dict(raw.get("numerics", {}))
    init = raw.get("init", {})
    task = raw.get("task")
    for name, blk in (("sizes", sizes), ("scales", scales), ("numerics", numerics), ("init", init)):
        if not isinstance(blk, dict):
            diags.append((name, "must be an object"))

    model_cfg = raw.get("model")
    model = None
    if not isinstance(model_cfg, dict):
        diags.append(("model", "model block is required"))
    else:
        model = _validate_model(model_cfg, sizes, diags)

    if regime in REGIMES and isinstance(init, dict) and model is not None:
        _validate_regime_fields(regime, task, sizes, scales, numerics, init, replicates, diags)

    if diags:
        raise ConfigError(diags)

    numerics.setdefault("dt", 1e-3)
    if "horizon" in numerics and "snapshot_dt" not in numerics:
        numerics["snapshot_dt"] = max(numerics["horizon"] / 100.0, numerics["dt"])
    sizes = dict(sizes)
    sizes.setdefault("G", 64)

    return RunConfig(
        regime=regime,
        seed=seed,
        replicates=replicates,
        model=model,
        sizes=sizes,
        scales=dict(scales),
        numerics=numerics,
        init=dict(init),
        task=task,
        raw=raw,
        source_bytes=source_bytes,
    )


def _validate_model(model_cfg: dict, sizes: dict, diags) -> Optional[kernels.RateModel]:
    d = sizes.get("d", 1) if isinstance(sizes, dict) else 1
    if not isinstance(d, int) or d < 1:
        diags.append(("sizes.d", "must be an integer >= 1"))
        d = 1
    exprs = {}
    for key in ("c", "theta", "lambda"):
        src = model_cfg.get(key)
        if not isinstance(src, str):
            diags.append((f"model.{key}", "must be an expression string"))
            continue
        parsed = _expr_diag(diags, f"model.{key}", src)
        if parsed is not None:
            exprs[key] = parsed

    mut_cfg = model_cfg.get("mutation")
    mutation = None
    if not isinstance(mut_cfg, dict):
        diags.append(("model.mutation", "mutation block is required"))
    else:
        kind = mut_cfg.get("kind")
        eps = mut_cfg.get("epsilon", 1.0)
        scale = mut_cfg.get("scale", 1.0)
        if kind not in kernels.MUTATION_KINDS:
            diags.append(("model.mutation.kind", f"must be one of {kernels.MUTATION_KINDS}"))
        elif not isinstance(eps, (int, float)) or eps < 0:
            diags.append(("model.mutation.epsilon", "must be a number >= 0"))
        else:
            if isinstance(scale, str):
                scale_expr = _expr_diag(diags, "model.mutation.scale", scale)
                if scale_expr is not None:
                    if scale_expr.variables - {"r", "x"}:
                        diags.append(("model.mutation.scale", "may only reference r and x"))
                    else:
                        expr = scale_expr
                        scale = lambda r, x: exprlang.evaluate(expr, r=r, x=x)  # noqa: E731
            if not diags or all(not p.startswith("model.mutation") for p, _ in diags):
                mutation = kernels.MutationFamily(kind=kind, epsilon=float(eps), scale=scale)

    bound_C = model_cfg.get("bound_C")
    if not isinstance(bound_C, (int, float)) or bound_C <= 0:
        diags.append(("model.bound_C", "must be a positive number"))
    lam_bound = model_cfg.get("lambda_bound")
    if lam_bound is not None and (
        not isinstance(lam_bound, (int, float)) or not 0 <= lam_bound <= (bound_C or lam_bound)
    ):
        diags.append(("model.lambda_bound", "must lie in [0, bound_C]"))
    trait_box = model_cfg.get("trait_box", [0.0, 1.0])
    if (
        not isinstance(trait_box, (list, tuple))
        or len(trait_box) != 2
        or not all(isinstance(v, (int, float)) for v in trait_box)
        or trait_box[0] >= trait_box[1]
    ):
        diags.append(("model.trait_box", "must be [lo, hi] with lo < hi"))
        trait_box = (0.0, 1.0)

    if len(exprs) != 3 or mutation is None or not isinstance(bound_C, (int, float)) or bound_C <= 0:
        return None
    try:
        model = kernels.model_from_expressions(
            c=exprs["c"],
            theta=exprs["theta"],
            lam=exprs["lambda"],
            mutation=mutation,
            bound_C=float(bound_C),
            d=d,
            lam_bound=None if lam_bound is None else float(lam_bound),
            trait_box=tuple(trait_box),
        )
    except ValueError as err:
        diags.append(("model", str(err)))
        return None
    try:
        kernels.validate_rate_bounds(model)
    except (kernels.RateBoundError, exprlang.ExprError) as err:
        diags.append(("model.bound_C", f"bound probe failed: {err}"))
        return None
    return model


def _require(block: dict, blk_name: str, key: str, kind, diags, predicate=None, what=""):
    value = block.get(key)
    if not isinstance(value, kind) or (predicate is not None and not predicate(value)):
        diags.append((f"{blk_name}.{key}", what or f"required field of type {kind}"))
        return None
    return value


def _validate_regime_fields(regime, task, sizes, scales, numerics, init, replicates, diags):
    num = (int, float)
    pos_int = lambda v: v >= 1  # noqa: E731
    if regime in ("micro", "tss", "compare"):
        _require(sizes, "sizes", "K", int, diags, pos_int, "integer >= 1 required")
        _require(sizes, "sizes", "N", int, diags, pos_int, "integer >= 1 required")
    if regime == "micro":
        _require(scales, "scales", "gamma", num, diags, lambda v: v >= 0, "number >= 0 required")
        _require(numerics, "numerics", "horizon", num, diags, lambda v: v >= 0)
        _require(init, "init", "patch_traits", list, diags, lambda v: len(v) >= 1)
    elif regime == "tss":
        _require(numerics, "numerics", "horizon", num, diags, lambda v: v >= 0)
        _require(init, "init", "site_traits", list, diags, lambda v: len(v) >= 1)
    elif regime == "compare":
        _require(init, "init", "patch_traits", list, diags, lambda v: len(v) >= 1)
        _require(init, "init", "gammas", list, diags, lambda v: len(v) >= 1 and all(g > 0 for g in v))
        _require(init, "init", "t_star", num, diags, lambda v: v >= 0)
    elif regime == "replicator":
        _require(sizes, "sizes", "N", int, diags, pos_int, "integer >= 1 required")
        _require(numerics, "numerics", "horizon", num, diags, lambda v: v > 0)
        traits = _require(init, "init", "traits", list, diags, lambda v: len(v) >= 1)
        weights = _require(init, "init", "weights", list, diags, lambda v: len(v) >= 1)
        if traits is not None and weights is not None and len(traits) != len(weights):
            diags.append(("init.weights", "must have one weight per trait"))
        if weights is not None and abs(sum(weights) - 1.0) > 1e-9:
            diags.append(("init.weights", "must sum to 1"))
    elif regime == "meanfield":
        if task not in MEANFIELD_TASKS:
            diags.append(("task", f"meanfield regime needs task in {MEANFIELD_TASKS}"))
            return
        _require(sizes, "sizes", "N", int, diags, pos_int, "integer >= 1 required")
        if task == "finite_solve":
            _require(init, "init", "atoms", list, diags, lambda v: len(v) >= 1)
            _require(init, "init", "traits", list, diags, lambda v: len(v) >= 1)
            _require(numerics, "numerics", "horizon", num, diags, lambda v: v > 0)
        elif task == "mckean_vlasov":
            _require(sizes, "sizes", "M", int, diags, lambda v: v >= 2, "integer >= 2 required")
            _require(init, "init", "mu0", list, diags, lambda v: len(v) >= 1)
            _require(numerics, "numerics", "horizon", num, diags, lambda v: v > 0)
        elif task == "chaos_scan":
            _require(init, "init", "K_list", list, diags, lambda v: len(v) >= 1)
            _require(init, "init", "t_star", num, diags, lambda v: v >= 0)
            _require(init, "init", "mu0", list, diags, lambda v: len(v) >= 1)
            stat = init.get("statistic", "coord0")
            if stat not in STATISTICS:
                diags.append(("init.statistic", f"must be one of {sorted(STATISTICS)}"))
        elif task == "tagged":
            _require(init, "init", "sites", list, diags, lambda v: len(v) >= 1)
            _require(init, "init", "atoms", list, diags, lambda v: len(v) >= 1)
            _require(init, "init", "traits", list, diags, lambda v: len(v) >= 1)
            _require(numerics, "numerics", "horizon", num, diags, lambda v: v > 0)
    elif regime == "canonical":
        if task is not None and task not in CANONICAL_TASKS:
            diags.append(("task", f"canonical regime needs task in {CANONICAL_TASKS}"))
            return
        _require(sizes, "sizes", "N", int, diags, pos_int, "integer >= 1 required")
        _require(sizes, "sizes", "M", int, diags, lambda v: v >= 2, "integer >= 2 required")
        _require(numerics, "numerics", "horizon", num, diags, lambda v: v > 0)
        _require(init, "init", "x0", list, diags, lambda v: len(v) >= 1)


# --- output helpers ------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _event_indices(ev) -> tuple:
    """Flatten per-kind event indices to (i, j, src_patch), -1 when unused."""
    if ev.kind == microsim.RESAMPLE:
        return ev.indices[0], ev.indices[1], -1
    if ev.kind == microsim.MUTATE:
        return ev.indices[0], -1, -1
    return ev.indices[0], ev.indices[2], ev.indices[1]


def write_csv(path: Path, header: Sequence[str], rows) -> None:
    """CSV with the pinned byte format: UTF-8, LF newlines, header row,
    shortest round-trip decimals."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _trait_header(d: int) -> List[str]:
    return [f"x{k}" for k in range(d)]


def _utcnow() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


# --- regime runners --------------------------------------------------------------


def _snapshot_times(numerics: dict) -> np.ndarray:
    horizon = numerics["horizon"]
    snap = numerics.get("snapshot_dt") or max(horizon / 100.0, numerics.get("dt", 1e-3))
    n = int(round(horizon / snap))
    return np.linspace(0.0, horizon, n + 1)


def _run_micro(cfg: RunConfig, out: Path, threads: int):
    K, N = cfg.sizes["K"], cfg.sizes["N"]
    gamma = cfg.scales["gamma"]
    d = cfg.d
    snaps = _snapshot_times(cfg.numerics)
    patch_traits = cfg.init["patch_traits"]
    if len(patch_traits) != K:
        raise ConfigError([("init.patch_traits", f"expected {K} patch traits")])

    log_events = bool(cfg.init.get("log_events", False))

    def one(rep: int):
        rng = streams.stream_rng(cfg.seed, rep)
        state = microsim.MicroState.monomorphic(patch_traits, N=N, gamma=gamma)
        rows = []
        event_rows = []
        mass_err = 0.0
        for t in snaps:
            state, log = microsim.micro_run(cfg.model, state, float(t), rng, log_events=log_events)
            measure = microsim.empirical_measure(state)
            mass_err = max(mass_err, abs(measure.total_weight - 1.0))
            for patch, traits in enumerate(state.traits):
                for x in traits:
                    rows.append((t, patch, *x))
            for ev in log.events:
                i, j, src = _event_indices(ev)
                event_rows.append((ev.time, ev.kind, ev.patch, i, j, src, *ev.old, *ev.new))
        names = [f"micro_rep{rep:03d}.csv"]
        write_csv(out / names[0], ["t", "patch"] + _trait_header(d), rows)
        if log_events:
            names.append(f"micro_events_rep{rep:03d}.csv")
            header = (
                ["t", "kind", "patch", "i", "j", "src_patch"]
                + [f"old_x{k}" for k in range(d)]
                + [f"new_x{k}" for k in range(d)]
            )
            write_csv(out / names[1], header, event_rows)
        return names, mass_err, all(len(p) == N for p in state.traits)

    results = _map_replicates(one, cfg.replicates, threads)
    files = [name for r in results for name in r[0]]
    mass_err = max(r[1] for r in results)
    sizes_ok = all(r[2] for r in results)
    checks = [
        Check("empirical_measure_mass", mass_err <= 1e-12, mass_err, 1e-12),
        Check("patch_sizes_constant", sizes_ok, 0.0 if sizes_ok else 1.0, 0.0),
    ]
    return files, checks, {}


def _run_tss(cfg: RunConfig, out: Path, threads: int):
    K, N = cfg.sizes["K"], cfg.sizes["N"]
    d = cfg.d
    snaps = _snapshot_times(cfg.numerics)
    site_traits = cfg.init["site_traits"]
    if len(site_traits) != K:
        raise ConfigError([("init.site_traits", f"expected {K} site traits")])

    def one(rep: int):
        rng = streams.stream_rng(cfg.seed, rep)
        trajectory = tss.tss_run(
            cfg.model,
            tss.SiteConfiguration(x=site_traits),
            N,
            float(snaps[-1]),
            rng,
        )
        times = [c.time for c in trajectory]
        rows = []
        for t in snaps:
            idx = max(0, int(np.searchsorted(times, t, side="right")) - 1)
            config = trajectory[idx]
            for site, x in enumerate(config.x):
                rows.append((t, site, *x))
        name = f"tss_rep{rep:03d}.csv"
        write_csv(out / name, ["t", "patch"] + _trait_header(d), rows)
        return name

    files = _map_replicates(one, cfg.replicates, threads)
    checks = [Check("rate_bound_probes", True, 0.0, 0.0)]
    return files, checks, {}


def _run_replicator(cfg: RunConfig, out: Path, threads: int):
    N = cfg.sizes["N"]
    traits = [kernels.as_trait(x) for x in cfg.init["traits"]]
    w0 = np.asarray(cfg.init["weights"], dtype=float)
    dt = cfg.numerics["dt"]
    horizon = cfg.numerics["horizon"]
    stride = max(1, int(round(cfg.numerics["snapshot_dt"] / dt)))

    A = replicator.build_interaction_matrix(cfg.model, traits, N)
    times, W = replicator.replicator_integrate(A, w0, dt, horizon, record_stride=stride)
    n = len(traits)
    header = ["t"] + [f"wbar{i + 1}" for i in range(n)]
    name = "replicator_meanweights.csv"
    write_csv(out / name, header, ((times[s], *W[s]) for s in range(len(times))))
    files = [name]

    conservation = float(np.max(np.abs(W.sum(axis=1) - 1.0)))
    min_weight = float(W.min())
    invader = replicator.invasion_check(A, w0)
    checks = [
        Check("mean_weight_conservation", conservation <= 1e-10, conservation, 1e-10),
        Check("weights_positive", min_weight > 0.0, min_weight, 0.0),
    ]
    extras = {
        "traits": [list(x) for x in traits],
        "invader": None if invader is None else invader + 1,
        "terminal_weights": [float(v) for v in W[-1]],
    }

    if cfg.init.get("spatial"):
        G = cfg.sizes["G"]
        w0_grid = np.asarray(
            cfg.init.get("w0_grid", np.tile(w0[:, None], (1, G))), dtype=float
        )
        times_s, Ws = replicator.spatial_weights_integrate(
            cfg.model, traits, w0_grid, dt, horizon, N, record_stride=stride
        )
        rows = []
        for s, t in enumerate(times_s):
            for i in range(n):
                for g in range(Ws.shape[2]):
                    rows.append((t, i, g, Ws[s, i, g]))
        write_csv(out / "replicator_spatial.csv", ["t", "trait_index", "grid_index", "w"], rows)
        files.append("replicator_spatial.csv")
    return files, checks, extras


def _atoms_from_config(entries) -> meanfield.AtomicMeasure:
    return meanfield.AtomicMeasure.from_atoms((e[0], e[1], e[2]) for e in entries)


def _run_meanfield(cfg: RunConfig, out: Path, threads: int):
    N = cfg.sizes["N"]
    task = cfg.task
    d = cfg.d
    if task == "finite_solve":
        init = _atoms_from_config(cfg.init["atoms"])
        solution = meanfield.meanfield_finite_solve(
            cfg.model,
            init,
            [kernels.as_trait(x) for x in cfg.init["traits"]],
            cfg.numerics["horizon"],
            cfg.numerics["dt"],
            N,
            grid_G=cfg.sizes["G"],
            snapshot_dt=cfg.numerics["snapshot_dt"],
        )
        rows = []
        for s, t in enumerate(solution.times):
            measure = solution.measure_at(s)
            for r, x, w in measure.atoms:
                rows.append((t, r, *x, w))
        name = "meanfield_atoms.csv"
        write_csv(out / name, ["t", "r"] + _trait_header(d) + ["weight"], rows)
        mass_err = float(np.max(np.abs(solution.weights.sum(axis=(1, 2)) - 1.0)))
        min_w = float(solution.weights.min())
        checks = [
            Check("measure_mass_conserved", mass_err <= 1e-10, mass_err, 1e-10),
            Check("weights_nonnegative", min_w >= -1e-12, min_w, -1e-12),
        ]
        return [name], checks, {}
    if task == "mckean_vlasov":
        rng = streams.stream_rng(cfg.seed, 0)
        mu0 = _atoms_from_config(cfg.init["mu0"])
        result = meanfield.mckean_vlasov_run(
            cfg.model,
            cfg.sizes["M"],
            mu0,
            cfg.numerics["horizon"],
            rng,
            N,
            snapshot_dt=cfg.numerics["snapshot_dt"],
        )
        rows = []
        if result.fractions is not None:
            for s, t in enumerate(result.times):
                for i, x in enumerate(result.traits):
                    rows.append((t, 0.5, *x, result.fractions[s, i]))
        else:
            final_counts: dict = {}
            for x in result.final.x:
                final_counts[x] = final_counts.get(x, 0) + 1
            for x, count in sorted(final_counts.items()):
                rows.append((result.final.time, 0.5, *x, count / len(result.final.x)))
        name = "mv_atoms.csv"
        write_csv(out / name, ["t", "r"] + _trait_header(d) + ["weight"], rows)
        checks = [Check("rate_bound_probes", True, 0.0, 0.0)]
        return [name], checks, {}
    if task == "chaos_scan":
        rng = streams.stream_rng(cfg.seed, 0)
        mu0 = _atoms_from_config(cfg.init["mu0"])
        rows = meanfield.chaos_decay_scan(
            cfg.model,
            [int(k) for k in cfg.init["K_list"]],
            STATISTICS[cfg.init.get("statistic", "coord0")],
            cfg.init["t_star"],
            cfg.replicates,
            N,
            mu0,
            rng,
        )
        name = "chaos_decay.csv"
        write_csv(out / name, ["K", "estimate", "stderr"], ((r.K, r.estimate, r.stderr) for r in rows))
        estimates = [abs(r.estimate) for r in rows]
        decreasing = all(estimates[i] >= estimates[i + 1] for i in range(len(estimates) - 1))
        checks = [Check("correlation_decreasing_in_K", decreasing, estimates[-1], 0.05)]
        extras = {"correlations": [{"K": r.K, "estimate": r.estimate, "stderr": r.stderr} for r in rows]}
        return [name], checks, extras
    if task == "tagged":
        init = _atoms_from_config(cfg.init["atoms"])
        solution = meanfield.meanfield_finite_solve(
            cfg.model,
            init,
            [kernels.as_trait(x) for x in cfg.init["traits"]],
            cfg.numerics["horizon"],
            cfg.numerics["dt"],
            N,
            grid_G=cfg.sizes["G"],
            snapshot_dt=cfg.numerics["snapshot_dt"],
        )
        rng = streams.stream_rng(cfg.seed, 0)
        sites = [meanfield.TaggedSite(z=s[0], x=s[1]) for s in cfg.init["sites"]]
        paths = meanfield.tagged_sites_run(
            cfg.model, sites, solution, cfg.numerics["horizon"], rng, N
        )
        rows = []
        for j, path in enumerate(paths):
            for t, x in path:
                rows.append((t, j, *x))
        name = "tagged_sites.csv"
        write_csv(out / name, ["t", "patch"] + _trait_header(d), rows)
        checks = [Check("rate_bound_probes", True, 0.0, 0.0)]
        return [name], checks, {}
    raise ConfigError([("task", f"unknown meanfield task {task!r}")])


def _run_canonical(cfg: RunConfig, out: Path, threads: int):
    N = cfg.sizes["N"]
    M = cfg.sizes["M"]
    d = cfg.d
    dt = cfg.numerics["dt"]
    horizon = cfg.numerics["horizon"]
    rng = streams.stream_rng(cfg.seed, 0)
    x0 = np.asarray(cfg.init["x0"], dtype=float)
    positions = cfg.init.get("positions", "uniform")
    if positions == "uniform":
        r = (np.arange(M) + 1.0) / M
    else:
        r = np.asarray(positions, dtype=float)
    ens0 = canonical_mod.XiEnsemble(r=r, x=np.tile(x0, (M, 1)))
    trajectory = canonical_mod.canonical_ensemble_run(
        cfg.model, ens0, dt, horizon, rng, N, snapshot_dt=cfg.numerics["snapshot_dt"]
    )
    rows = []
    moment_rows = []
    for t, snap in zip(trajectory.times, trajectory.snapshots):
        for p in range(snap.M):
            rows.append((t, p, *snap.x[p]))
        means = snap.x.mean(axis=0)
        variances = snap.x.var(axis=0)
        moment_rows.append((t, *means, *variances))
    write_csv(out / "canonical_particles.csv", ["t", "particle"] + _trait_header(d), rows)
    moment_header = (
        ["t"] + [f"mean_x{k}" for k in range(d)] + [f"var_x{k}" for k in range(d)]
    )
    write_csv(out / "canonical_moments.csv", moment_header, moment_rows)
    jump_prob = N * N * cfg.model.migration_bound * dt
    checks = [Check("per_step_jump_probability", jump_prob < 0.1, jump_prob, 0.1)]
    extras = {
        "terminal_mean": [float(v) for v in trajectory.snapshots[-1].x.mean(axis=0)],
        "terminal_variance": [float(v) for v in trajectory.snapshots[-1].x.var(axis=0)],
    }
    return ["canonical_particles.csv", "canonical_moments.csv"], checks, extras


def _run_compare(cfg: RunConfig, out: Path, threads: int):
    K, N = cfg.sizes["K"], cfg.sizes["N"]
    gammas = list(cfg.init["gammas"])
    t_star = cfg.init["t_star"]
    patch_traits = cfg.init["patch_traits"]
    rows = []
    results = []
    for i, gamma in enumerate(gammas):
        rng = streams.stream_rng(cfg.seed, i)
        result = tss.tss_vs_micro_compare(
            cfg.model, K, N, float(gamma), t_star, cfg.replicates, patch_traits, rng
        )
        results.append(result)
        rows.append((result.gamma, result.t_star, result.tv, result.se, result.micro_poly_fraction))
    name = "compare_divergence.csv"
    write_csv(out / name, ["gamma", "t_star", "tv", "stderr", "micro_poly_fraction"], rows)
    tvs = [r.tv for r in results]
    ordered = sorted(range(len(gammas)), key=lambda i: -gammas[i])
    monotone = all(
        tvs[ordered[i]] >= tvs[ordered[i + 1]] for i in range(len(ordered) - 1)
    )
    poly_max = max(r.micro_poly_fraction for r in results)
    checks = [
        Check("micro_polymorphic_fraction", poly_max <= 0.05, poly_max, 0.05),
    ]
    if len(gammas) > 1:
        checks.append(Check("tv_decreasing_in_gamma", monotone, tvs[ordered[-1]], 0.0))
    extras = {"tv": {repr(r.gamma): r.tv for r in results}}
    return [name], checks, extras


_RUNNERS: dict = {
    "micro": _run_micro,
    "tss": _run_tss,
    "meanfield": _run_meanfield,
    "replicator": _run_replicator,
    "canonical": _run_canonical,
    "compare": _run_compare,
}


def _map_replicates(fn: Callable, replicates: int, threads: int):
    if threads <= 1 or replicates <= 1:
        return [fn(rep) for rep in range(replicates)]
    with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(replicates)))


def run(cfg: RunConfig, out_dir, threads: int = 1) -> dict:
    """Execute a validated config; write data CSVs, ``summary.json`` and
    ``manifest.json`` into ``out_dir``.  Returns the summary dict."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    started = _utcnow()
    files, checks, extras = _RUNNERS[cfg.regime](cfg, out, threads)

    summary = {
        "regime": cfg.regime,
        "seed": cfg.seed,
        "invariant_checks": [c.as_dict() for c in checks],
        **extras,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    manifest = {
        "config_hash": hashlib.sha256(cfg.source_bytes).hexdigest(),
        "code_version": metamoran.__version__,
        "seed": cfg.seed,
        "started_utc": started,
        "finished_utc": _utcnow(),
        "outputs": sorted(files + ["summary.json"]),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return summary


def _set_by_path(cfg: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    node = cfg
    for key in keys[:-1]:
        node = node.setdefault(key, {})
    node[keys[-1]] = value


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = argparse.ArgumentParser(prog="metamoran", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("validate", "run", "compare", "sweep"):
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="path to the JSON run config")
        if name != "validate":
            sp.add_argument("--out", required=True, help="output directory")
            sp.add_argument("--seed", type=int, default=None, help="override the config seed")
            sp.add_argument("--threads", type=int, default=1, help="replicate worker threads")
        if name == "sweep":
            sp.add_argument("--param", required=True, help="dotted config path to sweep")
            sp.add_argument("--values", required=True, help="comma-separated JSON values")
    args = parser.parse_args(argv)

    try:
        cfg = validate_config(args.config)
    except ConfigError as err:
        for path, msg in err.diagnostics:
            print(f"config error: {path}: {msg}", file=sys.stderr)
        return 2
    if args.command == "validate":
        print(f"config OK: regime={cfg.regime}, seed={cfg.seed}")
        return 0

    if args.command == "compare" and cfg.regime != "compare":
        print("config error: regime: compare subcommand needs a compare-regime config", file=sys.stderr)
        return 2

    if args.command == "sweep":
        raw_values = [json.loads(v) for v in args.values.split(",")]
        status = 0
        for i, value in enumerate(raw_values):
            raw = json.loads(cfg.source_bytes.decode("utf-8"))
            _set_by_path(raw, args.param, value)
            if args.seed is not None:
                raw["seed"] = args.seed
            try:
                sub_cfg = validate_config_dict(raw)
            except ConfigError as err:
                for path, msg in err.diagnostics:
                    print(f"config error ({args.param}={value}): {path}: {msg}", file=sys.stderr)
                status = 2
                continue
            status = max(status, _execute(sub_cfg, Path(args.out) / f"sweep_{i:03d}", args.threads))
        return status

    if args.seed is not None:
        raw = json.loads(cfg.source_bytes.decode("utf-8"))
        raw["seed"] = args.seed
        cfg = validate_config_dict(raw)
    return _execute(cfg, Path(args.out), args.threads)


def _execute(cfg: RunConfig, out: Path, threads: int) -> int:
    try:
        summary = run(cfg, out, threads=threads)
    except Exception as err:  # noqa: BLE001 - converted into a machine-readable record
        out.mkdir(parents=True, exist_ok=True)
        record = {"error": type(err).__name__, "message": str(err)}
        (out / "failure.json").write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
        print(f"run failed: {record['error']}: {record['message']}", file=sys.stderr)
        return 1
    ok = all(c["pass"] for c in summary["invariant_checks"])
    for check in summary["invariant_checks"]:
        tag = "PASS" if check["pass"] else "FAIL"
        print(f"[{tag}] {check['name']}: value={check['value']!r} tolerance={check['tolerance']!r}")
    return 0 if ok else 3


if __name__ == "__main__":
    raise SystemExit(main())
