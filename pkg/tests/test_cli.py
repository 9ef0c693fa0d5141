"""Config validation diagnostics, output contracts, determinism."""

import json
import math
from pathlib import Path

import numpy as np
import pytest

from metamoran import cli, streams
from metamoran.cli import ConfigError, validate_config, validate_config_dict


def minimal_tss_config(seed=11):
    return {
        "regime": "tss",
        "seed": seed,
        "replicates": 2,
        "model": {
            "c": "1",
            "theta": "0",
            "lambda": "x*(1+y)/2",
            "mutation": {"kind": "degenerate", "epsilon": 0.0},
            "bound_C": 1.0,
        },
        "sizes": {"K": 2, "N": 2, "d": 1},
        "numerics": {"horizon": 2.0},
        "init": {"site_traits": [[0.2], [0.5]]},
    }


def replicator_example1_config(seed=5):
    return {
        "regime": "replicator",
        "seed": seed,
        "model": {
            "c": "1",
            "theta": "0",
            "lambda": "x*(1+y)/2",
            "mutation": {"kind": "degenerate", "epsilon": 0.0},
            "bound_C": 1.0,
        },
        "sizes": {"N": 2, "d": 1},
        "numerics": {"dt": 0.001, "horizon": 30.0, "snapshot_dt": 0.1},
        "init": {"traits": [[0.2], [0.5], [0.9]], "weights": [1 / 3, 1 / 3, 1 / 3]},
    }


def write_config(tmp_path, cfg, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg, indent=1))
    return path


def test_minimal_tss_config_accepted(tmp_path):
    cfg = validate_config(write_config(tmp_path, minimal_tss_config()))
    assert cfg.regime == "tss"
    assert cfg.numerics["dt"] == 1e-3  # default filled
    assert cfg.sizes["G"] == 64
    assert cfg.numerics["snapshot_dt"] > 0


def test_lambda_syntax_error_diagnostic(tmp_path):
    raw = minimal_tss_config()
    raw["model"]["lambda"] = "x +"
    with pytest.raises(ConfigError) as err:
        validate_config(write_config(tmp_path, raw))
    paths = {p for p, _ in err.value.diagnostics}
    assert "model.lambda" in paths
    msg = dict(err.value.diagnostics)["model.lambda"]
    assert "offset 4" in msg


def test_bound_probe_failure_diagnostic(tmp_path):
    raw = minimal_tss_config()
    raw["model"]["c"] = "2"
    with pytest.raises(ConfigError) as err:
        validate_config(write_config(tmp_path, raw))
    assert any(p == "model.bound_C" for p, _ in err.value.diagnostics)


def test_missing_fields_reported_with_paths():
    with pytest.raises(ConfigError) as err:
        validate_config_dict({"regime": "micro", "seed": 1, "model": {}})
    paths = {p for p, _ in err.value.diagnostics}
    assert "model.c" in paths and "model.mutation" in paths


def test_unknown_regime():
    with pytest.raises(ConfigError) as err:
        validate_config_dict({"regime": "quantum", "seed": 1})
    assert any(p == "regime" for p, _ in err.value.diagnostics)


def test_replicator_run_outputs(tmp_path):
    cfg = validate_config(write_config(tmp_path, replicator_example1_config()))
    out = tmp_path / "out"
    summary = cli.run(cfg, out)
    assert (out / "replicator_meanweights.csv").exists()
    assert (out / "manifest.json").exists()
    assert summary["invader"] == 1  # smallest trait, 1-based
    assert all(c["pass"] for c in summary["invariant_checks"])
    header = (out / "replicator_meanweights.csv").read_text().splitlines()[0]
    assert header == "t,wbar1,wbar2,wbar3"
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 5
    assert "replicator_meanweights.csv" in manifest["outputs"]


def test_rerun_byte_identical(tmp_path):
    path = write_config(tmp_path, replicator_example1_config())
    outs = []
    for name in ("a", "b"):
        cfg = validate_config(path)
        out = tmp_path / name
        cli.run(cfg, out)
        outs.append((out / "replicator_meanweights.csv").read_bytes())
    assert outs[0] == outs[1]


def test_threads_do_not_change_replicate_files(tmp_path):
    path = write_config(tmp_path, minimal_tss_config())
    contents = {}
    for threads, name in ((1, "serial"), (3, "parallel")):
        cfg = validate_config(path)
        out = tmp_path / name
        cli.run(cfg, out, threads=threads)
        contents[name] = [
            (out / f"tss_rep{i:03d}.csv").read_bytes() for i in range(2)
        ]
    assert contents["serial"] == contents["parallel"]


def test_tss_csv_schema(tmp_path):
    cfg = validate_config(write_config(tmp_path, minimal_tss_config()))
    out = tmp_path / "out"
    cli.run(cfg, out)
    lines = (out / "tss_rep000.csv").read_text().splitlines()
    assert lines[0] == "t,patch,x0"
    first = lines[1].split(",")
    assert first[0] == "0.0" and first[1] == "0"


def test_compare_run_writes_divergence_table(tmp_path):
    raw = {
        "regime": "compare",
        "seed": 3,
        "replicates": 400,
        "model": {
            "c": "1",
            "theta": "0",
            "lambda": "(1+y)/2",
            "mutation": {"kind": "degenerate", "epsilon": 0.0},
            "bound_C": 1.0,
        },
        "sizes": {"K": 2, "N": 3, "d": 1},
        "init": {"patch_traits": [[0.0], [1.0]], "gammas": [1e-3], "t_star": 0.5},
    }
    cfg = validate_config(write_config(tmp_path, raw))
    out = tmp_path / "out"
    summary = cli.run(cfg, out)
    lines = (out / "compare_divergence.csv").read_text().splitlines()
    assert lines[0] == "gamma,t_star,tv,stderr,micro_poly_fraction"
    assert len(lines) == 2
    assert any(c["name"] == "micro_polymorphic_fraction" for c in summary["invariant_checks"])


def test_micro_run_csv_and_checks(tmp_path):
    raw = {
        "regime": "micro",
        "seed": 9,
        "replicates": 1,
        "model": {
            "c": "1",
            "theta": "0.2",
            "lambda": "0.5",
            "mutation": {"kind": "isotropic-gaussian", "epsilon": 0.05, "scale": 1.0},
            "bound_C": 1.0,
        },
        "sizes": {"K": 2, "N": 3, "d": 1},
        "scales": {"gamma": 0.5},
        "numerics": {"horizon": 4.0, "snapshot_dt": 1.0},
        "init": {"patch_traits": [[0.3], [0.7]]},
    }
    cfg = validate_config(write_config(tmp_path, raw))
    out = tmp_path / "out"
    summary = cli.run(cfg, out)
    lines = (out / "micro_rep000.csv").read_text().splitlines()
    assert lines[0] == "t,patch,x0"
    # 5 snapshots x K x N rows
    assert len(lines) == 1 + 5 * 2 * 3
    assert all(c["pass"] for c in summary["invariant_checks"])


def test_main_validate_subcommand(tmp_path, capsys):
    path = write_config(tmp_path, minimal_tss_config())
    assert cli.main(["validate", "--config", str(path)]) == 0
    raw = minimal_tss_config()
    raw["model"]["lambda"] = "x +"
    bad = write_config(tmp_path, raw, "bad.json")
    assert cli.main(["validate", "--config", str(bad)]) == 2


def test_main_run_and_seed_override(tmp_path):
    path = write_config(tmp_path, replicator_example1_config())
    out = tmp_path / "cli_out"
    assert cli.main(["run", "--config", str(path), "--out", str(out), "--seed", "77"]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 77


def test_main_sweep(tmp_path):
    path = write_config(tmp_path, minimal_tss_config())
    out = tmp_path / "sweep_out"
    code = cli.main([
        "sweep", "--config", str(path), "--out", str(out),
        "--param", "numerics.horizon", "--values", "1.0,2.0",
    ])
    assert code == 0
    assert (out / "sweep_000" / "summary.json").exists()
    assert (out / "sweep_001" / "summary.json").exists()


def test_failure_record_on_error(tmp_path):
    raw = minimal_tss_config()
    raw["init"]["site_traits"] = [[0.2]]  # wrong length vs K=2
    path = write_config(tmp_path, raw)
    out = tmp_path / "fail_out"
    code = cli.main(["run", "--config", str(path), "--out", str(out)])
    assert code == 1
    record = json.loads((out / "failure.json").read_text())
    assert "message" in record


# --- streams -------------------------------------------------------------------


def test_stream_seeds_distinct_and_stable():
    seeds = [streams.stream_seed(42, i) for i in range(1000)]
    assert len(set(seeds)) == 1000
    assert seeds[0] == streams.stream_seed(42, 0)


def test_mix64_avalanche():
    # flipping one input bit flips a large fraction of output bits
    flips = []
    for bit in range(0, 64, 7):
        a = streams.mix64(12345)
        b = streams.mix64(12345 ^ (1 << bit))
        flips.append(bin(a ^ b).count("1"))
    assert min(flips) >= 16


def test_stream_rng_independent_of_call_order():
    a = streams.stream_rng(7, 3).random(4)
    b = streams.stream_rng(7, 1).random(4)
    a2 = streams.stream_rng(7, 3).random(4)
    assert np.array_equal(a, a2)
    assert not np.array_equal(a, b)


# --- meanfield regime tasks -------------------------------------------------------


def meanfield_base_model():
    return {
        "c": "1",
        "theta": "0",
        "lambda": "x*(1+y)/2",
        "mutation": {"kind": "degenerate", "epsilon": 0.0},
        "bound_C": 1.0,
    }


def test_meanfield_finite_solve_run(tmp_path):
    G = 4
    grid = [(g + 0.5) / G for g in range(G)]
    atoms = [[r, [x], 0.5 / G] for r in grid for x in (0.2, 0.5)]
    raw = {
        "regime": "meanfield",
        "task": "finite_solve",
        "seed": 4,
        "model": meanfield_base_model(),
        "sizes": {"N": 2, "d": 1, "G": G},
        "numerics": {"dt": 0.01, "horizon": 2.0, "snapshot_dt": 0.5},
        "init": {"atoms": atoms, "traits": [[0.2], [0.5]]},
    }
    path = write_config(tmp_path, raw)
    out = tmp_path / "out"
    summary = cli.run(cli.validate_config(path), out)
    lines = (out / "meanfield_atoms.csv").read_text().splitlines()
    assert lines[0] == "t,r,x0,weight"
    assert all(c["pass"] for c in summary["invariant_checks"])


def test_meanfield_mckean_vlasov_run(tmp_path):
    raw = {
        "regime": "meanfield",
        "task": "mckean_vlasov",
        "seed": 5,
        "model": meanfield_base_model(),
        "sizes": {"N": 2, "M": 200, "d": 1},
        "numerics": {"horizon": 2.0, "snapshot_dt": 0.5},
        "init": {"mu0": [[0.0, [0.2], 0.5], [0.0, [0.5], 0.5]]},
    }
    path = write_config(tmp_path, raw)
    out = tmp_path / "out"
    cli.run(cli.validate_config(path), out)
    lines = (out / "mv_atoms.csv").read_text().splitlines()
    assert lines[0] == "t,r,x0,weight"
    assert len(lines) == 1 + 5 * 2  # 5 snapshots x 2 traits


def test_meanfield_tagged_run(tmp_path):
    G = 4
    grid = [(g + 0.5) / G for g in range(G)]
    atoms = [[r, [x], 0.5 / G] for r in grid for x in (0.2, 0.5)]
    raw = {
        "regime": "meanfield",
        "task": "tagged",
        "seed": 6,
        "model": meanfield_base_model(),
        "sizes": {"N": 2, "d": 1, "G": G},
        "numerics": {"dt": 0.01, "horizon": 2.0, "snapshot_dt": 0.5},
        "init": {"atoms": atoms, "traits": [[0.2], [0.5]], "sites": [[0.3, [0.2]], [0.7, [0.5]]]},
    }
    path = write_config(tmp_path, raw)
    out = tmp_path / "out"
    cli.run(cli.validate_config(path), out)
    lines = (out / "tagged_sites.csv").read_text().splitlines()
    assert lines[0] == "t,patch,x0"
    assert len(lines) >= 3  # at least the two initial site rows


def test_canonical_run_outputs(tmp_path):
    raw = {
        "regime": "canonical",
        "seed": 12,
        "model": {
            "c": "1 + (x-y)^2",
            "theta": "1",
            "lambda": "0",
            "mutation": {"kind": "isotropic-gaussian", "epsilon": 1.0, "scale": 1.0},
            "bound_C": 200.0,
            "lambda_bound": 0.0,
            "trait_box": [-5.0, 5.0],
        },
        "sizes": {"N": 2, "M": 50, "d": 1},
        "numerics": {"dt": 0.01, "horizon": 0.5, "snapshot_dt": 0.25},
        "init": {"x0": [0.0]},
    }
    path = write_config(tmp_path, raw)
    out = tmp_path / "out"
    summary = cli.run(cli.validate_config(path), out)
    assert (out / "canonical_particles.csv").read_text().splitlines()[0] == "t,particle,x0"
    moments = (out / "canonical_moments.csv").read_text().splitlines()
    assert moments[0] == "t,mean_x0,var_x0"
    assert "terminal_mean" in summary


def test_micro_event_log_csv(tmp_path):
    raw = {
        "regime": "micro",
        "seed": 14,
        "model": {
            "c": "1",
            "theta": "0.2",
            "lambda": "0.5",
            "mutation": {"kind": "isotropic-gaussian", "epsilon": 0.05, "scale": 1.0},
            "bound_C": 1.0,
        },
        "sizes": {"K": 2, "N": 3, "d": 1},
        "scales": {"gamma": 0.5},
        "numerics": {"horizon": 3.0, "snapshot_dt": 1.0},
        "init": {"patch_traits": [[0.3], [0.7]], "log_events": True},
    }
    path = write_config(tmp_path, raw)
    out = tmp_path / "out"
    cli.run(cli.validate_config(path), out)
    lines = (out / "micro_events_rep000.csv").read_text().splitlines()
    assert lines[0] == "t,kind,patch,i,j,src_patch,old_x0,new_x0"
    assert len(lines) > 1
    kinds = {line.split(",")[1] for line in lines[1:]}
    assert kinds <= {"resample", "mutate", "migrate"}
    times = [float(line.split(",")[0]) for line in lines[1:]]
    assert all(a < b for a, b in zip(times, times[1:]))
