import json
import math
from pathlib import Path

import numpy as np
import pytest

from speclab.cli import main as cli_main
from speclab.eigen import full_spectrum
from speclab.harness import (
    EXIT_ASSERT,
    EXIT_SOLVER,
    EXIT_USAGE,
    ConfigError,
    ExperimentConfig,
    derive_stream,
    parse_config_text,
    run_experiment,
    with_overrides,
)
from speclab.lattice import BoxSpec
from speclab.operators import build_hamiltonian, sample_potential
from speclab.stats import rescale
from speclab.tails import power_log, stretched_exp

INF_ = math.inf


# --- seeded streams -----------------------------------------------------------

def test_stream_repeatable():
    a = derive_stream(123, 7, 0).random(100)
    b = derive_stream(123, 7, 0).random(100)
    np.testing.assert_array_equal(a, b)


def test_stream_golden_values():
    # frozen first outputs for fixed keys; a change here breaks every
    # recorded experiment
    g = derive_stream(20260809, 0, 0).integers(0, 2 ** 64, 2, dtype="uint64")
    assert [hex(int(v)) for v in g] == ["0x51eb030a4aea0486", "0xb0cf8b31b34cce46"]
    g = derive_stream(20260809, 1, 0).integers(0, 2 ** 64, 2, dtype="uint64")
    assert [hex(int(v)) for v in g] == ["0x5fcbdd56a07f0486", "0xff4420db6b795ed7"]
    g = derive_stream(20260809, 0, 1).integers(0, 2 ** 64, 2, dtype="uint64")
    assert [hex(int(v)) for v in g] == ["0x44dee8de149ca3c", "0x215e23d052216faf"]


def test_streams_differ_across_trials_and_channels():
    base = derive_stream(5, 0, 0).integers(0, 2 ** 64, 4, dtype="uint64")
    for trial, chan in [(1, 0), (0, 1), (2, 3)]:
        other = derive_stream(5, trial, chan).integers(0, 2 ** 64, 4, dtype="uint64")
        assert not np.array_equal(base, other)


def test_stream_uniformity_chi_square():
    import scipy.stats

    vals = derive_stream(999, 0, 0).integers(0, 256, 1_000_000)
    observed = np.bincount(vals, minlength=256)
    stat = np.sum((observed - 1_000_000 / 256) ** 2 / (1_000_000 / 256))
    p = scipy.stats.chi2.sf(stat, 255)
    assert p > 0.001


# --- config parsing -----------------------------------------------------------

CONFIG_TEXT = """
# comment line
experiment = extremal
dimension = 1
radii = 100,200
family = power_log
p = 2
k = 0
alpha = 0
scaling_mode = flat
trials = 8
master_seed = 42
intervals = 1:2,2:inf
x_grid = 0.5,1,2
source = both
"""


def test_parse_config_text():
    cfg = parse_config_text(CONFIG_TEXT)
    assert cfg.experiment == "extremal"
    assert cfg.radii == (100, 200)
    assert cfg.law == power_log(2.0, 0)
    assert cfg.intervals == ((1.0, 2.0), (2.0, math.inf))
    assert cfg.master_seed == 42


def test_parse_config_overrides_win():
    cfg = parse_config_text(CONFIG_TEXT, {"trials": "3", "master_seed": "7"})
    assert cfg.trials == 3 and cfg.master_seed == 7


def test_parse_config_rejects_unknown_keys():
    with pytest.raises(ConfigError):
        parse_config_text(CONFIG_TEXT + "\nwavelength = 3\n")


def test_parse_config_requires_experiment():
    with pytest.raises(ConfigError):
        parse_config_text("trials = 5")


def test_config_validation_failures():
    with pytest.raises(ConfigError):
        parse_config_text(CONFIG_TEXT, {"radii": "200,100"})
    with pytest.raises(ConfigError):
        parse_config_text(CONFIG_TEXT, {"trials": "0"})
    with pytest.raises(ConfigError):
        parse_config_text(CONFIG_TEXT, {"intervals": "1:2,1.5:3"})
    with pytest.raises(ConfigError):  # regime: flat requires alpha = 0
        parse_config_text(CONFIG_TEXT, {"alpha": "0.5"})
    with pytest.raises(ConfigError):  # alpha*p > d rejected outright
        parse_config_text(CONFIG_TEXT, {"alpha": "1.0", "scaling_mode": "power"})


def test_boundary_delta_rejected_outside_sandwich():
    text = "experiment = maxlaw\nfamily = stretched_exp\ndelta = 1\nalpha = 0\nradii = 50\n"
    with pytest.raises(ConfigError):
        parse_config_text(text)
    # the sandwich experiment accepts it
    parse_config_text(text.replace("maxlaw", "sandwich") + "x_grid = 6\n")


def test_norm_kind_defaults():
    cfg = parse_config_text(CONFIG_TEXT)
    assert cfg.resolved_norm_kind() == "euclidean"
    cfg2 = parse_config_text(
        "experiment = sandwich\nfamily = stretched_exp\ndelta = 1\nalpha = 1\nx_grid = 6\nradii = 10"
    )
    assert cfg2.resolved_norm_kind() == "sup"


def test_top_m_default_rule():
    cfg = parse_config_text(CONFIG_TEXT)
    assert cfg.resolved_top_m() == max(8, math.ceil(4.0 / 0.5))
    cfg2 = parse_config_text(CONFIG_TEXT, {"intervals": "0.25:inf", "x_grid": "1"})
    assert cfg2.resolved_top_m() == 16


# --- experiment runs ----------------------------------------------------------

def small_extremal_cfg(tmp_path, **kw):
    base = dict(
        experiment="extremal",
        dimension=1,
        radii=(60,),
        law=power_log(2.0, 0),
        alpha=0.0,
        scaling_mode="flat",
        trials=6,
        master_seed=101,
        intervals=((1.0, 2.0), (2.0, math.inf)),
        x_grid=(1.0,),
        source="both",
        out_dir=str(tmp_path / "out"),
    )
    base.update(kw)
    return ExperimentConfig(**base)


def test_run_extremal_writes_outputs(tmp_path):
    cfg = small_extremal_cfg(tmp_path)
    summary = run_experiment(cfg)
    out = Path(cfg.out_dir)
    assert (out / "extremal_L60.csv").exists()
    assert (out / "extremal_summary.json").exists()
    assert (out / "manifest.json").exists()
    header = (out / "extremal_L60.csv").read_text().splitlines()[0]
    assert header.startswith("trial,L,source,e1_raw,e1_rescaled,dropped")
    assert "count_1_2" in header and "count_2_inf" in header
    assert summary["exit_code"] == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["experiment"] == "extremal"


def test_rerun_is_byte_identical(tmp_path):
    cfg1 = small_extremal_cfg(tmp_path / "a")
    cfg2 = small_extremal_cfg(tmp_path / "b")
    run_experiment(cfg1)
    run_experiment(cfg2)
    b1 = (Path(cfg1.out_dir) / "extremal_L60.csv").read_bytes()
    b2 = (Path(cfg2.out_dir) / "extremal_L60.csv").read_bytes()
    assert b1 == b2


def test_worker_count_independence(tmp_path):
    cfg1 = small_extremal_cfg(tmp_path / "w1", workers=1, trials=8)
    cfg3 = small_extremal_cfg(tmp_path / "w3", workers=3, trials=8)
    run_experiment(cfg1)
    run_experiment(cfg3)
    b1 = (Path(cfg1.out_dir) / "extremal_L60.csv").read_bytes()
    b3 = (Path(cfg3.out_dir) / "extremal_L60.csv").read_bytes()
    assert b1 == b3


def test_sandwich_worker_count_independence(tmp_path):
    def run(tag, workers):
        cfg = ExperimentConfig(
            experiment="sandwich", dimension=1, radii=(10, 20), alpha=1.0,
            law=stretched_exp(1.0), trials=12, master_seed=77,
            x_grid=(6.0,), workers=workers, out_dir=str(tmp_path / tag),
        )
        run_experiment(cfg)
        return (tmp_path / tag / "sandwich_L20.csv").read_bytes()

    assert run("one", 1) == run("two", 2)


def test_v_source_matches_diagonal_operator_pipeline(tmp_path):
    # the no-solver V path must equal running the solve step on the
    # diagonal operator, value for value
    cfg = small_extremal_cfg(tmp_path, trials=3)
    run_experiment(cfg)
    rows = (Path(cfg.out_dir) / "extremal_L60.csv").read_text().splitlines()[1:]
    v_rows = [r.split(",") for r in rows if r.split(",")[2] == "V"]
    for row in v_rows:
        trial = int(row[0])
        spec = BoxSpec(1, 60)
        pot = sample_potential(
            spec, cfg.law, cfg.alpha, derive_stream(cfg.master_seed, trial, 0),
            seed_path=(cfg.master_seed, trial),
        )
        op = build_hamiltonian(spec, pot, "diagonal")
        eigs = full_spectrum(op).positive_descending()
        points = rescale(eigs, cfg.law, 121.0, source="V")
        assert row[3] == format(float(eigs[0]), ".17g")
        assert row[4] == format(points.top, ".17g")


def test_tailsum_run_and_csv_columns(tmp_path):
    cfg = ExperimentConfig(
        experiment="tailsum", dimension=1, radii=(50, 100), law=power_log(1.0, 0),
        alpha=0.5, scaling_mode="power", x_grid=(0.5, 1.0),
        out_dir=str(tmp_path / "ts"),
    )
    summary = run_experiment(cfg)
    lines = (Path(cfg.out_dir) / "tailsum_L100.csv").read_text().splitlines()
    assert lines[0] == "L,x,gamma_mode,gamma,sum,abs_err_vs_inv_x"
    assert len(lines) == 3
    assert "ratio_vs_power_formula" in summary["per_L"]["100"]
    assert summary["checks"]["gamma_increasing_along_ladder"]


def test_undercount_warning_when_point_budget_saturates(tmp_path):
    # m = 2 retained points but ~8 land above the lowest interval endpoint
    cfg = small_extremal_cfg(
        tmp_path, trials=2, radii=(150,), top_m=2, source="H",
        solver="lanczos", intervals=((0.25, INF_),),
    )
    with pytest.warns(UserWarning, match="counts may be low"):
        summary = run_experiment(cfg)
    src = summary["per_L"]["150"]["sources"]["H"]
    assert src.get("undercount_risk_trials", 0) >= 1


def test_ids_run_small(tmp_path):
    cfg = ExperimentConfig(
        experiment="ids", dimension=1, radii=(50, 150), law=power_log(1.0, 0),
        alpha=0.7, trials=2, master_seed=3, out_dir=str(tmp_path / "ids"),
        ks_threshold=0.5,
    )
    summary = run_experiment(cfg)
    assert summary["exit_code"] == 0
    assert set(summary["per_L"]) == {"50", "150"}
    assert (Path(cfg.out_dir) / "ids_L150.csv").exists()


def test_sandwich_run_small(tmp_path):
    cfg = ExperimentConfig(
        experiment="sandwich", dimension=1, radii=(10, 20), alpha=1.0,
        law=stretched_exp(1.0), trials=50, master_seed=3,
        x_grid=(6.0, 8.0), out_dir=str(tmp_path / "sw"),
    )
    summary = run_experiment(cfg)
    assert summary["exit_code"] == 0
    assert summary["checks"]["exact_cdf_nonincreasing_in_L"]
    assert summary["checks"]["exact_cdf_nondecreasing_in_x"]


def test_sample_run_dumps_matrix(tmp_path):
    cfg = ExperimentConfig(
        experiment="sample", dimension=2, radii=(2,), law=power_log(2.0, 0),
        alpha=0.5, out_dir=str(tmp_path / "smp"),
    )
    run_experiment(cfg)
    matrix = (Path(cfg.out_dir) / "sample_matrix_L2.txt").read_text().splitlines()
    i, j, v = matrix[0].split()
    assert int(i) == 0 and int(j) in (0, 1, 5)
    csv = (Path(cfg.out_dir) / "sample_L2.csv").read_text().splitlines()
    assert csv[0] == "ordinal,site,omega,value"
    assert len(csv) == 26


def test_assert_flag_exit_code(tmp_path):
    cfg = small_extremal_cfg(
        tmp_path, trials=120, radii=(40,), assert_checks=True, ks_threshold=1e-6
    )
    summary = run_experiment(cfg)
    assert summary["exit_code"] == EXIT_ASSERT


def test_solver_failure_exit_code(tmp_path):
    cfg = small_extremal_cfg(
        tmp_path, trials=4, radii=(80,), solver="lanczos",
        solver_max_iter=3, solver_tol=1e-15, source="H",
    )
    summary = run_experiment(cfg)
    assert summary["exit_code"] == EXIT_SOLVER
    assert summary["flagged_trials_total"] == 4


def test_with_overrides_revalidates():
    cfg = parse_config_text(CONFIG_TEXT)
    with pytest.raises(ConfigError):
        with_overrides(cfg, trials=0)


# --- CLI ------------------------------------------------------------------------

def test_cli_tailsum(tmp_path, capsys):
    code = cli_main([
        "tailsum", "--L", "50", "--alpha", "0.5", "--family", "power_log",
        "--p", "1", "--scaling-mode", "power", "--x-grid", "1",
        "--out", str(tmp_path / "cli"),
    ])
    assert code == 0
    assert (tmp_path / "cli" / "tailsum_L50.csv").exists()


def test_cli_config_file(tmp_path):
    path = tmp_path / "cfg.txt"
    path.write_text(CONFIG_TEXT.replace("radii = 100,200", "radii = 40")
                    .replace("trials = 8", "trials = 2"))
    code = cli_main(["extremal", "--config", str(path),
                     "--out", str(tmp_path / "o")])
    assert code == 0


def test_cli_usage_error_exit_1(tmp_path):
    assert cli_main(["extremal", "--config", str(tmp_path / "missing.txt")]) == EXIT_USAGE
    assert cli_main(["tailsum", "--alpha", "0.5"]) == EXIT_USAGE  # flat + alpha>0
