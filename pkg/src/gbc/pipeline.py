"""End-to-end orchestration: table -> summary -> quantile chain -> reports.

Every function here is a pure function of (config, seed): all randomness
flows through named child streams of the run's root stream, so reruns are
byte-identical. The benchmark drivers also compute the pass/fail decisions
the CLI turns into exit codes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .analytic import NormalNormalModel, conjugate_posterior
from .baselines import (
    AbcConfig,
    abc_epsilon_sweep,
    fiducial_rejection,
    w1_bootstrap_se,
    w1_distance,
)
from .checkpoint import Checkpoint
from .config import (
    RunConfig,
    network_spec_from_config,
    optimizer_spec_from_config,
    prior_from_config,
    simulator_params,
)
from .design import lhs_sample
from .errors import ConfigError
from .models import (
    EPIDEMIC_QUANTILE_PROBS,
    EPIDEMIC_RANGES,
    EpidemicSimulator,
    NormalCoord,
    PriorSpec,
    ReferenceTable,
    UniformCoord,
    generate_reference_table,
    make_simulator,
    quantile_index_replicates,
)
from .quantile import AutoregressiveQuantileModel, posterior_quantile_curve, train_iqn
from .rng import RngStream
from .summaries import SummaryMap, apply_summary, fit_linear_summary, fit_posterior_mean_net

# Validation thresholds enforced by the normal benchmark (in units of the
# exact posterior sd, except the Kolmogorov significance level).
NET_MAX_QERR_SIGMA = 0.15
NET_W1_SIGMA = 0.10
ABC_FINAL_W1_SIGMA = 0.20
KS_SIGNIFICANCE = 0.01

DEFAULT_TAU_GRID = tuple(np.round(np.arange(0.05, 0.951, 0.05), 10))


def run_seed(cfg: RunConfig, override=None) -> int:
    if override is not None:
        return int(override)
    return cfg.get_int("run", "seed", 0)


def build_table(cfg: RunConfig, seed, threads=1) -> ReferenceTable:
    """Generate the reference table the config describes."""
    prior = prior_from_config(cfg)
    simulator = make_simulator(
        cfg.get_str("run", "simulator"), simulator_params(cfg)
    )
    if prior.dim != simulator.theta_dim:
        raise ConfigError(
            f"prior has {prior.dim} coordinates but simulator "
            f"{simulator.name!r} expects {simulator.theta_dim}"
        )
    n_rows = cfg.get_int("run", "table_rows")
    if n_rows < 1:
        raise ConfigError("[run] table_rows must be positive")
    root = RngStream(seed)
    return generate_reference_table(
        prior,
        simulator,
        n_rows,
        root.child("table"),
        block_size=cfg.get_int("run", "block_size", 4096),
        threads=max(1, int(threads)),
    )


def fit_summary(cfg: RunConfig, table: ReferenceTable, seed):
    """Fit the configured summary map. Returns (summary, losses or None,
    holdout mse or None)."""
    kind = cfg.get_str("summary", "kind", "network")
    log1p = cfg.get_bool("summary", "log1p_inputs", "false")
    if kind == "linear":
        summary = fit_linear_summary(table, log1p_inputs=log1p)
        return summary, None, _holdout_mse(summary, table)
    if kind != "network":
        raise ConfigError(
            f"config key [summary] kind must be linear or network, got {kind!r}"
        )
    root = RngStream(seed)
    result = fit_posterior_mean_net(
        table,
        root.child("summary"),
        hidden=cfg.get_ints("summary", "hidden", "64,64"),
        epochs=cfg.get_int("summary", "epochs", 200),
        batch_size=cfg.get_int("summary", "batch_size", 128),
        lr=cfg.get_float("summary", "lr", 1e-3),
        optimizer=cfg.get_str("summary", "optimizer", "adam"),
        momentum=cfg.get_float("summary", "momentum", 0.9),
        log1p_inputs=log1p,
    )
    return result.summary, result.train_losses, result.holdout_loss


def _holdout_mse(summary: SummaryMap, table: ReferenceTable) -> float:
    cut = max(1, min(table.n_rows - 1, int(round(0.9 * table.n_rows))))
    if cut >= table.n_rows:
        return float("nan")
    pred = apply_summary(summary, table.ys[cut:])
    if pred.ndim == 1:
        pred = pred[:, None]
    return float(np.mean(np.sum((pred - table.thetas[cut:]) ** 2, axis=1)))


def train_chain(cfg: RunConfig, table: ReferenceTable, summary: SummaryMap, seed):
    """Train one quantile net per theta coordinate. Returns
    (Checkpoint, loss trace array of shape (epochs, d))."""
    net_spec = network_spec_from_config(cfg)
    opt_spec = optimizer_spec_from_config(cfg)
    root = RngStream(seed)
    nets = []
    traces = []
    for k in range(table.theta_dim):
        net, losses = train_iqn(
            table, summary, k, net_spec, opt_spec, root.child(f"train-{k}")
        )
        nets.append(net)
        traces.append(losses)
    ckpt = Checkpoint(
        summary=summary,
        nets=nets,
        table_seed=table.seed,
        config_hash=cfg.config_hash(),
    )
    return ckpt, np.column_stack(traces)


# ---------------------------------------------------------------------------
# CSV helpers (17 significant digits: lossless float64 round-trip).


def fmt_value(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


def write_csv(path, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt_value(v) for v in row) + "\n")


# ---------------------------------------------------------------------------
# Normal-location benchmark: quantile net vs ABC vs fiducial vs closed form.


@dataclass
class NormalBenchmarkResult:
    rows: list  # report rows (list of lists)
    posterior_mean: float
    posterior_sd: float
    y_bar: float
    ok: bool
    failures: list


def benchmark_normal(cfg: RunConfig, seed, threads=1) -> NormalBenchmarkResult:
    """Method-by-method comparison on the conjugate normal location model.

    Builds y_obs at the configured true theta, trains the quantile chain on
    a fresh reference table, runs the ABC epsilon sweep and the fiducial
    location sampler, and scores everything against the exact posterior.
    """
    prior = prior_from_config(cfg)
    if prior.dim != 1 or not isinstance(prior.coords[0], NormalCoord):
        raise ConfigError("the normal benchmark needs a 1-D normal prior")
    params = simulator_params(cfg)
    simulator = make_simulator(cfg.get_str("run", "simulator"), params)
    if simulator.name != "normal-location":
        raise ConfigError("the normal benchmark needs the normal-location simulator")

    root = RngStream(seed)
    theta_true = cfg.get_float("benchmark", "theta_true", 3.0)
    y_obs = simulator.simulate(
        np.array([theta_true]), root.child("y-obs").generator
    )
    model = NormalNormalModel(
        prior_mean=prior.coords[0].mean,
        prior_var=prior.coords[0].var,
        noise_var=simulator.noise_var,
        y=tuple(y_obs),
    )
    post = conjugate_posterior(model)
    sigma = post.sd
    tau_grid = np.asarray(
        cfg.get_floats("sampling", "tau_grid", ",".join(map(str, DEFAULT_TAU_GRID)))
    )
    failures = []
    rows = []

    # Closed form against itself: exact zeros, the reference row.
    rows.append(["analytic", "nan", 0, 1.0, 0.0, 0.0, 0.0, "nan", "yes"])

    # Quantile-network pipeline.
    table = build_table(cfg, seed, threads=threads)
    summary, _, _ = fit_summary(cfg, table, seed)
    ckpt, _ = train_chain(cfg, table, summary, seed)
    qmodel = ckpt.model()
    curve, _crossing = posterior_quantile_curve(qmodel, y_obs, tau_grid)
    max_qerr = float(np.max(np.abs(curve - post.quantile(tau_grid))))
    n_draws = cfg.get_int("sampling", "n_draws", 10_000)
    draws = qmodel.sample(y_obs, n_draws, root.child("net-sample"))[:, 0]
    net_w1 = w1_distance(draws, post.quantile)
    net_ok = max_qerr < NET_MAX_QERR_SIGMA * sigma and net_w1 < NET_W1_SIGMA * sigma
    if not net_ok:
        failures.append(
            f"quantile net: max quantile error {max_qerr:.4g} "
            f"(limit {NET_MAX_QERR_SIGMA * sigma:.4g}), W1 {net_w1:.4g} "
            f"(limit {NET_W1_SIGMA * sigma:.4g})"
        )
    rows.append(
        ["quantile-net", "nan", n_draws, 1.0, net_w1, 0.0, max_qerr, "nan",
         "yes" if net_ok else "no"]
    )

    # ABC sweep on the mean summary, epsilons in prior-predictive sd units.
    n_obs = simulator.n_obs
    mean_map = SummaryMap(
        kind="linear",
        matrix=np.full((1, n_obs), 1.0 / n_obs),
        intercept=np.zeros(1),
    )
    abc_cfg = AbcConfig(epsilon=0.0, summary=mean_map, standardize=True)
    epsilons = list(cfg.get_floats("abc", "epsilons", "2,1,0.5,0.25,0.1"))
    budget = cfg.get_int("abc", "budget", 300_000)
    sweep = abc_epsilon_sweep(
        simulator, prior, y_obs, abc_cfg, epsilons, budget,
        root.child("abc"), block_size=cfg.get_int("abc", "block_size", 4096),
    )
    prev_w1 = None
    abc_ok = True
    boot = root.child("abc-boot")
    final_w1 = None
    for res in sweep:
        if res.n_accepted == 0:
            abc_ok = False
            failures.append(f"abc epsilon={res.epsilon}: no acceptances")
            rows.append(
                ["abc", res.epsilon, 0, 0.0, "nan", "nan", "nan", "nan", "no"]
            )
            continue
        w1 = w1_distance(res.thetas[:, 0], post.quantile)
        se = w1_bootstrap_se(res.thetas[:, 0], post.quantile, boot.child(len(rows)))
        step_ok = prev_w1 is None or w1 <= prev_w1 + 2.0 * se
        if not step_ok:
            abc_ok = False
            failures.append(
                f"abc W1 increased beyond 2 SE at epsilon={res.epsilon}: "
                f"{prev_w1:.4g} -> {w1:.4g} (se {se:.4g})"
            )
        rows.append(
            ["abc", res.epsilon, res.n_accepted, res.acceptance_rate, w1, se,
             "nan", "nan", "yes" if step_ok else "no"]
        )
        prev_w1 = w1
        final_w1 = w1
    if final_w1 is None or final_w1 >= ABC_FINAL_W1_SIGMA * sigma:
        abc_ok = False
        failures.append(
            f"abc final W1 {final_w1} not below {ABC_FINAL_W1_SIGMA * sigma:.4g}"
        )

    # Fiducial location model on the scalar y = y_bar: closed form N(y_bar, 1).
    y_bar = float(np.mean(y_obs))
    fid_budget = cfg.get_int("fiducial", "budget", 10_000)
    fid = fiducial_rejection(
        G=lambda u, th: np.array([th[0] + u]),
        sample_u=lambda gen: float(gen.normal()),
        y_obs=np.array([y_bar]),
        epsilon=math.inf,
        budget=fid_budget,
        rng=root.child("fiducial"),
        theta_bounds=[(y_bar - 12.0, y_bar + 12.0)],
    )
    fid_draws = fid.thetas[:, 0]
    ks_stat, ks_p = stats.kstest(fid_draws, "norm", args=(y_bar, 1.0))
    fid_ok = ks_p > KS_SIGNIFICANCE
    if not fid_ok:
        failures.append(
            f"fiducial location draws fail the Kolmogorov test: "
            f"stat {ks_stat:.4g}, p {ks_p:.4g}"
        )
    fid_w1 = w1_distance(
        fid_draws, lambda t: y_bar + stats.norm.ppf(t)
    )
    rows.append(
        ["fiducial", "nan", fid.n_accepted, fid.acceptance_rate, fid_w1, "nan",
         "nan", ks_stat, "yes" if fid_ok else "no"]
    )

    ok = net_ok and abc_ok and fid_ok
    return NormalBenchmarkResult(
        rows=rows,
        posterior_mean=post.mean,
        posterior_sd=sigma,
        y_bar=y_bar,
        ok=ok,
        failures=failures,
    )


NORMAL_REPORT_HEADER = [
    "method", "epsilon", "n_draws", "acceptance_rate", "w1", "w1_se",
    "max_quantile_err", "ks_stat", "pass",
]


# ---------------------------------------------------------------------------
# Epidemic benchmark: LHS scenarios, quantile-trajectory table, autoregressive
# chain, posterior-predictive coverage on held-out scenarios.


@dataclass
class EpidemicBenchmarkResult:
    holdout_ids: list
    holdout_tables: dict  # id -> rows for the per-scenario CSV
    coverage_rows: list
    coverage: float
    box_violation_rate: float
    box_violation_by_coord: np.ndarray  # per theta coordinate (alpha last)
    ok: bool
    failures: list


def benchmark_epidemic(cfg: RunConfig, seed, threads=1) -> EpidemicBenchmarkResult:
    """Desk-scale epidemic study: train on quantile trajectories from an LHS
    design, then check posterior-predictive band coverage on holdouts."""
    params = simulator_params(cfg)
    simulator = EpidemicSimulator(
        population=int(float(params.get("population", 100_000))),
        weeks=int(params.get("weeks", 56)),
        contact=float(params.get("contact", 0.5)),
    )
    n_scen = cfg.get_int("benchmark", "scenarios", 100)
    n_reps = cfg.get_int("benchmark", "replicates", 100)
    n_hold = cfg.get_int("benchmark", "holdouts", 3)
    n_draws = cfg.get_int("benchmark", "posterior_draws", 300)
    pred_reps = cfg.get_int("benchmark", "predictive_replicates", 100)
    floor = cfg.get_float("benchmark", "coverage_floor", 0.8)
    if n_hold >= n_scen:
        raise ConfigError("need fewer holdouts than scenarios")
    probs = np.asarray(EPIDEMIC_QUANTILE_PROBS)
    weeks = simulator.weeks
    root = RngStream(seed)

    # Design and replicate curves.
    scenarios = lhs_sample(EPIDEMIC_RANGES, n_scen, root.child("design"))
    quantile_traj = np.empty((n_scen, probs.size, weeks))
    for i in range(n_scen):
        gen = root.child(f"scenario-{i}").generator
        tiled = np.broadcast_to(scenarios[i], (n_reps, 5))
        curves = simulator.simulate_batch(tiled, gen)
        quantile_traj[i], _ = quantile_index_replicates(curves, probs)

    hold_gen = root.child("holdout").generator
    holdout_ids = sorted(
        int(v) for v in hold_gen.choice(n_scen, size=n_hold, replace=False)
    )
    train_ids = [i for i in range(n_scen) if i not in holdout_ids]

    # Training table: one row per (scenario, quantile level); theta is the
    # 5 scenario parameters plus the level itself, y the quantile trajectory.
    thetas = []
    ys = []
    for i in train_ids:
        for j, a in enumerate(probs):
            thetas.append(np.concatenate([scenarios[i], [a]]))
            ys.append(quantile_traj[i, j])
    table = ReferenceTable(
        thetas=np.array(thetas),
        ys=np.array(ys),
        seed=int(seed),
        simulator="epidemic-quantiles",
    )

    summary, _, _ = fit_summary(cfg, table, seed)
    ckpt, _ = train_chain(cfg, table, summary, seed)
    model = ckpt.model()

    # Prior box for clipping predictive draws back into simulator range.
    lo = np.array([r[0] for r in EPIDEMIC_RANGES] + [0.0])
    hi = np.array([r[1] for r in EPIDEMIC_RANGES] + [1.0])

    holdout_tables = {}
    coverage_rows = []
    covered_total = 0
    cells_total = 0
    out_of_box = 0
    out_by_coord = np.zeros(lo.size, dtype=np.int64)
    draws_total = 0
    for h in holdout_ids:
        columns = {"week": np.arange(1, weeks + 1)}
        for j, a in enumerate(probs):
            y_obs = quantile_traj[h, j]
            draws = model.sample(
                y_obs, n_draws, root.child(f"sample-{h}-{j}")
            )
            outside = (draws < lo) | (draws > hi)
            out_of_box += int(np.sum(np.any(outside, axis=1)))
            out_by_coord += outside.sum(axis=0)
            draws_total += draws.shape[0]
            clipped = np.clip(draws, lo, hi)
            pred_gen = root.child(f"predict-{h}-{j}").generator
            pred = np.empty((n_draws, weeks))
            for t in range(n_draws):
                tiled = np.broadcast_to(clipped[t, :5], (pred_reps, 5))
                curves = _simulate_unchecked(simulator, tiled, pred_gen)
                pred[t] = np.quantile(
                    curves, clipped[t, 5], axis=0, method="linear"
                )
            lower = np.quantile(pred, 0.05, axis=0)
            median = np.quantile(pred, 0.5, axis=0)
            upper = np.quantile(pred, 0.95, axis=0)
            covered = (y_obs >= lower) & (y_obs <= upper)
            covered_total += int(covered.sum())
            cells_total += weeks
            coverage_rows.append(
                [h, float(a), int(covered.sum()), weeks, float(covered.mean())]
            )
            tag = f"q{a:g}"
            columns[f"obs_{tag}"] = y_obs
            columns[f"lo_{tag}"] = lower
            columns[f"med_{tag}"] = median
            columns[f"hi_{tag}"] = upper
        holdout_tables[h] = columns

    coverage = covered_total / cells_total
    box_rate = out_of_box / draws_total if draws_total else 0.0
    coverage_rows.append(["all", "nan", covered_total, cells_total, coverage])
    failures = []
    if coverage < floor:
        failures.append(
            f"posterior-predictive coverage {coverage:.3f} below floor {floor}"
        )
    return EpidemicBenchmarkResult(
        holdout_ids=holdout_ids,
        holdout_tables=holdout_tables,
        coverage_rows=coverage_rows,
        coverage=coverage,
        box_violation_rate=box_rate,
        box_violation_by_coord=out_by_coord / max(1, draws_total),
        ok=coverage >= floor,
        failures=failures,
    )


def _simulate_unchecked(simulator: EpidemicSimulator, thetas, gen):
    # Predictive draws are clipped to the box, so range validation is moot;
    # bypassing it keeps the hot loop lean.
    from .models import _epidemic_batch

    return _epidemic_batch(
        np.asarray(thetas, dtype=np.float64),
        simulator.population,
        simulator.weeks,
        gen,
        simulator.contact,
    )


COVERAGE_HEADER = ["scenario", "alpha", "covered_weeks", "total_weeks", "coverage"]


def holdout_csv_rows(columns: dict):
    header = list(columns.keys())
    n = len(columns["week"])
    rows = [[columns[k][i] for k in header] for i in range(n)]
    return header, rows
