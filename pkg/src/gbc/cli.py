"""Command-line front end.

Subcommands: gen-table, fit-summary, train, sample, abc, fiducial,
benchmark-normal, benchmark-epidemic, gradcheck. Every command is a pure
function of its config file and inputs: identical invocations write
byte-identical outputs. Exit codes: 0 success, 2 config error, 3 data
error, 4 benchmark/acceptance failure.
"""

from __future__ import annotations

import os

# Pin BLAS pools to one thread before numpy loads: reductions then have a
# fixed summation order, which the byte-identical-rerun guarantee needs.
for _var in (
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "OMP_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
):
    os.environ.setdefault(_var, "1")

import argparse
import math
import sys
from pathlib import Path

import numpy as np

from .baselines import AbcConfig, abc_epsilon_sweep, fiducial_rejection
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import RunConfig, prior_from_config, simulator_params
from .errors import ConfigError, DataError, GbcError
from .models import (
    make_simulator,
    read_table_binary,
    read_table_csv,
    write_table_binary,
    write_table_csv,
)
from .nets import run_gradient_check
from .pipeline import (
    COVERAGE_HEADER,
    NORMAL_REPORT_HEADER,
    benchmark_epidemic,
    benchmark_normal,
    build_table,
    fit_summary,
    fmt_value,
    holdout_csv_rows,
    run_seed,
    train_chain,
    write_csv,
)
from .rng import RngStream
from .summaries import SummaryMap, apply_summary

GRADCHECK_TOLERANCE = 1e-5


def _load_config(args) -> RunConfig:
    if not args.config:
        raise ConfigError("this command needs --config PATH")
    return RunConfig.from_file(args.config)


def _resolve_threads(args, cfg: RunConfig | None) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    env = os.environ.get("GBC_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise ConfigError(f"GBC_THREADS must be an integer, got {env!r}") from exc
    if cfg is not None and cfg.has("run", "threads"):
        return max(1, cfg.get_int("run", "threads"))
    return 1


def _out_dir(args, cfg: RunConfig) -> Path:
    out = args.out or cfg.get_str("run", "out_dir", "out")
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _table_path(args, cfg: RunConfig, out: Path) -> Path:
    if getattr(args, "table", None):
        return Path(args.table)
    fmt = cfg.get_str("run", "table_format", "binary")
    return out / ("table.csv" if fmt == "csv" else "table.gbct")


def _read_table(path: Path):
    if not path.exists():
        raise DataError(f"reference table not found: {path}")
    if path.suffix == ".csv":
        return read_table_csv(path)
    return read_table_binary(path)


def _read_vector(path) -> np.ndarray:
    try:
        data = np.loadtxt(path, delimiter=",", ndmin=2, dtype=np.float64)
    except OSError as exc:
        raise DataError(f"cannot read data file {path}: {exc}") from exc
    except ValueError as exc:
        raise DataError(f"cannot parse data file {path}: {exc}") from exc
    if data.shape[0] != 1:
        raise DataError(
            f"{path} holds {data.shape[0]} rows; expected a single observation row"
        )
    return data[0]


def cmd_gen_table(args) -> int:
    cfg = _load_config(args)
    seed = run_seed(cfg, args.seed)
    out = _out_dir(args, cfg)
    table = build_table(cfg, seed, threads=_resolve_threads(args, cfg))
    path = _table_path(args, cfg, out)
    if path.suffix == ".csv":
        write_table_csv(path, table)
    else:
        write_table_binary(path, table)
    print(f"wrote {table.n_rows} rows to {path}")
    return 0


def cmd_fit_summary(args) -> int:
    cfg = _load_config(args)
    seed = run_seed(cfg, args.seed)
    out = _out_dir(args, cfg)
    table = _read_table(_table_path(args, cfg, out))
    summary, losses, holdout = fit_summary(cfg, table, seed)
    ckpt = Checkpoint(
        summary=summary, nets=[], table_seed=table.seed,
        config_hash=cfg.config_hash(),
    )
    path = out / "summary.gbcq"
    save_checkpoint(path, ckpt)
    if losses is not None:
        write_csv(
            out / "summary_loss.csv",
            ["epoch", "mse"],
            [[i, v] for i, v in enumerate(losses)],
        )
    print(f"wrote summary checkpoint to {path}")
    print(f"holdout mse: {fmt_value(holdout)}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args)
    seed = run_seed(cfg, args.seed)
    out = _out_dir(args, cfg)
    table = _read_table(_table_path(args, cfg, out))
    summary, summary_losses, holdout = fit_summary(cfg, table, seed)
    ckpt, traces = train_chain(cfg, table, summary, seed)
    path = out / "model.gbcq"
    save_checkpoint(path, ckpt)
    if summary_losses is not None:
        write_csv(
            out / "summary_loss.csv",
            ["epoch", "mse"],
            [[i, v] for i, v in enumerate(summary_losses)],
        )
    write_csv(
        out / "loss_trace.csv",
        ["epoch"] + [f"pinball_{k}" for k in range(traces.shape[1])],
        [[i, *traces[i]] for i in range(traces.shape[0])],
    )
    print(f"wrote model checkpoint to {path}")
    print(f"summary holdout mse: {fmt_value(holdout)}")
    print(
        "final pinball losses: "
        + ", ".join(fmt_value(v) for v in traces[-1])
    )
    return 0


def cmd_sample(args) -> int:
    cfg = _load_config(args)
    seed = run_seed(cfg, args.seed)
    out = _out_dir(args, cfg)
    ckpt_path = Path(args.checkpoint) if args.checkpoint else out / "model.gbcq"
    if not ckpt_path.exists():
        raise DataError(f"checkpoint not found: {ckpt_path}")
    ckpt = load_checkpoint(ckpt_path)
    if not ckpt.nets:
        raise DataError(f"{ckpt_path} holds only a summary map, not a trained chain")
    if not args.y_obs:
        raise ConfigError("sample needs --y-obs FILE")
    y_obs = _read_vector(args.y_obs)
    model = ckpt.model()
    draws = model.sample(y_obs, args.draws, RngStream(seed).child("sample"))
    path = out / "samples.csv"
    write_csv(
        path,
        [f"theta_{k + 1}" for k in range(model.dim)],
        draws.tolist(),
    )
    print(f"wrote {draws.shape[0]} posterior draws to {path}")
    return 0


def cmd_abc(args) -> int:
    cfg = _load_config(args)
    seed = run_seed(cfg, args.seed)
    out = _out_dir(args, cfg)
    if not args.y_obs:
        raise ConfigError("abc needs --y-obs FILE")
    y_obs = _read_vector(args.y_obs)
    prior = prior_from_config(cfg)
    simulator = make_simulator(cfg.get_str("run", "simulator"), simulator_params(cfg))
    kind = cfg.get_str("abc", "summary", "mean")
    if kind == "mean":
        n = simulator.y_dim
        summary = SummaryMap(
            kind="linear",
            matrix=np.full((1, n), 1.0 / n),
            intercept=np.zeros(1),
        )
    elif kind == "identity":
        summary = None
    else:
        raise ConfigError(
            f"config key [abc] summary must be mean or identity, got {kind!r}"
        )
    abc_cfg = AbcConfig(
        epsilon=0.0,
        summary=summary,
        standardize=cfg.get_bool("abc", "standardize", "true"),
    )
    epsilons = list(cfg.get_floats("abc", "epsilons", "2,1,0.5,0.25,0.1"))
    sweep = abc_epsilon_sweep(
        simulator, prior, y_obs, abc_cfg, epsilons,
        cfg.get_int("abc", "budget", 100_000),
        RngStream(seed).child("abc"),
        block_size=cfg.get_int("abc", "block_size", 4096),
    )
    write_csv(
        out / "abc_sweep.csv",
        ["epsilon", "n_proposals", "n_accepted", "acceptance_rate"],
        [[r.epsilon, r.n_proposals, r.n_accepted, r.acceptance_rate] for r in sweep],
    )
    final = sweep[-1]
    write_csv(
        out / "abc_draws.csv",
        [f"theta_{k + 1}" for k in range(prior.dim)],
        final.thetas.tolist(),
    )
    for r in sweep:
        if r.diagnostic:
            print(r.diagnostic)
    print(
        f"wrote sweep to {out / 'abc_sweep.csv'}; final epsilon "
        f"{final.epsilon} accepted {final.n_accepted} draws"
    )
    return 0


def cmd_fiducial(args) -> int:
    cfg = _load_config(args)
    seed = run_seed(cfg, args.seed)
    out = _out_dir(args, cfg)
    if not args.y_obs:
        raise ConfigError("fiducial needs --y-obs FILE")
    y = _read_vector(args.y_obs)
    model = cfg.get_str("fiducial", "model", "location")
    eps_raw = cfg.get_str("fiducial", "epsilon", "inf")
    epsilon = math.inf if eps_raw.strip().lower() in ("inf", "infinity") else float(eps_raw)
    budget = cfg.get_int("fiducial", "budget", 10_000)
    rng = RngStream(seed).child("fiducial")
    if model == "location":
        y0 = float(y[0])
        result = fiducial_rejection(
            G=lambda u, th: np.array([th[0] + u]),
            sample_u=lambda gen: float(gen.normal()),
            y_obs=np.array([y0]),
            epsilon=epsilon,
            budget=budget,
            rng=rng,
            theta_bounds=[(y0 - 12.0, y0 + 12.0)],
        )
        header = ["theta_1"]
    elif model == "normal-meanvar":
        if y.size < 2:
            raise DataError("normal-meanvar fiducial needs at least 2 observations")
        n = y.size
        y_bar = float(np.mean(y))
        s2 = float(np.var(y, ddof=1))

        def G(u, th):
            mu, var = th[0], th[1]
            return np.array([mu + math.sqrt(var) * u[0], var * u[1]])

        def sample_u(gen):
            return np.array(
                [gen.normal(0.0, math.sqrt(1.0 / n)),
                 gen.gamma(n / 2.0, 2.0 / n)]
            )

        result = fiducial_rejection(
            G=G,
            sample_u=sample_u,
            y_obs=np.array([y_bar, s2]),
            epsilon=epsilon,
            budget=budget,
            rng=rng,
            theta_bounds=[
                (y_bar - 12.0 * math.sqrt(s2), y_bar + 12.0 * math.sqrt(s2)),
                (s2 / 50.0, s2 * 50.0),
            ],
        )
        header = ["mu", "sigma_sq"]
    else:
        raise ConfigError(
            f"config key [fiducial] model must be location or normal-meanvar, "
            f"got {model!r}"
        )
    write_csv(out / "fiducial_draws.csv", header, result.thetas.tolist())
    print(
        f"accepted {result.n_accepted} of {result.n_draws} draws "
        f"({result.n_skipped} skipped); wrote {out / 'fiducial_draws.csv'}"
    )
    return 0


def cmd_benchmark_normal(args) -> int:
    cfg = _load_config(args)
    seed = run_seed(cfg, args.seed)
    out = _out_dir(args, cfg)
    result = benchmark_normal(cfg, seed, threads=_resolve_threads(args, cfg))
    write_csv(out / "benchmark_normal.csv", NORMAL_REPORT_HEADER, result.rows)
    write_csv(
        out / "posterior.csv",
        ["posterior_mean", "posterior_sd", "y_bar"],
        [[result.posterior_mean, result.posterior_sd, result.y_bar]],
    )
    print(f"wrote report to {out / 'benchmark_normal.csv'}")
    for line in result.failures:
        print(f"FAIL {line}")
    if not result.ok:
        return 4
    print("all benchmark thresholds met")
    return 0


def cmd_benchmark_epidemic(args) -> int:
    cfg = _load_config(args)
    seed = run_seed(cfg, args.seed)
    out = _out_dir(args, cfg)
    result = benchmark_epidemic(cfg, seed, threads=_resolve_threads(args, cfg))
    for h in result.holdout_ids:
        header, rows = holdout_csv_rows(result.holdout_tables[h])
        write_csv(out / f"holdout_{h}.csv", header, rows)
    write_csv(out / "coverage.csv", COVERAGE_HEADER, result.coverage_rows)
    print(
        f"coverage {result.coverage:.3f} over "
        f"{len(result.holdout_ids)} holdout scenarios; "
        f"box violation rate {result.box_violation_rate:.4f} "
        f"(per coordinate: "
        + " ".join(f"{r:.4f}" for r in result.box_violation_by_coord)
        + ")"
    )
    for line in result.failures:
        print(f"FAIL {line}")
    if not result.ok:
        return 4
    print("coverage floor met")
    return 0


def cmd_gradcheck(args) -> int:
    seed = args.seed if args.seed is not None else 0
    worst = run_gradient_check(args.nets, RngStream(seed).child("gradcheck"))
    print(f"max relative gradient error over {args.nets} nets: {worst:.3e}")
    if worst >= GRADCHECK_TOLERANCE:
        print(f"FAIL exceeds tolerance {GRADCHECK_TOLERANCE:g}")
        return 4
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gbc",
        description=(
            "Generative Bayesian computation: simulate reference tables, "
            "train quantile-network posteriors, and cross-check them against "
            "rejection baselines and closed forms."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_config=True):
        p.add_argument("--config", help="run configuration file (INI)")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", help="override the output directory")
        p.add_argument(
            "--threads", type=int,
            help="worker threads for table generation (or env GBC_THREADS)",
        )

    p = sub.add_parser("gen-table", help="simulate a reference table")
    common(p)
    p.add_argument("--table", help="output table path (overrides config)")
    p.set_defaults(fn=cmd_gen_table)

    p = sub.add_parser("fit-summary", help="fit the summary statistic map")
    common(p)
    p.add_argument("--table", help="reference table path")
    p.set_defaults(fn=cmd_fit_summary)

    p = sub.add_parser("train", help="fit summary and train the quantile chain")
    common(p)
    p.add_argument("--table", help="reference table path")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("sample", help="draw from a trained posterior")
    common(p)
    p.add_argument("--checkpoint", help="model checkpoint (default out/model.gbcq)")
    p.add_argument("--y-obs", help="observed data CSV (single row)")
    p.add_argument("--draws", type=int, default=1000, help="number of draws")
    p.set_defaults(fn=cmd_sample)

    p = sub.add_parser("abc", help="ABC rejection with an epsilon sweep")
    common(p)
    p.add_argument("--y-obs", help="observed data CSV (single row)")
    p.set_defaults(fn=cmd_abc)

    p = sub.add_parser("fiducial", help="fiducial rejection sampling")
    common(p)
    p.add_argument("--y-obs", help="observed data CSV (single row)")
    p.set_defaults(fn=cmd_fiducial)

    p = sub.add_parser(
        "benchmark-normal",
        help="compare net, ABC, and fiducial against the conjugate closed form",
    )
    common(p)
    p.set_defaults(fn=cmd_benchmark_normal)

    p = sub.add_parser(
        "benchmark-epidemic",
        help="holdout coverage study on the epidemic surrogate",
    )
    common(p)
    p.set_defaults(fn=cmd_benchmark_epidemic)

    p = sub.add_parser("gradcheck", help="verify gradients on random nets")
    common(p)
    p.add_argument("--nets", type=int, default=100, help="number of random nets")
    p.set_defaults(fn=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except GbcError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
