"""Forward simulators and reference-table generation.

A reference table is N rows of (theta, y) with theta drawn from the prior
and y simulated at that theta — the training corpus for summaries and
quantile networks. Tables are generated in row blocks, each block on its own
child stream, so output is bit-identical no matter how many worker threads
run (and regenerable from seed + config alone).
"""

from __future__ import annotations

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError
from .rng import RngStream

# Parameter box for the epidemic scenario coordinates theta1..theta5:
# per-contact transmission probability, initial infected, intervention week,
# intervention efficacy, travel-reduction driver.
EPIDEMIC_RANGES = (
    (3e-5, 8e-5),
    (1.0, 20.0),
    (2.0, 10.0),
    (0.1, 0.8),
    (3e-5, 8e-5),
)

EPIDEMIC_QUANTILE_PROBS = (0.05, 0.275, 0.5, 0.725, 0.95)


@dataclass(frozen=True)
class UniformCoord:
    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ConfigError(f"uniform prior needs lo < hi, got [{self.lo}, {self.hi}]")

    def sample(self, gen, size):
        return gen.uniform(self.lo, self.hi, size=size)

    def describe(self):
        return f"uniform({self.lo!r},{self.hi!r})"


@dataclass(frozen=True)
class NormalCoord:
    mean: float
    var: float

    def __post_init__(self):
        if self.var <= 0:
            raise ConfigError(f"normal prior needs variance > 0, got {self.var}")

    def sample(self, gen, size):
        return gen.normal(self.mean, np.sqrt(self.var), size=size)

    def describe(self):
        return f"normal({self.mean!r},{self.var!r})"


@dataclass(frozen=True)
class PriorSpec:
    """Independent per-coordinate prior: uniform(lo, hi) or normal(mean, var)."""

    coords: tuple

    def __post_init__(self):
        if not self.coords:
            raise ConfigError("prior needs at least one coordinate")
        object.__setattr__(self, "coords", tuple(self.coords))

    @property
    def dim(self) -> int:
        return len(self.coords)

    def sample(self, gen, size) -> np.ndarray:
        cols = [c.sample(gen, size) for c in self.coords]
        return np.column_stack(cols)

    def box(self):
        """(lo, hi) per coordinate where bounded; None for normal coordinates."""
        out = []
        for c in self.coords:
            out.append((c.lo, c.hi) if isinstance(c, UniformCoord) else None)
        return out

    def describe(self) -> str:
        return " ".join(c.describe() for c in self.coords)


def simulate_normal_normal(theta, noise_var, n, rng) -> np.ndarray:
    """n i.i.d. draws from N(theta, noise_var)."""
    if noise_var <= 0:
        raise ValueError("noise variance must be positive")
    if n < 1:
        raise ValueError("need at least one observation")
    return rng.generator.normal(float(theta), np.sqrt(noise_var), size=int(n))


class NormalLocationSimulator:
    """y_1..y_n i.i.d. N(theta, noise_var) given scalar theta."""

    name = "normal-location"

    def __init__(self, noise_var, n_obs):
        if noise_var <= 0:
            raise ConfigError("noise variance must be positive")
        if n_obs < 1:
            raise ConfigError("n_obs must be at least 1")
        self.noise_var = float(noise_var)
        self.n_obs = int(n_obs)

    @property
    def theta_dim(self):
        return 1

    @property
    def y_dim(self):
        return self.n_obs

    def simulate(self, theta, gen):
        return gen.normal(float(theta[0]), np.sqrt(self.noise_var), size=self.n_obs)

    def simulate_batch(self, thetas, gen):
        thetas = np.asarray(thetas, dtype=np.float64)
        return gen.normal(
            loc=thetas[:, :1], scale=np.sqrt(self.noise_var),
            size=(thetas.shape[0], self.n_obs),
        )


@dataclass(frozen=True)
class EpidemicScenario:
    """One point in the 5-dimensional epidemic parameter box, plus the
    quantile index alpha attached when the scenario's replicates are reduced
    to quantile trajectories."""

    theta1: float  # per-contact transmission probability
    theta2: float  # initial infected count
    theta3: float  # intervention delay in weeks
    theta4: float  # intervention efficacy fraction
    theta5: float  # travel-reduction driver
    alpha: float | None = None

    def params(self) -> np.ndarray:
        return np.array(
            [self.theta1, self.theta2, self.theta3, self.theta4, self.theta5]
        )


@dataclass
class TrajectorySet:
    """Replicate curves for one scenario: R replicates x T weeks, cumulative."""

    scenario_id: int
    curves: np.ndarray

    def __post_init__(self):
        self.curves = np.asarray(self.curves, dtype=np.float64)
        if self.curves.ndim != 2:
            raise ValueError("curves must be a 2-D (replicates x weeks) array")


def simulate_epidemic(theta, pop, weeks, rng, contact=0.5, strict=True):
    """Cumulative infection curve from a weekly chain-binomial epidemic.

    Each week, every susceptible independently escapes infection with
    probability (1 - t1_eff)^(contact_eff * I_t) where I_t is the count
    infected in the previous week. From week ceil(theta3) onward the
    transmission probability theta1 is scaled by (1 - theta4); reduced
    travel scales the contact factor by (1 - 0.5 * theta5 / 8e-5).

    Returns a non-decreasing integer-valued float array of length ``weeks``
    starting at or above the initial infected count and capped at ``pop``.
    With strict=True (the default) theta must lie in the scenario box;
    boundary values like theta1=0 are only allowed with strict=False.
    """
    theta = np.asarray(theta, dtype=np.float64).reshape(-1)
    if theta.size != 5:
        raise ValueError("epidemic scenarios have exactly 5 parameters")
    if strict:
        for k, ((lo, hi), v) in enumerate(zip(EPIDEMIC_RANGES, theta)):
            if not lo <= v <= hi:
                raise ValueError(
                    f"theta{k + 1}={v} outside scenario range [{lo}, {hi}]"
                )
    if pop < theta[1]:
        raise ValueError("population smaller than initial infected count")
    if weeks < 1:
        raise ValueError("need at least one week")
    out = _epidemic_batch(theta[None, :], int(pop), int(weeks), rng.generator, contact)
    return out[0]


def _epidemic_batch(thetas, pop, weeks, gen, contact):
    """Vectorized chain-binomial over B parameter rows."""
    B = thetas.shape[0]
    t1, t2, t3, t4, t5 = (thetas[:, k] for k in range(5))
    contact_eff = contact * (1.0 - 0.5 * t5 / 8e-5)
    intervene_week = np.ceil(t3)
    # ceil keeps the curve's starting value at or above theta2 even when
    # theta2 is not a whole number.
    init = np.minimum(np.ceil(t2), pop).astype(np.int64)
    susceptible = pop - init
    active = init.copy()
    cum = init.copy()
    curves = np.empty((B, weeks), dtype=np.float64)
    for week in range(1, weeks + 1):
        t1_eff = np.where(week >= intervene_week, t1 * (1.0 - t4), t1)
        # Escape probability per susceptible this week.
        log_escape = contact_eff * active * np.log1p(-t1_eff)
        p_inf = -np.expm1(log_escape)
        p_inf = np.clip(p_inf, 0.0, 1.0)
        new = gen.binomial(susceptible, p_inf)
        susceptible -= new
        cum += new
        active = new
        curves[:, week - 1] = cum
    return curves


class EpidemicSimulator:
    """Chain-binomial epidemic over a fixed horizon; y is the cumulative curve."""

    name = "epidemic"

    def __init__(self, population=100_000, weeks=56, contact=0.5, strict=True):
        if population < 1 or weeks < 1:
            raise ConfigError("population and weeks must be positive")
        self.population = int(population)
        self.weeks = int(weeks)
        self.contact = float(contact)
        self.strict = bool(strict)

    @property
    def theta_dim(self):
        return 5

    @property
    def y_dim(self):
        return self.weeks

    def simulate(self, theta, gen):
        theta = np.asarray(theta, dtype=np.float64).reshape(1, -1)
        self._validate(theta)
        return _epidemic_batch(theta, self.population, self.weeks, gen, self.contact)[0]

    def simulate_batch(self, thetas, gen):
        thetas = np.asarray(thetas, dtype=np.float64)
        self._validate(thetas)
        return _epidemic_batch(thetas, self.population, self.weeks, gen, self.contact)

    def _validate(self, thetas):
        if thetas.shape[1] != 5:
            raise ValueError("epidemic scenarios have exactly 5 parameters")
        if not self.strict:
            return
        for k, (lo, hi) in enumerate(EPIDEMIC_RANGES):
            col = thetas[:, k]
            if np.any(col < lo) or np.any(col > hi):
                raise ValueError(f"theta{k + 1} outside scenario range [{lo}, {hi}]")


SIMULATOR_NAMES = ("normal-location", "epidemic")


def make_simulator(name, params):
    """Build a registered simulator from a flat parameter mapping."""
    if name == "normal-location":
        return NormalLocationSimulator(
            noise_var=float(params.get("noise_var", 1.0)),
            n_obs=int(params.get("n_obs", 100)),
        )
    if name == "epidemic":
        return EpidemicSimulator(
            population=int(params.get("population", 100_000)),
            weeks=int(params.get("weeks", 56)),
            contact=float(params.get("contact", 0.5)),
        )
    raise ConfigError(
        f"unknown simulator {name!r}; registered simulators: "
        + ", ".join(SIMULATOR_NAMES)
    )


@dataclass
class ReferenceTable:
    """N rows of (theta, y): theta from the prior, y simulated at theta."""

    thetas: np.ndarray  # (N, d)
    ys: np.ndarray  # (N, n)
    seed: int
    simulator: str
    prior: str = ""

    def __post_init__(self):
        self.thetas = np.ascontiguousarray(self.thetas, dtype=np.float64)
        self.ys = np.ascontiguousarray(self.ys, dtype=np.float64)
        if self.thetas.ndim != 2 or self.ys.ndim != 2:
            raise ValueError("table arrays must be 2-D")
        if self.thetas.shape[0] != self.ys.shape[0]:
            raise ValueError("theta and y row counts differ")
        if not (np.all(np.isfinite(self.thetas)) and np.all(np.isfinite(self.ys))):
            raise DataError("reference table contains non-finite values")

    @property
    def n_rows(self):
        return self.thetas.shape[0]

    @property
    def theta_dim(self):
        return self.thetas.shape[1]

    @property
    def y_dim(self):
        return self.ys.shape[1]


def generate_reference_table(
    prior, simulator, n_rows, rng, block_size=4096, threads=1
) -> ReferenceTable:
    """Simulate an N-row reference table from prior x simulator.

    Rows are produced in blocks of ``block_size``; block b draws from
    ``rng.child(b)``, so the result does not depend on ``threads``.
    """
    if n_rows < 1:
        raise ValueError("need at least one table row")
    n_blocks = (n_rows + block_size - 1) // block_size

    def run_block(b):
        start = b * block_size
        stop = min(n_rows, start + block_size)
        gen = rng.child(b).generator
        thetas = prior.sample(gen, stop - start)
        try:
            ys = simulator.simulate_batch(thetas, gen)
        except Exception as exc:
            raise DataError(
                f"simulator {simulator.name!r} failed in rows [{start}, {stop}): {exc}"
            ) from exc
        return thetas, ys

    if threads > 1 and n_blocks > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run_block, range(n_blocks)))
    else:
        results = [run_block(b) for b in range(n_blocks)]

    thetas = np.vstack([r[0] for r in results])
    ys = np.vstack([r[1] for r in results])
    return ReferenceTable(
        thetas=thetas,
        ys=ys,
        seed=rng.seed,
        simulator=simulator.name,
        prior=prior.describe(),
    )


def quantile_index_replicates(curves, probs=EPIDEMIC_QUANTILE_PROBS):
    """Reduce replicate curves to pointwise empirical quantile trajectories.

    Returns ``(trajectories, alphas)`` where trajectories has one row per
    prob (linear-interpolation order statistics, applied per week) and
    alphas equals ``probs``. Quantile trajectories are non-decreasing in the
    prob at every week.
    """
    if isinstance(curves, TrajectorySet):
        curves = curves.curves
    curves = np.asarray(curves, dtype=np.float64)
    if curves.ndim != 2 or curves.shape[0] == 0:
        raise ValueError("need a non-empty (replicates x weeks) array")
    if curves.shape[0] < 2:
        raise ValueError("need at least two replicates")
    probs = np.asarray(probs, dtype=np.float64)
    if np.any(probs <= 0.0) or np.any(probs >= 1.0) or np.any(np.diff(probs) <= 0):
        raise ValueError("probs must be strictly increasing within (0, 1)")
    traj = np.quantile(curves, probs, axis=0, method="linear")
    return traj, probs.copy()


# ---------------------------------------------------------------------------
# Persistence. CSV: one metadata header line "N,d,n,seed,simulator", then one
# line per row with the theta coordinates followed by the y coordinates,
# printed to 17 significant digits (lossless for float64). Binary: magic
# "GBCT", little-endian header, float64 row-major payload.

_GBCT_MAGIC = b"GBCT"
_GBCT_VERSION = 1


def _fmt(x: float) -> str:
    return format(x, ".17g")


def write_table_csv(path, table: ReferenceTable) -> None:
    rows = np.hstack([table.thetas, table.ys])
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(
            f"{table.n_rows},{table.theta_dim},{table.y_dim},"
            f"{table.seed},{table.simulator}\n"
        )
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row))
            fh.write("\n")


def read_table_csv(path) -> ReferenceTable:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            header = fh.readline().strip()
            parts = header.split(",")
            if len(parts) != 5:
                raise DataError(f"malformed table header in {path}: {header!r}")
            try:
                n_rows, d, n = int(parts[0]), int(parts[1]), int(parts[2])
                seed = int(parts[3])
            except ValueError as exc:
                raise DataError(f"malformed table header in {path}: {header!r}") from exc
            simulator = parts[4]
            data = np.loadtxt(fh, delimiter=",", ndmin=2, dtype=np.float64)
    except OSError as exc:
        raise DataError(f"cannot read table file {path}: {exc}") from exc
    if data.shape != (n_rows, d + n):
        raise DataError(
            f"table {path} promises {n_rows}x{d + n} values, found {data.shape}"
        )
    return ReferenceTable(
        thetas=data[:, :d], ys=data[:, d:], seed=seed, simulator=simulator
    )


def write_table_binary(path, table: ReferenceTable) -> None:
    name = table.simulator.encode("utf-8")
    payload = np.ascontiguousarray(
        np.hstack([table.thetas, table.ys]), dtype="<f8"
    )
    with open(path, "wb") as fh:
        fh.write(_GBCT_MAGIC)
        fh.write(struct.pack("<I", _GBCT_VERSION))
        fh.write(struct.pack("<III", table.n_rows, table.theta_dim, table.y_dim))
        fh.write(struct.pack("<Q", table.seed))
        fh.write(struct.pack("<H", len(name)))
        fh.write(name)
        fh.write(payload.tobytes())


def read_table_binary(path) -> ReferenceTable:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise DataError(f"cannot read table file {path}: {exc}") from exc
    if blob[:4] != _GBCT_MAGIC:
        raise DataError(f"{path} is not a reference-table file (bad magic)")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != _GBCT_VERSION:
        raise DataError(
            f"{path}: unsupported table format version {version} "
            f"(this build reads version {_GBCT_VERSION})"
        )
    n_rows, d, n = struct.unpack_from("<III", blob, 8)
    (seed,) = struct.unpack_from("<Q", blob, 20)
    (name_len,) = struct.unpack_from("<H", blob, 28)
    name_end = 30 + name_len
    simulator = blob[30:name_end].decode("utf-8")
    expected = n_rows * (d + n) * 8
    payload = blob[name_end:]
    if len(payload) != expected:
        raise DataError(
            f"{path}: payload holds {len(payload)} bytes, expected {expected}"
        )
    data = np.frombuffer(payload, dtype="<f8").reshape(n_rows, d + n)
    return ReferenceTable(
        thetas=data[:, :d].copy(), ys=data[:, d:].copy(),
        seed=seed, simulator=simulator,
    )
