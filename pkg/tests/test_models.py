"""Simulators, reference tables, quantile trajectories, file round-trips."""

import numpy as np
import pytest

from gbc.errors import ConfigError, DataError
from gbc.models import (
    EPIDEMIC_RANGES,
    NormalCoord,
    NormalLocationSimulator,
    PriorSpec,
    ReferenceTable,
    UniformCoord,
    generate_reference_table,
    make_simulator,
    quantile_index_replicates,
    read_table_binary,
    read_table_csv,
    simulate_epidemic,
    simulate_normal_normal,
    write_table_binary,
    write_table_csv,
)
from gbc.rng import RngStream


def test_normal_normal_rejects_bad_variance():
    with pytest.raises(ValueError):
        simulate_normal_normal(0.0, noise_var=0.0, n=5, rng=RngStream(1))
    with pytest.raises(ValueError):
        simulate_normal_normal(0.0, noise_var=-2.0, n=5, rng=RngStream(1))


def test_normal_normal_sample_mean_clt_bound():
    # theta=3, variance 10, n=10000: the sample mean lies within
    # 4 standard errors of 3 (seed-checked, standard error sqrt(10/n)).
    y = simulate_normal_normal(3.0, noise_var=10.0, n=10_000, rng=RngStream(7))
    assert abs(np.mean(y) - 3.0) < 4.0 * np.sqrt(10.0 / 10_000)


def test_normal_normal_fixed_seed_reproduces():
    a = simulate_normal_normal(1.0, 2.0, 100, RngStream(12))
    b = simulate_normal_normal(1.0, 2.0, 100, RngStream(12))
    assert np.array_equal(a, b)


def test_epidemic_zero_transmission_flat_curve():
    # theta1 = 0 is outside the scenario box; strict=False permits the
    # boundary case, where nobody new is ever infected.
    theta = [0.0, 5.0, 4.0, 0.5, 5e-5]
    curve = simulate_epidemic(theta, pop=1000, weeks=20, rng=RngStream(3), strict=False)
    assert np.all(curve == 5.0)


def test_epidemic_curve_invariants():
    gen = RngStream(9).generator
    lows = np.array([r[0] for r in EPIDEMIC_RANGES])
    highs = np.array([r[1] for r in EPIDEMIC_RANGES])
    for i in range(10):
        theta = lows + (highs - lows) * gen.uniform(size=5)
        curve = simulate_epidemic(theta, pop=100_000, weeks=56, rng=RngStream(100 + i))
        assert curve.shape == (56,)
        assert np.all(np.diff(curve) >= 0.0)  # cumulative
        assert curve[0] >= theta[1]  # starts at/above initial infected
        assert curve[-1] <= 100_000  # bounded by population
        assert np.all(curve == np.floor(curve))  # integer counts


def test_epidemic_strict_range_check():
    with pytest.raises(ValueError, match="theta1"):
        simulate_epidemic([1e-6, 5, 4, 0.5, 5e-5], pop=1000, weeks=5, rng=RngStream(0))


def test_epidemic_more_transmission_more_cases():
    # Monotonicity in theta1 on average: compare low vs high transmission.
    lo_final = []
    hi_final = []
    for i in range(30):
        lo = simulate_epidemic([3e-5, 10, 10, 0.1, 8e-5], 100_000, 56, RngStream(i))
        hi = simulate_epidemic([8e-5, 10, 10, 0.1, 3e-5], 100_000, 56, RngStream(i))
        lo_final.append(lo[-1])
        hi_final.append(hi[-1])
    assert np.mean(hi_final) > 10 * np.mean(lo_final)


def test_make_simulator_unknown_name_lists_registry():
    with pytest.raises(ConfigError, match="normal-location"):
        make_simulator("does-not-exist", {})


def test_reference_table_shape_and_determinism():
    prior = PriorSpec((NormalCoord(0.0, 5.0),))
    sim = NormalLocationSimulator(noise_var=10.0, n_obs=20)
    t1 = generate_reference_table(prior, sim, 100, RngStream(5))
    t2 = generate_reference_table(prior, sim, 100, RngStream(5))
    assert t1.thetas.shape == (100, 1)
    assert t1.ys.shape == (100, 20)
    assert np.array_equal(t1.thetas, t2.thetas)
    assert np.array_equal(t1.ys, t2.ys)


def test_reference_table_thread_invariance():
    prior = PriorSpec((UniformCoord(0.0, 1.0),))
    sim = NormalLocationSimulator(noise_var=1.0, n_obs=4)
    serial = generate_reference_table(prior, sim, 1000, RngStream(8), block_size=128)
    threaded = generate_reference_table(
        prior, sim, 1000, RngStream(8), block_size=128, threads=4
    )
    assert np.array_equal(serial.thetas, threaded.thetas)
    assert np.array_equal(serial.ys, threaded.ys)


def test_single_row_table():
    prior = PriorSpec((NormalCoord(1.0, 1.0),))
    sim = NormalLocationSimulator(noise_var=1.0, n_obs=3)
    t = generate_reference_table(prior, sim, 1, RngStream(2))
    assert t.n_rows == 1


def test_posterior_mean_slope_across_table():
    # For the conjugate pair, E[theta | ybar] is linear in ybar with slope
    # n*prior_var / (noise_var + n*prior_var); check by regression over a
    # large table.
    prior = PriorSpec((NormalCoord(0.0, 5.0),))
    sim = NormalLocationSimulator(noise_var=10.0, n_obs=25)
    t = generate_reference_table(prior, sim, 50_000, RngStream(13))
    ybar = t.ys.mean(axis=1)
    slope = np.cov(t.thetas[:, 0], ybar)[0, 1] / np.var(ybar)
    expected = 25 * 5.0 / (10.0 + 25 * 5.0)
    assert abs(slope - expected) < 0.01


def test_non_finite_rows_rejected():
    with pytest.raises(DataError):
        ReferenceTable(
            thetas=np.array([[np.inf]]), ys=np.array([[1.0]]),
            seed=0, simulator="x",
        )


def test_quantile_trajectories_of_known_replicates():
    # Replicates 1..100 as constant curves: the pointwise median of the
    # linear-interpolation order statistics is 50.5.
    curves = np.tile(np.arange(1.0, 101.0)[:, None], (1, 4))
    traj, alphas = quantile_index_replicates(curves, (0.05, 0.5, 0.95))
    assert np.allclose(traj[1], 50.5)
    assert np.allclose(alphas, [0.05, 0.5, 0.95])
    # Trajectories are ordered by level at every week.
    assert np.all(np.diff(traj, axis=0) >= 0.0)


def test_quantile_trajectories_validation():
    with pytest.raises(ValueError):
        quantile_index_replicates(np.ones((1, 5)))  # one replicate
    with pytest.raises(ValueError):
        quantile_index_replicates(np.ones((10, 5)), probs=(0.5, 0.5))
    with pytest.raises(ValueError):
        quantile_index_replicates(np.ones((10, 5)), probs=(0.0, 0.5))


def _small_table():
    prior = PriorSpec((NormalCoord(0.0, 2.0), UniformCoord(1.0, 3.0)))
    sim = NormalLocationSimulator(noise_var=1.0, n_obs=6)

    class TwoParamSim:
        name = "normal-location"
        theta_dim = 2
        y_dim = 6
        noise_var = 1.0
        n_obs = 6

        def simulate_batch(self, thetas, gen):
            return gen.normal(loc=thetas[:, :1], scale=1.0, size=(thetas.shape[0], 6))

    return generate_reference_table(prior, TwoParamSim(), 37, RngStream(21))


def test_csv_round_trip_is_lossless():
    table = _small_table()
    path = "/tmp/gbc_test_table.csv"
    write_table_csv(path, table)
    back = read_table_csv(path)
    assert np.array_equal(back.thetas, table.thetas)
    assert np.array_equal(back.ys, table.ys)
    assert back.seed == table.seed
    assert back.simulator == table.simulator


def test_binary_round_trip_is_lossless():
    table = _small_table()
    path = "/tmp/gbc_test_table.gbct"
    write_table_binary(path, table)
    back = read_table_binary(path)
    assert np.array_equal(back.thetas, table.thetas)
    assert np.array_equal(back.ys, table.ys)
    assert back.seed == table.seed
    assert back.simulator == table.simulator


def test_binary_write_is_bit_identical():
    table = _small_table()
    p1, p2 = "/tmp/gbc_bits_a.gbct", "/tmp/gbc_bits_b.gbct"
    write_table_binary(p1, table)
    write_table_binary(p2, table)
    with open(p1, "rb") as fa, open(p2, "rb") as fb:
        assert fa.read() == fb.read()


def test_binary_bad_magic_is_structured_error():
    path = "/tmp/gbc_bad_magic.gbct"
    with open(path, "wb") as fh:
        fh.write(b"NOPE" + b"\x00" * 64)
    with pytest.raises(DataError, match="magic"):
        read_table_binary(path)


def test_binary_bad_version_is_structured_error():
    table = _small_table()
    path = "/tmp/gbc_bad_version.gbct"
    write_table_binary(path, table)
    blob = bytearray(open(path, "rb").read())
    blob[4] = 99  # bump the version field
    with open(path, "wb") as fh:
        fh.write(bytes(blob))
    with pytest.raises(DataError, match="version"):
        read_table_binary(path)


def test_csv_truncated_payload_detected():
    table = _small_table()
    path = "/tmp/gbc_trunc.csv"
    write_table_csv(path, table)
    lines = open(path).read().splitlines()
    with open(path, "w") as fh:
        fh.write("\n".join(lines[:-3]) + "\n")
    with pytest.raises(DataError):
        read_table_csv(path)


def test_prior_spec_box_and_describe():
    prior = PriorSpec((UniformCoord(0.0, 1.0), NormalCoord(2.0, 3.0)))
    box = prior.box()
    assert box[0] == (0.0, 1.0)
    assert box[1] is None
    assert "uniform" in prior.describe() and "normal" in prior.describe()
