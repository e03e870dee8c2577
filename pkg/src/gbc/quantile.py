"""Implicit quantile networks and the autoregressive posterior sampler.

The posterior of one parameter coordinate is represented by its quantile
function: a network f(tau, x) = g(psi(x) * phi(tau)) (element-wise product)
trained with the pinball loss at uniformly random quantile levels. A vector
parameter gets one such net per coordinate, the k-th conditioning on the
data summary and the previously drawn coordinates, so posterior sampling is
a single forward sweep per draw: theta_k = f_k(tau_k, s, theta_<k) with
fresh uniform tau_k.

Expected utilities are computed from the same object through the identity
E[g(theta)] = integral of g(F^{-1}(tau)) over tau in (0,1), evaluated by
midpoint quadrature on the monotone-rearranged quantile curve.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import TrainingDivergence
from .nets import Adam, FeedForwardNet, SgdMomentum
from .summaries import SummaryMap, apply_summary


@dataclass
class CosineEmbedding:
    """tau -> ReLU(cos(pi * i * tau) W + b), i = 0..n_cos-1, output dim m."""

    weight: np.ndarray  # (n_cos, m)
    bias: np.ndarray  # (m,)

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[1],):
            raise ValueError("inconsistent embedding shapes")

    @property
    def n_cos(self):
        return self.weight.shape[0]

    @property
    def out_dim(self):
        return self.weight.shape[1]

    @classmethod
    def create(cls, n_cos, m, rng):
        gen = rng.generator
        w = gen.normal(0.0, np.sqrt(2.0 / n_cos), size=(n_cos, m))
        return cls(w, np.zeros(m))

    def basis(self, taus):
        taus = np.asarray(taus, dtype=np.float64)
        if np.any(taus < 0.0) or np.any(taus > 1.0):
            raise ValueError("quantile levels must lie in [0, 1]")
        i = np.arange(self.n_cos)
        return np.cos(np.pi * np.outer(taus, i))  # (B, n_cos)

    def forward(self, taus):
        out, _ = self.forward_cached(taus)
        return out

    def forward_cached(self, taus):
        c = self.basis(taus)
        z = c @ self.weight + self.bias
        return np.maximum(z, 0.0), (c, z)

    def backward(self, cache, out_grad):
        """Gradients of sum(out_grad * forward(taus)) w.r.t. weight and bias."""
        c, z = cache
        g = out_grad * (z > 0.0)
        return [c.T @ g, g.sum(axis=0)]

    def parameters(self):
        return [self.weight, self.bias]


def cosine_embed(tau, emb: CosineEmbedding) -> np.ndarray:
    """Embedding vector for a single quantile level tau in [0, 1]."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau={tau} outside [0, 1]")
    return emb.forward(np.array([tau]))[0]


def pinball_loss(tau, u):
    """Check-function loss rho_tau(u) = u * (tau - 1[u < 0]), >= 0.

    Slope tau to the right of the origin and tau - 1 to the left, so its
    minimizer over constants is the tau-quantile of the residual law.
    """
    tau = np.asarray(tau, dtype=np.float64)
    if np.any(tau <= 0.0) or np.any(tau >= 1.0):
        raise ValueError("pinball level must lie strictly inside (0, 1)")
    u = np.asarray(u, dtype=np.float64)
    out = u * (tau - (u < 0.0))
    return float(out) if out.ndim == 0 else out


@dataclass
class NetworkSpec:
    """Architecture sizes for one implicit quantile net."""

    psi_hidden: tuple = (64, 64)
    feature_dim: int = 64  # m: width of the psi/phi product junction
    n_cos: int = 64
    g_hidden: tuple = (64, 64)


@dataclass
class OptimizerSpec:
    method: str = "adam"  # "adam" | "sgd"
    lr: float = 1e-3
    momentum: float = 0.9
    epochs: int = 300
    batch_size: int = 128
    lr_schedule: str = "step"  # "step" | "constant"
    average_tail: float = 0.2  # fraction of final epochs to Polyak-average

    def build(self):
        if self.method == "adam":
            return Adam(lr=self.lr)
        if self.method == "sgd":
            return SgdMomentum(lr=self.lr, momentum=self.momentum)
        raise ValueError(f"unknown optimizer method {self.method!r}")

    def lr_at(self, epoch):
        """Learning rate for a given epoch.

        The step schedule drops the rate tenfold at 50% and again at 75% of
        the epoch budget. Pinball gradients do not vanish at the optimum
        (the loss is piecewise linear), so without a decay the parameters
        keep jittering at a scale set by the learning rate; the two drops
        let the fit settle.
        """
        if self.lr_schedule == "constant":
            return self.lr
        if self.lr_schedule == "step":
            frac = epoch / max(1, self.epochs)
            if frac >= 0.75:
                return self.lr * 0.01
            if frac >= 0.5:
                return self.lr * 0.1
            return self.lr
        raise ValueError(f"unknown lr schedule {self.lr_schedule!r}")


@dataclass
class ImplicitQuantileNet:
    """One conditional quantile function f(tau | conditioning vector).

    Conditioning inputs are z-scored with the recorded statistics before
    entering psi; raw outputs of g are de-standardized with the recorded
    target statistics, so evaluation takes and returns native units.
    """

    psi: FeedForwardNet
    phi: CosineEmbedding
    g: FeedForwardNet
    cond_mean: np.ndarray
    cond_sd: np.ndarray
    target_mean: float
    target_sd: float

    @property
    def cond_dim(self):
        return self.psi.input_dim

    def quantile_values(self, cond, taus) -> np.ndarray:
        """Raw (un-rearranged) quantile values at levels taus, native units.

        cond is one conditioning vector (c,) shared by all taus, or a batch
        (B, c) paired with taus of length B.
        """
        cond = np.asarray(cond, dtype=np.float64)
        taus = np.asarray(taus, dtype=np.float64)
        if cond.ndim == 1:
            cond = np.broadcast_to(cond, (taus.shape[0], cond.shape[0]))
        z = (cond - self.cond_mean) / self.cond_sd
        a = self.psi.forward(z)
        b = self.phi.forward(taus)
        out = self.g.forward(a * b)[:, 0]
        return out * self.target_sd + self.target_mean


def train_iqn(
    table,
    summary: SummaryMap,
    coordinate: int,
    spec: NetworkSpec,
    opt: OptimizerSpec,
    rng,
):
    """Fit the quantile net for one theta coordinate on a reference table.

    Conditioning is (summary of y, theta_1..theta_{coordinate-1}); targets
    are theta_coordinate. Every epoch draws a fresh uniform quantile level
    per row. Returns ``(net, losses)`` with per-epoch mean pinball loss in
    native target units.
    """
    if table.n_rows == 0:
        raise ValueError("cannot train on an empty table")
    if not 0 <= coordinate < table.theta_dim:
        raise ValueError(f"coordinate {coordinate} outside 0..{table.theta_dim - 1}")
    s = apply_summary(summary, table.ys)
    if s.ndim == 1:
        s = s[:, None]
    cond = np.hstack([s, table.thetas[:, :coordinate]])
    target = table.thetas[:, coordinate]

    cond_mean = cond.mean(axis=0)
    cond_sd = cond.std(axis=0)
    cond_sd = np.where(cond_sd == 0.0, 1.0, cond_sd)
    t_mean = float(target.mean())
    t_sd = float(target.std())
    if t_sd == 0.0:
        t_sd = 1.0
    x = (cond - cond_mean) / cond_sd
    t = (target - t_mean) / t_sd

    psi = FeedForwardNet.create(
        [cond.shape[1], *spec.psi_hidden, spec.feature_dim], rng.child("psi-init")
    )
    phi = CosineEmbedding.create(spec.n_cos, spec.feature_dim, rng.child("phi-init"))
    g = FeedForwardNet.create(
        [spec.feature_dim, *spec.g_hidden, 1], rng.child("g-init")
    )
    net = ImplicitQuantileNet(
        psi=psi, phi=phi, g=g,
        cond_mean=cond_mean, cond_sd=cond_sd,
        target_mean=t_mean, target_sd=t_sd,
    )

    optimizer = opt.build()
    params = psi.parameters() + phi.parameters() + g.parameters()
    gen = rng.child("train-shuffle").generator
    n = x.shape[0]
    losses = np.empty(opt.epochs)
    if not 0.0 <= opt.average_tail <= 1.0:
        raise ValueError("average_tail must lie in [0, 1]")
    # Pinball gradients stay O(1) at the optimum, so the iterates never stop
    # jittering; averaging the final stretch of epochs removes that jitter.
    avg_start = opt.epochs - int(round(opt.average_tail * opt.epochs))
    avg_sum = None
    n_avg = 0
    for epoch in range(opt.epochs):
        optimizer.lr = opt.lr_at(epoch)
        taus = gen.uniform(size=n)
        perm = gen.permutation(n)
        loss_sum = 0.0
        for start in range(0, n, opt.batch_size):
            idx = perm[start : start + opt.batch_size]
            tb, taub = t[idx], taus[idx]
            a, cache_psi = psi.forward_cached(x[idx])
            b, cache_phi = phi.forward_cached(taub)
            h = a * b
            out, cache_g = g.forward_cached(h)
            u = tb - out[:, 0]
            loss_sum += float(np.sum(u * (taub - (u < 0.0))))
            # d(mean pinball)/d(out) = (1[u<0] - tau) / batch
            dout = (((u < 0.0) - taub) / len(idx))[:, None]
            grads_g, dh = g.backward(cache_g, dout)
            grads_psi, _ = psi.backward(cache_psi, dh * b)
            grads_phi = phi.backward(cache_phi, dh * a)
            step_grads = grads_psi + grads_phi + grads_g
            if not all(np.all(np.isfinite(block)) for block in step_grads):
                raise TrainingDivergence(
                    f"quantile training produced a non-finite gradient "
                    f"at epoch {epoch}",
                    epoch=epoch,
                )
            optimizer.step(params, step_grads)
        losses[epoch] = (loss_sum / n) * t_sd  # pinball scales linearly
        if not np.isfinite(losses[epoch]):
            raise TrainingDivergence(
                f"quantile training loss became non-finite at epoch {epoch}",
                epoch=epoch,
            )
        if epoch >= avg_start:
            if avg_sum is None:
                avg_sum = [p.copy() for p in params]
            else:
                for acc, p in zip(avg_sum, params):
                    acc += p
            n_avg += 1
    if n_avg > 0:
        for p, acc in zip(params, avg_sum):
            p[...] = acc / n_avg
    return net, losses


@dataclass
class AutoregressiveQuantileModel:
    """d quantile nets chained in a fixed coordinate order.

    Net k conditions on the data summary and coordinates 0..k-1, so a joint
    posterior draw is d sequential quantile evaluations at independent
    uniform levels.
    """

    summary: SummaryMap
    nets: list

    @property
    def dim(self):
        return len(self.nets)

    def _summary_of(self, y_obs):
        s = apply_summary(self.summary, np.asarray(y_obs, dtype=np.float64))
        return s if s.ndim else s[None]

    def sample(self, y_obs, n_draws, rng) -> np.ndarray:
        """n_draws x d posterior draws at the observed data."""
        if n_draws < 0:
            raise ValueError("draw count cannot be negative")
        s = self._summary_of(y_obs)
        gen = rng.generator
        draws = np.empty((n_draws, self.dim))
        cond = np.broadcast_to(s, (n_draws, s.shape[0]))
        for k, net in enumerate(self.nets):
            taus = gen.uniform(size=n_draws)
            full = np.hstack([cond, draws[:, :k]])
            if full.shape[1] != net.cond_dim:
                raise ValueError(
                    f"net {k} expects conditioning dim {net.cond_dim}, "
                    f"got {full.shape[1]}"
                )
            draws[:, k] = net.quantile_values(full, taus)
        return draws

    def quantile_values(self, y_obs, taus) -> np.ndarray:
        """Marginal quantile values of the first coordinate (d = 1 chains)."""
        if self.dim != 1:
            raise ValueError(
                "marginal quantile curves are defined for single-parameter "
                "chains; sample() the joint model instead"
            )
        return self.nets[0].quantile_values(self._summary_of(y_obs), np.asarray(taus))


class AnalyticQuantileStub:
    """Adapter giving a closed-form posterior the quantile-model interface."""

    def __init__(self, posterior):
        self.posterior = posterior

    def quantile_values(self, y_obs, taus):
        return np.asarray(self.posterior.quantile(np.asarray(taus)))


class FunctionQuantileStub:
    """Wrap a plain quantile function tau -> value as a quantile model."""

    def __init__(self, fn):
        self.fn = fn

    def quantile_values(self, y_obs, taus):
        taus = np.asarray(taus, dtype=np.float64)
        return np.asarray([self.fn(t) for t in taus], dtype=np.float64)


def posterior_quantile_curve(model, y_obs, tau_grid):
    """Quantile curve on a grid, monotone-rearranged.

    Returns ``(values, crossing_rate)``: values are the raw net outputs
    sorted into non-decreasing order (rearrangement never hurts a quantile
    estimate), and crossing_rate is the fraction of adjacent grid pairs the
    raw outputs ordered backwards before sorting.
    """
    tau_grid = np.asarray(tau_grid, dtype=np.float64)
    if tau_grid.ndim != 1 or tau_grid.size == 0:
        raise ValueError("tau grid must be a non-empty 1-D array")
    if np.any(tau_grid <= 0.0) or np.any(tau_grid >= 1.0):
        raise ValueError("tau grid must lie strictly inside (0, 1)")
    if tau_grid.size > 1 and np.any(np.diff(tau_grid) <= 0.0):
        raise ValueError("tau grid must be strictly increasing")
    raw = np.asarray(model.quantile_values(y_obs, tau_grid), dtype=np.float64)
    if raw.size > 1:
        crossing = float(np.mean(np.diff(raw) < 0.0))
    else:
        crossing = 0.0
    return np.sort(raw), crossing


def sample_posterior(model, y_obs, n_draws, rng) -> np.ndarray:
    """Draw from the fitted posterior: independent uniforms through the chain."""
    if hasattr(model, "sample"):
        return model.sample(y_obs, n_draws, rng)
    # Stubs: single coordinate, direct inverse-CDF sampling.
    taus = rng.generator.uniform(size=n_draws)
    return np.asarray(model.quantile_values(y_obs, taus))[:, None]


def expected_utility(model, y_obs, utility, quadrature_size=10_000) -> float:
    """E[utility(theta)] by midpoint quadrature over the quantile curve.

    Uses the identity E[g(theta)] = integral_0^1 g(F^{-1}(tau)) d tau on the
    rearranged curve. For monotone non-decreasing g the integrand is itself
    the quantile function of g(theta) (the compositional rule); a
    non-monotone g is flagged with a warning because that reading fails,
    but the expectation itself remains valid.
    """
    if quadrature_size < 2:
        raise ValueError("need at least two quadrature nodes")
    taus = (np.arange(quadrature_size) + 0.5) / quadrature_size
    curve, _ = posterior_quantile_curve(model, y_obs, taus)
    values = np.asarray([utility(v) for v in curve], dtype=np.float64)
    drops = np.diff(values) < 0.0
    if np.any(drops):
        warnings.warn(
            "utility is not monotone non-decreasing on the quantile range; "
            "the compositional quantile rule does not apply (the expected "
            "value is still exact)",
            stacklevel=2,
        )
    return float(values.mean())
