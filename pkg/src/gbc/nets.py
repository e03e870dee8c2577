"""Dense feed-forward networks with exact reverse-mode gradients.

All arrays are float64 numpy. Networks are small (a few layers of width
~64), so hand-written backprop is both fast enough and fully deterministic,
which keeps checkpoints bit-exact across reruns.

Shape conventions: a layer maps ``(B, d_in) -> (B, d_out)`` via
``x @ weight + bias``; 1-D inputs are treated as a single row and squeezed
on the way out. ``backward`` computes the gradient of the scalar
``sum(out_grad * forward(x))`` with respect to every parameter and to the
input, summing over the batch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

RELU = "relu"
IDENTITY = "identity"
_ACTIVATIONS = (RELU, IDENTITY)


@dataclass
class Layer:
    weight: np.ndarray  # (d_in, d_out)
    bias: np.ndarray  # (d_out,)
    activation: str

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[1],):
            raise ValueError(
                f"layer shapes inconsistent: weight {self.weight.shape}, "
                f"bias {self.bias.shape}"
            )
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")


class FeedForwardNet:
    """A stack of affine layers, each followed by a rectifier or identity."""

    def __init__(self, layers: list[Layer]):
        if not layers:
            raise ValueError("need at least one layer")
        for a, b in zip(layers, layers[1:]):
            if a.weight.shape[1] != b.weight.shape[0]:
                raise ValueError(
                    f"layer output dim {a.weight.shape[1]} does not feed "
                    f"layer input dim {b.weight.shape[0]}"
                )
        self.layers = layers

    @property
    def input_dim(self) -> int:
        return self.layers[0].weight.shape[0]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].weight.shape[1]

    @classmethod
    def create(cls, dims, rng, final_activation=IDENTITY) -> "FeedForwardNet":
        """Build a net with layer widths ``dims = [d_in, h1, ..., d_out]``.

        Hidden layers are ReLU with He-scaled Gaussian weights; the final
        layer uses ``final_activation`` with Xavier scaling.
        """
        if len(dims) < 2:
            raise ValueError("dims must list at least input and output size")
        gen = rng.generator
        layers = []
        for i, (d_in, d_out) in enumerate(zip(dims, dims[1:])):
            last = i == len(dims) - 2
            act = final_activation if last else RELU
            scale = np.sqrt(1.0 / d_in) if act == IDENTITY else np.sqrt(2.0 / d_in)
            w = gen.normal(0.0, scale, size=(d_in, d_out))
            layers.append(Layer(w, np.zeros(d_out), act))
        return cls(layers)

    def parameters(self) -> list[np.ndarray]:
        """Flat list [W0, b0, W1, b1, ...]; views, not copies."""
        out = []
        for lay in self.layers:
            out.append(lay.weight)
            out.append(lay.bias)
        return out

    def forward(self, x: np.ndarray) -> np.ndarray:
        out, _ = self.forward_cached(x)
        return out

    def forward_cached(self, x):
        """Forward pass keeping what backward needs.

        Returns ``(out, cache)``; pass the cache to :meth:`backward`.
        """
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 1
        h = x.reshape(1, -1) if squeeze else x
        if h.shape[1] != self.input_dim:
            raise ValueError(
                f"input dim {h.shape[1]} does not match net input {self.input_dim}"
            )
        records = []
        for lay in self.layers:
            z = h @ lay.weight + lay.bias
            records.append((h, z))
            h = np.maximum(z, 0.0) if lay.activation == RELU else z
        out = h[0] if squeeze else h
        return out, (records, squeeze)

    def backward(self, cache, out_grad):
        """Exact gradients of ``sum(out_grad * forward(x))``.

        Returns ``(param_grads, input_grad)`` where ``param_grads`` is a flat
        list aligned with :meth:`parameters` and ``input_grad`` matches the
        shape of the forward input.
        """
        records, squeeze = cache
        g = np.asarray(out_grad, dtype=np.float64)
        if squeeze:
            g = g.reshape(1, -1)
        grads = [None] * (2 * len(self.layers))
        for i in range(len(self.layers) - 1, -1, -1):
            inp, z = records[i]
            lay = self.layers[i]
            if lay.activation == RELU:
                g = g * (z > 0.0)
            grads[2 * i] = inp.T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            g = g @ lay.weight.T
        return grads, (g[0] if squeeze else g)


def finite_difference_gradients(net, x, out_grad, h=1e-5):
    """Central-difference estimate of the same gradients `backward` returns.

    Slow (two forward passes per scalar parameter); used only to verify the
    analytic gradients.
    """
    x = np.asarray(x, dtype=np.float64)
    og = np.asarray(out_grad, dtype=np.float64)

    def objective():
        return float(np.sum(og * net.forward(x)))

    fd = []
    for p in net.parameters():
        g = np.empty_like(p)
        flat_p = p.reshape(-1)
        flat_g = g.reshape(-1)
        for j in range(flat_p.size):
            orig = flat_p[j]
            flat_p[j] = orig + h
            up = objective()
            flat_p[j] = orig - h
            down = objective()
            flat_p[j] = orig
            flat_g[j] = (up - down) / (2.0 * h)
        fd.append(g)
    return fd


def gradient_check(net, x, out_grad, h=1e-5):
    """Max relative error between analytic and central-difference gradients.

    Relative error for one scalar is |a - f| / max(1, |a|, |f|), so the
    comparison degrades to an absolute one only when both are already tiny.
    """
    out, cache = net.forward_cached(x)
    analytic, _ = net.backward(cache, out_grad)
    numeric = finite_difference_gradients(net, x, out_grad, h=h)
    worst = 0.0
    for a, f in zip(analytic, numeric):
        denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(f)))
        worst = max(worst, float(np.max(np.abs(a - f) / denom)))
    return worst


def _preactivation_margin(net, x):
    """Smallest |pre-activation| over the ReLU layers at input x."""
    x = np.asarray(x, dtype=np.float64)
    h = x.reshape(1, -1) if x.ndim == 1 else x
    margin = np.inf
    for lay in net.layers:
        z = h @ lay.weight + lay.bias
        if lay.activation == RELU:
            margin = min(margin, float(np.min(np.abs(z))))
        h = np.maximum(z, 0.0) if lay.activation == RELU else z
    return margin


def run_gradient_check(n_nets, rng, h=1e-5):
    """Gradient-check ``n_nets`` random small nets; return max relative error.

    Architectures, parameters, probe inputs, and output weights are all drawn
    from ``rng``. Probe inputs that land within 10h of a ReLU kink are
    redrawn (finite differences straddle the kink there, so the comparison
    would measure the probe, not the gradient).
    """
    gen = rng.generator
    worst = 0.0
    for _ in range(n_nets):
        depth = int(gen.integers(1, 4))
        dims = [int(gen.integers(1, 9))]
        dims += [int(gen.integers(2, 17)) for _ in range(depth)]
        dims.append(int(gen.integers(1, 5)))
        net = FeedForwardNet.create(dims, rng.child(int(gen.integers(0, 2**32))))
        for attempt in range(50):
            x = gen.normal(size=dims[0])
            if _preactivation_margin(net, x) > 10.0 * h:
                break
        out_grad = gen.normal(size=dims[-1])
        worst = max(worst, gradient_check(net, x, out_grad, h=h))
    return worst


class SgdMomentum:
    """Stochastic gradient descent with classical momentum.

    velocity <- momentum * velocity + grad;  param <- param - lr * velocity.
    With momentum = 0 this is plain SGD.
    """

    def __init__(self, lr, momentum=0.0):
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        if not 0.0 <= momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        self.lr = float(lr)
        self.momentum = float(momentum)
        self.step_count = 0
        self._velocity = None

    def step(self, params, grads):
        _check_grads(params, grads)
        if self._velocity is None:
            self._velocity = [np.zeros_like(p) for p in params]
        for p, g, v in zip(params, grads, self._velocity):
            v *= self.momentum
            v += g
            p -= self.lr * v
        self.step_count += 1


class Adam:
    """Adaptive-moment estimation with the standard bias correction."""

    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.step_count = 0
        self._m = None
        self._v = None

    def step(self, params, grads):
        _check_grads(params, grads)
        if self._m is None:
            self._m = [np.zeros_like(p) for p in params]
            self._v = [np.zeros_like(p) for p in params]
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1**t
        c2 = 1.0 - self.beta2**t
        for p, g, m, v in zip(params, grads, self._m, self._v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g)
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def _check_grads(params, grads):
    if len(params) != len(grads):
        raise ValueError(
            f"got {len(grads)} gradient blocks for {len(params)} parameter blocks"
        )
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape:
            raise ValueError(
                f"parameter block {i} has shape {p.shape} but gradient "
                f"has shape {g.shape}"
            )
        if not np.all(np.isfinite(g)):
            raise ValueError(f"non-finite gradient in parameter block {i}")
