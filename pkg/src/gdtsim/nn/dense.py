import numpy as np

from ..errors import ShapeError

ACTIVATIONS = ("relu", "linear", "tanh", "sigmoid")


def _act(name, z):
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    if name == "sigmoid":
        return 1.0 / (1.0 + np.exp(-z))
    return z


def _act_grad(name, z, a):
    if name == "relu":
        return (z > 0).astype(float)
    if name == "tanh":
        return 1.0 - a * a
    if name == "sigmoid":
        return a * (1.0 - a)
    return np.ones_like(z)


class DenseNetwork:
    """Fully connected network with per-layer activations.

    Weights are stored input-major (``W[i]`` has shape ``(n_in, n_out)``) so a
    batch ``X`` of shape ``(B, n_in)`` maps through ``X @ W + b``.
    """

    def __init__(self, sizes, activations=None, rng=None, scale=None):
        sizes = [int(s) for s in sizes]
        if len(sizes) < 2 or min(sizes) < 1:
            raise ShapeError(f"invalid layer sizes {sizes}")
        n_layers = len(sizes) - 1
        if activations is None:
            activations = ["relu"] * (n_layers - 1) + ["linear"]
        activations = list(activations)
        if len(activations) != n_layers or any(a not in ACTIVATIONS for a in activations):
            raise ShapeError(f"need {n_layers} activations from {ACTIVATIONS}")
        self.sizes = sizes
        self.activations = activations
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weights = []
        self.biases = []
        for n_in, n_out, act in zip(sizes[:-1], sizes[1:], activations):
            std = scale if scale is not None else (
                np.sqrt(2.0 / n_in) if act == "relu" else np.sqrt(1.0 / n_in))
            self.weights.append(rng.normal(0.0, std, size=(n_in, n_out)))
            self.biases.append(np.zeros(n_out))

    @property
    def params(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def set_params(self, params):
        params = list(params)
        if len(params) != 2 * len(self.weights):
            raise ShapeError("parameter count mismatch")
        for i in range(len(self.weights)):
            w, b = params[2 * i], params[2 * i + 1]
            if w.shape != self.weights[i].shape or b.shape != self.biases[i].shape:
                raise ShapeError(f"layer {i} shape mismatch")
            self.weights[i] = np.array(w, dtype=float)
            self.biases[i] = np.array(b, dtype=float)

    def copy(self):
        other = DenseNetwork.__new__(DenseNetwork)
        other.sizes = list(self.sizes)
        other.activations = list(self.activations)
        other.weights = [w.copy() for w in self.weights]
        other.biases = [b.copy() for b in self.biases]
        return other

    def _check(self, x):
        x = np.asarray(x, dtype=float)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.sizes[0]:
            raise ShapeError(f"expected input width {self.sizes[0]}, got shape {x.shape}")
        return x, squeeze

    def forward(self, x):
        a, squeeze = self._check(x)
        for w, b, act in zip(self.weights, self.biases, self.activations):
            a = _act(act, a @ w + b)
        return a[0] if squeeze else a

    __call__ = forward

    def forward_cache(self, x):
        a, _ = self._check(x)
        cache = [a]
        for w, b, act in zip(self.weights, self.biases, self.activations):
            z = a @ w + b
            a = _act(act, z)
            cache.append((z, a))
        return a, cache

    def backward(self, cache, grad_out):
        """Gradients for ``params`` (same order) and for the input."""
        grad = np.asarray(grad_out, dtype=float)
        if grad.ndim == 1:
            grad = grad[None, :]
        grads = [None] * (2 * len(self.weights))
        for i in range(len(self.weights) - 1, -1, -1):
            z, a = cache[i + 1]
            a_prev = cache[0] if i == 0 else cache[i][1]
            dz = grad * _act_grad(self.activations[i], z, a)
            grads[2 * i] = a_prev.T @ dz
            grads[2 * i + 1] = dz.sum(axis=0)
            grad = dz @ self.weights[i].T
        return grads, grad

    def soft_update(self, source, tau):
        for i in range(len(self.weights)):
            self.weights[i] = (1 - tau) * self.weights[i] + tau * source.weights[i]
            self.biases[i] = (1 - tau) * self.biases[i] + tau * source.biases[i]
