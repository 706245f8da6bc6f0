import numpy as np

from ..errors import ShapeError


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


class RecurrentCell:
    """Single-gate recurrent cell with a linear read-out of the last state.

    ``h_t = (1 - z_t) * h_{t-1} + z_t * tanh(x_t Wc + h_{t-1} Uc + bc)`` where
    the update gate is ``z_t = sigmoid(x_t Wz + h_{t-1} Uz + bz)``.
    """

    param_names = ("Wz", "Uz", "bz", "Wc", "Uc", "bc", "Wo", "bo")

    def __init__(self, n_in, hidden=32, n_out=None, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        n_out = n_in if n_out is None else n_out
        self.n_in, self.hidden, self.n_out = int(n_in), int(hidden), int(n_out)
        sx, sh = np.sqrt(1.0 / n_in), np.sqrt(1.0 / hidden)
        self.Wz = rng.normal(0, sx, (n_in, hidden))
        self.Uz = rng.normal(0, sh, (hidden, hidden))
        self.bz = np.zeros(hidden)
        self.Wc = rng.normal(0, sx, (n_in, hidden))
        self.Uc = rng.normal(0, sh, (hidden, hidden))
        self.bc = np.zeros(hidden)
        self.Wo = rng.normal(0, sh, (hidden, n_out))
        self.bo = np.zeros(n_out)

    @property
    def params(self):
        return [getattr(self, n) for n in self.param_names]

    def set_params(self, params):
        for name, value in zip(self.param_names, params, strict=True):
            if value.shape != getattr(self, name).shape:
                raise ShapeError(f"{name} shape mismatch")
            setattr(self, name, np.array(value, dtype=float))

    def copy(self):
        other = RecurrentCell.__new__(RecurrentCell)
        other.n_in, other.hidden, other.n_out = self.n_in, self.hidden, self.n_out
        for name in self.param_names:
            setattr(other, name, getattr(self, name).copy())
        return other

    def _check(self, seq):
        seq = np.asarray(seq, dtype=float)
        squeeze = seq.ndim == 2
        if squeeze:
            seq = seq[None]
        if seq.ndim != 3 or seq.shape[1] < 1 or seq.shape[2] != self.n_in:
            raise ShapeError(f"expected (batch, T>=1, {self.n_in}), got {seq.shape}")
        return seq, squeeze

    def forward(self, seq):
        y, _ = self.forward_cache(seq)
        return y

    __call__ = forward

    def forward_cache(self, seq):
        seq, squeeze = self._check(seq)
        h = np.zeros((seq.shape[0], self.hidden))
        steps = []
        for t in range(seq.shape[1]):
            x = seq[:, t, :]
            z = _sigmoid(x @ self.Wz + h @ self.Uz + self.bz)
            c = np.tanh(x @ self.Wc + h @ self.Uc + self.bc)
            steps.append((x, h, z, c))
            h = (1.0 - z) * h + z * c
        y = h @ self.Wo + self.bo
        cache = (steps, h, squeeze)
        return (y[0] if squeeze else y), cache

    def backward(self, cache, grad_out):
        steps, h_last, _ = cache
        dy = np.asarray(grad_out, dtype=float)
        if dy.ndim == 1:
            dy = dy[None, :]
        g = {n: np.zeros_like(getattr(self, n)) for n in self.param_names}
        g["Wo"] = h_last.T @ dy
        g["bo"] = dy.sum(axis=0)
        dh = dy @ self.Wo.T
        dxs = []
        for x, h_prev, z, c in reversed(steps):
            dz = dh * (c - h_prev) * z * (1.0 - z)
            dc = dh * z * (1.0 - c * c)
            g["Wz"] += x.T @ dz
            g["Uz"] += h_prev.T @ dz
            g["bz"] += dz.sum(axis=0)
            g["Wc"] += x.T @ dc
            g["Uc"] += h_prev.T @ dc
            g["bc"] += dc.sum(axis=0)
            dxs.append(dz @ self.Wz.T + dc @ self.Wc.T)
            dh = dh * (1.0 - z) + dz @ self.Uz.T + dc @ self.Uc.T
        dx = np.stack(dxs[::-1], axis=1)
        return [g[n] for n in self.param_names], dx
