"""Twin-side status emulation and the adaptive data-collection loop."""

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .errors import DataError
from .nn import Optimizer, OptimizerConfig, RecurrentCell, mse
from .physical import link_rates

COLLECTED, EMULATED = "collected", "emulated"


@dataclass
class DTRecord:
    uid: int
    slot: int
    position: np.ndarray
    channel: np.ndarray
    source: str
    age: int


@dataclass
class CollectionController:
    period: int = 4
    t_min: int = 1
    t_max: int = 64
    theta_lo: float = 3.0
    theta_hi: float = 10.0
    factor: int = 2

    def __post_init__(self):
        if not self.t_min <= self.period <= self.t_max:
            raise ValueError("period outside [t_min, t_max]")
        if not self.theta_lo < self.theta_hi:
            raise ValueError("theta_lo must be below theta_hi")

    @classmethod
    def from_params(cls, p):
        return cls(p.t_init, p.t_min, p.t_max, p.theta_lo, p.theta_hi, p.factor)

    def update(self, error):
        self.period = adjust_period(error, self)
        return self.period


def adjust_period(error, ctrl):
    """Multiplicative period control with a dead band between the thresholds."""
    if error < 0:
        raise ValueError("error must be >= 0")
    if error > ctrl.theta_hi:
        return max(ctrl.t_min, max(1, ctrl.period // ctrl.factor))
    if error < ctrl.theta_lo:
        return min(ctrl.t_max, ctrl.period * ctrl.factor)
    return ctrl.period


def discriminate_error(emulated, collected):
    """Root-mean-square Euclidean position error over shared users.

    Accepts aligned ``(n, 2)`` arrays or ``{uid: position}`` mappings.
    """
    if isinstance(emulated, dict) or isinstance(collected, dict):
        shared = sorted(set(emulated) & set(collected))
        if not shared:
            raise DataError("no users present in both status sets")
        a = np.array([emulated[k] for k in shared], dtype=float)
        b = np.array([collected[k] for k in shared], dtype=float)
    else:
        a, b = np.asarray(emulated, float), np.asarray(collected, float)
        if a.shape != b.shape:
            raise DataError(f"misaligned status sets {a.shape} vs {b.shape}")
        if a.size == 0:
            raise DataError("no users present in both status sets")
    return float(np.sqrt(np.mean(np.sum((a - b) ** 2, axis=-1))))


# ------------------------------------------------------------- predictors


def _encode(histories, window, scale):
    h = np.asarray(histories, dtype=float)[:, -window:, :]
    last = h[:, -1:, :]
    return (h - last) / scale, last[:, 0, :]


class TrajectoryPredictor(BaseEstimator, RegressorMixin):
    """Recurrent next-position model over a window of past positions.

    Inputs are the last ``window`` positions expressed relative to the most
    recent one (divided by ``scale`` metres); the output is the next
    displacement in the same units.
    """

    def __init__(self, window=8, hidden=32, n_steps=5000, batch_size=32,
                 learning_rate=1e-3, scale=10.0, train_fraction=0.8, random_state=0):
        self.window = window
        self.hidden = hidden
        self.n_steps = n_steps
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.scale = scale
        self.train_fraction = train_fraction
        self.random_state = random_state

    def _windows(self, traces):
        xs, ys = [], []
        w = self.window
        for tr in traces:
            idx = np.arange(w, len(tr))
            hist = np.stack([tr[i - w:i] for i in idx])
            x, last = _encode(hist, w, self.scale)
            xs.append(x)
            ys.append((tr[idx] - last) / self.scale)
        return np.concatenate(xs), np.concatenate(ys)

    def fit(self, traces, y=None):
        traces = [np.asarray(t, dtype=float) for t in traces]
        if len(traces) < 10:
            raise DataError(f"need at least 10 traces, got {len(traces)}")
        if any(t.ndim != 2 or t.shape[1] != 2 or len(t) <= self.window for t in traces):
            raise DataError(f"every trace must be (T > {self.window}, 2)")
        rng = np.random.default_rng(self.random_state)
        order = rng.permutation(len(traces))
        n_train = int(round(self.train_fraction * len(traces)))
        self.train_idx_ = np.sort(order[:n_train])
        self.val_idx_ = np.sort(order[n_train:])
        X, Y = self._windows([traces[i] for i in self.train_idx_])
        self.cell_ = RecurrentCell(2, self.hidden, 2, rng)
        opt = Optimizer(OptimizerConfig("adam", self.learning_rate))
        self.loss_curve_ = []
        for _ in range(self.n_steps):
            batch = rng.integers(0, len(X), size=min(self.batch_size, len(X)))
            pred, cache = self.cell_.forward_cache(X[batch])
            value, grad = mse(pred, Y[batch])
            grads, _ = self.cell_.backward(cache, grad)
            opt.step(self.cell_.params, grads)
            self.loss_curve_.append(value)
        if len(self.val_idx_):
            Xv, Yv = self._windows([traces[i] for i in self.val_idx_])
            err = (self.cell_.forward(Xv) - Yv) * self.scale
            self.val_rmse_ = float(np.sqrt(np.mean(np.sum(err ** 2, axis=1))))
        else:
            self.val_rmse_ = 0.0
        return self

    def predict(self, histories):
        check_is_fitted(self, "cell_")
        h = np.asarray(histories, dtype=float)
        if h.ndim != 3 or h.shape[1] < self.window:
            raise DataError(f"history must be (n, >= {self.window}, 2)")
        x, last = _encode(h, self.window, self.scale)
        return last + self.cell_.forward(x) * self.scale


class OraclePredictor:
    """Test double that reads the ground truth from a mobility model."""

    window = 1

    def __init__(self, source):
        self.source = source

    def predict(self, histories):
        return np.array(self.source.positions, dtype=float)


class ConstantPredictor:
    """Test double that always predicts the same point."""

    window = 1

    def __init__(self, point):
        self.point = np.asarray(point, dtype=float)

    def predict(self, histories):
        return np.tile(self.point, (len(histories), 1))


def train_predictor(traces, params, random_state):
    return TrajectoryPredictor(window=params.window, hidden=params.hidden,
                               n_steps=params.train_steps, batch_size=params.batch_size,
                               learning_rate=params.learning_rate,
                               random_state=random_state).fit(traces)


def emulate_status(predictor, history, horizon, arena, aps=None, channel=None):
    """Autoregressive rollout of ``horizon`` future positions per user.

    Returns ``(positions, rates)`` with shapes ``(horizon, n, 2)`` and
    ``(horizon, n, n_aps)``; rates use zero (mean) shadowing and are None when
    no channel model is given.
    """
    hist = np.asarray(history, dtype=float)
    window = getattr(predictor, "window", 1)
    if hist.ndim != 3 or hist.shape[1] < window:
        raise DataError(f"history must hold at least {window} positions per user")
    positions = []
    for _ in range(horizon):
        nxt = np.clip(predictor.predict(hist), 0.0, np.asarray(arena, dtype=float))
        positions.append(nxt)
        hist = np.concatenate([hist[:, 1:], nxt[:, None, :]], axis=1)
    n = hist.shape[0]
    positions = np.array(positions).reshape(horizon, n, 2)
    rates = None
    if channel is not None:
        rates = np.array([link_rates(p, aps, channel) for p in positions]).reshape(
            horizon, n, len(aps))
    return positions, rates


# ------------------------------------------------------------- twin store


def status_features(positions, rates, swipe_counts, arena, rate_cap, swipe_cap):
    """Per-user feature row: normalised x, y, best-AP rate, swipe counts."""
    xy = np.asarray(positions, float) / np.asarray(arena, float)
    rate = np.clip(np.asarray(rates, float).max(axis=1) / rate_cap, 0, 1)[:, None]
    swipes = np.clip(np.asarray(swipe_counts, float) / swipe_cap, 0, 1)
    return np.hstack([xy, rate, swipes])


class DTStore:
    """The twin's per-user status, with short rolling histories."""

    def __init__(self, positions, rates, swipe_counts, window, arena, rate_cap, swipe_cap):
        n = len(positions)
        self.window = window
        self.arena = np.asarray(arena, dtype=float)
        self.rate_cap, self.swipe_cap = rate_cap, swipe_cap
        self.slot = 0
        self.positions = np.array(positions, dtype=float)
        self.rates = np.array(rates, dtype=float)
        self.swipe_counts = np.array(swipe_counts, dtype=float)
        self.source = np.array([COLLECTED] * n, dtype=object)
        self.last_collected = np.zeros(n, dtype=int)
        self.history = np.repeat(self.positions[:, None, :], window, axis=1)
        feat = self._features()
        self.features = np.repeat(feat[:, None, :], window, axis=1)

    def _features(self):
        return status_features(self.positions, self.rates, self.swipe_counts,
                               self.arena, self.rate_cap, self.swipe_cap)

    def write(self, slot, positions, rates, source, swipe_counts, prediction=None):
        """Append one slot of status.

        When a collection arrives together with the emulation made for the
        same slot, the emulated tail of the position history is corrected by
        linearly interpolating the observed error back to the previous fix, so
        the predictor never sees a spurious jump.
        """
        if source == COLLECTED and prediction is not None:
            self._reanchor(slot, np.asarray(positions, float) - np.asarray(prediction, float))
        self.slot = slot
        self.positions = np.array(positions, dtype=float)
        self.rates = np.array(rates, dtype=float)
        self.swipe_counts = np.array(swipe_counts, dtype=float)
        self.source[:] = source
        if source == COLLECTED:
            self.last_collected[:] = slot
        self.history = np.concatenate([self.history[:, 1:], self.positions[:, None]], axis=1)
        self.features = np.concatenate(
            [self.features[:, 1:], self._features()[:, None]], axis=1)

    def _reanchor(self, slot, error):
        gap = slot - self.last_collected  # (n,)
        # history[:, -1] is slot - 1, history[:, -k] is slot - k
        k = np.arange(self.window, 0, -1)[None, :]
        since = gap[:, None] - k  # slots elapsed since the last fix
        w = np.where(since > 0, since / np.maximum(gap[:, None], 1), 0.0)
        self.history = np.clip(self.history + w[..., None] * error[:, None, :], 0.0, self.arena)

    @property
    def age(self):
        return self.slot - self.last_collected

    def windows(self):
        """Flattened status windows, one row per user."""
        return self.features.reshape(len(self.features), -1)

    def records(self):
        return [DTRecord(i, self.slot, self.positions[i].copy(), self.rates[i].copy(),
                         self.source[i], int(self.age[i])) for i in range(len(self.positions))]

    def state_hash(self):
        import hashlib
        h = hashlib.sha256()
        for arr in (self.positions, self.rates, self.swipe_counts, self.history,
                    self.features, self.last_collected):
            h.update(np.ascontiguousarray(arr).tobytes())
        h.update(repr(list(self.source)).encode())
        return h.hexdigest()


class ExternalLoop:
    """Collect-or-emulate each slot and adapt the collection period."""

    def __init__(self, store, predictor, controller, aps, channel):
        self.store = store
        self.predictor = predictor
        self.ctrl = controller
        self.aps = aps
        self.channel = channel
        self.telemetry = []

    def tick(self, slot, true_positions, true_rates, swipe_counts):
        emulated = np.clip(self.predictor.predict(self.store.history), 0.0, self.store.arena)
        error = discriminate_error(emulated, true_positions)
        period = self.ctrl.period
        if slot % period == 0:
            if slot > 0:
                self.ctrl.update(error)
            else:
                error = 0.0
            self.store.write(slot, true_positions, true_rates, COLLECTED, swipe_counts,
                             prediction=emulated)
            counts = (len(emulated), 0)
        else:
            # swipe counters only travel with a collection
            rates = link_rates(emulated, self.aps, self.channel)
            self.store.write(slot, emulated, rates, EMULATED, self.store.swipe_counts)
            counts = (0, len(emulated))
        row = (slot, period, error) + counts
        self.telemetry.append(row)
        return row


def external_loop_tick(slot, true_positions, true_rates, swipe_counts, loop):
    return loop.tick(slot, true_positions, true_rates, swipe_counts)
