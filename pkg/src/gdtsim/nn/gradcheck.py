import numpy as np

from ..errors import DegenerateInputError


def gradient_check(params, loss_fn, analytic, h=1e-5):
    """Largest relative error between ``analytic`` and central differences.

    ``loss_fn()`` must evaluate the scalar loss using the current contents of
    ``params`` (which are perturbed in place and restored). Errors are measured
    per parameter array as ``|a - n| / (|a| + |n|)`` in the 2-norm.
    """
    total = sum(float(np.sum(g * g)) for g in analytic)
    if total == 0.0:
        raise DegenerateInputError("probe point has zero gradient")
    worst = 0.0
    for p, g in zip(params, analytic):
        numeric = np.zeros_like(p)
        flat = p.reshape(-1)
        nflat = numeric.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = loss_fn()
            flat[i] = old - h
            down = loss_fn()
            flat[i] = old
            nflat[i] = (up - down) / (2 * h)
        denom = np.linalg.norm(g) + np.linalg.norm(numeric)
        if denom == 0.0:
            continue
        worst = max(worst, float(np.linalg.norm(g - numeric) / denom))
    return worst


def check_model(model, x, target, loss="mse"):
    """Gradient check for any model exposing forward_cache/backward/params."""
    from .optim import LOSSES

    loss_f = LOSSES[loss]

    def value():
        pred, _ = model.forward_cache(x)
        return loss_f(pred, target)[0]

    pred, cache = model.forward_cache(x)
    _, dpred = loss_f(pred, target)
    grads, _ = model.backward(cache, dpred)
    return gradient_check(model.params, value, grads)
