"""Adam optimizer working in place on named parameter tensors."""
from dataclasses import dataclass, field

import numpy as np

from img2rna.exceptions import NumericError


@dataclass
class AdamState:
    """First/second moment estimates and the step counter."""
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state, lr, betas=(0.9, 0.999), eps=1e-8):
    """
    Apply one bias-corrected Adam update in place.

    Parameters
    ----------
    params : dict of str -> Tensor
        Parameters to update (their ``data`` arrays are modified).
    grads : dict of str -> numpy.ndarray
        Gradient for each parameter name; missing names are skipped.
    state : AdamState
        Moments are zero-initialized lazily on the first call.
    lr : float
        Learning rate.
    betas : tuple of float
        Exponential decay rates of the moment estimates.
    eps : float
        Denominator fuzz.

    Raises
    ------
    NumericError
        When any gradient holds a non-finite value. No parameter is modified.
    """
    beta1, beta2 = betas

    # Validate all gradients before touching anything
    for name, grad in grads.items():
        if not np.all(np.isfinite(grad)):
            raise NumericError("Non-finite gradient for parameter '%s'." % name)

    state.step += 1
    correction1 = 1.0 - beta1 ** state.step
    correction2 = 1.0 - beta2 ** state.step

    for name, param in params.items():
        grad = grads.get(name)
        if grad is None:
            continue
        if name not in state.m:
            state.m[name] = np.zeros_like(param.data)
            state.v[name] = np.zeros_like(param.data)

        state.m[name] = beta1 * state.m[name] + (1.0 - beta1) * grad
        state.v[name] = beta2 * state.v[name] + (1.0 - beta2) * grad ** 2
        m_hat = state.m[name] / correction1
        v_hat = state.v[name] / correction2
        param.data -= lr * m_hat / (np.sqrt(v_hat) + eps)
