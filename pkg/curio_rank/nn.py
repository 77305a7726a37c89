"""Numeric kernels shared by the recurrent models: activations, Adam, gradient clipping and the
finite-difference gradient check that validates every hand-written backward pass."""

import numpy as np
from scipy.special import expit

sigmoid = expit


def softplus(x):
    return np.logaddexp(0.0, x)


def softmax(scores):
    """Numerically stable softmax over the last axis. Entries equal to -inf get weight 0.

    Parameters:
        scores (np.ndarray): scores

    Returns:
        np.ndarray: non-negative weights summing to 1 along the last axis
    """

    shifted = scores - np.max(scores, axis=-1, keepdims=True)
    weights = np.exp(shifted)

    return weights / np.sum(weights, axis=-1, keepdims=True)


def init_uniform(rng, shape, scale):
    return rng.uniform(-scale, scale, size=shape)


def global_norm(grads):
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def clip_by_global_norm(grads, max_norm):
    """Rescales every gradient in place so their joint L2 norm is at most < max_norm >.

    Parameters:
        grads (dict): parameter name -> gradient array
        max_norm (float): norm ceiling (<= 0 disables clipping)

    Returns:
        float: norm before clipping
    """

    norm = global_norm(grads)
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale

    return norm


class Adam:
    """Adam optimizer over a dictionary of numpy parameters, updated in place."""

    def __init__(self, params, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(p) for name, p in params.items()}
        self.v = {name: np.zeros_like(p) for name, p in params.items()}

    def step(self, grads):
        self.t += 1
        correction1 = 1.0 - self.beta1**self.t
        correction2 = 1.0 - self.beta2**self.t
        for name, g in grads.items():
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            step = (m / correction1) / (np.sqrt(v / correction2) + self.eps)
            self.params[name] -= self.lr * step


def relative_error(analytic, numeric):
    """Norm-relative discrepancy between two gradient tensors; 0 when both vanish."""

    denom = np.linalg.norm(analytic) + np.linalg.norm(numeric)
    if denom == 0.0:
        return 0.0

    return float(np.linalg.norm(analytic - numeric) / denom)


def numeric_gradient(loss_fn, param, h=1e-5):
    """Central finite-difference gradient of < loss_fn >() with respect to < param >, which is
    perturbed in place and restored afterwards.

    Parameters:
        loss_fn (callable): zero-argument function returning a scalar loss
        param (np.ndarray): float64 parameter array read by loss_fn
        h (float): step size

    Returns:
        np.ndarray: gradient estimate shaped like param
    """

    grad = np.zeros_like(param)
    flat = param.reshape(-1)
    grad_flat = grad.reshape(-1)
    for idx in range(flat.size):
        saved = flat[idx]
        flat[idx] = saved + h
        plus = loss_fn()
        flat[idx] = saved - h
        minus = loss_fn()
        flat[idx] = saved
        grad_flat[idx] = (plus - minus) / (2.0 * h)

    return grad


def gradient_check(loss_fn, params, grads, h=1e-5):
    """Compares analytic < grads > with central differences for every tensor in < params >.

    Parameters:
        loss_fn (callable): zero-argument loss reading params
        params (dict): name -> parameter array
        grads (dict): name -> analytic gradient
        h (float): finite-difference step

    Returns:
        dict: name -> norm-relative error
    """

    return {
        name: relative_error(grads[name], numeric_gradient(loss_fn, params[name], h))
        for name in params
    }
