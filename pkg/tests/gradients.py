"""Finite-difference checks over whole weight dictionaries."""

import numpy as np

from ctstreak.nn.core import grad_check
from ctstreak.nn.gru import BIASES, KERNELS, ConvGRUParams, conv_gru_backward, conv_gru_step, msd_gru_backward, msd_gru_forward
from ctstreak.nn.msd import msd_backward, msd_forward


def dict_grad_check(f, weights: dict, grads: dict) -> float:
    """grad_check of ``f(weights)`` over every weight scalar at once."""
    names = list(weights)

    def unflatten(v):
        out, i = {}, 0
        for n in names:
            out[n] = v[i : i + weights[n].size].reshape(weights[n].shape)
            i += weights[n].size
        return out

    theta = np.concatenate([weights[n].ravel() for n in names])
    analytic = np.concatenate([np.asarray(grads[n]).ravel() for n in names])
    return grad_check(lambda v: f(unflatten(v)), theta, analytic)


def msd_check(config, x, weights, up) -> float:
    g_x, grads = msd_backward(x, weights, config, up)
    err_w = dict_grad_check(lambda w: float(np.sum(up * msd_forward(x, w, config))), weights, grads)
    err_x = grad_check(lambda v: float(np.sum(up * msd_forward(v, weights, config))), x, g_x)
    return max(err_w, err_x)


def gru_step_check(x, h, p, variant, up) -> float:
    """Relative error over x, h and all nine parameter tensors of one conv-GRU step."""
    dx, dh, grads = conv_gru_backward(x, h, p, variant, up)
    worst = grad_check(lambda v: float(np.sum(up * conv_gru_step(v, h, p, variant))), x, dx)
    worst = max(worst, grad_check(lambda v: float(np.sum(up * conv_gru_step(x, v, p, variant))), h, dh))
    params = {n: getattr(p, n) for n in KERNELS + BIASES}
    f = lambda w: float(np.sum(up * conv_gru_step(x, h, ConvGRUParams(dilation=p.dilation, **w), variant)))
    return max(worst, dict_grad_check(f, params, grads))


def msd_gru_check(seq, weights, config, variant, up) -> float:
    g_seq, grads = msd_gru_backward(seq, weights, config, variant, up)
    err_w = dict_grad_check(lambda w: float(np.sum(up * msd_gru_forward(seq, w, config, variant))), weights, grads)
    err_x = grad_check(lambda v: float(np.sum(up * msd_gru_forward(v, weights, config, variant))), seq, g_seq)
    return max(err_w, err_x)
