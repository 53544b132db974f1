"""Randomised finite-difference checks of the attention kernel and its positional parameters."""

import math
from dataclasses import dataclass

import numpy as np

from .attention import AttentionOptions, attention_backward, attention_forward, valid_option_combinations
from .numerics import GRADCHECK_STEP, finite_diff_gradcheck
from .poscoeff import PositionalField

__all__ = ["AttentionInstance", "random_instance", "attention_gradcheck", "gradcheck_sweep"]


@dataclass
class AttentionInstance:
    Q: np.ndarray
    K: np.ndarray
    V: np.ndarray
    upstream: np.ndarray
    field: PositionalField
    options: AttentionOptions


def random_instance(options, seed, max_len=6, max_dk=4, n_heads=2):
    """Random double-precision attention problem with inputs in [-2, 2] and perturbed positional parameters."""
    rng = np.random.default_rng(seed)
    L = int(rng.integers(2, max_len + 1))
    # d_k=1 with SCO makes the score scale-free in k (gradient identically 0)
    d_k = int(rng.integers(2, max_dk + 1))
    d_v = int(rng.integers(1, max_dk + 1))
    seq_len = max(2, L - 1)
    f = PositionalField(options.positional_mode, n_heads, seq_len, d_k)
    for name, arr in f.params.items():
        if name == "rho":
            arr += rng.uniform(-2.5, 0.5, arr.shape)
        elif name == "gamma":
            arr += rng.uniform(-0.5, 0.5, arr.shape)
        elif name == "slope":
            arr[...] = rng.uniform(0.05, 1.0, arr.shape)
        else:
            arr += rng.uniform(-0.4, 0.4, arr.shape)
    Q = rng.uniform(-2, 2, (n_heads, L, d_k))
    K = rng.uniform(-2, 2, (n_heads, L, d_k))
    V = rng.uniform(-2, 2, (n_heads, L, d_v))
    R = rng.uniform(-1, 1, (n_heads, L, d_v))
    return AttentionInstance(Q, K, V, R, f, options)


def _loss(inst, Q=None, K=None, V=None):
    Q = inst.Q if Q is None else Q
    K = inst.K if K is None else K
    V = inst.V if V is None else V
    L_q, L_k = Q.shape[-2], K.shape[-2]
    fwd = attention_forward(Q, K, V, inst.field.coeff_matrix(L_q, L_k), inst.options)
    return float(np.sum(inst.upstream * fwd.output)), fwd


def attention_gradcheck(inst, h=GRADCHECK_STEP):
    """Check every input and positional parameter of one instance.

    Returns a dict mapping ``"Q"``, ``"K"``, ``"V"`` and each field parameter
    name to a :class:`~agflab.numerics.GradCheckReport`.
    """
    _, fwd = _loss(inst)
    grads = attention_backward(inst.upstream, fwd)
    L_q, L_k = inst.Q.shape[-2], inst.K.shape[-2]
    pgrads = inst.field.backward(L_q, L_k, grads.dcoeff, grads.dlc3)

    reports = {
        "Q": finite_diff_gradcheck(lambda t: _loss(inst, Q=t)[0], inst.Q, grads.dQ, h),
        "K": finite_diff_gradcheck(lambda t: _loss(inst, K=t)[0], inst.K, grads.dK, h),
        "V": finite_diff_gradcheck(lambda t: _loss(inst, V=t)[0], inst.V, grads.dV, h),
    }
    for name, value in inst.field.params.items():
        saved = value.copy()

        def f(theta, name=name):
            inst.field.params[name] = theta
            try:
                return _loss(inst)[0]
            finally:
                inst.field.params[name] = saved

        reports[name] = finite_diff_gradcheck(f, saved, pgrads[name], h)
        inst.field.params[name] = saved
    return reports


def gradcheck_sweep(seeds=range(10), masks=("none", "causal"), h=GRADCHECK_STEP):
    """Run :func:`attention_gradcheck` over every valid option combination.

    Returns a list of ``(options, seed, worst_name, max_rel_err)`` rows.
    """
    rows = []
    for mask in masks:
        for opts in valid_option_combinations(mask):
            for seed in seeds:
                inst = random_instance(opts, seed)
                reports = attention_gradcheck(inst, h)
                name = max(reports, key=lambda k: reports[k].max_rel_err)
                err = reports[name].max_rel_err
                rows.append((opts, seed, name, err if math.isfinite(err) else float("inf")))
    return rows
