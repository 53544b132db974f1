"""Dense kernels with explicit backward passes, and a finite-difference checker.

Arrays are plain :class:`numpy.ndarray` objects. The 2-D case is the
reference contract; most kernels also accept leading batch axes so the model
can reuse them without reshaping.
"""

from dataclasses import dataclass

import numpy as np

from .exceptions import EvaluationError, ShapeError

__all__ = [
    "GradCheckReport",
    "as_dense2",
    "matmul",
    "matmul_backward",
    "softmax_rows",
    "softmax_rows_backward",
    "layer_norm",
    "layer_norm_backward",
    "numeric_grad",
    "finite_diff_gradcheck",
]

GRADCHECK_STEP = 1e-5
REL_ERR_FLOOR = 1e-8


@dataclass(frozen=True)
class GradCheckReport:
    """Outcome of a central-difference gradient check.

    ``worst_index`` is the multi-index (into the parameter array) with the
    largest relative error; ``analytic`` and ``numeric`` are the two gradient
    values at that index.
    """

    max_rel_err: float
    worst_index: tuple
    analytic: float
    numeric: float

    def passed(self, tol):
        return self.max_rel_err < tol


def as_dense2(x, dtype=np.float64):
    """Validate and return ``x`` as a finite 2-D array."""
    arr = np.asarray(x, dtype=dtype)
    if arr.ndim != 2:
        raise ShapeError(f"expected a 2-D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise EvaluationError("array contains non-finite values")
    return arr


def matmul(a, b):
    """Matrix product ``a @ b`` with an explicit shape check."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def matmul_backward(a, b, grad):
    """Gradients of ``sum(grad * (a @ b))`` with respect to ``a`` and ``b``."""
    a = np.asarray(a)
    b = np.asarray(b)
    grad = np.asarray(grad)
    return grad @ np.swapaxes(b, -1, -2), np.swapaxes(a, -1, -2) @ grad


def softmax_rows(x):
    """Row-wise softmax along the last axis, stabilised by subtracting the row max.

    Entries equal to ``-inf`` receive exactly zero weight.
    """
    x = np.asarray(x)
    shifted = x - np.max(x, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


def softmax_rows_backward(y, grad):
    """Backward of :func:`softmax_rows` given its output ``y``."""
    return y * (grad - np.sum(grad * y, axis=-1, keepdims=True))


def layer_norm(x, gain, bias, eps=1e-5):
    """Normalise each row of ``x`` to zero mean / unit variance, then apply ``gain`` and ``bias``."""
    x = np.asarray(x)
    gain = np.asarray(gain)
    bias = np.asarray(bias)
    if gain.shape != (x.shape[-1],) or bias.shape != (x.shape[-1],):
        raise ShapeError(
            f"gain/bias must have length {x.shape[-1]}, got {gain.shape} and {bias.shape}"
        )
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    return xc / np.sqrt(var + eps) * gain + bias


def layer_norm_backward(x, gain, grad, eps=1e-5):
    """Return ``(dx, dgain, dbias)`` for :func:`layer_norm`.

    Parameter gradients are summed over every leading axis.
    """
    x = np.asarray(x)
    n = x.shape[-1]
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    lead = tuple(range(x.ndim - 1))
    dgain = np.sum(grad * xhat, axis=lead)
    dbias = np.sum(grad, axis=lead)
    g = grad * gain
    dx = inv / n * (
        n * g - np.sum(g, axis=-1, keepdims=True) - xhat * np.sum(g * xhat, axis=-1, keepdims=True)
    )
    return dx, dgain, dbias


def numeric_grad(f, theta, h=GRADCHECK_STEP):
    """Central-difference gradient of scalar ``f`` at ``theta`` (any shape)."""
    theta = np.array(theta, dtype=np.float64)
    out = np.zeros_like(theta)
    flat = theta.reshape(-1)
    gflat = out.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(theta))
        flat[i] = orig - h
        fm = float(f(theta))
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise EvaluationError(f"non-finite function value at coordinate {i}")
        gflat[i] = (fp - fm) / (2.0 * h)
    return out


def finite_diff_gradcheck(f, theta, grad, h=GRADCHECK_STEP):
    """Compare an analytic gradient against central finite differences.

    Parameters
    ----------
    f : callable
        Scalar function of a parameter array.
    theta : array_like
        Point at which to check.
    grad : array_like or callable
        The analytic gradient at ``theta``, or a function returning it.
    h : float
        Finite-difference step.

    Returns
    -------
    GradCheckReport
        Relative errors use the denominator ``max(|analytic|, |numeric|, 1e-8)``.
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    theta = np.array(theta, dtype=np.float64)
    f0 = float(f(theta.copy()))
    if not np.isfinite(f0):
        raise EvaluationError("non-finite function value at theta")
    analytic = np.asarray(grad(theta.copy()) if callable(grad) else grad, dtype=np.float64)
    if analytic.shape != theta.shape:
        raise ShapeError(f"gradient shape {analytic.shape} does not match theta {theta.shape}")
    numeric = numeric_grad(f, theta, h)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), REL_ERR_FLOOR)
    rel = np.abs(analytic - numeric) / denom
    if rel.size == 0:
        return GradCheckReport(0.0, (), 0.0, 0.0)
    idx = np.unravel_index(int(np.argmax(rel)), rel.shape)
    return GradCheckReport(float(rel[idx]), tuple(int(i) for i in idx), float(analytic[idx]), float(numeric[idx]))
