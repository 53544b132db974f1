"""Multi-head attention with multiplicative positional coefficients.

Shapes: ``Q`` is ``(..., H, L_q, d_k)``, ``K`` is ``(..., H, L_k, d_k)`` and
``V`` is ``(..., H, L_k, d_v)``. Leading axes (usually a batch axis) are
broadcast against the coefficient tensor, which is ``(H, L_q, L_k)``.

Scoring for pair (m, n), with ``w`` the optional per-dimension LC3 weights::

    raw   = sum_j q_mj * k_nj * w_mnj
    base  = raw * scale            (or raw / max(|k_n|, 1e-6) with SCO)
    logit = base * coeff           (multiplicative modes)
    logit = base + bias            (alibi_add)

The coefficient scales the signed logit, so it pulls both positive and
negative logits toward zero. Aggregation is ``o_m = sum_n a_mn * v_n``, or
``sum_n a_mn * coeff_mn * v_n`` with PCM-V (``exp(bias)`` with PCM-V-Exp),
without renormalisation.
"""

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .exceptions import MaskError, OptionsError, ShapeError
from .numerics import softmax_rows, softmax_rows_backward
from .poscoeff import MULTIPLICATIVE_MODES, POSITIONAL_MODES, CoeffMatrix

__all__ = [
    "SCO_NORM_FLOOR",
    "AttentionOptions",
    "AttentionOutput",
    "AttentionGrads",
    "valid_option_combinations",
    "single_pair_score",
    "attention_forward",
    "attention_backward",
]

SCO_NORM_FLOOR = 1e-6


@dataclass(frozen=True)
class AttentionOptions:
    """Mode flags for one attention call.

    ``pcm_v_detach`` treats the aggregation coefficient as a constant in the
    backward pass (stop-gradient ablation); by default the full chain rule is
    used.
    """

    positional_mode: str = "none"
    pcm_v: bool = False
    pcm_v_exp: bool = False
    sco: bool = False
    mask: str = "none"
    scale: Optional[float] = None
    pcm_v_detach: bool = False

    def __post_init__(self):
        if self.positional_mode not in POSITIONAL_MODES:
            raise OptionsError(
                f"unknown positional_mode {self.positional_mode!r}; expected one of {POSITIONAL_MODES}"
            )
        if self.mask not in ("none", "causal"):
            raise OptionsError(f"mask must be 'none' or 'causal', got {self.mask!r}")
        if self.pcm_v and self.pcm_v_exp:
            raise OptionsError("pcm_v and pcm_v_exp are mutually exclusive")
        if self.pcm_v and self.positional_mode not in ("agf", "agf_m", "agf_full", "alibi_mul"):
            raise OptionsError("pcm_v requires a multiplicative positional mode (agf*, alibi_mul)")
        if self.pcm_v_exp and self.positional_mode != "alibi_add":
            raise OptionsError("pcm_v_exp requires positional_mode='alibi_add'")
        if self.scale is not None and not self.scale > 0:
            raise OptionsError("scale must be positive")

    @property
    def additive(self):
        return self.positional_mode not in MULTIPLICATIVE_MODES

    def scale_for(self, d_k):
        return 1.0 / math.sqrt(d_k) if self.scale is None else self.scale

    def with_(self, **kw):
        return replace(self, **kw)


def valid_option_combinations(mask="none"):
    """Every valid ``AttentionOptions`` over the six modes and the PCM-V / PCM-V-Exp / SCO toggles."""
    out = []
    for mode in POSITIONAL_MODES:
        for pcm_v in (False, True):
            for pcm_v_exp in (False, True):
                for sco in (False, True):
                    try:
                        out.append(AttentionOptions(mode, pcm_v, pcm_v_exp, sco, mask))
                    except OptionsError:
                        continue
    return out


@dataclass
class AttentionOutput:
    """Forward result plus everything :func:`attention_backward` needs.

    ``weights`` are the softmax probabilities (rows sum to one, masked entries
    exactly zero); ``effective_weights`` are the aggregation weights actually
    applied to ``V`` (equal to ``weights`` unless PCM-V or PCM-V-Exp is on).
    """

    output: np.ndarray
    weights: np.ndarray
    effective_weights: np.ndarray
    logits: np.ndarray
    options: AttentionOptions
    Q: np.ndarray
    K: np.ndarray
    V: np.ndarray
    coeffs: CoeffMatrix
    raw: np.ndarray
    base: np.ndarray
    factor: np.ndarray
    knorm: Optional[np.ndarray]
    agg_coeff: Optional[np.ndarray]
    allowed: np.ndarray


@dataclass
class AttentionGrads:
    """Gradients returned by :func:`attention_backward`.

    ``dcoeff`` has the shape of ``CoeffMatrix.values`` (summed over any
    leading batch axes); ``dlc3`` likewise matches ``CoeffMatrix.lc3``.
    """

    dQ: np.ndarray
    dK: np.ndarray
    dV: np.ndarray
    dcoeff: np.ndarray
    dlc3: Optional[np.ndarray] = None


def single_pair_score(q, k, coeff, lc3=None, options=None):
    """Positional-scaled logit for one (query, key) pair.

    ``coeff`` is the multiplicative coefficient, or the additive bias when the
    options select ``alibi_add``.
    """
    options = options or AttentionOptions()
    q = np.asarray(q, dtype=float)
    k = np.asarray(k, dtype=float)
    if q.shape != k.shape or q.ndim != 1:
        raise ShapeError(f"q and k must be equal-length vectors, got {q.shape} and {k.shape}")
    w = np.ones_like(q) if lc3 is None else np.asarray(lc3, dtype=float)
    raw = float(np.sum(q * k * w))
    if options.sco:
        base = raw / max(float(np.linalg.norm(k)), SCO_NORM_FLOOR)
    else:
        base = raw * options.scale_for(q.shape[0])
    return base + coeff if options.additive else base * coeff


def _allowed_mask(options, L_q, L_k, key_mask):
    allowed = np.ones((L_q, L_k), dtype=bool)
    if options.mask == "causal":
        allowed = np.arange(L_k)[None, :] <= np.arange(L_q)[:, None]
    if key_mask is not None:
        km = np.asarray(key_mask, dtype=bool)
        # (..., L_k) -> (..., 1, 1, L_k) so it broadcasts over heads and queries
        allowed = allowed & km[..., None, None, :]
    return allowed


def attention_forward(Q, K, V, coeffs, options, key_mask=None):
    """Multi-head attention forward pass.

    Parameters
    ----------
    Q, K, V : ndarray
        Per-head projections, see module docstring for shapes.
    coeffs : CoeffMatrix or None
        Positional tensor spanning ``L_q x L_k``; ``None`` means all ones.
    options : AttentionOptions
    key_mask : ndarray of bool, shape (..., L_k), optional
        ``False`` marks keys (e.g. padding) that may not be attended to.

    Returns
    -------
    AttentionOutput
    """
    Q = np.asarray(Q)
    K = np.asarray(K)
    V = np.asarray(V)
    if Q.ndim < 3 or K.ndim != Q.ndim or V.ndim != Q.ndim:
        raise ShapeError("Q, K, V must share rank >= 3 (..., H, L, d)")
    H, L_q, d_k = Q.shape[-3:]
    L_k = K.shape[-2]
    if K.shape[-1] != d_k or K.shape[-3] != H or V.shape[-3] != H or V.shape[-2] != L_k:
        raise ShapeError(f"inconsistent shapes Q{Q.shape} K{K.shape} V{V.shape}")
    if coeffs is None:
        coeffs = CoeffMatrix(np.ones((H, L_q, L_k)), "multiplicative")
    C = coeffs.values
    if C.shape[-3:] != (H, L_q, L_k):
        raise ShapeError(f"coefficients {C.shape} do not span {(H, L_q, L_k)}")
    if (coeffs.integration == "additive") != options.additive:
        raise OptionsError(
            f"coefficient integration {coeffs.integration!r} does not match mode {options.positional_mode!r}"
        )
    lc3 = coeffs.lc3
    if lc3 is None:
        raw = Q @ np.swapaxes(K, -1, -2)
    else:
        if lc3.shape[-4:] != (H, L_q, L_k, d_k):
            raise ShapeError(f"lc3 weights {lc3.shape} do not span {(H, L_q, L_k, d_k)}")
        raw = np.einsum("...hmj,...hnj,hmnj->...hmn", Q, K, lc3)

    knorm = None
    if options.sco:
        knorm = np.sqrt(np.sum(K * K, axis=-1))
        factor = (1.0 / np.maximum(knorm, SCO_NORM_FLOOR))[..., None, :]
    else:
        factor = np.asarray(options.scale_for(d_k), dtype=Q.dtype)
    base = raw * factor
    logits = base + C if options.additive else base * C

    allowed = _allowed_mask(options, L_q, L_k, key_mask)
    allowed = np.broadcast_to(allowed, logits.shape)
    if not np.all(np.any(allowed, axis=-1)):
        raise MaskError("a query row has no unmasked keys")
    a = softmax_rows(np.where(allowed, logits, -np.inf))

    agg_coeff = None
    if options.pcm_v:
        agg_coeff = C
    elif options.pcm_v_exp:
        agg_coeff = np.exp(C)
    p = a if agg_coeff is None else a * agg_coeff
    out = p @ V
    return AttentionOutput(out, a, p, logits, options, Q, K, V, coeffs, raw, base, factor, knorm, agg_coeff, allowed)


def _reduce_to(x, shape):
    """Sum ``x`` over broadcast leading axes so it has ``shape``."""
    extra = x.ndim - len(shape)
    if extra > 0:
        x = x.sum(axis=tuple(range(extra)))
    return x


def attention_backward(dout, fwd):
    """Analytic gradients of ``sum(dout * fwd.output)``.

    Includes the coefficient's path through the logit and, with PCM-V, through
    the aggregation (unless ``pcm_v_detach``); with SCO the key norm is
    differentiated as well.
    """
    opts = fwd.options
    Q, K, V = fwd.Q, fwd.K, fwd.V
    C = fwd.coeffs.values
    a = fwd.weights
    dout = np.asarray(dout)

    dP = dout @ np.swapaxes(V, -1, -2)
    dV = np.swapaxes(fwd.effective_weights, -1, -2) @ dout

    dC = 0.0
    if fwd.agg_coeff is None:
        da = dP
    else:
        da = dP * fwd.agg_coeff
        if not opts.pcm_v_detach:
            # pcm_v: d/dC (a*C) = a;  pcm_v_exp: d/dB (a*exp(B)) = a*exp(B)
            dC = dP * a * fwd.agg_coeff if opts.pcm_v_exp else dP * a

    ds = softmax_rows_backward(a, da)
    if opts.additive:
        dbase = ds
        dC = dC + ds
    else:
        dbase = ds * C
        dC = dC + ds * fwd.base

    draw = dbase * fwd.factor
    dK = np.zeros_like(K)
    if opts.sco:
        dfactor = np.sum(dbase * fwd.raw, axis=-2)
        n = fwd.knorm
        live = n > SCO_NORM_FLOOR
        safe = np.where(live, n, 1.0)
        dn = np.where(live, -dfactor / (safe * safe), 0.0)
        dK = dK + (dn / safe)[..., None] * K

    lc3 = fwd.coeffs.lc3
    dlc3 = None
    if lc3 is None:
        dQ = draw @ K
        dK = dK + np.swapaxes(draw, -1, -2) @ Q
    else:
        dQ = np.einsum("...hmn,hmnj,...hnj->...hmj", draw, lc3, K)
        dK = dK + np.einsum("...hmn,hmnj,...hmj->...hnj", draw, lc3, Q)
        dlc3 = _reduce_to(np.einsum("...hmn,...hmj,...hnj->...hmnj", draw, Q, K), lc3.shape)

    dC = np.broadcast_to(dC, fwd.logits.shape)
    return AttentionGrads(dQ, dK, dV, _reduce_to(dC, C.shape), dlc3)
