"""Multiplicative positional coefficients and their parameter gradients.

Offsets follow one convention throughout: ``offset = key_index - query_index``.
Non-negative offsets use the forward parameter set and negative offsets the
backward one, so offset 0 always reads forward parameters.

Scalar functions (:func:`agf_coeff`, :func:`lc2_amplitude`, ...) evaluate a
single head at a single offset. :class:`PositionalField` holds the parameters
of every head in one attention layer and materialises dense coefficient
tensors plus their backward pass; the model only talks to the field.
"""

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .exceptions import ConfigError, ShapeError

__all__ = [
    "POSITIONAL_MODES",
    "MULTIPLICATIVE_MODES",
    "FWD",
    "BWD",
    "DEFAULT_RADIUS",
    "DEFAULT_K",
    "AgfHeadParams",
    "Lc2Amplitudes",
    "Lc3Weights",
    "AlibiHeadParams",
    "KerpleLogParams",
    "HeadParams",
    "CoeffMatrix",
    "PositionalField",
    "direction",
    "agf_coeff",
    "lc2_amplitude",
    "lc3_weights",
    "alibi_bias",
    "kerple_to_agf",
    "kerple_agf_params",
    "alibi_slope_schedule",
    "build_coeff_matrix",
    "coeff_param_grads",
    "positional_param_count",
]

POSITIONAL_MODES = ("none", "agf", "agf_m", "agf_full", "alibi_add", "alibi_mul")
MULTIPLICATIVE_MODES = ("none", "agf", "agf_m", "agf_full", "alibi_mul")
AGF_MODES = ("agf", "agf_m", "agf_full")
ALIBI_MODES = ("alibi_add", "alibi_mul")
FWD, BWD = 0, 1
DEFAULT_RADIUS = 24.0
DEFAULT_K = 2.0


def direction(offset):
    """0 (forward) for ``offset >= 0``, 1 (backward) otherwise. Works elementwise on arrays."""
    if np.ndim(offset) == 0:
        return FWD if offset >= 0 else BWD
    return (np.asarray(offset) < 0).astype(np.intp)


@dataclass
class AgfHeadParams:
    """Field parameters of one head, stored as logs so that G and r stay positive."""

    gamma_fwd: float = 0.0
    gamma_bwd: float = 0.0
    rho_fwd: float = math.log(DEFAULT_RADIUS)
    rho_bwd: float = math.log(DEFAULT_RADIUS)
    k_exp: float = DEFAULT_K

    n_trainable = 4

    def __post_init__(self):
        if not self.k_exp > 0:
            raise ConfigError(f"k_exp must be positive, got {self.k_exp}")

    @classmethod
    def from_field(cls, G_fwd=1.0, r_fwd=DEFAULT_RADIUS, G_bwd=None, r_bwd=None, k_exp=DEFAULT_K):
        """Build from positive strengths ``G`` and radii ``r``; backward defaults to forward."""
        G_bwd = G_fwd if G_bwd is None else G_bwd
        r_bwd = r_fwd if r_bwd is None else r_bwd
        for name, v in (("G_fwd", G_fwd), ("G_bwd", G_bwd), ("r_fwd", r_fwd), ("r_bwd", r_bwd)):
            if not v > 0:
                raise ConfigError(f"{name} must be positive, got {v}")
        return cls(math.log(G_fwd), math.log(G_bwd), math.log(r_fwd), math.log(r_bwd), k_exp)

    def G(self, dir_):
        return math.exp(self.gamma_fwd if dir_ == FWD else self.gamma_bwd)

    def r(self, dir_):
        return math.exp(self.rho_fwd if dir_ == FWD else self.rho_bwd)


@dataclass
class Lc2Amplitudes:
    """Per-offset amplitude table of shape ``(2, seq_len)``, initialised to 1."""

    amp: np.ndarray

    @classmethod
    def initial(cls, seq_len):
        return cls(np.ones((2, seq_len)))

    @property
    def seq_len(self):
        return self.amp.shape[1]


@dataclass
class Lc3Weights:
    """Per-offset, per-dimension weights of shape ``(2, seq_len, d_k)``, initialised to 1."""

    w: np.ndarray

    @classmethod
    def initial(cls, seq_len, d_k):
        return cls(np.ones((2, seq_len, d_k)))

    @property
    def seq_len(self):
        return self.w.shape[1]


@dataclass
class AlibiHeadParams:
    """Learnable bidirectional linear-bias slopes for one head.

    ``kernel="log"`` swaps the linear distance for ``log(1 + log_scale*|d|)``
    and adds a constant ``offset`` (the composite log kernel). The extra
    quantities are fixed, not trained.
    """

    slope_fwd: float
    slope_bwd: float
    integration: str = "additive"
    kernel: str = "linear"
    offset_fwd: float = 0.0
    offset_bwd: float = 0.0
    log_scale_fwd: float = 1.0
    log_scale_bwd: float = 1.0

    n_trainable = 2

    def __post_init__(self):
        if self.integration not in ("additive", "multiplicative"):
            raise ConfigError(f"unknown integration {self.integration!r}")
        if self.kernel not in ("linear", "log"):
            raise ConfigError(f"unknown bias kernel {self.kernel!r}")


@dataclass(frozen=True)
class KerpleLogParams:
    """Composite log-kernel bias ``c - r1*log(1 + r2*|m-n|)``."""

    c: float
    r1: float
    r2: float

    def __post_init__(self):
        if not (self.r1 > 0 and self.r2 > 0):
            raise ConfigError(f"r1 and r2 must be positive, got r1={self.r1}, r2={self.r2}")


@dataclass
class HeadParams:
    """Everything one head contributes to the positional coefficient."""

    agf: Optional[AgfHeadParams] = None
    lc2: Optional[Lc2Amplitudes] = None
    lc3: Optional[Lc3Weights] = None
    alibi: Optional[AlibiHeadParams] = None


def agf_coeff(p, offset):
    """Gravitational-field coefficient ``G * (1 + |offset|/r)**(-k)`` for the offset's direction."""
    d = direction(offset)
    return p.G(d) * (1.0 + abs(offset) / p.r(d)) ** (-p.k_exp)


def _clamp(offset, seq_len):
    return min(abs(offset), seq_len - 1)


def lc2_amplitude(a, offset):
    """Amplitude at ``|offset|``, clamped to the last table entry."""
    return float(a.amp[direction(offset), _clamp(offset, a.seq_len)])


def lc3_weights(w, offset):
    """Per-dimension weight vector at ``|offset|`` (clamped)."""
    return w.w[direction(offset), _clamp(offset, w.seq_len)].copy()


def alibi_bias(p, offset):
    """Additive logit bias; multiplicative integration uses ``exp`` of this value."""
    d = direction(offset)
    slope = p.slope_fwd if d == FWD else p.slope_bwd
    if p.kernel == "linear":
        return -slope * abs(offset)
    c = p.offset_fwd if d == FWD else p.offset_bwd
    scale = p.log_scale_fwd if d == FWD else p.log_scale_bwd
    return c - slope * math.log1p(scale * abs(offset))


def kerple_to_agf(p):
    """Coefficient function ``d -> exp(c) * (1 + r2*d)**(-r1)`` equivalent to the exponentiated log kernel.

    ``exp(c)`` plays the role of the field strength G, ``r1`` the exponent k and
    ``r2`` the reciprocal radius.
    """

    def coeff(d):
        return np.exp(p.c) * (1.0 + p.r2 * np.abs(d)) ** (-p.r1)

    return coeff


def kerple_agf_params(p):
    """:class:`AgfHeadParams` (same parameters in both directions) equal to ``kerple_to_agf(p)``."""
    return AgfHeadParams(p.c, p.c, -math.log(p.r2), -math.log(p.r2), p.r1)


def alibi_slope_schedule(n_heads):
    """Geometric ALiBi slopes ``2**(-8h/H)`` for heads ``h = 1..H``."""
    return np.array([2.0 ** (-8.0 * h / n_heads) for h in range(1, n_heads + 1)])


def positional_param_count(mode, n_heads, seq_len, d_k):
    """Closed-form number of trainable positional parameters in one attention layer."""
    per_head = {
        "none": 0,
        "agf": 4,
        "agf_m": 4 + 2 * seq_len,
        "agf_full": 4 + 2 * seq_len + 2 * seq_len * d_k,
        "alibi_add": 2,
        "alibi_mul": 2,
    }
    if mode not in per_head:
        raise ConfigError(f"unknown positional mode {mode!r}")
    return n_heads * per_head[mode]


@dataclass
class CoeffMatrix:
    """Dense per-head positional tensor of shape ``(H, L_q, L_k)``.

    For ``integration == "multiplicative"`` the values are positive factors on
    the scaled logit; for ``"additive"`` they are logit biases. ``lc3``
    optionally carries per-dimension weights of shape ``(H, L_q, L_k, d_k)``
    that enter the dot product itself.
    """

    values: np.ndarray
    integration: str = "multiplicative"
    lc3: Optional[np.ndarray] = None
    mode: str = "none"

    @property
    def shape(self):
        return self.values.shape

    def is_toeplitz(self, atol=0.0):
        """True if every head's matrix depends only on ``n - m``."""
        v = self.values
        ok = np.all(np.abs(v[:, 1:, 1:] - v[:, :-1, :-1]) <= atol)
        if self.lc3 is not None:
            ok = ok and np.all(np.abs(self.lc3[:, 1:, 1:] - self.lc3[:, :-1, :-1]) <= atol)
        return bool(ok)


@dataclass
class PositionalField:
    """Positional parameters of all heads in one attention layer.

    Trainable arrays (present depending on ``mode``): ``gamma`` and ``rho``
    with shape ``(H, 2)``; ``amp`` with shape ``(H, 2, seq_len)``; ``w`` with
    shape ``(H, 2, seq_len, d_k)``; ``slope`` with shape ``(H, 2)``. The
    second axis is the direction (forward, backward).
    """

    mode: str
    n_heads: int
    seq_len: int
    d_k: int
    k_exp: float = DEFAULT_K
    kernel: str = "linear"
    params: dict = field(default_factory=dict)
    buffers: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in POSITIONAL_MODES:
            raise ConfigError(f"unknown positional mode {self.mode!r}; expected one of {POSITIONAL_MODES}")
        if self.n_heads < 1 or self.seq_len < 1 or self.d_k < 1:
            raise ConfigError("n_heads, seq_len and d_k must be positive")
        if not self.k_exp > 0:
            raise ConfigError("k_exp must be positive")
        if not self.params:
            self.reset()

    def reset(self):
        """Set every parameter to its initial value."""
        H, S, dk = self.n_heads, self.seq_len, self.d_k
        p = {}
        if self.mode in AGF_MODES:
            p["gamma"] = np.zeros((H, 2))
            p["rho"] = np.full((H, 2), math.log(DEFAULT_RADIUS))
        if self.mode in ("agf_m", "agf_full"):
            p["amp"] = np.ones((H, 2, S))
        if self.mode == "agf_full":
            p["w"] = np.ones((H, 2, S, dk))
        if self.mode in ALIBI_MODES:
            p["slope"] = np.repeat(alibi_slope_schedule(H)[:, None], 2, axis=1)
            self.buffers = {"bias_offset": np.zeros((H, 2)), "log_scale": np.ones((H, 2))}
        self.params = p

    @property
    def integration(self):
        return "additive" if self.mode == "alibi_add" else "multiplicative"

    @property
    def n_params(self):
        return int(sum(v.size for v in self.params.values()))

    @classmethod
    def from_heads(cls, mode, heads, seq_len=None, d_k=None):
        """Assemble a field from a sequence of per-head :class:`HeadParams` (or bare head records)."""
        heads = [h if isinstance(h, HeadParams) else _wrap_head(h) for h in heads]
        if not heads:
            raise ConfigError("at least one head is required")
        H = len(heads)
        first = heads[0]
        if seq_len is None:
            seq_len = first.lc2.seq_len if first.lc2 is not None else (
                first.lc3.seq_len if first.lc3 is not None else 1)
        if d_k is None:
            d_k = first.lc3.w.shape[2] if first.lc3 is not None else 1
        k_exp = first.agf.k_exp if first.agf is not None else DEFAULT_K
        if any(h.agf is not None and h.agf.k_exp != k_exp for h in heads):
            raise ConfigError("all heads of a field share one k_exp")
        kernel = first.alibi.kernel if first.alibi is not None else "linear"
        f = cls(mode, H, seq_len, d_k, k_exp=k_exp, kernel=kernel)
        for i, h in enumerate(heads):
            if mode in AGF_MODES:
                if h.agf is None:
                    raise ConfigError(f"head {i}: mode {mode!r} needs AgfHeadParams")
                f.params["gamma"][i] = (h.agf.gamma_fwd, h.agf.gamma_bwd)
                f.params["rho"][i] = (h.agf.rho_fwd, h.agf.rho_bwd)
            if mode in ("agf_m", "agf_full") and h.lc2 is not None:
                f.params["amp"][i] = h.lc2.amp
            if mode == "agf_full" and h.lc3 is not None:
                f.params["w"][i] = h.lc3.w
            if mode in ALIBI_MODES:
                if h.alibi is None:
                    raise ConfigError(f"head {i}: mode {mode!r} needs AlibiHeadParams")
                a = h.alibi
                f.params["slope"][i] = (a.slope_fwd, a.slope_bwd)
                f.buffers["bias_offset"][i] = (a.offset_fwd, a.offset_bwd)
                f.buffers["log_scale"][i] = (a.log_scale_fwd, a.log_scale_bwd)
        return f

    def head(self, h):
        """Per-head parameter records for head ``h``."""
        p = self.params
        out = HeadParams()
        if "gamma" in p:
            out.agf = AgfHeadParams(p["gamma"][h, 0], p["gamma"][h, 1], p["rho"][h, 0], p["rho"][h, 1], self.k_exp)
        if "amp" in p:
            out.lc2 = Lc2Amplitudes(p["amp"][h].copy())
        if "w" in p:
            out.lc3 = Lc3Weights(p["w"][h].copy())
        if "slope" in p:
            b = self.buffers
            out.alibi = AlibiHeadParams(
                p["slope"][h, 0], p["slope"][h, 1],
                "additive" if self.mode == "alibi_add" else "multiplicative",
                self.kernel, b["bias_offset"][h, 0], b["bias_offset"][h, 1],
                b["log_scale"][h, 0], b["log_scale"][h, 1],
            )
        return out

    # -- dense evaluation -------------------------------------------------

    @staticmethod
    def offsets(L_q, L_k, q_start=0, k_start=0):
        if L_q < 1 or L_k < 1:
            raise ShapeError(f"coefficient matrix axes must be non-empty, got {L_q}x{L_k}")
        return (np.arange(L_k)[None, :] + k_start) - (np.arange(L_q)[:, None] + q_start)

    def _gather(self, arr, dirs):
        # arr (H, 2) -> (H, L_q, L_k)
        return arr[:, dirs]

    def _agf_parts(self, D):
        dirs = direction(D)
        dist = np.abs(D).astype(float)
        G = np.exp(self._gather(self.params["gamma"], dirs))
        r = np.exp(self._gather(self.params["rho"], dirs))
        base = 1.0 + dist / r
        coeff = G * base ** (-self.k_exp)
        return dirs, dist, r, base, coeff

    def _bias_parts(self, D):
        dirs = direction(D)
        dist = np.abs(D).astype(float)
        slope = self._gather(self.params["slope"], dirs)
        if self.kernel == "linear":
            phi = np.broadcast_to(dist, slope.shape)
            return dirs, phi, -slope * phi
        c = self._gather(self.buffers["bias_offset"], dirs)
        phi = np.log1p(self._gather(self.buffers["log_scale"], dirs) * dist)
        return dirs, phi, c - slope * phi

    def coeff_matrix(self, L_q, L_k, q_start=0, k_start=0):
        """Materialise the :class:`CoeffMatrix` for an ``L_q x L_k`` block."""
        D = self.offsets(L_q, L_k, q_start, k_start)
        H = self.n_heads
        lc3 = None
        if self.mode == "none":
            values = np.ones((H, L_q, L_k))
        elif self.mode in AGF_MODES:
            dirs, dist, _, _, values = self._agf_parts(D)
            if self.mode in ("agf_m", "agf_full"):
                idx = np.minimum(np.abs(D), self.seq_len - 1)
                values = values * self.params["amp"][:, dirs, idx]
            if self.mode == "agf_full":
                idx = np.minimum(np.abs(D), self.seq_len - 1)
                lc3 = self.params["w"][:, dirs, idx, :]
        else:
            _, _, bias = self._bias_parts(D)
            values = bias if self.mode == "alibi_add" else np.exp(bias)
        return CoeffMatrix(values, self.integration, lc3, self.mode)

    def backward(self, L_q, L_k, dvalues, dlc3=None, q_start=0, k_start=0):
        """Chain gradients w.r.t. the coefficient tensor back onto the parameters.

        Parameters
        ----------
        dvalues : ndarray, shape (H, L_q, L_k)
            Gradient w.r.t. ``CoeffMatrix.values``.
        dlc3 : ndarray, shape (H, L_q, L_k, d_k), optional
            Gradient w.r.t. ``CoeffMatrix.lc3``.

        Returns
        -------
        dict
            One gradient array per entry of :attr:`params`.
        """
        D = self.offsets(L_q, L_k, q_start, k_start)
        H = self.n_heads
        grads = {}
        if self.mode == "none":
            return grads
        dirs = direction(D)
        head_idx = np.arange(H)[:, None, None]
        dir_idx = np.broadcast_to(dirs, (H,) + D.shape)
        head_b = np.broadcast_to(head_idx, (H,) + D.shape)

        def scatter2(vals):
            g = np.zeros((H, 2))
            np.add.at(g, (head_b, dir_idx), vals)
            return g

        if self.mode in AGF_MODES:
            _, dist, r, base, coeff = self._agf_parts(D)
            dcoeff = dvalues
            if self.mode in ("agf_m", "agf_full"):
                idx = np.minimum(np.abs(D), self.seq_len - 1)
                amp = self.params["amp"][:, dirs, idx]
                g_amp = np.zeros_like(self.params["amp"])
                idx_b = np.broadcast_to(idx, (H,) + D.shape)
                np.add.at(g_amp, (head_b, dir_idx, idx_b), dvalues * coeff)
                grads["amp"] = g_amp
                dcoeff = dvalues * amp
            grads["gamma"] = scatter2(dcoeff * coeff)
            # d coeff / d rho = coeff * k * (d/r) / (1 + d/r)
            grads["rho"] = scatter2(dcoeff * coeff * self.k_exp * (dist / r) / base)
            if self.mode == "agf_full":
                g_w = np.zeros_like(self.params["w"])
                if dlc3 is not None:
                    idx = np.minimum(np.abs(D), self.seq_len - 1)
                    idx_b = np.broadcast_to(idx, (H,) + D.shape)
                    np.add.at(g_w, (head_b, dir_idx, idx_b), dlc3)
                grads["w"] = g_w
        else:
            _, phi, bias = self._bias_parts(D)
            dbias = dvalues if self.mode == "alibi_add" else dvalues * np.exp(bias)
            grads["slope"] = scatter2(-dbias * phi)
        return grads

    # -- serialisation -----------------------------------------------------

    def to_dict(self):
        return {
            "mode": self.mode,
            "n_heads": self.n_heads,
            "seq_len": self.seq_len,
            "d_k": self.d_k,
            "k_exp": self.k_exp,
            "kernel": self.kernel,
            "params": {k: v.tolist() for k, v in self.params.items()},
            "buffers": {k: v.tolist() for k, v in self.buffers.items()},
        }

    @classmethod
    def from_dict(cls, d):
        f = cls(d["mode"], d["n_heads"], d["seq_len"], d["d_k"], d.get("k_exp", DEFAULT_K), d.get("kernel", "linear"))
        for k, v in d.get("params", {}).items():
            arr = np.asarray(v, dtype=float)
            if k not in f.params or f.params[k].shape != arr.shape:
                raise ConfigError(f"checkpoint parameter {k!r} does not match mode {f.mode!r}")
            f.params[k] = arr
        for k, v in d.get("buffers", {}).items():
            f.buffers[k] = np.asarray(v, dtype=float)
        return f


def _wrap_head(h):
    if isinstance(h, AgfHeadParams):
        return HeadParams(agf=h)
    if isinstance(h, AlibiHeadParams):
        return HeadParams(alibi=h)
    if isinstance(h, tuple):
        out = HeadParams()
        for part in h:
            if isinstance(part, AgfHeadParams):
                out.agf = part
            elif isinstance(part, Lc2Amplitudes):
                out.lc2 = part
            elif isinstance(part, Lc3Weights):
                out.lc3 = part
            elif isinstance(part, AlibiHeadParams):
                out.alibi = part
        return out
    raise ConfigError(f"cannot interpret head parameters of type {type(h).__name__}")


def build_coeff_matrix(mode, params, L_q, L_k):
    """Dense :class:`CoeffMatrix` for ``mode``.

    ``params`` is either a :class:`PositionalField` or a sequence of per-head
    records (:class:`HeadParams`, :class:`AgfHeadParams`,
    :class:`AlibiHeadParams` or tuples of the AGF/LC parts).
    """
    if L_q < 1 or L_k < 1:
        raise ShapeError(f"coefficient matrix axes must be non-empty, got {L_q}x{L_k}")
    if isinstance(params, PositionalField):
        if params.mode != mode:
            raise ConfigError(f"field mode {params.mode!r} does not match requested {mode!r}")
        return params.coeff_matrix(L_q, L_k)
    return PositionalField.from_heads(mode, params).coeff_matrix(L_q, L_k)


def coeff_param_grads(mode, params, offset, upstream, upstream_lc3=None):
    """Gradients of ``upstream * coeff(offset)`` w.r.t. one head's parameters.

    ``params`` is a per-head record accepted by :func:`build_coeff_matrix`.
    ``upstream_lc3`` (length ``d_k``) is the upstream gradient for the LC3
    weight vector at this offset. Returns a dict keyed like
    :attr:`PositionalField.params`, each array keeping its head axis of size 1.
    """
    if not np.isfinite(upstream):
        raise ValueError("upstream gradient must be finite")
    f = params if isinstance(params, PositionalField) else PositionalField.from_heads(mode, [params])
    dv = np.full((f.n_heads, 1, 1), float(upstream))
    dl = None
    if upstream_lc3 is not None:
        dl = np.broadcast_to(np.asarray(upstream_lc3, dtype=float), (f.n_heads, 1, 1, f.d_k))
    return f.backward(1, 1, dv, dl, q_start=0, k_start=int(offset))
