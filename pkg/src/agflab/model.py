"""Desk-scale encoder-decoder transformer with hand-written backward passes.

Blocks are pre-LayerNorm. Every self-attention layer owns a
:class:`~agflab.poscoeff.PositionalField`; cross-attention carries no
positional coefficient unless ``cross_positional`` is set, in which case it
gets its own signed-offset AGF field.
"""

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import numpy as np

from .attention import AttentionOptions, attention_backward, attention_forward
from .exceptions import ConfigError, ShapeError, TrainingError
from .numerics import layer_norm, layer_norm_backward
from .poscoeff import CoeffMatrix, PositionalField, positional_param_count
from .tasks import BOS, PAD

__all__ = [
    "ModelConfig",
    "OptimizerConfig",
    "Batch",
    "TrainingTrace",
    "ShiftReport",
    "Seq2SeqModel",
    "Adam",
    "sinusoidal_pe",
    "sinusoidal_table",
    "make_batch",
    "build_model",
    "train",
    "evaluate",
    "shift_equivariance_check",
]

LN_EPS = 1e-5


@dataclass
class ModelConfig:
    vocab_size: int = 64
    layers: int = 2
    heads: int = 4
    d_model: int = 64
    d_ff: int = 128
    seq_len: int = 64
    positional_mode: str = "agf"
    pcm_v: bool = False
    pcm_v_exp: bool = False
    sco: bool = False
    pcm_v_detach: bool = False
    use_abs_pe: bool = False
    cross_positional: bool = False
    k_exp: float = 2.0
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        for name in ("vocab_size", "layers", "heads", "d_model", "d_ff", "seq_len"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.d_model % self.heads:
            raise ConfigError(f"d_model={self.d_model} is not divisible by heads={self.heads}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError("dtype must be 'float32' or 'float64'")
        # validates mode/flag combinations
        self.attention_options("encoder")

    @property
    def d_k(self):
        return self.d_model // self.heads

    def attention_options(self, kind):
        """Options for ``"encoder"``, ``"decoder"`` (causal) or ``"cross"`` attention."""
        if kind == "cross":
            mode = "agf" if self.cross_positional else "none"
            return AttentionOptions(mode, sco=self.sco)
        return AttentionOptions(
            self.positional_mode,
            pcm_v=self.pcm_v,
            pcm_v_exp=self.pcm_v_exp,
            sco=self.sco,
            mask="causal" if kind == "decoder" else "none",
            pcm_v_detach=self.pcm_v_detach,
        )

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class OptimizerConfig:
    """Adam settings plus the batching used by :func:`train`."""

    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-9
    batch_size: int = 32
    clip_norm: Optional[float] = None
    max_steps: Optional[int] = None

    def __post_init__(self):
        if self.lr < 0 or self.batch_size < 1:
            raise ConfigError("lr must be >= 0 and batch_size >= 1")


@dataclass
class Batch:
    src: np.ndarray
    dec_in: np.ndarray
    labels: np.ndarray

    @property
    def src_mask(self):
        return self.src != PAD

    @property
    def tgt_mask(self):
        return self.labels != PAD


@dataclass
class TrainingTrace:
    """Per-epoch validation accuracy (percent), cumulative step counts and mean training loss."""

    epoch_scores: list = field(default_factory=list)
    steps: list = field(default_factory=list)
    losses: list = field(default_factory=list)

    def to_csv(self):
        rows = ["epoch,step,train_loss,val_accuracy"]
        for i, (s, st, lo) in enumerate(zip(self.epoch_scores, self.steps, self.losses), 1):
            rows.append(f"{i},{st},{lo!r},{s!r}")
        return "\n".join(rows) + "\n"

    def first_epoch_reaching(self, threshold):
        """1-based epoch index where the score first reaches ``threshold``, or None."""
        for i, s in enumerate(self.epoch_scores, 1):
            if s >= threshold:
                return i
        return None


def sinusoidal_pe(position, d_model):
    """Interleaved encoding: ``sin`` at even indices, ``cos`` at odd ones."""
    if position < 0:
        raise ValueError("position must be non-negative")
    i = np.arange(d_model)
    angle = position / np.power(10000.0, (i - i % 2) / d_model)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


def sinusoidal_table(length, d_model):
    return np.stack([sinusoidal_pe(p, d_model) for p in range(length)]) if length else np.zeros((0, d_model))


def make_batch(pairs):
    """Pad a list of ``(source, target)`` pairs; decoder input is the target shifted right behind BOS."""
    if not pairs:
        raise ShapeError("empty batch")
    B = len(pairs)
    Ls = max(len(s) for s, _ in pairs)
    Lt = max(len(t) for _, t in pairs)
    if Ls == 0 or Lt == 0:
        raise ShapeError("sequences must be non-empty")
    src = np.full((B, Ls), PAD, dtype=np.int64)
    dec_in = np.full((B, Lt), PAD, dtype=np.int64)
    labels = np.full((B, Lt), PAD, dtype=np.int64)
    for b, (s, t) in enumerate(pairs):
        src[b, : len(s)] = s
        labels[b, : len(t)] = t
        dec_in[b, 0] = BOS
        dec_in[b, 1 : len(t)] = t[:-1]
    return Batch(src, dec_in, labels)


def _xavier(rng, fan_in, fan_out):
    lim = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, (fan_in, fan_out))


def _linear_bwd(x, W, dy, grads, wname, bname):
    din, dout = W.shape
    grads[wname] = grads.get(wname, 0) + x.reshape(-1, din).T @ dy.reshape(-1, dout)
    grads[bname] = grads.get(bname, 0) + dy.reshape(-1, dout).sum(axis=0)
    return dy @ W.T


def _add(grads, name, g):
    grads[name] = grads[name] + g if name in grads else g


class Seq2SeqModel:
    """Encoder-decoder transformer whose parameters live in plain numpy arrays.

    ``params`` maps names to dense weights; ``fields`` maps attention-layer
    names to their positional fields. :meth:`named_parameters` exposes both
    under one namespace (field arrays as ``"<field>.<param>"``).
    """

    def __init__(self, cfg):
        self.cfg = cfg
        self.dtype = np.dtype(cfg.dtype)
        rng = np.random.default_rng(cfg.seed)
        d, V, F = cfg.d_model, cfg.vocab_size, cfg.d_ff
        p = {}
        p["src_emb"] = rng.normal(0.0, d**-0.5, (V, d))
        p["tgt_emb"] = rng.normal(0.0, d**-0.5, (V, d))

        def ln(name):
            p[name + ".g"] = np.ones(d)
            p[name + ".b"] = np.zeros(d)

        def attn(name):
            for w in ("q", "k", "v", "o"):
                p[f"{name}.w{w}"] = _xavier(rng, d, d)
                p[f"{name}.b{w}"] = np.zeros(d)

        def ffn(name):
            p[name + ".w1"] = _xavier(rng, d, F)
            p[name + ".b1"] = np.zeros(F)
            p[name + ".w2"] = _xavier(rng, F, d)
            p[name + ".b2"] = np.zeros(d)

        self.fields = {}
        for i in range(cfg.layers):
            ln(f"enc{i}.ln1")
            attn(f"enc{i}.attn")
            ln(f"enc{i}.ln2")
            ffn(f"enc{i}.ff")
            self.fields[f"enc{i}.attn.pos"] = self._field(cfg.positional_mode)
        for i in range(cfg.layers):
            ln(f"dec{i}.ln1")
            attn(f"dec{i}.self")
            ln(f"dec{i}.ln2")
            attn(f"dec{i}.cross")
            ln(f"dec{i}.ln3")
            ffn(f"dec{i}.ff")
            self.fields[f"dec{i}.self.pos"] = self._field(cfg.positional_mode)
            if cfg.cross_positional:
                self.fields[f"dec{i}.cross.pos"] = self._field("agf")
        ln("enc_ln")
        ln("dec_ln")
        p["out.w"] = _xavier(rng, d, V)
        p["out.b"] = np.zeros(V)
        self.params = {k: v.astype(self.dtype) for k, v in p.items()}
        self.opts = {k: cfg.attention_options(k) for k in ("encoder", "decoder", "cross")}

    def _field(self, mode):
        c = self.cfg
        return PositionalField(mode, c.heads, c.seq_len, c.d_k, k_exp=c.k_exp)

    # -- bookkeeping -------------------------------------------------------

    def named_parameters(self):
        yield from self.params.items()
        for fname, f in self.fields.items():
            for pname, arr in f.params.items():
                yield f"{fname}.{pname}", arr

    def positional_param_counts(self):
        """Number of trainable positional parameters per attention layer."""
        return {name: f.n_params for name, f in self.fields.items()}

    def n_parameters(self):
        return int(sum(a.size for _, a in self.named_parameters()))

    def to_dict(self):
        return {
            "config": asdict(self.cfg),
            "params": {k: v.tolist() for k, v in self.params.items()},
            "fields": {k: f.to_dict() for k, f in self.fields.items()},
        }

    @classmethod
    def from_dict(cls, d):
        model = cls(ModelConfig.from_dict(d["config"]))
        for k, v in d["params"].items():
            arr = np.asarray(v, dtype=model.dtype)
            if k not in model.params or model.params[k].shape != arr.shape:
                raise ConfigError(f"checkpoint weight {k!r} does not match the configuration")
            model.params[k] = arr
        for k, fd in d.get("fields", {}).items():
            if k not in model.fields:
                raise ConfigError(f"checkpoint field {k!r} does not match the configuration")
            model.fields[k] = PositionalField.from_dict(fd)
        return model

    def astype(self, dtype):
        """Copy of the model with dense weights cast to ``dtype``."""
        cfg = ModelConfig(**{**asdict(self.cfg), "dtype": np.dtype(dtype).name})
        out = Seq2SeqModel.from_dict({**self.to_dict(), "config": asdict(cfg)})
        return out

    # -- building blocks ---------------------------------------------------

    def _coeffs(self, fname, L_q, L_k):
        f = self.fields.get(fname)
        if f is None:
            return None
        c = f.coeff_matrix(L_q, L_k)
        lc3 = None if c.lc3 is None else c.lc3.astype(self.dtype)
        return CoeffMatrix(c.values.astype(self.dtype), c.integration, lc3, c.mode)

    def _mha_fwd(self, name, fname, xq, xkv, key_mask, opts):
        p = self.params
        B, L_q, d = xq.shape
        L_k = xkv.shape[1]
        H, dk = self.cfg.heads, self.cfg.d_k

        def split(x, L):
            return x.reshape(B, L, H, dk).transpose(0, 2, 1, 3)

        q = split(xq @ p[name + ".wq"] + p[name + ".bq"], L_q)
        k = split(xkv @ p[name + ".wk"] + p[name + ".bk"], L_k)
        v = split(xkv @ p[name + ".wv"] + p[name + ".bv"], L_k)
        att = attention_forward(q, k, v, self._coeffs(fname, L_q, L_k), opts, key_mask)
        o = att.output.transpose(0, 2, 1, 3).reshape(B, L_q, d)
        y = o @ p[name + ".wo"] + p[name + ".bo"]
        return y, (name, fname, xq, xkv, o, att)

    def _mha_bwd(self, dy, cache, grads):
        name, fname, xq, xkv, o, att = cache
        p = self.params
        B, L_q, d = xq.shape
        L_k = xkv.shape[1]
        H, dk = self.cfg.heads, self.cfg.d_k
        do = _linear_bwd(o, p[name + ".wo"], dy, grads, name + ".wo", name + ".bo")
        g = attention_backward(do.reshape(B, L_q, H, dk).transpose(0, 2, 1, 3), att)

        def merge(t, L):
            return t.transpose(0, 2, 1, 3).reshape(B, L, d)

        dxq = _linear_bwd(xq, p[name + ".wq"], merge(g.dQ, L_q), grads, name + ".wq", name + ".bq")
        dxkv = _linear_bwd(xkv, p[name + ".wk"], merge(g.dK, L_k), grads, name + ".wk", name + ".bk")
        dxkv = dxkv + _linear_bwd(xkv, p[name + ".wv"], merge(g.dV, L_k), grads, name + ".wv", name + ".bv")
        f = self.fields.get(fname)
        if f is not None:
            dlc3 = None if g.dlc3 is None else g.dlc3.astype(np.float64)
            for pname, gp in f.backward(L_q, L_k, g.dcoeff.astype(np.float64), dlc3).items():
                _add(grads, f"{fname}.{pname}", gp)
        return dxq, dxkv

    def _ln_fwd(self, name, x):
        return layer_norm(x, self.params[name + ".g"], self.params[name + ".b"], LN_EPS), (name, x)

    def _ln_bwd(self, dy, cache, grads):
        name, x = cache
        dx, dg, db = layer_norm_backward(x, self.params[name + ".g"], dy, LN_EPS)
        _add(grads, name + ".g", dg)
        _add(grads, name + ".b", db)
        return dx

    def _ffn_fwd(self, name, x):
        p = self.params
        pre = x @ p[name + ".w1"] + p[name + ".b1"]
        h = np.maximum(pre, 0.0)
        return h @ p[name + ".w2"] + p[name + ".b2"], (name, x, pre, h)

    def _ffn_bwd(self, dy, cache, grads):
        name, x, pre, h = cache
        p = self.params
        dh = _linear_bwd(h, p[name + ".w2"], dy, grads, name + ".w2", name + ".b2")
        dh = dh * (pre > 0)
        return _linear_bwd(x, p[name + ".w1"], dh, grads, name + ".w1", name + ".b1")

    def _embed(self, table, tokens):
        d = self.cfg.d_model
        x = self.params[table][tokens] * math.sqrt(d)
        if self.cfg.use_abs_pe:
            x = x + sinusoidal_table(tokens.shape[1], d).astype(self.dtype)
        return x

    # -- full passes ---------------------------------------------------------

    def encode(self, src, src_mask=None, keep=False):
        """Encoder output for token array ``src`` of shape (B, L)."""
        src_mask = (src != PAD) if src_mask is None else src_mask
        caches = []
        x = self._embed("src_emb", src)
        for i in range(self.cfg.layers):
            a, c1 = self._ln_fwd(f"enc{i}.ln1", x)
            y, c2 = self._mha_fwd(f"enc{i}.attn", f"enc{i}.attn.pos", a, a, src_mask, self.opts["encoder"])
            x = x + y
            a, c3 = self._ln_fwd(f"enc{i}.ln2", x)
            y, c4 = self._ffn_fwd(f"enc{i}.ff", a)
            x = x + y
            caches.append((c1, c2, c3, c4))
        out, cf = self._ln_fwd("enc_ln", x)
        return out, (caches, cf) if keep else None

    def decode(self, dec_in, enc, src_mask, tgt_mask=None, keep=False):
        tgt_mask = (dec_in != PAD) if tgt_mask is None else tgt_mask
        caches = []
        x = self._embed("tgt_emb", dec_in)
        for i in range(self.cfg.layers):
            a, c1 = self._ln_fwd(f"dec{i}.ln1", x)
            y, c2 = self._mha_fwd(f"dec{i}.self", f"dec{i}.self.pos", a, a, tgt_mask, self.opts["decoder"])
            x = x + y
            a, c3 = self._ln_fwd(f"dec{i}.ln2", x)
            y, c4 = self._mha_fwd(f"dec{i}.cross", f"dec{i}.cross.pos", a, enc, src_mask, self.opts["cross"])
            x = x + y
            a, c5 = self._ln_fwd(f"dec{i}.ln3", x)
            y, c6 = self._ffn_fwd(f"dec{i}.ff", a)
            x = x + y
            caches.append((c1, c2, c3, c4, c5, c6))
        h, cf = self._ln_fwd("dec_ln", x)
        logits = h @ self.params["out.w"] + self.params["out.b"]
        return logits, (caches, cf, h) if keep else None

    def forward_logits(self, batch):
        """Teacher-forced logits, shape (B, L_t, vocab)."""
        enc, _ = self.encode(batch.src, batch.src_mask)
        tgt_mask = batch.dec_in != PAD
        tgt_mask[:, 0] = True
        logits, _ = self.decode(batch.dec_in, enc, batch.src_mask, tgt_mask)
        return logits

    def loss_and_grads(self, batch, norm=None):
        """Summed token cross-entropy divided by ``norm`` (default: token count) and its gradients."""
        src_mask = batch.src_mask
        tgt_mask = batch.dec_in != PAD
        tgt_mask[:, 0] = True
        enc, ecache = self.encode(batch.src, src_mask, keep=True)
        logits, dcache = self.decode(batch.dec_in, enc, src_mask, tgt_mask, keep=True)
        valid = batch.labels != PAD
        norm = float(valid.sum()) if norm is None else float(norm)
        shifted = logits - logits.max(axis=-1, keepdims=True)
        lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
        logp = shifted - lse
        picked = np.take_along_axis(logp, batch.labels[..., None], axis=-1)[..., 0]
        loss = -float(np.sum(picked * valid)) / norm
        dlogits = np.exp(logp)
        np.put_along_axis(dlogits, batch.labels[..., None], np.take_along_axis(dlogits, batch.labels[..., None], -1) - 1.0, -1)
        dlogits = dlogits * (valid[..., None] / norm)
        dlogits = dlogits.astype(self.dtype)
        grads = self._backward(dlogits, batch, ecache, dcache)
        return loss, grads

    def _backward(self, dlogits, batch, ecache, dcache):
        grads = {}
        caches, cf, h = dcache
        dh = _linear_bwd(h, self.params["out.w"], dlogits, grads, "out.w", "out.b")
        dx = self._ln_bwd(dh, cf, grads)
        denc = 0.0
        for i in reversed(range(self.cfg.layers)):
            c1, c2, c3, c4, c5, c6 = caches[i]
            dx = dx + self._ln_bwd(self._ffn_bwd(dx, c6, grads), c5, grads)
            dq, dkv = self._mha_bwd(dx, c4, grads)
            denc = denc + dkv
            dx = dx + self._ln_bwd(dq, c3, grads)
            dq, dkv = self._mha_bwd(dx, c2, grads)
            dx = dx + self._ln_bwd(dq + dkv, c1, grads)
        self._embed_bwd("tgt_emb", batch.dec_in, dx, grads)

        caches, cf = ecache
        dx = self._ln_bwd(denc, cf, grads)
        for i in reversed(range(self.cfg.layers)):
            c1, c2, c3, c4 = caches[i]
            dx = dx + self._ln_bwd(self._ffn_bwd(dx, c4, grads), c3, grads)
            dq, dkv = self._mha_bwd(dx, c2, grads)
            dx = dx + self._ln_bwd(dq + dkv, c1, grads)
        self._embed_bwd("src_emb", batch.src, dx, grads)
        return grads

    def _embed_bwd(self, table, tokens, dx, grads):
        g = np.zeros_like(self.params[table])
        np.add.at(g, tokens.reshape(-1), dx.reshape(-1, dx.shape[-1]) * math.sqrt(self.cfg.d_model))
        _add(grads, table, g)

    def encoder_scores(self, src, layer=0):
        """Pre-softmax positional-scaled scores of one encoder self-attention layer, shape (B, H, L, L)."""
        src = np.atleast_2d(np.asarray(src))
        src_mask = np.ones_like(src, dtype=bool)
        x = self._embed("src_emb", src)
        for i in range(layer + 1):
            a, _ = self._ln_fwd(f"enc{i}.ln1", x)
            y, c2 = self._mha_fwd(f"enc{i}.attn", f"enc{i}.attn.pos", a, a, src_mask, self.opts["encoder"])
            if i == layer:
                return c2[-1].logits
            x = x + y
            a, _ = self._ln_fwd(f"enc{i}.ln2", x)
            x = x + self._ffn_fwd(f"enc{i}.ff", a)[0]

    def greedy_decode(self, sources, max_len=None):
        """Greedy decoding; each output has ``len(source)`` tokens unless ``max_len`` is given."""
        batch = make_batch([(s, s) for s in sources])
        enc, _ = self.encode(batch.src, batch.src_mask)
        lengths = [len(s) if max_len is None else max_len for s in sources]
        T = max(lengths)
        dec = np.full((len(sources), 1), BOS, dtype=np.int64)
        for _ in range(T):
            logits, _ = self.decode(dec, enc, batch.src_mask, np.ones_like(dec, dtype=bool))
            nxt = logits[:, -1].argmax(axis=-1)
            dec = np.concatenate([dec, nxt[:, None]], axis=1)
        return [tuple(int(t) for t in dec[b, 1 : 1 + n]) for b, n in enumerate(lengths)]


def build_model(cfg):
    """Construct a :class:`Seq2SeqModel` and check its positional parameter counts against the closed form."""
    if not isinstance(cfg, ModelConfig):
        cfg = ModelConfig.from_dict(dict(cfg))
    model = Seq2SeqModel(cfg)
    expected = positional_param_count(cfg.positional_mode, cfg.heads, cfg.seq_len, cfg.d_k)
    for name, n in model.positional_param_counts().items():
        if ".cross." not in name and n != expected:
            raise ConfigError(f"{name}: {n} positional parameters, expected {expected}")
    return model


class Adam:
    """Adam over a model's named parameters, updating arrays in place."""

    def __init__(self, cfg):
        self.cfg = cfg
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, model, grads):
        c = self.cfg
        self.t += 1
        if c.clip_norm is not None:
            total = math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values()))
            if total > c.clip_norm:
                scale = c.clip_norm / total
                grads = {k: g * scale for k, g in grads.items()}
        b1t = 1.0 - c.beta1**self.t
        b2t = 1.0 - c.beta2**self.t
        for name, arr in model.named_parameters():
            g = grads.get(name)
            if g is None:
                continue
            g = np.asarray(g, dtype=arr.dtype)
            m = self.m.get(name)
            if m is None:
                m = self.m[name] = np.zeros_like(arr)
                self.v[name] = np.zeros_like(arr)
            v = self.v[name]
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * g * g
            arr -= (c.lr * (m / b1t) / (np.sqrt(v / b2t) + c.eps)).astype(arr.dtype)


def _threads(threads):
    if threads is not None:
        return max(1, int(threads))
    return max(1, int(os.environ.get("AGF_THREADS", "1")))


def _sharded_grads(model, batch, threads, pool):
    """Gradients of the batch loss computed on ``threads`` shards and summed in shard order."""
    norm = float((batch.labels != PAD).sum())
    bounds = np.linspace(0, batch.src.shape[0], threads + 1).astype(int)
    shards = [
        Batch(batch.src[a:b], batch.dec_in[a:b], batch.labels[a:b]) for a, b in zip(bounds[:-1], bounds[1:]) if b > a
    ]
    results = list(pool.map(lambda s: model.loss_and_grads(s, norm), shards))
    loss = 0.0
    grads = {}
    for lo, g in results:
        loss += lo
        for k, v in g.items():
            _add(grads, k, v)
    return loss, grads


def train(model, dataset, epochs, opt=None, val_data=None, seed=None, threads=None, progress=None, target_score=None):
    """Train with Adam on token cross-entropy; record validation accuracy after every epoch.

    Parameters
    ----------
    model : Seq2SeqModel
    dataset : list of (source, target)
    epochs : int
    opt : OptimizerConfig, optional
    val_data : list of (source, target), optional
        Defaults to ``dataset``.
    seed : int, optional
        Shuffling seed; defaults to the model config seed.
    threads : int, optional
        Data-parallel shards per batch (defaults to ``$AGF_THREADS`` or 1).
        Shard gradients are reduced in a fixed order.
    progress : callable, optional
        Called as ``progress(epoch, trace)`` after each epoch.
    target_score : float, optional
        Stop after the first epoch whose validation accuracy reaches this value.

    Returns
    -------
    TrainingTrace
    """
    if not dataset:
        raise ConfigError("training dataset is empty")
    opt = opt or OptimizerConfig()
    val_data = dataset if val_data is None else val_data
    rng = np.random.default_rng(model.cfg.seed if seed is None else seed)
    adam = Adam(opt)
    trace = TrainingTrace()
    n_threads = _threads(threads)
    pool = ThreadPoolExecutor(n_threads) if n_threads > 1 else None
    step = 0
    try:
        for epoch in range(epochs):
            order = rng.permutation(len(dataset))
            losses = []
            for start in range(0, len(order), opt.batch_size):
                if opt.max_steps is not None and step >= opt.max_steps:
                    break
                batch = make_batch([dataset[i] for i in order[start : start + opt.batch_size]])
                if pool is None:
                    loss, grads = model.loss_and_grads(batch)
                else:
                    loss, grads = _sharded_grads(model, batch, n_threads, pool)
                step += 1
                if not math.isfinite(loss):
                    raise TrainingError("non-finite training loss", step)
                adam.step(model, grads)
                losses.append(loss)
            trace.epoch_scores.append(evaluate(model, val_data))
            trace.steps.append(step)
            trace.losses.append(float(np.mean(losses)) if losses else float("nan"))
            if progress is not None:
                progress(epoch + 1, trace)
            if target_score is not None and trace.epoch_scores[-1] >= target_score:
                break
            if opt.max_steps is not None and step >= opt.max_steps:
                break
    finally:
        if pool is not None:
            pool.shutdown()
    return trace


def evaluate(model, dataset, batch_size=256):
    """Teacher-forced token accuracy (percent) of ``model`` on ``dataset``.

    ``model`` only needs a ``forward_logits(batch)`` method.
    """
    correct = 0
    total = 0
    for start in range(0, len(dataset), batch_size):
        batch = make_batch(dataset[start : start + batch_size])
        pred = model.forward_logits(batch).argmax(axis=-1)
        valid = batch.labels != PAD
        correct += int(np.sum((pred == batch.labels) & valid))
        total += int(valid.sum())
    return 100.0 * correct / total if total else 0.0


@dataclass
class ShiftReport:
    applicable: bool
    shift: int
    max_deviation: float
    reason: str = ""


def shift_equivariance_check(model, sequence, shift, pad_token=PAD, layer=0):
    """Compare first-layer encoder scores for ``X`` and for ``X`` behind ``shift`` pad tokens.

    Pairs are compared over the window where both copies of ``X`` overlap,
    i.e. ``score(m, n | X)`` against ``score(m+s, n+s | pad*s + X)``.
    Evaluated in double precision.
    """
    cfg = model.cfg
    if cfg.use_abs_pe:
        return ShiftReport(False, shift, float("nan"), "absolute positional encoding is enabled")
    if cfg.positional_mode in ("agf_m", "agf_full") and len(sequence) + shift > cfg.seq_len:
        return ShiftReport(False, shift, float("nan"), "offsets exceed the LC table length")
    m64 = model if model.dtype == np.float64 else model.astype(np.float64)
    x = np.asarray(sequence, dtype=np.int64)[None, :]
    xs = np.concatenate([np.full((1, shift), pad_token, dtype=np.int64), x], axis=1)
    a = m64.encoder_scores(x, layer)[0]
    b = m64.encoder_scores(xs, layer)[0][:, shift:, shift:]
    return ShiftReport(True, shift, float(np.max(np.abs(a - b))))
