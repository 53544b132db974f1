"""scikit-learn style wrapper around the toy transformer."""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .model import ModelConfig, OptimizerConfig, build_model, evaluate, train

__all__ = ["check_sequences", "AgfSeq2Seq"]


def check_sequences(X, vocab_size=None, name="X"):
    """Validate a ragged collection of token-id sequences and return it as a list of int tuples."""
    if isinstance(X, np.ndarray) and X.ndim == 2:
        X = X.tolist()
    try:
        seqs = [tuple(int(t) for t in s) for s in X]
    except TypeError as exc:
        raise ValueError(f"{name} must be a collection of integer sequences") from exc
    if not seqs:
        raise ValueError(f"{name} is empty")
    for i, s in enumerate(seqs):
        if not s:
            raise ValueError(f"{name}[{i}] is an empty sequence")
        if vocab_size is not None and (min(s) < 0 or max(s) >= vocab_size):
            raise ValueError(f"{name}[{i}] has token ids outside [0, {vocab_size})")
    return seqs


class AgfSeq2Seq(BaseEstimator):
    """Encoder-decoder transformer with relative positional coefficients.

    Every constructor argument is either a :class:`~agflab.model.ModelConfig`
    field or an optimisation setting; ``random_state`` seeds both the weight
    initialisation and the shuffling.

    Attributes
    ----------
    model_ : Seq2SeqModel
    trace_ : TrainingTrace
    positional_param_counts_ : dict
    """

    def __init__(
        self,
        vocab_size=64,
        layers=2,
        heads=4,
        d_model=64,
        d_ff=128,
        seq_len=64,
        positional_mode="agf",
        pcm_v=False,
        pcm_v_exp=False,
        sco=False,
        pcm_v_detach=False,
        use_abs_pe=False,
        cross_positional=False,
        k_exp=2.0,
        dtype="float32",
        epochs=10,
        batch_size=32,
        lr=3e-4,
        beta1=0.9,
        beta2=0.98,
        clip_norm=None,
        max_steps=None,
        random_state=0,
        threads=None,
    ):
        self.vocab_size = vocab_size
        self.layers = layers
        self.heads = heads
        self.d_model = d_model
        self.d_ff = d_ff
        self.seq_len = seq_len
        self.positional_mode = positional_mode
        self.pcm_v = pcm_v
        self.pcm_v_exp = pcm_v_exp
        self.sco = sco
        self.pcm_v_detach = pcm_v_detach
        self.use_abs_pe = use_abs_pe
        self.cross_positional = cross_positional
        self.k_exp = k_exp
        self.dtype = dtype
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.clip_norm = clip_norm
        self.max_steps = max_steps
        self.random_state = random_state
        self.threads = threads

    def model_config(self):
        return ModelConfig(
            vocab_size=self.vocab_size,
            layers=self.layers,
            heads=self.heads,
            d_model=self.d_model,
            d_ff=self.d_ff,
            seq_len=self.seq_len,
            positional_mode=self.positional_mode,
            pcm_v=self.pcm_v,
            pcm_v_exp=self.pcm_v_exp,
            sco=self.sco,
            pcm_v_detach=self.pcm_v_detach,
            use_abs_pe=self.use_abs_pe,
            cross_positional=self.cross_positional,
            k_exp=self.k_exp,
            seed=self.random_state,
            dtype=self.dtype,
        )

    def optimizer_config(self):
        return OptimizerConfig(
            lr=self.lr,
            beta1=self.beta1,
            beta2=self.beta2,
            batch_size=self.batch_size,
            clip_norm=self.clip_norm,
            max_steps=self.max_steps,
        )

    def _pairs(self, X, y):
        X = check_sequences(X, self.vocab_size, "X")
        y = check_sequences(y, self.vocab_size, "y")
        if len(X) != len(y):
            raise ValueError(f"X and y have different lengths ({len(X)} vs {len(y)})")
        return list(zip(X, y))

    def fit(self, X, y, X_val=None, y_val=None, progress=None):
        """Train on source sequences ``X`` and target sequences ``y``.

        Validation accuracy is tracked per epoch on ``(X_val, y_val)`` if
        given, else on the training pairs.
        """
        data = self._pairs(X, y)
        val = None if X_val is None else self._pairs(X_val, y_val)
        self.model_ = build_model(self.model_config())
        self.trace_ = train(
            self.model_, data, self.epochs, self.optimizer_config(), val_data=val,
            seed=self.random_state, threads=self.threads, progress=progress,
        )
        self.positional_param_counts_ = self.model_.positional_param_counts()
        return self

    def predict(self, X):
        """Greedy decoding; outputs have the same length as their sources."""
        check_is_fitted(self, "model_")
        return self.model_.greedy_decode(check_sequences(X, self.vocab_size))

    def score(self, X, y):
        """Teacher-forced token accuracy as a fraction in [0, 1]."""
        check_is_fitted(self, "model_")
        return evaluate(self.model_, self._pairs(X, y)) / 100.0
