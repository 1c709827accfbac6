"""Sentence encoders: bidirectional tanh RNN, max-pooling, softmax head, CNN baseline.

Embedding inputs are (T, D_in) arrays with one row per token. Hidden states are
(T, M). Initial hidden states (before the first step in either direction) are
zero vectors. Encoding with frozen parameters is pure; training mutates
parameters elsewhere under exclusive access.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .embedding import fan_in_init
from .numeric import ShapeError, softmax


@dataclass
class RnnParams:
    """Input, recurrent, and bias weights for the forward and backward passes."""

    w_fw: np.ndarray  # (M, D_in)
    u_fw: np.ndarray  # (M, M)
    b_fw: np.ndarray  # (M,)
    w_bw: np.ndarray
    u_bw: np.ndarray
    b_bw: np.ndarray

    def __post_init__(self):
        if self.w_fw.shape != self.w_bw.shape or self.u_fw.shape != self.u_bw.shape:
            raise ShapeError("forward and backward parameter shapes must match")
        m, d = self.w_fw.shape
        if self.u_fw.shape != (m, m) or self.b_fw.shape != (m,) or self.b_bw.shape != (m,):
            raise ShapeError(
                f"inconsistent RNN shapes: w {self.w_fw.shape}, u {self.u_fw.shape}, "
                f"b {self.b_fw.shape}"
            )

    @property
    def hidden(self) -> int:
        return self.w_fw.shape[0]

    @property
    def input_dim(self) -> int:
        return self.w_fw.shape[1]

    @classmethod
    def init(cls, hidden: int, input_dim: int, rng: np.random.Generator) -> "RnnParams":
        return cls(
            w_fw=fan_in_init(hidden, input_dim, rng),
            u_fw=fan_in_init(hidden, hidden, rng),
            b_fw=np.zeros(hidden),
            w_bw=fan_in_init(hidden, input_dim, rng),
            u_bw=fan_in_init(hidden, hidden, rng),
            b_bw=np.zeros(hidden),
        )


@dataclass
class CnnParams:
    """Single odd-width convolution over token windows, tanh activation."""

    filters: np.ndarray  # (M, window * D_in)
    bias: np.ndarray  # (M,)
    window: int

    def __post_init__(self):
        if self.window % 2 == 0 or self.window < 1:
            raise ValueError(f"window must be odd and positive, got {self.window}")
        if self.filters.shape[1] % self.window != 0:
            raise ShapeError(
                f"filter width {self.filters.shape[1]} not divisible by window {self.window}"
            )
        if self.bias.shape != (self.filters.shape[0],):
            raise ShapeError(f"bias {self.bias.shape} vs filters {self.filters.shape}")

    @property
    def hidden(self) -> int:
        return self.filters.shape[0]

    @property
    def input_dim(self) -> int:
        return self.filters.shape[1] // self.window

    @classmethod
    def init(
        cls, hidden: int, input_dim: int, window: int, rng: np.random.Generator
    ) -> "CnnParams":
        return cls(
            filters=fan_in_init(hidden, window * input_dim, rng),
            bias=np.zeros(hidden),
            window=window,
        )


@dataclass
class ClassifierParams:
    """Affine map from the pooled sentence vector to relation logits."""

    w_out: np.ndarray  # (|R|, M)
    b_out: np.ndarray  # (|R|,)

    def __post_init__(self):
        if self.b_out.shape != (self.w_out.shape[0],):
            raise ShapeError(f"b_out {self.b_out.shape} vs w_out {self.w_out.shape}")

    @property
    def n_classes(self) -> int:
        return self.w_out.shape[0]

    @classmethod
    def init(cls, n_classes: int, hidden: int, rng: np.random.Generator) -> "ClassifierParams":
        return cls(w_out=fan_in_init(n_classes, hidden, rng), b_out=np.zeros(n_classes))


@dataclass
class SentenceEncoding:
    """Per-step combined states, the pooled sentence vector, and pooling provenance.

    ``pool_argmax[i]`` is the 0-based step whose state supplies ``pooled[i]``;
    ties go to the earliest step.
    """

    states: np.ndarray  # (T, M)
    pooled: np.ndarray  # (M,)
    pool_argmax: np.ndarray  # (M,) int

    @property
    def n_steps(self) -> int:
        return self.states.shape[0]


def _check_rnn_input(embeddings: np.ndarray, params: RnnParams) -> np.ndarray:
    embeddings = np.asarray(embeddings, dtype=np.float64)
    if embeddings.ndim != 2 or embeddings.shape[1] != params.input_dim:
        raise ShapeError(
            f"embeddings {embeddings.shape} incompatible with input dim {params.input_dim}"
        )
    if embeddings.shape[0] < 1:
        raise ValueError("empty sequence")
    return embeddings


def _scan(embeddings: np.ndarray, w: np.ndarray, u: np.ndarray, b: np.ndarray) -> np.ndarray:
    states = np.empty((embeddings.shape[0], w.shape[0]))
    h = np.zeros(w.shape[0])
    for t in range(embeddings.shape[0]):
        h = np.tanh(w @ embeddings[t] + u @ h + b)
        states[t] = h
    return states


def rnn_forward_pass(embeddings: np.ndarray, params: RnnParams) -> np.ndarray:
    """States of the forward recurrence h_t = tanh(W e_t + U h_{t-1} + b), h_0 = 0."""
    embeddings = _check_rnn_input(embeddings, params)
    return _scan(embeddings, params.w_fw, params.u_fw, params.b_fw)


def rnn_backward_pass(embeddings: np.ndarray, params: RnnParams) -> np.ndarray:
    """Time-reversed recurrence h_t = tanh(W e_t + U h_{t+1} + b), h_{T+1} = 0."""
    embeddings = _check_rnn_input(embeddings, params)
    return _scan(embeddings[::-1], params.w_bw, params.u_bw, params.b_bw)[::-1]


def bidir_combine(fw: np.ndarray, bw: np.ndarray) -> np.ndarray:
    """Elementwise sum of forward and backward states."""
    fw = np.asarray(fw, dtype=np.float64)
    bw = np.asarray(bw, dtype=np.float64)
    if fw.shape != bw.shape:
        raise ShapeError(f"state shapes differ: {fw.shape} vs {bw.shape}")
    return fw + bw


def max_pool(states: np.ndarray) -> SentenceEncoding:
    """Per-dimension max over steps; argmax ties break toward the earliest step."""
    states = np.asarray(states, dtype=np.float64)
    if states.ndim != 2 or states.shape[0] < 1:
        raise ValueError(f"need a nonempty (T, M) state array, got shape {states.shape}")
    return SentenceEncoding(
        states=states, pooled=states.max(axis=0), pool_argmax=states.argmax(axis=0)
    )


def last_pool(states: np.ndarray) -> SentenceEncoding:
    """Sentence vector taken from the final step (the no-pooling baseline)."""
    states = np.asarray(states, dtype=np.float64)
    if states.ndim != 2 or states.shape[0] < 1:
        raise ValueError(f"need a nonempty (T, M) state array, got shape {states.shape}")
    last = states.shape[0] - 1
    return SentenceEncoding(
        states=states,
        pooled=states[last].copy(),
        pool_argmax=np.full(states.shape[1], last, dtype=np.intp),
    )


def rnn_encode(
    embeddings: np.ndarray,
    params: RnnParams,
    bidirectional: bool = True,
    pooling: str = "max",
) -> SentenceEncoding:
    states = rnn_forward_pass(embeddings, params)
    if bidirectional:
        states = bidir_combine(states, rnn_backward_pass(embeddings, params))
    if pooling == "max":
        return max_pool(states)
    if pooling == "last":
        return last_pool(states)
    raise ValueError(f"unknown pooling {pooling!r}")


def cnn_windows(embeddings: np.ndarray, window: int) -> np.ndarray:
    """Zero-padded sliding windows, one concatenated row per token position."""
    t_len, d = embeddings.shape
    pad = (window - 1) // 2
    padded = np.vstack([np.zeros((pad, d)), embeddings, np.zeros((pad, d))])
    return np.stack([padded[t : t + window].reshape(-1) for t in range(t_len)])


def cnn_encode(embeddings: np.ndarray, params: CnnParams) -> SentenceEncoding:
    """Per-position tanh convolution followed by max-pooling."""
    embeddings = np.asarray(embeddings, dtype=np.float64)
    if embeddings.ndim != 2 or embeddings.shape[1] != params.input_dim:
        raise ShapeError(
            f"embeddings {embeddings.shape} incompatible with input dim {params.input_dim}"
        )
    if embeddings.shape[0] < 1:
        raise ValueError("empty sequence")
    windows = cnn_windows(embeddings, params.window)
    states = np.tanh(windows @ params.filters.T + params.bias)
    return max_pool(states)


def classify(pooled: np.ndarray, params: ClassifierParams) -> np.ndarray:
    """Class probabilities: softmax of the affine map of the sentence vector."""
    pooled = np.asarray(pooled, dtype=np.float64)
    if pooled.shape != (params.w_out.shape[1],):
        raise ShapeError(f"pooled {pooled.shape} vs classifier {params.w_out.shape}")
    return softmax(params.w_out @ pooled + params.b_out)
