"""Cross-entropy training: exact BPTT gradients, per-example SGD, model selection.

Training is per-example (batch size 1) stochastic gradient descent with the
two-phase learning-rate schedule: ``lr_warm`` for the first ``warm_epochs``
epochs, then ``lr_initial``. After each epoch the development metric is
recorded and the best-scoring epoch's parameters are returned (ties toward the
earlier epoch). All randomness flows from the config seed.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .data import Example, RelationSchema, annotate
from .embedding import EmbeddingTable, PositionFeatureTables, Vocabulary, embed
from .encoders import (
    ClassifierParams,
    CnnParams,
    RnnParams,
    SentenceEncoding,
    bidir_combine,
    classify,
    cnn_encode,
    cnn_windows,
    last_pool,
    max_pool,
    rnn_backward_pass,
    rnn_forward_pass,
)
from .numeric import (
    GradCheckReport,
    NonFiniteLossError,
    Params,
    compare_gradients,
    finite_diff_gradient,
)

log = logging.getLogger(__name__)

LOSS_FLOOR = 1e-12


class TrainingDivergedError(ArithmeticError):
    def __init__(self, epoch: int, step: int, loss: float):
        super().__init__(f"non-finite loss {loss} at epoch {epoch}, step {step}")
        self.epoch = epoch
        self.step = step


@dataclass
class ModelBundle:
    """Everything needed to score a sentence: tables, encoder, classifier, schema."""

    schema: RelationSchema
    vocab: Vocabulary
    embedding: EmbeddingTable
    encoder: RnnParams | CnnParams
    classifier: ClassifierParams
    mode: str  # "pi" | "pf" | "none"
    bidirectional: bool = True
    pooling: str = "max"
    pf: PositionFeatureTables | None = None
    max_dist: int = 30

    def __post_init__(self):
        if self.mode not in ("pi", "pf", "none"):
            raise ValueError(f"unknown annotation mode {self.mode!r}")
        if (self.mode == "pf") != (self.pf is not None):
            raise ValueError("position-feature tables exactly when mode is 'pf'")
        expect = self.embedding.dim + (2 * self.pf.dim if self.pf else 0)
        if self.encoder.input_dim != expect:
            raise ValueError(
                f"encoder input dim {self.encoder.input_dim} != embedding dim {expect}"
            )
        if self.classifier.w_out.shape != (self.schema.n_classes, self.encoder.hidden):
            raise ValueError(
                f"classifier {self.classifier.w_out.shape} inconsistent with "
                f"{self.schema.n_classes} classes and hidden {self.encoder.hidden}"
            )
        if self.pf is not None:
            self.max_dist = self.pf.max_dist

    @property
    def encoder_kind(self) -> str:
        return "rnn" if isinstance(self.encoder, RnnParams) else "cnn"

    def clone(self) -> "ModelBundle":
        enc: RnnParams | CnnParams
        if isinstance(self.encoder, RnnParams):
            enc = RnnParams(*(a.copy() for a in _rnn_arrays(self.encoder)))
        else:
            enc = CnnParams(self.encoder.filters.copy(), self.encoder.bias.copy(), self.encoder.window)
        pf = None
        if self.pf is not None:
            pf = PositionFeatureTables(
                self.pf.max_dist, self.pf.dim, self.pf.d1_vectors.copy(), self.pf.d2_vectors.copy()
            )
        return ModelBundle(
            schema=self.schema,
            vocab=self.vocab,
            embedding=EmbeddingTable(self.embedding.dim, self.embedding.vectors.copy()),
            encoder=enc,
            classifier=ClassifierParams(self.classifier.w_out.copy(), self.classifier.b_out.copy()),
            mode=self.mode,
            bidirectional=self.bidirectional,
            pooling=self.pooling,
            pf=pf,
            max_dist=self.max_dist,
        )


def _rnn_arrays(p: RnnParams) -> tuple[np.ndarray, ...]:
    return (p.w_fw, p.u_fw, p.b_fw, p.w_bw, p.u_bw, p.b_bw)


def build_model(
    schema: RelationSchema,
    vocab: Vocabulary,
    rng: np.random.Generator,
    encoder: str = "rnn",
    mode: str = "pi",
    hidden: int = 800,
    embedding: EmbeddingTable | None = None,
    embed_dim: int = 50,
    window: int = 3,
    pf_dim: int = 5,
    max_dist: int = 30,
    bidirectional: bool = True,
    pooling: str = "max",
) -> ModelBundle:
    """Assemble a fan-in-initialized model around an optional pretrained table."""
    table = embedding if embedding is not None else EmbeddingTable.random(embed_dim, vocab, rng)
    pf = PositionFeatureTables.random(max_dist, pf_dim, rng) if mode == "pf" else None
    input_dim = table.dim + (2 * pf_dim if pf else 0)
    enc: RnnParams | CnnParams
    if encoder == "rnn":
        enc = RnnParams.init(hidden, input_dim, rng)
    elif encoder == "cnn":
        enc = CnnParams.init(hidden, input_dim, window, rng)
    else:
        raise ValueError(f"unknown encoder {encoder!r}")
    cls = ClassifierParams.init(schema.n_classes, hidden, rng)
    return ModelBundle(
        schema=schema,
        vocab=vocab,
        embedding=table,
        encoder=enc,
        classifier=cls,
        mode=mode,
        bidirectional=bidirectional,
        pooling=pooling,
        pf=pf,
        max_dist=max_dist,
    )


# ---------------------------------------------------------------------------
# Forward path


def _embed_example(bundle: ModelBundle, ex: Example):
    seq = annotate(ex, bundle.mode, bundle.max_dist)
    return seq, embed(seq, bundle.embedding, bundle.vocab, bundle.pf)


def _encode(bundle: ModelBundle, embeddings: np.ndarray) -> SentenceEncoding:
    if isinstance(bundle.encoder, CnnParams):
        return cnn_encode(embeddings, bundle.encoder)
    states = rnn_forward_pass(embeddings, bundle.encoder)
    if bundle.bidirectional:
        states = bidir_combine(states, rnn_backward_pass(embeddings, bundle.encoder))
    return max_pool(states) if bundle.pooling == "max" else last_pool(states)


def encode_example(bundle: ModelBundle, ex: Example) -> SentenceEncoding:
    _, embeddings = _embed_example(bundle, ex)
    return _encode(bundle, embeddings)


def predict_probs(bundle: ModelBundle, ex: Example) -> np.ndarray:
    return classify(encode_example(bundle, ex).pooled, bundle.classifier)


def predict_label(bundle: ModelBundle, ex: Example) -> str:
    return bundle.schema.labels[int(np.argmax(predict_probs(bundle, ex)))]


def cross_entropy(probs: np.ndarray, gold: int) -> float:
    """Negative log probability of the gold class, floored against log(0)."""
    probs = np.asarray(probs, dtype=np.float64)
    if not 0 <= gold < probs.shape[0]:
        raise ValueError(f"gold index {gold} outside {probs.shape[0]} classes")
    p = probs[gold]
    if p < LOSS_FLOOR:
        log.warning("saturated prediction: p(gold)=%g clamped to %g", p, LOSS_FLOOR)
        p = LOSS_FLOOR
    return float(-np.log(p))


def example_loss(bundle: ModelBundle, ex: Example) -> float:
    return cross_entropy(predict_probs(bundle, ex), bundle.schema.label_index(ex.label))


# ---------------------------------------------------------------------------
# Gradients


@dataclass
class Gradients:
    """Per-example gradients: dense arrays for weights, sparse embedding updates."""

    params: dict[str, np.ndarray]
    emb_cols: dict[int, np.ndarray] = field(default_factory=dict)
    pf1_rows: dict[int, np.ndarray] = field(default_factory=dict)
    pf2_rows: dict[int, np.ndarray] = field(default_factory=dict)
    loss: float = 0.0


def _scan_grad(
    embeddings: np.ndarray,
    w: np.ndarray,
    u: np.ndarray,
    states: np.ndarray,
    dstates: np.ndarray,
):
    """Backprop through h_t = tanh(W e_t + U h_{t-1} + b) given external dL/dh_t."""
    t_len, m = states.shape
    g_w = np.zeros_like(w)
    g_u = np.zeros_like(u)
    g_b = np.zeros(m)
    dembs = np.zeros_like(embeddings)
    carry = np.zeros(m)
    for t in reversed(range(t_len)):
        dpre = (dstates[t] + carry) * (1.0 - states[t] ** 2)
        g_w += np.outer(dpre, embeddings[t])
        if t > 0:
            g_u += np.outer(dpre, states[t - 1])
        g_b += dpre
        dembs[t] = w.T @ dpre
        carry = u.T @ dpre
    return g_w, g_u, g_b, dembs


def _first_nonfinite_step(states: np.ndarray) -> int | None:
    bad = ~np.isfinite(states).all(axis=1)
    if bad.any():
        return int(np.argmax(bad))
    return None


def bptt_gradients(bundle: ModelBundle, ex: Example) -> Gradients:
    """Exact loss gradient for one example, including touched embedding columns.

    The pooled vector's gradient routes only through the argmax winner of each
    dimension; recurrent parameters receive contributions from every step via
    backpropagation through time.
    """
    seq, embeddings = _embed_example(bundle, ex)
    gold = bundle.schema.label_index(ex.label)

    if isinstance(bundle.encoder, CnnParams):
        windows = cnn_windows(embeddings, bundle.encoder.window)
        states = np.tanh(windows @ bundle.encoder.filters.T + bundle.encoder.bias)
        fw_states = bw_states = None
    else:
        fw_states = rnn_forward_pass(embeddings, bundle.encoder)
        states = fw_states
        bw_states = None
        if bundle.bidirectional:
            bw_states = rnn_backward_pass(embeddings, bundle.encoder)
            states = bidir_combine(fw_states, bw_states)
    bad_step = _first_nonfinite_step(states)
    if bad_step is not None:
        raise NonFiniteLossError(f"non-finite hidden state at time step {bad_step}")

    encoding = max_pool(states) if bundle.pooling == "max" else last_pool(states)
    probs = classify(encoding.pooled, bundle.classifier)
    loss = cross_entropy(probs, gold)

    dlogits = probs.copy()
    dlogits[gold] -= 1.0
    g_w_out = np.outer(dlogits, encoding.pooled)
    g_b_out = dlogits
    dpooled = bundle.classifier.w_out.T @ dlogits

    dstates = np.zeros_like(states)
    dstates[encoding.pool_argmax, np.arange(states.shape[1])] = dpooled

    params: dict[str, np.ndarray] = {"w_out": g_w_out, "b_out": g_b_out}
    if isinstance(bundle.encoder, CnnParams):
        dpre = dstates * (1.0 - states**2)
        params["filters"] = dpre.T @ windows
        params["bias"] = dpre.sum(axis=0)
        dwin = (dpre @ bundle.encoder.filters).reshape(
            len(seq.tokens), bundle.encoder.window, bundle.encoder.input_dim
        )
        pad = (bundle.encoder.window - 1) // 2
        dpadded = np.zeros((len(seq.tokens) + 2 * pad, bundle.encoder.input_dim))
        for j in range(bundle.encoder.window):
            dpadded[j : j + len(seq.tokens)] += dwin[:, j, :]
        dembs = dpadded[pad : pad + len(seq.tokens)]
    else:
        enc = bundle.encoder
        g_w_fw, g_u_fw, g_b_fw, dembs = _scan_grad(
            embeddings, enc.w_fw, enc.u_fw, fw_states, dstates
        )
        params.update(w_fw=g_w_fw, u_fw=g_u_fw, b_fw=g_b_fw)
        if bundle.bidirectional:
            g_w_bw, g_u_bw, g_b_bw, dembs_rev = _scan_grad(
                embeddings[::-1], enc.w_bw, enc.u_bw, bw_states[::-1], dstates[::-1]
            )
            params.update(w_bw=g_w_bw, u_bw=g_u_bw, b_bw=g_b_bw)
            dembs = dembs + dembs_rev[::-1]
        else:
            params.update(
                w_bw=np.zeros_like(enc.w_bw),
                u_bw=np.zeros_like(enc.u_bw),
                b_bw=np.zeros_like(enc.b_bw),
            )

    grads = Gradients(params=params, loss=loss)
    d = bundle.embedding.dim
    for t, token in enumerate(seq.tokens):
        idx = bundle.vocab.lookup(token)
        col = grads.emb_cols.setdefault(idx, np.zeros(d))
        col += dembs[t, :d]
    if bundle.pf is not None:
        pdim = bundle.pf.dim
        for t, (d1, d2) in enumerate(seq.position_features):
            r1 = bundle.pf.row_index(d1)
            r2 = bundle.pf.row_index(d2)
            grads.pf1_rows.setdefault(r1, np.zeros(pdim))
            grads.pf1_rows[r1] += dembs[t, d : d + pdim]
            grads.pf2_rows.setdefault(r2, np.zeros(pdim))
            grads.pf2_rows[r2] += dembs[t, d + pdim :]
    return grads


def _bundle_param_arrays(bundle: ModelBundle) -> dict[str, np.ndarray]:
    """Live references to every trainable array, keyed by canonical name."""
    if isinstance(bundle.encoder, CnnParams):
        named = {"filters": bundle.encoder.filters, "bias": bundle.encoder.bias}
    else:
        named = dict(
            zip(("w_fw", "u_fw", "b_fw", "w_bw", "u_bw", "b_bw"), _rnn_arrays(bundle.encoder))
        )
    named["w_out"] = bundle.classifier.w_out
    named["b_out"] = bundle.classifier.b_out
    named["w_em"] = bundle.embedding.vectors
    if bundle.pf is not None:
        named["pf_d1"] = bundle.pf.d1_vectors
        named["pf_d2"] = bundle.pf.d2_vectors
    return named


def model_params_dict(bundle: ModelBundle) -> Params:
    return {name: arr.copy() for name, arr in _bundle_param_arrays(bundle).items()}


def set_model_params(bundle: ModelBundle, params: Params) -> None:
    for name, arr in _bundle_param_arrays(bundle).items():
        np.copyto(arr, params[name])


def densify_gradients(grads: Gradients, bundle: ModelBundle) -> Params:
    """Expand sparse embedding/PF gradients to full arrays for comparison."""
    dense = {name: g.copy() for name, g in grads.params.items()}
    g_em = np.zeros_like(bundle.embedding.vectors)
    for idx, col in grads.emb_cols.items():
        g_em[:, idx] += col
    dense["w_em"] = g_em
    if bundle.pf is not None:
        g1 = np.zeros_like(bundle.pf.d1_vectors)
        for r, row in grads.pf1_rows.items():
            g1[r] += row
        g2 = np.zeros_like(bundle.pf.d2_vectors)
        for r, row in grads.pf2_rows.items():
            g2[r] += row
        dense["pf_d1"] = g1
        dense["pf_d2"] = g2
    return dense


def gradient_check(
    bundle: ModelBundle,
    examples: Sequence[Example],
    epsilon: float = 1e-5,
) -> GradCheckReport:
    """Compare BPTT gradients with central finite differences over all parameters."""
    analytic: Params | None = None
    for ex in examples:
        dense = densify_gradients(bptt_gradients(bundle, ex), bundle)
        if analytic is None:
            analytic = dense
        else:
            for name in dense:
                analytic[name] += dense[name]
    if analytic is None:
        raise ValueError("gradient_check needs at least one example")

    work = bundle.clone()

    def loss_fn(params: Params) -> float:
        set_model_params(work, params)
        return sum(example_loss(work, ex) for ex in examples)

    numeric = finite_diff_gradient(loss_fn, model_params_dict(bundle), epsilon)
    return compare_gradients(analytic, numeric)


# ---------------------------------------------------------------------------
# SGD


def clip_gradients(grads: Gradients, max_norm: float) -> None:
    """Scale all gradients in place so their global L2 norm is at most max_norm."""
    sq = sum(float((g**2).sum()) for g in grads.params.values())
    for store in (grads.emb_cols, grads.pf1_rows, grads.pf2_rows):
        sq += sum(float((g**2).sum()) for g in store.values())
    norm = np.sqrt(sq)
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads.params.values():
            g *= scale
        for store in (grads.emb_cols, grads.pf1_rows, grads.pf2_rows):
            for g in store.values():
                g *= scale


def sgd_step(bundle: ModelBundle, grads: Gradients, lr: float) -> ModelBundle:
    """Plain SGD update: every parameter moves by -lr times its gradient."""
    if lr < 0:
        raise ValueError(f"learning rate must be >= 0, got {lr}")
    arrays = _bundle_param_arrays(bundle)
    for name, g in grads.params.items():
        if arrays[name].shape != g.shape:
            raise ValueError(f"gradient {name} shape {g.shape} vs {arrays[name].shape}")
        arrays[name] -= lr * g
    for idx, col in grads.emb_cols.items():
        bundle.embedding.vectors[:, idx] -= lr * col
    if bundle.pf is not None:
        for r, row in grads.pf1_rows.items():
            bundle.pf.d1_vectors[r] -= lr * row
        for r, row in grads.pf2_rows.items():
            bundle.pf.d2_vectors[r] -= lr * row
    return bundle


# ---------------------------------------------------------------------------
# Training loop


@dataclass
class TrainConfig:
    epochs: int = 20
    lr_initial: float = 0.01
    lr_warm: float = 0.1
    warm_epochs: int = 5
    seed: int = 0
    shuffle: bool = True
    dev_metric: str = "macro_f1"  # or "accuracy"
    grad_clip: float | None = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.lr_initial <= 0 or self.lr_warm <= 0:
            raise ValueError("learning rates must be positive")
        if self.dev_metric not in ("macro_f1", "accuracy"):
            raise ValueError(f"unknown dev metric {self.dev_metric!r}")

    def lr_for_epoch(self, epoch: int) -> float:
        return self.lr_warm if epoch <= self.warm_epochs else self.lr_initial


@dataclass
class EpochStats:
    epoch: int
    lr: float
    train_loss: float
    dev_score: float | None


def _dev_score(bundle: ModelBundle, dev: Sequence[Example], metric: str) -> float:
    preds = [predict_label(bundle, ex) for ex in dev]
    gold = [ex.label for ex in dev]
    if metric == "accuracy":
        return 100.0 * sum(p == g for p, g in zip(preds, gold)) / len(gold)
    from .evaluation import macro_f1

    return macro_f1(gold, preds, bundle.schema).macro_f1


def train(
    bundle: ModelBundle,
    train_set: Sequence[Example],
    dev_set: Sequence[Example],
    config: TrainConfig,
) -> tuple[ModelBundle, list[EpochStats]]:
    """Run the SGD schedule; return the best-dev-epoch bundle and per-epoch stats.

    Without a dev set the final epoch's parameters are returned.
    """
    if not train_set:
        raise ValueError("empty training set")
    rng = np.random.default_rng(config.seed)
    history: list[EpochStats] = []
    best_score = -np.inf
    best = None
    for epoch in range(1, config.epochs + 1):
        lr = config.lr_for_epoch(epoch)
        order = rng.permutation(len(train_set)) if config.shuffle else np.arange(len(train_set))
        total = 0.0
        for step, i in enumerate(order):
            grads = bptt_gradients(bundle, train_set[i])
            if not np.isfinite(grads.loss):
                raise TrainingDivergedError(epoch, step, grads.loss)
            if config.grad_clip is not None:
                clip_gradients(grads, config.grad_clip)
            sgd_step(bundle, grads, lr)
            total += grads.loss
        dev_score = _dev_score(bundle, dev_set, config.dev_metric) if dev_set else None
        history.append(EpochStats(epoch, lr, total / len(train_set), dev_score))
        log.info(
            "epoch %d lr %.3g train loss %.4f dev %s",
            epoch,
            lr,
            total / len(train_set),
            f"{dev_score:.2f}" if dev_score is not None else "-",
        )
        if dev_score is not None and dev_score > best_score:
            best_score = dev_score
            best = bundle.clone()
    return (best if best is not None else bundle.clone()), history


# ---------------------------------------------------------------------------
# Serialization


class ModelFormatError(ValueError):
    """Model file is corrupted, truncated, or from an unsupported version."""


MODEL_FORMAT_VERSION = 1


def _param_block(name: str, arr: np.ndarray) -> dict:
    return {"name": name, "shape": list(arr.shape), "values": arr.reshape(-1).tolist()}


def save_model(bundle: ModelBundle, path: str | Path) -> None:
    """Write the bundle as deterministic JSON with full-precision decimal floats."""
    doc = {
        "format_version": MODEL_FORMAT_VERSION,
        "encoder": bundle.encoder_kind,
        "mode": bundle.mode,
        "bidirectional": bundle.bidirectional,
        "pooling": bundle.pooling,
        "hidden": bundle.encoder.hidden,
        "embed_dim": bundle.embedding.dim,
        "window": bundle.encoder.window if isinstance(bundle.encoder, CnnParams) else None,
        "max_dist": bundle.max_dist,
        "pf_dim": bundle.pf.dim if bundle.pf else None,
        "schema": {
            "families": list(bundle.schema.families),
            "directional": list(bundle.schema.directional),
            "neutral": bundle.schema.neutral,
        },
        "vocab": list(bundle.vocab.tokens),
        "params": [
            _param_block(name, arr) for name, arr in sorted(_bundle_param_arrays(bundle).items())
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def load_model(path: str | Path) -> ModelBundle:
    """Inverse of save_model; raises ModelFormatError on damaged input."""
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as err:
        raise ModelFormatError(f"not a valid model file: {err}")
    if not isinstance(doc, dict) or "format_version" not in doc:
        raise ModelFormatError("missing format_version header")
    if doc["format_version"] != MODEL_FORMAT_VERSION:
        raise ModelFormatError(f"unsupported format version {doc['format_version']!r}")
    try:
        schema = RelationSchema(
            families=tuple(doc["schema"]["families"]),
            directional=tuple(bool(d) for d in doc["schema"]["directional"]),
            neutral=doc["schema"]["neutral"],
        )
        vocab = Vocabulary.from_tokens(doc["vocab"])
        params: dict[str, np.ndarray] = {}
        for block in doc["params"]:
            arr = np.array(block["values"], dtype=np.float64)
            params[block["name"]] = arr.reshape(block["shape"])
        if doc["encoder"] == "cnn":
            encoder: RnnParams | CnnParams = CnnParams(
                params["filters"], params["bias"], doc["window"]
            )
        else:
            encoder = RnnParams(
                params["w_fw"], params["u_fw"], params["b_fw"],
                params["w_bw"], params["u_bw"], params["b_bw"],
            )
        pf = None
        if doc["pf_dim"] is not None:
            pf = PositionFeatureTables(
                doc["max_dist"], doc["pf_dim"], params["pf_d1"], params["pf_d2"]
            )
        return ModelBundle(
            schema=schema,
            vocab=vocab,
            embedding=EmbeddingTable(doc["embed_dim"], params["w_em"]),
            encoder=encoder,
            classifier=ClassifierParams(params["w_out"], params["b_out"]),
            mode=doc["mode"],
            bidirectional=doc["bidirectional"],
            pooling=doc["pooling"],
            pf=pf,
            max_dist=doc["max_dist"],
        )
    except (KeyError, TypeError, ValueError) as err:
        if isinstance(err, ModelFormatError):
            raise
        raise ModelFormatError(f"malformed model file: {err}")
