"""Company embedder (attention fusion), LSTM fund encoder, compatibility classifier, training loop."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from . import numerics as nx
from .evaluation import compute_metrics
from .features import ModalBundle
from .numerics import AdamState, NumericalError, ShapeError, Tensor

log = logging.getLogger(__name__)

EMBED_DIM = 256
MAX_SEQUENCE = 15
MODALITIES = ("text", "num", "cat", "struct")


@dataclass(frozen=True)
class ModelConfig:
    text_dim: int = 256
    num_dim: int = 3
    cat_dim: int = 16
    struct_dim: int = 128
    d_model: int = 256
    heads: int = 4
    fund_hidden: int = 256
    head_hidden: int = 128
    context_order: str = "oldest_first"
    zero_init_head: bool = True
    normalize_embedding: bool = True
    clamp_eps: float = 1e-7
    seed: int = 0

    def __post_init__(self):
        if self.d_model % self.heads:
            raise ValueError(f"d_model={self.d_model} is not divisible by heads={self.heads}")
        if self.context_order not in ("oldest_first", "newest_first"):
            raise ValueError(f"context_order must be oldest_first or newest_first, got {self.context_order!r}")

    def input_dim(self, modality: str) -> int:
        return getattr(self, f"{modality}_dim")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-5
    batch_size: int = 32
    epochs: int = 20
    seed: int = 0
    threshold: float = 0.5
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")


@dataclass
class CompanyMatrix:
    """Stacked modality inputs, one row per (cutoff, startup) instance."""

    text: np.ndarray
    num: np.ndarray
    cat: np.ndarray
    struct: np.ndarray
    provenance: list[str] = field(default_factory=list)

    @classmethod
    def from_bundles(cls, bundles: Sequence[ModalBundle]) -> "CompanyMatrix":
        return cls(np.stack([b.text_vec for b in bundles]), np.stack([b.num_vec for b in bundles]),
                   np.stack([b.cat_vec for b in bundles]), np.stack([b.struct_vec for b in bundles]),
                   [b.struct_provenance.value for b in bundles])

    def __len__(self) -> int:
        return self.text.shape[0]

    def rows(self, index: np.ndarray) -> dict[str, np.ndarray]:
        return {m: getattr(self, m)[index] for m in MODALITIES}


@dataclass
class EncodedExamples:
    """Examples as row indices into a :class:`CompanyMatrix`; contexts padded with -1."""

    context: np.ndarray
    candidate: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return self.labels.shape[0]

    def subset(self, index) -> "EncodedExamples":
        return EncodedExamples(self.context[index], self.candidate[index], self.labels[index])


# --------------------------------------------------------------------------
# parameters


def _xavier(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def init_params(config: ModelConfig) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(config.seed)
    d, h = config.d_model, config.fund_hidden
    p: dict[str, np.ndarray] = {}
    for m in MODALITIES:
        p[f"proj.{m}.W"] = _xavier(rng, config.input_dim(m), d)
        p[f"proj.{m}.b"] = np.zeros(d)
    for name in ("q", "k", "v", "o"):
        p[f"attn.{name}.W"] = _xavier(rng, d, d)
        p[f"attn.{name}.b"] = np.zeros(d)
    p["embed.out.W"] = _xavier(rng, d, EMBED_DIM)
    p["embed.out.b"] = np.zeros(EMBED_DIM)
    p["lstm.Wx"] = _xavier(rng, EMBED_DIM, 4 * h)
    p["lstm.Wh"] = _xavier(rng, h, 4 * h)
    p["lstm.b"] = np.zeros(4 * h)
    p["lstm.b"][h:2 * h] = 1.0  # forget gate
    p["head.W1"] = _xavier(rng, h + EMBED_DIM, config.head_hidden)
    p["head.b1"] = np.zeros(config.head_hidden)
    p["head.W2"] = np.zeros((config.head_hidden, 1)) if config.zero_init_head else _xavier(rng, config.head_hidden, 1)
    p["head.b2"] = np.zeros(1)
    return p


class InclusionModel:
    """Parameters plus the three forward components.

    Every forward method takes an optional ``p`` mapping of parameter
    tensors; when omitted, constant tensors are built so no graph is kept.
    """

    def __init__(self, config: ModelConfig, params: Mapping[str, np.ndarray] | None = None):
        self.config = config
        self.params = {k: np.array(v, dtype=np.float64) for k, v in (params or init_params(config)).items()}
        expected = init_params(config) if params is not None else self.params
        for k, v in expected.items():
            if k not in self.params or self.params[k].shape != v.shape:
                raise ShapeError(f"parameter {k!r} missing or mis-shaped for this config")

    def tensors(self, requires_grad: bool = False) -> dict[str, Tensor]:
        return {k: Tensor(v, requires_grad=requires_grad, name=k) for k, v in self.params.items()}

    # ---- company embedder

    def embed_companies(self, inputs: Mapping[str, np.ndarray],
                        p: Mapping[str, Tensor] | None = None) -> tuple[Tensor, np.ndarray]:
        """Fused 256-d embeddings for N companies and the (N, heads, 4, 4) attention weights."""
        p = p or self.tensors()
        cfg = self.config
        tokens = []
        for m in MODALITIES:
            x = np.asarray(inputs[m], dtype=np.float64)
            if x.ndim != 2 or x.shape[1] != cfg.input_dim(m):
                raise ShapeError(f"{m} input has shape {x.shape}, expected (N, {cfg.input_dim(m)})")
            tokens.append(nx.linear(Tensor(x), p[f"proj.{m}.W"], p[f"proj.{m}.b"]))
        x = nx.stack(tokens, axis=1)                                  # (N, 4, d)
        n, t, d = x.shape
        heads, dh = cfg.heads, d // cfg.heads

        def split_heads(z):
            return nx.transpose(nx.reshape(z, (n, t, heads, dh)), (0, 2, 1, 3))   # (N, H, 4, dh)

        q = split_heads(nx.linear(x, p["attn.q.W"], p["attn.q.b"]))
        k = split_heads(nx.linear(x, p["attn.k.W"], p["attn.k.b"]))
        v = split_heads(nx.linear(x, p["attn.v.W"], p["attn.v.b"]))
        scores = nx.matmul(q, nx.transpose(k, (0, 1, 3, 2))) * (1.0 / math.sqrt(dh))
        weights = nx.softmax(scores, axis=-1)                         # (N, H, 4, 4)
        ctx = nx.reshape(nx.transpose(nx.matmul(weights, v), (0, 2, 1, 3)), (n, t, d))
        fused = x + nx.linear(ctx, p["attn.o.W"], p["attn.o.b"])
        pooled = nx.mean(fused, axis=1)
        out = nx.linear(pooled, p["embed.out.W"], p["embed.out.b"])
        # unit-scale embeddings keep the LSTM and the classifier out of their near-linear regime
        return (nx.normalize(out) if cfg.normalize_embedding else out), weights.data

    # ---- fund encoder

    def encode_funds(self, sequences: Tensor, mask: np.ndarray,
                     p: Mapping[str, Tensor] | None = None) -> Tensor:
        """Final LSTM hidden state for right-padded (B, T, 256) sequences."""
        p = p or self.tensors()
        b, t, _ = sequences.shape
        if t > MAX_SEQUENCE:
            raise ValueError(f"sequence length {t} exceeds {MAX_SEQUENCE}")
        mask = np.asarray(mask, dtype=np.float64)
        if mask.shape != (b, t) or np.any(mask[:, 0] == 0):
            raise ValueError("every sequence needs at least one step")
        hsz = self.config.fund_hidden
        xw = nx.matmul(sequences, p["lstm.Wx"])                       # (B, T, 4H)
        h = Tensor(np.zeros((b, hsz)))
        c = Tensor(np.zeros((b, hsz)))
        for step in range(t):
            gates = nx.add(nx.add(xw[:, step, :], nx.matmul(h, p["lstm.Wh"])), p["lstm.b"])
            i = nx.sigmoid(gates[:, 0:hsz])
            f = nx.sigmoid(gates[:, hsz:2 * hsz])
            g = nx.tanh(gates[:, 2 * hsz:3 * hsz])
            o = nx.sigmoid(gates[:, 3 * hsz:])
            c_new = f * c + i * g
            h_new = o * nx.tanh(c_new)
            m = mask[:, step:step + 1]
            if np.all(m == 1):
                h, c = h_new, c_new
            else:
                h = h_new * m + h * (1.0 - m)
                c = c_new * m + c * (1.0 - m)
        return h

    # ---- classifier

    def score(self, fund_vecs: Tensor, company_vecs: Tensor, p: Mapping[str, Tensor] | None = None) -> Tensor:
        """Clamped inclusion probabilities, shape (B,)."""
        p = p or self.tensors()
        z = nx.concat([fund_vecs, company_vecs], axis=-1)
        hidden = nx.tanh(nx.linear(z, p["head.W1"], p["head.b1"]))
        logit = nx.linear(hidden, p["head.W2"], p["head.b2"])
        prob = nx.clip(nx.sigmoid(logit), self.config.clamp_eps, 1.0 - self.config.clamp_eps)
        return nx.reshape(prob, (prob.shape[0],))

    # ---- full pass

    def order_contexts(self, context: np.ndarray) -> np.ndarray:
        if self.config.context_order == "oldest_first":
            return context
        out = np.full_like(context, -1)
        for r, row in enumerate(context):
            valid = row[row >= 0][::-1]
            out[r, :valid.size] = valid
        return out

    def forward(self, companies: CompanyMatrix, context: np.ndarray, candidate: np.ndarray,
                p: Mapping[str, Tensor] | None = None) -> Tensor:
        p = p or self.tensors()
        context = self.order_contexts(np.asarray(context))
        candidate = np.asarray(candidate)
        used, inverse = np.unique(np.concatenate([context[context >= 0], candidate]), return_inverse=True)
        local = np.full(context.shape, 0, dtype=np.int64)
        local[context >= 0] = inverse[: int((context >= 0).sum())]
        cand_local = inverse[int((context >= 0).sum()):]
        emb, _ = self.embed_companies(companies.rows(used), p)
        seq = nx.gather_rows(emb, local)                              # (B, T, 256)
        fund_vecs = self.encode_funds(seq, context >= 0, p)
        return self.score(fund_vecs, nx.gather_rows(emb, cand_local), p)

    def predict_proba(self, companies: CompanyMatrix, examples: EncodedExamples, batch_size: int = 256) -> np.ndarray:
        out = []
        for start in range(0, len(examples), batch_size):
            part = examples.subset(slice(start, start + batch_size))
            out.append(self.forward(companies, part.context, part.candidate).data)
        return np.concatenate(out) if out else np.zeros(0)


# --------------------------------------------------------------------------
# single-item entry points


def embed_company(model: InclusionModel, bundle: ModalBundle) -> np.ndarray:
    inputs = {"text": bundle.text_vec[None], "num": bundle.num_vec[None],
              "cat": bundle.cat_vec[None], "struct": bundle.struct_vec[None]}
    emb, _ = model.embed_companies(inputs)
    return emb.data[0]


def encode_fund(model: InclusionModel, sequence: Sequence[np.ndarray]) -> np.ndarray:
    """LSTM state after consuming ``sequence`` (given oldest first) in the configured order."""
    if not 1 <= len(sequence) <= MAX_SEQUENCE:
        raise ValueError(f"fund context must hold 1..{MAX_SEQUENCE} companies, got {len(sequence)}")
    seq = np.stack(sequence)
    if model.config.context_order == "newest_first":
        seq = seq[::-1]
    return model.encode_funds(Tensor(seq[None]), np.ones((1, len(sequence)))).data[0]


def predict(model: InclusionModel, fund_vec: np.ndarray, company_vec: np.ndarray) -> float:
    return float(model.score(Tensor(np.asarray(fund_vec)[None]), Tensor(np.asarray(company_vec)[None])).data[0])


def bce_loss(prob: Tensor, labels: np.ndarray, clamp_eps: float = 1e-7) -> Tensor:
    """Mean binary cross-entropy of clamped probabilities."""
    labels = np.asarray(labels, dtype=np.float64)
    if not np.all((labels == 0) | (labels == 1)):
        raise ValueError("labels must be 0 or 1")
    if labels.shape != prob.shape:
        raise ShapeError(f"bce_loss: probabilities {prob.shape} vs labels {labels.shape}")
    prob = nx.clip(prob, clamp_eps, 1.0 - clamp_eps)
    per_example = -(nx.log(prob) * labels + nx.log(1.0 - prob) * (1.0 - labels))
    return nx.mean(per_example)


def batch_loss(model: InclusionModel, companies: CompanyMatrix, batch: EncodedExamples,
               p: Mapping[str, Tensor]) -> tuple[Tensor, Tensor]:
    prob = model.forward(companies, batch.context, batch.candidate, p)
    return bce_loss(prob, batch.labels, model.config.clamp_eps), prob


# --------------------------------------------------------------------------
# training


@dataclass
class TrainResult:
    params: dict[str, np.ndarray]
    history: list[dict]
    best_epoch: int
    best_f1: float


def train(model: InclusionModel, companies: CompanyMatrix, train_set: EncodedExamples,
          val_set: EncodedExamples, config: TrainConfig,
          on_epoch: Callable[[list[dict]], None] | None = None) -> TrainResult:
    """Mini-batch Adam on BCE; keeps the parameters with the best validation F1."""
    if len(train_set) == 0 or len(val_set) == 0:
        raise ValueError("training and validation sets must be non-empty")
    state = AdamState(config.learning_rate, config.beta1, config.beta2, config.adam_eps)
    rng = np.random.default_rng(config.seed)
    history: list[dict] = []
    best = {k: v.copy() for k, v in model.params.items()}
    best_f1, best_epoch = -1.0, 0

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(train_set))
        losses, seen_probs, seen_labels = [], [], []
        for b, start in enumerate(range(0, len(order), config.batch_size)):
            batch = train_set.subset(order[start:start + config.batch_size])
            p = model.tensors(requires_grad=True)
            try:
                loss, prob = batch_loss(model, companies, batch, p)
            except NumericalError as exc:
                raise NumericalError(f"epoch {epoch} batch {b}: {exc}") from exc
            value = loss.item()
            if not math.isfinite(value):
                raise NumericalError(f"epoch {epoch} batch {b}: non-finite loss {value} "
                                     f"(batch size {len(batch)}, positives {int(batch.labels.sum())})")
            loss.backward()
            grads = {k: t.grad for k, t in p.items() if t.grad is not None}
            nx.adam_step(model.params, grads, state)
            losses.append(value * len(batch))
            seen_probs.append(prob.data)
            seen_labels.append(batch.labels)
        train_report = compute_metrics(np.concatenate(seen_probs), np.concatenate(seen_labels), config.threshold)
        val_probs = model.predict_proba(companies, val_set)
        val_report = compute_metrics(val_probs, val_set.labels, config.threshold)
        rows = [
            {"epoch": epoch, "split": "train", "loss": sum(losses) / len(train_set),
             "precision": train_report.precision, "recall": train_report.recall, "f1": train_report.f1},
            {"epoch": epoch, "split": "val", "loss": _mean_bce(val_probs, val_set.labels, model.config.clamp_eps),
             "precision": val_report.precision, "recall": val_report.recall, "f1": val_report.f1},
        ]
        history.extend(rows)
        log.info("epoch %d: train loss %.4f, val loss %.4f, val F1 %.4f",
                 epoch, rows[0]["loss"], rows[1]["loss"], rows[1]["f1"])
        if on_epoch is not None:
            on_epoch(rows)
        if val_report.f1 > best_f1:
            best_f1, best_epoch = val_report.f1, epoch
            best = {k: v.copy() for k, v in model.params.items()}
    model.params = best
    return TrainResult(best, history, best_epoch, best_f1)


def _mean_bce(probs: np.ndarray, labels: np.ndarray, eps: float) -> float:
    p = np.clip(probs, eps, 1.0 - eps)
    return float(np.mean(-(labels * np.log(p) + (1 - labels) * np.log(1 - p))))


def config_dict(config) -> dict:
    return asdict(config)
