"""Reference autoregressive question generator.

A small causal self-attention language model implemented directly on numpy
arrays: exact forward pass, token-level cross-entropy loss, hand-derived
gradients (checked against finite differences in the test suite), and
greedy / temperature / nucleus decoding. Parameters are float64 in memory;
checkpoints store little-endian float32 tensors.
"""

from __future__ import annotations

import json
import struct
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Protocol, Sequence

import numpy as np

from .errors import (
    BackendFailure,
    ContextOverflow,
    EmptySelection,
    EmptyTarget,
    IoFailure,
    SchemaViolation,
)
from .retrieval import RetrievalResult
from .textseg import Segment, detokenize

GENERATOR_TOKEN_BUDGET = 1400

PAD_ID = 0
BOS_ID = 1
EOS_ID = 2
UNK_ID = 3
SEP_ID = 4
RESERVED_TOKENS = ("<pad>", "<bos>", "<eos>", "<unk>", "<sep>")

_GELU_C = np.sqrt(2.0 / np.pi)


@dataclass
class Vocab:
    """Token vocabulary with five reserved ids at the front."""

    id_to_token: list[str]
    token_to_id: dict[str, int]

    @classmethod
    def from_texts(cls, texts: Iterable[str], min_freq: int = 2) -> "Vocab":
        """Build from corpus text; tokens seen fewer than min_freq times map to UNK."""
        from .textseg import tokenize

        counts: Counter[str] = Counter()
        for text in texts:
            counts.update(tok.text for tok in tokenize(text))
        kept = sorted(
            (t for t, c in counts.items() if c >= min_freq and t not in RESERVED_TOKENS),
            key=lambda t: (-counts[t], t),
        )
        id_to_token = list(RESERVED_TOKENS) + kept
        return cls(id_to_token, {t: i for i, t in enumerate(id_to_token)})

    @property
    def size(self) -> int:
        return len(self.id_to_token)

    def encode(self, text: str) -> list[int]:
        from .textseg import tokenize

        return [
            self.token_to_id.get(tok.text, UNK_ID) for tok in tokenize(text)
        ]

    def decode_tokens(self, ids: Sequence[int]) -> list[str]:
        """Token texts for the given ids, skipping the reserved ids."""
        return [
            self.id_to_token[i]
            for i in ids
            if len(RESERVED_TOKENS) <= i < self.size
        ]


@dataclass
class GeneratorConfig:
    vocab_size: int
    d_model: int = 64
    n_layers: int = 1
    n_heads: int = 2
    context_len: int = 512

    def __post_init__(self) -> None:
        if self.vocab_size < len(RESERVED_TOKENS):
            raise ValueError("vocab_size must cover the reserved ids")
        if min(self.d_model, self.n_layers, self.n_heads, self.context_len) < 1:
            raise ValueError("model dimensions must be positive")
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")

    @property
    def d_ff(self) -> int:
        return 4 * self.d_model


@dataclass
class LayerParams:
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    w_o: np.ndarray
    w_ff1: np.ndarray
    b_ff1: np.ndarray
    w_ff2: np.ndarray
    b_ff2: np.ndarray


@dataclass
class GeneratorState:
    """Model parameters; the output projection is tied to the embedding matrix."""

    config: GeneratorConfig
    vocab: Vocab
    embedding: np.ndarray
    pos_embedding: np.ndarray
    layers: list[LayerParams] = field(default_factory=list)


def init_generator(
    config: GeneratorConfig, vocab: Vocab, seed: int = 0, init_scale: float = 0.02
) -> GeneratorState:
    if vocab.size != config.vocab_size:
        raise ValueError(
            f"vocab size {vocab.size} does not match config.vocab_size {config.vocab_size}"
        )
    rng = np.random.default_rng(seed)
    d, ff = config.d_model, config.d_ff

    def w(*shape: int) -> np.ndarray:
        return rng.normal(0.0, init_scale, size=shape)

    layers = [
        LayerParams(
            w_q=w(d, d),
            w_k=w(d, d),
            w_v=w(d, d),
            w_o=w(d, d),
            w_ff1=w(d, ff),
            b_ff1=np.zeros(ff),
            w_ff2=w(ff, d),
            b_ff2=np.zeros(d),
        )
        for _ in range(config.n_layers)
    ]
    return GeneratorState(
        config=config,
        vocab=vocab,
        embedding=w(config.vocab_size, d),
        pos_embedding=w(config.context_len, d),
        layers=layers,
    )


def parameters(state: GeneratorState) -> dict[str, np.ndarray]:
    """Live references to every parameter array, keyed by a stable name."""
    params = {"embedding": state.embedding, "pos_embedding": state.pos_embedding}
    for i, layer in enumerate(state.layers):
        for name in ("w_q", "w_k", "w_v", "w_o", "w_ff1", "b_ff1", "w_ff2", "b_ff2"):
            params[f"layers.{i}.{name}"] = getattr(layer, name)
    return params


def zero_gradients(state: GeneratorState) -> dict[str, np.ndarray]:
    return {name: np.zeros_like(arr) for name, arr in parameters(state).items()}


def _gelu(a: np.ndarray) -> np.ndarray:
    return 0.5 * a * (1.0 + np.tanh(_GELU_C * (a + 0.044715 * a**3)))


def _gelu_prime(a: np.ndarray) -> np.ndarray:
    t = np.tanh(_GELU_C * (a + 0.044715 * a**3))
    return 0.5 * (1.0 + t) + 0.5 * a * (1.0 - t**2) * _GELU_C * (1.0 + 3 * 0.044715 * a**2)


def _split_heads(x: np.ndarray, n_heads: int) -> np.ndarray:
    t, d = x.shape
    return x.reshape(t, n_heads, d // n_heads).transpose(1, 0, 2)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    h, t, dk = x.shape
    return x.transpose(1, 0, 2).reshape(t, h * dk)


def _forward_cached(state: GeneratorState, ids: Sequence[int]) -> tuple[np.ndarray, dict]:
    cfg = state.config
    t = len(ids)
    if t > cfg.context_len:
        raise ContextOverflow(f"sequence of {t} tokens exceeds context {cfg.context_len}")
    idx = np.asarray(ids, dtype=np.intp)
    if t and (idx.min() < 0 or idx.max() >= cfg.vocab_size):
        raise ValueError("token id out of vocabulary range")

    x = state.embedding[idx] + state.pos_embedding[:t]
    mask = np.triu(np.ones((t, t), dtype=bool), k=1)
    scale = 1.0 / np.sqrt(cfg.d_model // cfg.n_heads)

    cache: dict = {"ids": idx, "x0": x, "layers": []}
    for layer in state.layers:
        x_in = x
        q = _split_heads(x_in @ layer.w_q, cfg.n_heads)
        k = _split_heads(x_in @ layer.w_k, cfg.n_heads)
        v = _split_heads(x_in @ layer.w_v, cfg.n_heads)
        scores = (q @ k.transpose(0, 2, 1)) * scale
        scores[:, mask] = -np.inf
        shifted = scores - scores.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        attn = e / e.sum(axis=-1, keepdims=True)
        ctx = _merge_heads(attn @ v)
        x_mid = x_in + ctx @ layer.w_o

        h_pre = x_mid @ layer.w_ff1 + layer.b_ff1
        g = _gelu(h_pre)
        x = x_mid + g @ layer.w_ff2 + layer.b_ff2

        cache["layers"].append(
            {"x_in": x_in, "q": q, "k": k, "v": v, "attn": attn, "ctx": ctx,
             "x_mid": x_mid, "h_pre": h_pre, "g": g}
        )

    cache["x_final"] = x
    logits = x @ state.embedding.T
    return logits, cache


def forward(state: GeneratorState, ids: Sequence[int]) -> np.ndarray:
    """Causal forward pass: row t of the result depends only on ids[0..t]."""
    logits, _ = _forward_cached(state, ids)
    return logits


def _backward(
    state: GeneratorState, cache: dict, d_logits: np.ndarray
) -> dict[str, np.ndarray]:
    cfg = state.config
    scale = 1.0 / np.sqrt(cfg.d_model // cfg.n_heads)
    grads = zero_gradients(state)

    grads["embedding"] += d_logits.T @ cache["x_final"]
    d_x = d_logits @ state.embedding

    for i in range(len(state.layers) - 1, -1, -1):
        layer = state.layers[i]
        lc = cache["layers"][i]
        # feed-forward block
        d_f = d_x
        grads[f"layers.{i}.w_ff2"] += lc["g"].T @ d_f
        grads[f"layers.{i}.b_ff2"] += d_f.sum(axis=0)
        d_g = d_f @ layer.w_ff2.T
        d_h = d_g * _gelu_prime(lc["h_pre"])
        grads[f"layers.{i}.w_ff1"] += lc["x_mid"].T @ d_h
        grads[f"layers.{i}.b_ff1"] += d_h.sum(axis=0)
        d_x = d_x + d_h @ layer.w_ff1.T

        # attention block
        d_o = d_x
        grads[f"layers.{i}.w_o"] += lc["ctx"].T @ d_o
        d_ctx = _split_heads(d_o @ layer.w_o.T, cfg.n_heads)
        d_attn = d_ctx @ lc["v"].transpose(0, 2, 1)
        d_v = lc["attn"].transpose(0, 2, 1) @ d_ctx
        attn = lc["attn"]
        d_scores = attn * (d_attn - (d_attn * attn).sum(axis=-1, keepdims=True))
        d_q = (d_scores @ lc["k"]) * scale
        d_k = (d_scores.transpose(0, 2, 1) @ lc["q"]) * scale

        x_in = lc["x_in"]
        grads[f"layers.{i}.w_q"] += x_in.T @ _merge_heads(d_q)
        grads[f"layers.{i}.w_k"] += x_in.T @ _merge_heads(d_k)
        grads[f"layers.{i}.w_v"] += x_in.T @ _merge_heads(d_v)
        d_x = (
            d_x
            + _merge_heads(d_q) @ layer.w_q.T
            + _merge_heads(d_k) @ layer.w_k.T
            + _merge_heads(d_v) @ layer.w_v.T
        )

    np.add.at(grads["embedding"], cache["ids"], d_x)
    grads["pos_embedding"][: d_x.shape[0]] += d_x
    return grads


def _target_positions(n_input: int, n_target: int) -> range:
    # position p of the fed sequence predicts token p+1
    return range(n_input - 1, n_input - 1 + n_target)


def _log_softmax(row: np.ndarray) -> np.ndarray:
    shifted = row - row.max()
    return shifted - np.log(np.exp(shifted).sum())


def loss(
    state: GeneratorState, input_ids: Sequence[int], target_ids: Sequence[int]
) -> float:
    """Mean negative log-likelihood of the target tokens given the input.

    The sum-form cross-entropy is divided by the target length so losses are
    comparable across question lengths.
    """
    logits, _ = _prepare_loss(state, input_ids, target_ids)
    total = 0.0
    for pos, tgt in zip(_target_positions(len(input_ids), len(target_ids)), target_ids):
        total -= _log_softmax(logits[pos])[tgt]
    return total / len(target_ids)


def _prepare_loss(
    state: GeneratorState, input_ids: Sequence[int], target_ids: Sequence[int]
) -> tuple[np.ndarray, dict]:
    if not input_ids:
        raise ValueError("input_ids must be non-empty")
    if not target_ids:
        raise EmptyTarget("target_ids must be non-empty")
    fed = list(input_ids) + list(target_ids[:-1])
    return _forward_cached(state, fed)


def loss_and_gradients(
    state: GeneratorState, input_ids: Sequence[int], target_ids: Sequence[int]
) -> tuple[float, dict[str, np.ndarray]]:
    """Loss plus exact gradients of every parameter array."""
    logits, cache = _prepare_loss(state, input_ids, target_ids)
    m = len(target_ids)
    d_logits = np.zeros_like(logits)
    total = 0.0
    for pos, tgt in zip(_target_positions(len(input_ids), m), target_ids):
        logp = _log_softmax(logits[pos])
        total -= logp[tgt]
        p = np.exp(logp)
        d_logits[pos] = p / m
        d_logits[pos, tgt] -= 1.0 / m
    return total / m, _backward(state, cache, d_logits)


def gradients(
    state: GeneratorState, input_ids: Sequence[int], target_ids: Sequence[int]
) -> dict[str, np.ndarray]:
    return loss_and_gradients(state, input_ids, target_ids)[1]


@dataclass
class DecodeParams:
    strategy: str = "sample"
    temperature: float = 0.7
    top_p: float = 0.9
    max_new_tokens: int = 200
    seed: int = 0

    def __post_init__(self) -> None:
        if self.strategy not in ("greedy", "sample"):
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0")
        if not 0.0 < self.top_p <= 1.0:
            raise ValueError("top_p must lie in (0, 1]")
        if self.max_new_tokens < 0:
            raise ValueError("max_new_tokens must be >= 0")


def softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - np.max(z)
    e = np.exp(shifted)
    return e / e.sum()


def nucleus_filter(probs: np.ndarray, top_p: float) -> tuple[np.ndarray, np.ndarray]:
    """Smallest prefix of the descending-probability ordering with mass >= top_p.

    Probability ties in the ordering break by ascending token id; the kept
    probabilities are renormalized to sum to one.
    """
    if not 0.0 < top_p <= 1.0:
        raise ValueError("top_p must lie in (0, 1]")
    probs = np.asarray(probs, dtype=np.float64)
    order = np.lexsort((np.arange(probs.size), -probs))
    cum = np.cumsum(probs[order])
    cut = int(np.searchsorted(cum, top_p, side="left"))
    cut = min(cut, probs.size - 1)
    keep = order[: cut + 1]
    kept = probs[keep]
    return keep, kept / kept.sum()


def decode(
    state: GeneratorState, input_ids: Sequence[int], params: DecodeParams
) -> list[int]:
    """Autoregressive decoding; returns the newly generated ids.

    Stops after max_new_tokens or when EOS is produced (the EOS is included
    in the result). When the sequence outgrows the context window, the
    window slides to the most recent tokens.
    """
    if not input_ids:
        raise ValueError("decode needs a non-empty prompt")
    ids = list(input_ids)
    rng = np.random.default_rng(params.seed)
    out: list[int] = []
    for _ in range(params.max_new_tokens):
        context = ids[-state.config.context_len :]
        logits = forward(state, context)[-1]
        if params.strategy == "greedy":
            nxt = int(np.argmax(logits))
        else:
            probs = softmax(logits / params.temperature)
            keep, kept_probs = nucleus_filter(probs, params.top_p)
            nxt = int(rng.choice(keep, p=kept_probs))
        out.append(nxt)
        ids.append(nxt)
        if nxt == EOS_ID:
            break
    return out


def build_input(
    result: RetrievalResult,
    segments: Sequence[Segment],
    vocab: Vocab,
    budget: int = GENERATOR_TOKEN_BUDGET,
) -> list[int]:
    """BOS + retrieved segment tokens joined by SEP, tail-truncated to the budget."""
    if budget < 1:
        raise ValueError("budget must be >= 1")
    by_index = {seg.index: seg for seg in segments}
    ids = [BOS_ID]
    for idx in result.segment_indices:
        if idx not in by_index:
            raise ValueError(f"retrieval result references unknown segment index {idx}")
        ids.extend(vocab.encode(by_index[idx].text))
        ids.append(SEP_ID)
    return ids[:budget]


def generate_question(
    state: GeneratorState,
    segments: Sequence[Segment],
    result: RetrievalResult,
    params: DecodeParams,
) -> str:
    """Decode a question from the selected segments and detokenize it."""
    if not result.segment_indices:
        raise EmptySelection("generation needs at least one selected segment")
    ids = build_input(
        result,
        segments,
        state.vocab,
        budget=min(GENERATOR_TOKEN_BUDGET, state.config.context_len),
    )
    new_ids = decode(state, ids, params)
    return detokenize(state.vocab.decode_tokens(new_ids))


def mean_embedding(state: GeneratorState, text: str) -> np.ndarray:
    """Mean embedding row over the encoded tokens; zeros for empty text."""
    ids = state.vocab.encode(text)
    if not ids:
        return np.zeros(state.config.d_model)
    return state.embedding[np.asarray(ids, dtype=np.intp)].mean(axis=0)


def embed_fn_for(state: GeneratorState) -> Callable[[str], np.ndarray]:
    """Text featurizer for the trainable scorer; token ids are cached per text.

    Embedding rows are read live from the state, so the features follow
    generator training.
    """
    id_cache: dict[str, np.ndarray] = {}

    def embed(text: str) -> np.ndarray:
        ids = id_cache.get(text)
        if ids is None:
            ids = np.asarray(state.vocab.encode(text), dtype=np.intp)
            id_cache[text] = ids
        if ids.size == 0:
            return np.zeros(state.config.d_model)
        return state.embedding[ids].mean(axis=0)

    return embed


# --- checkpoint container ---

_MAGIC = b"CPCKPT01"
_FORMAT_VERSION = 1


def write_tensor_file(
    path: str | Path, kind: str, meta: dict, tensors: dict[str, np.ndarray]
) -> None:
    """Versioned binary dump: JSON header with shapes, then raw <f4 data."""
    header = {
        "format_version": _FORMAT_VERSION,
        "kind": kind,
        "meta": meta,
        "tensors": [{"name": k, "shape": list(v.shape)} for k, v in tensors.items()],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    try:
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack("<I", len(blob)))
            fh.write(blob)
            for arr in tensors.values():
                fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    except OSError as exc:
        raise IoFailure(f"cannot write checkpoint {path}: {exc}") from exc


def read_tensor_file(path: str | Path) -> tuple[str, dict, dict[str, np.ndarray]]:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read checkpoint {path}: {exc}") from exc
    if raw[: len(_MAGIC)] != _MAGIC:
        raise SchemaViolation(f"{path} is not a checkpoint file")
    header_len = struct.unpack("<I", raw[len(_MAGIC) : len(_MAGIC) + 4])[0]
    start = len(_MAGIC) + 4
    header = json.loads(raw[start : start + header_len].decode("utf-8"))
    if header.get("format_version") != _FORMAT_VERSION:
        raise SchemaViolation(f"unsupported checkpoint version {header.get('format_version')}")
    offset = start + header_len
    tensors: dict[str, np.ndarray] = {}
    for spec in header["tensors"]:
        count = int(np.prod(spec["shape"])) if spec["shape"] else 1
        nbytes = 4 * count
        flat = np.frombuffer(raw[offset : offset + nbytes], dtype="<f4")
        if flat.size != count:
            raise SchemaViolation(f"truncated tensor data in {path}")
        tensors[spec["name"]] = flat.astype(np.float64).reshape(spec["shape"])
        offset += nbytes
    return header["kind"], header["meta"], tensors


def save_generator(state: GeneratorState, path: str | Path) -> None:
    meta = {
        "config": {
            "vocab_size": state.config.vocab_size,
            "d_model": state.config.d_model,
            "n_layers": state.config.n_layers,
            "n_heads": state.config.n_heads,
            "context_len": state.config.context_len,
        },
        "vocab": state.vocab.id_to_token,
    }
    write_tensor_file(path, "generator", meta, parameters(state))


def load_generator(path: str | Path) -> GeneratorState:
    kind, meta, tensors = read_tensor_file(path)
    if kind != "generator":
        raise SchemaViolation(f"{path} holds a {kind!r} checkpoint, not a generator")
    config = GeneratorConfig(**meta["config"])
    vocab = Vocab(meta["vocab"], {t: i for i, t in enumerate(meta["vocab"])})
    state = init_generator(config, vocab, seed=0)
    params = parameters(state)
    if set(params) != set(tensors):
        raise SchemaViolation(f"checkpoint tensors do not match the model layout")
    for name, arr in params.items():
        if arr.shape != tensors[name].shape:
            raise SchemaViolation(
                f"tensor {name} has shape {tensors[name].shape}, expected {arr.shape}"
            )
        arr[...] = tensors[name]
    return state


# --- external generator backend contract ---


class GeneratorBackend(Protocol):
    """Swap-in contract for external generators: prompt text in, question out."""

    def generate(self, prompt: str, params: DecodeParams) -> str: ...


class LocalGeneratorBackend:
    """The reference model behind the backend contract."""

    def __init__(self, state: GeneratorState):
        self.state = state

    def generate(self, prompt: str, params: DecodeParams) -> str:
        ids = [BOS_ID] + self.state.vocab.encode(prompt)
        ids = ids[: min(GENERATOR_TOKEN_BUDGET, self.state.config.context_len)]
        new_ids = decode(self.state, ids, params)
        return detokenize(self.state.vocab.decode_tokens(new_ids))


class RemoteGeneratorBackend:
    """External generator behind a wire contract.

    Request: ``{"prompt": <str>, "params": {strategy, temperature, top_p,
    max_new_tokens, seed}}``; response: ``{"question": <str>}``.
    """

    def __init__(self, transport: Callable[[dict], dict]):
        self.transport = transport

    def generate(self, prompt: str, params: DecodeParams) -> str:
        request = {
            "prompt": prompt,
            "params": {
                "strategy": params.strategy,
                "temperature": params.temperature,
                "top_p": params.top_p,
                "max_new_tokens": params.max_new_tokens,
                "seed": params.seed,
            },
        }
        try:
            response = self.transport(request)
        except Exception as exc:
            raise BackendFailure(f"generator backend unreachable: {exc}") from exc
        question = response.get("question") if isinstance(response, dict) else None
        if not isinstance(question, str):
            raise BackendFailure(f"malformed generator response: {response!r}")
        return question
