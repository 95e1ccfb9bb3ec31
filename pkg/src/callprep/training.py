"""Co-training loop: the retriever selects, the generator learns, both update.

Generator updates are plain AdamW on exact gradients. The retriever has no
differentiable path through the discrete top-k pick, so it learns from a
score-function estimator: selection is treated as a sample from the softmax
over segment scores, rewarded with the negative generator loss against a
moving-average baseline.
"""

from __future__ import annotations

import hashlib
import json
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .corpus import QuestionRecord, Transcript
from .errors import EmptyCorpus, NonFiniteGradient, SchemaViolation, ShapeMismatch
from .generator import (
    EOS_ID,
    GENERATOR_TOKEN_BUDGET,
    GeneratorConfig,
    GeneratorState,
    Vocab,
    build_input,
    embed_fn_for,
    init_generator,
    load_generator,
    loss_and_gradients,
    parameters,
    read_tensor_file,
    save_generator,
    softmax,
    write_tensor_file,
    zero_gradients,
)
from .retrieval import (
    BilinearRelevanceScorer,
    Bm25Index,
    RetrievalResult,
    bm25_build,
    bm25_score,
    random_retrieve,
    top_k_select,
)
from .textseg import Segment, segment_presentation

RETRIEVER_KINDS = ("random", "bm25", "pro")


@dataclass
class OptimState:
    """AdamW accumulators; moment shapes mirror the parameter arrays."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0

    @classmethod
    def for_params(cls, params: dict[str, np.ndarray], **kwargs) -> "OptimState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
            **kwargs,
        )


@dataclass
class TrainConfig:
    epochs: int = 3
    warmup_ratio: float = 0.1
    max_grad_norm: float = 1.0
    accumulation_steps: int = 32
    micro_batch: int = 1
    top_k: int = 6
    seed: int = 0
    checkpoint_dir: str | Path = "checkpoints"

    def __post_init__(self) -> None:
        if not 0.0 <= self.warmup_ratio < 1.0:
            raise ValueError("warmup_ratio must lie in [0, 1)")
        if self.accumulation_steps < 1:
            raise ValueError("accumulation_steps must be >= 1")
        if self.micro_batch < 1:
            raise ValueError("micro_batch must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")


@dataclass
class RetrieverUpdateState:
    """Reward baseline plus the per-window policy-gradient buffer."""

    baseline: float = 0.0
    initialized: bool = False
    decay: float = 0.9
    window: list[tuple[float, np.ndarray]] = field(default_factory=list)


def lr_at(
    step: int, total_steps: int, peak_lr: float = 2e-4, warmup_ratio: float = 0.1
) -> float:
    """Linear warmup to peak_lr over ceil(ratio * total) steps, then linear decay to 0."""
    if step < 0 or step > total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    if total_steps == 0:
        return 0.0
    warmup = math.ceil(warmup_ratio * total_steps)
    if step <= warmup:
        return peak_lr * (step / warmup) if warmup else peak_lr
    return peak_lr * (total_steps - step) / (total_steps - warmup)


def global_grad_norm(grads: dict[str, np.ndarray]) -> float:
    total = 0.0
    for g in grads.values():
        total += float(np.sum(g * g))
    if not np.isfinite(total):
        raise NonFiniteGradient("gradient contains NaN or infinity")
    return math.sqrt(total)


def clip_grad_norm(grads: dict[str, np.ndarray], max_norm: float = 1.0) -> float:
    """Scale all gradients so the global L2 norm is at most max_norm.

    Returns the factor applied (1.0 when no clipping happened). Direction is
    never changed, only magnitude.
    """
    norm = global_grad_norm(grads)
    if norm <= max_norm:
        return 1.0
    factor = max_norm / norm
    for g in grads.values():
        g *= factor
    return factor


def adamw_step(
    target: GeneratorState | dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    opt: OptimState,
    lr: float | None = None,
) -> GeneratorState | dict[str, np.ndarray]:
    """One decoupled-weight-decay Adam update with bias correction, in place."""
    params = parameters(target) if isinstance(target, GeneratorState) else target
    if set(params) != set(grads):
        raise ShapeMismatch(
            f"parameter/gradient keys differ: {sorted(set(params) ^ set(grads))}"
        )
    for name in params:
        if params[name].shape != grads[name].shape:
            raise ShapeMismatch(
                f"{name}: parameter {params[name].shape} vs gradient {grads[name].shape}"
            )
    step_lr = opt.lr if lr is None else lr
    opt.step += 1
    bc1 = 1.0 - opt.beta1**opt.step
    bc2 = 1.0 - opt.beta2**opt.step
    for name, p in params.items():
        g = grads[name]
        m = opt.m[name]
        v = opt.v[name]
        m[...] = opt.beta1 * m + (1.0 - opt.beta1) * g
        v[...] = opt.beta2 * v + (1.0 - opt.beta2) * (g * g)
        update = (m / bc1) / (np.sqrt(v / bc2) + opt.eps)
        p[...] = p - step_lr * (update + opt.weight_decay * p)
    return target


def stable_seed(*parts: object) -> int:
    """Deterministic 63-bit seed from arbitrary key parts (not salted like hash())."""
    digest = hashlib.blake2s(
        "\x1f".join(str(p) for p in parts).encode("utf-8"), digest_size=8
    ).digest()
    return int.from_bytes(digest, "little") >> 1


@dataclass
class StepResult:
    loss: float
    chosen_indices: list[int]
    updated: bool
    opt_step: int


class CoTrainer:
    """Owns the accumulation window and both optimizers for one training run."""

    def __init__(
        self,
        gen_state: GeneratorState,
        config: TrainConfig,
        total_steps: int,
        *,
        retriever: str = "pro",
        scorer: BilinearRelevanceScorer | None = None,
        gen_opt: OptimState | None = None,
        scorer_opt: OptimState | None = None,
        retriever_state: RetrieverUpdateState | None = None,
        input_budget: int = GENERATOR_TOKEN_BUDGET,
        bm25_k1: float = 1.2,
        bm25_b: float = 0.75,
    ):
        if retriever not in RETRIEVER_KINDS:
            raise ValueError(f"unknown retriever {retriever!r}")
        if retriever == "pro" and scorer is None:
            raise ValueError("pro retriever needs a relevance scorer")
        self.gen_state = gen_state
        self.config = config
        self.total_steps = total_steps
        self.retriever = retriever
        self.scorer = scorer
        self.gen_opt = gen_opt or OptimState.for_params(parameters(gen_state))
        self.scorer_opt = scorer_opt or (
            OptimState.for_params(scorer.parameters()) if scorer is not None else None
        )
        self.retriever_state = retriever_state or RetrieverUpdateState()
        self.input_budget = input_budget
        self.bm25_k1 = bm25_k1
        self.bm25_b = bm25_b

        self.opt_step = 0
        self.log: list[dict] = []
        self._segment_cache: dict[str, list[Segment]] = {}
        self._bm25_cache: dict[str, Bm25Index] = {}
        self._gen_buffer = zero_gradients(gen_state)
        self._window_losses: list[float] = []
        self._pending = 0
        self._last_chosen: list[int] = []

    def segments_for(self, transcript: Transcript) -> list[Segment]:
        segs = self._segment_cache.get(transcript.id)
        if segs is None:
            segs = segment_presentation(transcript)
            self._segment_cache[transcript.id] = segs
        return segs

    def _select(
        self, transcript: Transcript, question: QuestionRecord, segments: list[Segment]
    ) -> tuple[RetrievalResult, list | None]:
        if self.retriever == "random":
            seed = stable_seed(self.config.seed, transcript.id, question.question_id)
            return random_retrieve(len(segments), self.config.top_k, seed), None
        if self.retriever == "bm25":
            index = self._bm25_cache.get(transcript.id)
            if index is None:
                index = bm25_build(segments, self.bm25_k1, self.bm25_b)
                self._bm25_cache[transcript.id] = index
            return top_k_select(bm25_score(index, question.text), self.config.top_k), None
        judged = []
        caches = []
        for seg in segments:
            judgment, cache = self.scorer.judge_cached(seg.text, question.text)
            judged.append((seg.index, judgment.score))
            caches.append(cache)
        return top_k_select(judged, self.config.top_k), caches

    def _encode_target(self, question: QuestionRecord) -> list[int]:
        limit = max(1, self.gen_state.config.context_len - 16)
        return self.gen_state.vocab.encode(question.text)[:limit] + [EOS_ID]

    def co_train_step(
        self, example: tuple[Transcript, QuestionRecord]
    ) -> StepResult:
        """One micro-step: judge, select top-k, accumulate gradients; update when
        the accumulation window fills."""
        transcript, question = example
        segments = self.segments_for(transcript)
        result, caches = self._select(transcript, question, segments)

        target_ids = self._encode_target(question)
        budget = min(
            self.input_budget, self.gen_state.config.context_len - len(target_ids)
        )
        input_ids = build_input(result, segments, self.gen_state.vocab, budget=max(2, budget))
        step_loss, grads = loss_and_gradients(self.gen_state, input_ids, target_ids)
        for name, g in grads.items():
            self._gen_buffer[name] += g
        self._window_losses.append(step_loss)
        self._last_chosen = list(result.segment_indices)

        if self.retriever == "pro":
            # selection distribution over segments, in index order
            scores = np.array([cache.score for cache in caches])
            sigma = softmax(scores)
            chosen = set(result.segment_indices)
            picked = np.array(
                [1.0 if seg.index in chosen else 0.0 for seg in segments]
            )
            dlogpi_ds = picked - len(chosen) * sigma
            pg = np.zeros_like(self.scorer.weights)
            for weight, cache in zip(dlogpi_ds, caches):
                if weight != 0.0:
                    pg += weight * self.scorer.score_gradient(cache)
            self.retriever_state.window.append((-step_loss, pg))

        self._pending += 1
        updated = False
        if self._pending >= self.config.accumulation_steps:
            self._apply_update()
            updated = True
        return StepResult(step_loss, self._last_chosen, updated, self.opt_step)

    def flush(self) -> bool:
        """Apply a partial accumulation window, if one is pending."""
        if self._pending == 0:
            return False
        self._apply_update()
        return True

    def _apply_update(self) -> None:
        self.opt_step += 1
        gen_lr = lr_at(
            min(self.opt_step, self.total_steps),
            self.total_steps,
            peak_lr=self.gen_opt.lr,
            warmup_ratio=self.config.warmup_ratio,
        )
        pre_norm = global_grad_norm(self._gen_buffer)
        clip_grad_norm(self._gen_buffer, self.config.max_grad_norm)
        adamw_step(self.gen_state, self._gen_buffer, self.gen_opt, gen_lr)

        if self.retriever == "pro" and self.retriever_state.window:
            rs = self.retriever_state
            rewards = [r for r, _ in rs.window]
            if not rs.initialized:
                rs.baseline = float(np.mean(rewards))
                rs.initialized = True
            scorer_grad = np.zeros_like(self.scorer.weights)
            for reward, pg in rs.window:
                scorer_grad -= (reward - rs.baseline) * pg
            grad_map = {"bilinear": scorer_grad}
            clip_grad_norm(grad_map, self.config.max_grad_norm)
            scorer_lr = lr_at(
                min(self.opt_step, self.total_steps),
                self.total_steps,
                peak_lr=self.scorer_opt.lr,
                warmup_ratio=self.config.warmup_ratio,
            )
            adamw_step(self.scorer.parameters(), grad_map, self.scorer_opt, scorer_lr)
            for reward in rewards:
                rs.baseline = rs.decay * rs.baseline + (1.0 - rs.decay) * reward
            rs.window = []

        self.log.append(
            {
                "step": self.opt_step,
                "loss": float(np.mean(self._window_losses)),
                "lr": gen_lr,
                "grad_norm": pre_norm,
                "chosen_indices": self._last_chosen,
            }
        )
        self._gen_buffer = zero_gradients(self.gen_state)
        self._window_losses = []
        self._pending = 0


def _quantize_through_float32(arrays: dict[str, np.ndarray]) -> None:
    # Matches the save/load float32 round trip, so a continued run and a
    # resumed run see bit-identical parameters at every epoch boundary.
    for arr in arrays.values():
        arr[...] = arr.astype("<f4").astype(np.float64)


def save_optimizer(opt: OptimState, path: str | Path) -> None:
    tensors = {f"m.{k}": v for k, v in opt.m.items()}
    tensors.update({f"v.{k}": v for k, v in opt.v.items()})
    meta = {
        "step": opt.step,
        "lr": opt.lr,
        "beta1": opt.beta1,
        "beta2": opt.beta2,
        "eps": opt.eps,
        "weight_decay": opt.weight_decay,
    }
    write_tensor_file(path, "optimizer", meta, tensors)


def load_optimizer(path: str | Path) -> OptimState:
    kind, meta, tensors = read_tensor_file(path)
    if kind != "optimizer":
        raise SchemaViolation(f"{path} holds a {kind!r} checkpoint, not an optimizer")
    m = {k[2:]: v for k, v in tensors.items() if k.startswith("m.")}
    v = {k[2:]: v for k, v in tensors.items() if k.startswith("v.")}
    return OptimState(
        m=m,
        v=v,
        step=int(meta["step"]),
        lr=float(meta["lr"]),
        beta1=float(meta["beta1"]),
        beta2=float(meta["beta2"]),
        eps=float(meta["eps"]),
        weight_decay=float(meta["weight_decay"]),
    )


def save_retriever(
    scorer: BilinearRelevanceScorer,
    opt: OptimState,
    state: RetrieverUpdateState,
    path: str | Path,
) -> None:
    """Persist the training-only scorer; it is never used at generation time."""
    tensors = {
        "bilinear": scorer.weights,
        "opt.m.bilinear": opt.m["bilinear"],
        "opt.v.bilinear": opt.v["bilinear"],
        "baseline": np.array([state.baseline]),
    }
    meta = {
        "training_only": True,
        "dim": scorer.dim,
        "opt_step": opt.step,
        "lr": opt.lr,
        "baseline_initialized": state.initialized,
        "baseline_decay": state.decay,
    }
    write_tensor_file(path, "retriever", meta, tensors)


def load_retriever(
    path: str | Path, embed_fn: Callable[[str], np.ndarray]
) -> tuple[BilinearRelevanceScorer, OptimState, RetrieverUpdateState]:
    kind, meta, tensors = read_tensor_file(path)
    if kind != "retriever":
        raise SchemaViolation(f"{path} holds a {kind!r} checkpoint, not a retriever")
    scorer = BilinearRelevanceScorer(embed_fn, int(meta["dim"]), seed=0)
    scorer.weights = tensors["bilinear"]
    opt = OptimState(
        m={"bilinear": tensors["opt.m.bilinear"]},
        v={"bilinear": tensors["opt.v.bilinear"]},
        step=int(meta["opt_step"]),
        lr=float(meta["lr"]),
    )
    state = RetrieverUpdateState(
        baseline=float(tensors["baseline"][0]),
        initialized=bool(meta["baseline_initialized"]),
        decay=float(meta["baseline_decay"]),
    )
    return scorer, opt, state


@dataclass
class TrainResult:
    gen_state: GeneratorState
    scorer: BilinearRelevanceScorer | None
    log: list[dict]
    checkpoint_dir: Path
    log_path: Path


def _updates_per_epoch(n_examples: int, config: TrainConfig) -> int:
    micro_steps = math.ceil(n_examples / config.micro_batch)
    return math.ceil(micro_steps / config.accumulation_steps)


def train(
    pairs: Sequence[tuple[Transcript, QuestionRecord]],
    config: TrainConfig,
    *,
    retriever: str = "pro",
    model_dims: dict | None = None,
    lr: float = 2e-4,
    scorer_lr: float | None = None,
    weight_decay: float = 0.0,
    init_scale: float = 0.02,
    scorer_init_scale: float = 0.1,
    input_budget: int = GENERATOR_TOKEN_BUDGET,
    vocab_min_freq: int = 2,
    bm25_k1: float = 1.2,
    bm25_b: float = 0.75,
    resume_epoch: int | None = None,
    checkpointing: bool = True,
) -> TrainResult:
    """Run the full training loop and persist per-epoch checkpoints.

    Epoch n leaves ``epoch-<n>.ckpt`` and ``optim-<n>.ckpt`` (plus
    ``retriever-<n>.ckpt`` for the pro retriever, flagged training-only) in
    the checkpoint directory; ``epoch-0`` is the initial state. Passing
    ``resume_epoch=n`` continues from those files and reproduces the
    uninterrupted run exactly.
    """
    if not pairs:
        raise EmptyCorpus("training needs at least one (transcript, question) pair")
    if retriever not in RETRIEVER_KINDS:
        raise ValueError(f"unknown retriever {retriever!r}")

    ckpt_dir = Path(config.checkpoint_dir)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    log_path = ckpt_dir / "metrics.jsonl"

    scorer = None
    scorer_opt = None
    retr_state = None

    if resume_epoch is None:
        texts = [p for t, _ in pairs for p in t.presentation]
        texts += [q.text for _, q in pairs]
        vocab = Vocab.from_texts(texts, min_freq=vocab_min_freq)
        dims = model_dims or {}
        gen_config = GeneratorConfig(vocab_size=vocab.size, **dims)
        gen_state = init_generator(gen_config, vocab, seed=config.seed, init_scale=init_scale)
        gen_opt = OptimState.for_params(parameters(gen_state), lr=lr, weight_decay=weight_decay)
        if retriever == "pro":
            scorer = BilinearRelevanceScorer(
                embed_fn_for(gen_state),
                gen_config.d_model,
                seed=config.seed + 1,
                init_scale=scorer_init_scale,
            )
            scorer_opt = OptimState.for_params(scorer.parameters(), lr=scorer_lr or lr)
            retr_state = RetrieverUpdateState()
        start_epoch = 0
        _checkpoint(
            ckpt_dir, 0, gen_state, gen_opt, scorer, scorer_opt, retr_state,
            write_files=checkpointing,
        )
        log_path.write_text("", encoding="utf-8")
    else:
        gen_state = load_generator(ckpt_dir / f"epoch-{resume_epoch}.ckpt")
        gen_opt = load_optimizer(ckpt_dir / f"optim-{resume_epoch}.ckpt")
        if retriever == "pro":
            scorer, scorer_opt, retr_state = load_retriever(
                ckpt_dir / f"retriever-{resume_epoch}.ckpt", embed_fn_for(gen_state)
            )
            if scorer_lr is not None:
                scorer_opt.lr = scorer_lr
        gen_opt.lr = lr
        start_epoch = resume_epoch

    total_steps = config.epochs * _updates_per_epoch(len(pairs), config)
    trainer = CoTrainer(
        gen_state,
        config,
        total_steps,
        retriever=retriever,
        scorer=scorer,
        gen_opt=gen_opt,
        scorer_opt=scorer_opt,
        retriever_state=retr_state,
        input_budget=input_budget,
        bm25_k1=bm25_k1,
        bm25_b=bm25_b,
    )
    trainer.opt_step = start_epoch * _updates_per_epoch(len(pairs), config)

    logged = 0
    with open(log_path, "a", encoding="utf-8") as log_fh:
        for epoch in range(start_epoch + 1, config.epochs + 1):
            order = list(range(len(pairs)))
            random.Random(stable_seed(config.seed, "epoch", epoch)).shuffle(order)
            for pos in order:
                trainer.co_train_step(pairs[pos])
            trainer.flush()
            for record in trainer.log[logged:]:
                log_fh.write(json.dumps(record) + "\n")
            logged = len(trainer.log)
            log_fh.flush()
            _checkpoint(
                ckpt_dir, epoch, gen_state, gen_opt, scorer, scorer_opt,
                trainer.retriever_state if retriever == "pro" else None,
                write_files=checkpointing,
            )

    return TrainResult(
        gen_state=gen_state,
        scorer=scorer,
        log=trainer.log,
        checkpoint_dir=ckpt_dir,
        log_path=log_path,
    )


def _checkpoint(
    ckpt_dir: Path,
    epoch: int,
    gen_state: GeneratorState,
    gen_opt: OptimState,
    scorer: BilinearRelevanceScorer | None,
    scorer_opt: OptimState | None,
    retr_state: RetrieverUpdateState | None,
    write_files: bool = True,
) -> None:
    # the quantize pass runs even when files are skipped, so traces match
    # between checkpointing and non-checkpointing runs
    if write_files:
        save_generator(gen_state, ckpt_dir / f"epoch-{epoch}.ckpt")
        save_optimizer(gen_opt, ckpt_dir / f"optim-{epoch}.ckpt")
    _quantize_through_float32(parameters(gen_state))
    _quantize_through_float32(gen_opt.m)
    _quantize_through_float32(gen_opt.v)
    if scorer is not None and scorer_opt is not None and retr_state is not None:
        if write_files:
            save_retriever(
                scorer, scorer_opt, retr_state, ckpt_dir / f"retriever-{epoch}.ckpt"
            )
        _quantize_through_float32(scorer.parameters())
        _quantize_through_float32(scorer_opt.m)
        _quantize_through_float32(scorer_opt.v)
        retr_state.baseline = float(np.float32(retr_state.baseline))


# --- planted-relevance synthetic corpus ---

_FILLER_WORDS = (
    "revenue growth margin operating cash flow guidance outlook segment results "
    "performance capital expenses demand pipeline bookings churn pricing volume "
    "headwinds tailwinds productivity execution strategy investments innovation "
    "customers partners expansion international enterprise subscription renewal "
    "backlog inventory logistics supply seasonality profitability efficiency"
).split()

_SYLLABLES = (
    "ba be bi bo bu da de di do du fa fe fi fo fu ga ge gi go gu ka ke ki ko ku "
    "la le li lo lu ma me mi mo mu na ne ni no nu pa pe pi po pu ra re ri ro ru "
    "sa se si so su ta te ti to tu va ve vi vo vu za ze zi zo zu"
).split()


@dataclass
class SyntheticCorpus:
    """Verification corpus where each question's relevant segments are known."""

    transcripts: list[Transcript]
    questions: list[QuestionRecord]
    planted: dict[tuple[str, str], list[int]]

    @property
    def pairs(self) -> list[tuple[Transcript, QuestionRecord]]:
        by_id = {t.id: t for t in self.transcripts}
        return [(by_id[q.transcript_id], q) for q in self.questions]


def make_synthetic_corpus(
    n_docs: int,
    n_segments_per_doc: int,
    seed: int,
    *,
    segment_words: int = 68,
    keyword_occurrences: int = 12,
    filler_pool_size: int = 4,
    n_companies: int = 5,
) -> SyntheticCorpus:
    """Build a corpus of filler segments with two keyword-bearing planted ones.

    Every document hides two unique nonsense keywords, one per planted
    segment; the reference question is templated from both keywords, which
    appear nowhere else. Filler text is a fixed function of the segment slot
    and shared by all documents, so the planted segments are the only content
    that identifies a document; any document-unique filler lets the generator
    memorize questions from the filler fingerprint, which flattens the
    retrieval reward. Segment sentences are long enough that each becomes its
    own retrieval segment.
    """
    if n_segments_per_doc < 4:
        raise ValueError("n_segments_per_doc must be >= 4")
    if segment_words <= 64 or segment_words > 128 - 1:
        raise ValueError("segment_words must keep one sentence per segment (65..127)")

    rng = random.Random(seed)
    used_keywords: set[str] = set()

    def fresh_keyword() -> str:
        while True:
            word = "".join(rng.choice(_SYLLABLES) for _ in range(3))
            if word not in used_keywords and word not in _FILLER_WORDS:
                used_keywords.add(word)
                return word

    filler_pool = [
        [rng.choice(_FILLER_WORDS) for _ in range(segment_words)]
        for _ in range(filler_pool_size)
    ]

    transcripts: list[Transcript] = []
    questions: list[QuestionRecord] = []
    planted: dict[tuple[str, str], list[int]] = {}

    for doc in range(n_docs):
        tid = f"doc{doc:03d}"
        keywords = (fresh_keyword(), fresh_keyword())
        planted_at = sorted(rng.sample(range(n_segments_per_doc), 2))
        paragraphs = []
        for pos in range(n_segments_per_doc):
            if pos in planted_at:
                keyword = keywords[planted_at.index(pos)]
                words = [rng.choice(_FILLER_WORDS) for _ in range(segment_words)]
                for slot in rng.sample(range(segment_words), keyword_occurrences):
                    words[slot] = keyword
            else:
                words = list(filler_pool[pos % filler_pool_size])
            words[0] = words[0].capitalize()
            paragraphs.append(" ".join(words) + ".")
        ordered = list(keywords) if rng.random() < 0.5 else list(reversed(keywords))
        question_text = f"What is driving {ordered[0]} and {ordered[1]}?"
        question = QuestionRecord(
            transcript_id=tid,
            question_id="q0000",
            text=question_text,
            word_count=len(question_text.split()),
        )
        transcripts.append(
            Transcript(
                id=tid,
                company=f"synthco{doc % n_companies:02d}",
                date="2023-01-01",
                presentation=paragraphs,
                qa_turns=[],
            )
        )
        questions.append(question)
        planted[(tid, question.question_id)] = planted_at

    return SyntheticCorpus(transcripts, questions, planted)


def planted_recall(
    corpus: SyntheticCorpus,
    select: Callable[[Transcript, QuestionRecord, list[Segment]], RetrievalResult],
) -> float:
    """Mean fraction of planted segments that land in the selected set."""
    seg_cache: dict[str, list[Segment]] = {}
    total = 0.0
    for transcript, question in corpus.pairs:
        segments = seg_cache.setdefault(
            transcript.id, segment_presentation(transcript)
        )
        result = select(transcript, question, segments)
        truth = corpus.planted[(transcript.id, question.question_id)]
        hit = len(set(result.segment_indices) & set(truth))
        total += hit / len(truth)
    return total / len(corpus.questions)
