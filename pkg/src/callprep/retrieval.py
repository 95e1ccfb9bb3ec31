"""Segment retrieval: random selection, BM25, and prompt-based relevance scoring.

All three strategies end in the same place: an ordered top-k pick of segment
indices returned in presentation order, ready to be concatenated into the
generator input.
"""

from __future__ import annotations

import logging
import math
import random
from collections import Counter
from dataclasses import dataclass, field
from string import Template
from typing import Callable, Protocol, Sequence

import numpy as np

from .errors import BackendFailure, EmptySegments
from .textseg import Segment, tokenize

logger = logging.getLogger(__name__)

DEFAULT_TOP_K = 6
DEFAULT_K1 = 1.2
DEFAULT_B = 0.75
RETRIEVER_TOKEN_BUDGET = 512

_PROB_TOL = 1e-9

PROMPT_TEMPLATE = (
    "Given a manager's presentation transcript during an earnings call and an "
    "analyst's query, discern if the query is deeply anchored, tangentially "
    "connected, or aloof from the manager's discourse? "
    '("Highly Related"/"Partially Related"/"Not Related") '
    "Transcript: ${presentation} Question: ${question} "
    "Assistant: The assessment is [MASK]"
)
_PROMPT = Template(PROMPT_TEMPLATE)


@dataclass(frozen=True)
class RelevanceJudgment:
    """Label probabilities for one (segment, question) pair and their score."""

    p_highly: float
    p_partially: float
    p_not: float
    score: float

    def __post_init__(self) -> None:
        probs = (self.p_highly, self.p_partially, self.p_not)
        if any(not (0.0 <= p <= 1.0) for p in probs):
            raise ValueError(f"label probabilities must lie in [0,1], got {probs}")
        if abs(sum(probs) - 1.0) > _PROB_TOL:
            raise ValueError(f"label probabilities must sum to 1, got {sum(probs)!r}")
        expected = self.p_highly + self.p_partially - self.p_not
        if abs(self.score - expected) > _PROB_TOL:
            raise ValueError(f"score {self.score!r} != highly+partially-not ({expected!r})")

    @classmethod
    def from_probs(cls, p_highly: float, p_partially: float, p_not: float) -> "RelevanceJudgment":
        return cls(p_highly, p_partially, p_not, p_highly + p_partially - p_not)


@dataclass
class RetrievalResult:
    """Chosen segment indices in presentation order with their scores."""

    segment_indices: list[int]
    scores: list[float]

    def __post_init__(self) -> None:
        if len(self.segment_indices) != len(self.scores):
            raise ValueError("segment_indices and scores must be parallel")
        if any(b <= a for a, b in zip(self.segment_indices, self.segment_indices[1:])):
            raise ValueError(f"indices must be strictly increasing: {self.segment_indices}")


@dataclass
class Bm25Index:
    doc_freqs: dict[str, int]
    doc_lens: dict[int, int]
    avg_doc_len: float
    n_docs: int
    postings: dict[str, list[tuple[int, int]]]
    k1: float = DEFAULT_K1
    b: float = DEFAULT_B


def _terms(text: str) -> list[str]:
    return [tok.text.lower() for tok in tokenize(text)]


def random_retrieve(n_segments: int, k: int, seed: int) -> RetrievalResult:
    """Uniform sample of min(k, n) indices without replacement, in ascending order."""
    if n_segments < 1:
        raise ValueError("n_segments must be >= 1")
    if k < 1:
        raise ValueError("k must be >= 1")
    rng = random.Random(seed)
    chosen = sorted(rng.sample(range(n_segments), min(k, n_segments)))
    return RetrievalResult(segment_indices=chosen, scores=[0.0] * len(chosen))


def bm25_build(
    segments: Sequence[Segment], k1: float = DEFAULT_K1, b: float = DEFAULT_B
) -> Bm25Index:
    """Build an inverted index over lowercased segment tokens."""
    if not segments:
        raise EmptySegments("bm25_build needs at least one segment")
    if k1 <= 0:
        raise ValueError("k1 must be positive")
    if not 0.0 <= b <= 1.0:
        raise ValueError("b must lie in [0,1]")

    doc_freqs: dict[str, int] = {}
    doc_lens: dict[int, int] = {}
    postings: dict[str, list[tuple[int, int]]] = {}
    for seg in segments:
        terms = _terms(seg.text)
        doc_lens[seg.index] = len(terms)
        for term, tf in sorted(Counter(terms).items()):
            doc_freqs[term] = doc_freqs.get(term, 0) + 1
            postings.setdefault(term, []).append((seg.index, tf))

    return Bm25Index(
        doc_freqs=doc_freqs,
        doc_lens=doc_lens,
        avg_doc_len=sum(doc_lens.values()) / len(doc_lens),
        n_docs=len(doc_lens),
        postings=postings,
        k1=k1,
        b=b,
    )


def bm25_idf(index: Bm25Index, term: str) -> float:
    df = index.doc_freqs.get(term, 0)
    return math.log((index.n_docs - df + 0.5) / (df + 0.5) + 1.0)


def bm25_score(index: Bm25Index, query: str) -> list[tuple[int, float]]:
    """Score every indexed segment against the query.

    Returns (segment index, score) pairs in descending score order, ties
    broken by ascending index. An empty or fully out-of-vocabulary query
    yields all-zero scores.
    """
    scores = {idx: 0.0 for idx in index.doc_lens}
    for term in _terms(query):
        posting = index.postings.get(term)
        if not posting:
            continue
        idf = bm25_idf(index, term)
        for idx, tf in posting:
            length_norm = index.k1 * (
                1.0 - index.b + index.b * index.doc_lens[idx] / index.avg_doc_len
            )
            scores[idx] += idf * tf * (index.k1 + 1.0) / (tf + length_norm)
    return sorted(scores.items(), key=lambda item: (-item[1], item[0]))


def render_relevance_prompt(presentation_text: str, question_text: str) -> str:
    """Substitute the two slots of the fixed relevance prompt."""
    if not presentation_text or not question_text:
        raise ValueError("presentation and question must be non-empty")
    return _PROMPT.substitute(presentation=presentation_text, question=question_text)


def truncate_presentation_for_budget(
    presentation_text: str, question_text: str, budget: int = RETRIEVER_TOKEN_BUDGET
) -> str:
    """Drop tokens from the presentation tail until the rendered prompt fits the budget.

    The budget counts tokens of the full prompt (template, question, and
    presentation). At least one presentation token is always kept.
    """
    overhead = len(tokenize(_PROMPT.substitute(presentation="", question="")))
    overhead += len(tokenize(question_text))
    pres_tokens = tokenize(presentation_text)
    allowed = max(1, budget - overhead)
    if len(pres_tokens) <= allowed:
        return presentation_text
    cut = pres_tokens[allowed - 1].byte_span[1]
    truncated = presentation_text.encode("utf-8")[:cut].decode("utf-8")
    logger.warning(
        "truncated presentation from %d to %d tokens to fit the %d-token retriever budget",
        len(pres_tokens),
        allowed,
        budget,
    )
    return truncated


class RelevanceScorer(Protocol):
    """Backend contract: judge one segment text against one question text."""

    def judge(self, segment_text: str, question_text: str) -> RelevanceJudgment: ...


def score_segment(
    scorer: RelevanceScorer, segment: Segment, question: str
) -> RelevanceJudgment:
    """Apply a scorer to one segment; judgment invariants are enforced on construction."""
    return scorer.judge(segment.text, question)


def top_k_select(
    judgments: Sequence[tuple[int, float]], k: int = DEFAULT_TOP_K
) -> RetrievalResult:
    """Keep the k best-scoring segments, then restore presentation order.

    Score ties go to the lower segment index, so selection is reproducible
    bit-for-bit.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    indices = [idx for idx, _ in judgments]
    if len(set(indices)) != len(indices):
        raise ValueError("judgments must cover distinct segment indices")
    ranked = sorted(judgments, key=lambda item: (-item[1], item[0]))[:k]
    ranked.sort(key=lambda item: item[0])
    return RetrievalResult(
        segment_indices=[idx for idx, _ in ranked],
        scores=[score for _, score in ranked],
    )


def _softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - np.max(z)
    e = np.exp(shifted)
    return e / e.sum()


# Label weights behind score = P(highly) + P(partially) - P(not).
_LABEL_WEIGHTS = np.array([1.0, 1.0, -1.0])


@dataclass
class BilinearJudgeCache:
    """Intermediates kept for the policy-gradient update of the scorer."""

    segment_vec: np.ndarray
    question_vec: np.ndarray
    label_probs: np.ndarray
    score: float


class BilinearRelevanceScorer:
    """Trainable reference scorer.

    The three label logits come from bilinear forms between the mean token
    embedding of the segment and of the question; a softmax turns them into
    the Highly/Partially/Not probabilities. Embeddings are read from the
    generator and are not updated here.
    """

    def __init__(
        self,
        embed_fn: Callable[[str], np.ndarray],
        dim: int,
        seed: int = 0,
        init_scale: float = 0.1,
    ):
        self.embed_fn = embed_fn
        self.dim = dim
        rng = np.random.default_rng(seed)
        self.weights = rng.normal(0.0, init_scale, size=(3, dim, dim))

    def parameters(self) -> dict[str, np.ndarray]:
        return {"bilinear": self.weights}

    def judge_cached(self, segment_text: str, question_text: str) -> tuple[RelevanceJudgment, BilinearJudgeCache]:
        u = np.asarray(self.embed_fn(segment_text), dtype=np.float64)
        v = np.asarray(self.embed_fn(question_text), dtype=np.float64)
        logits = np.einsum("cij,i,j->c", self.weights, u, v)
        probs = _softmax(logits)
        judgment = RelevanceJudgment.from_probs(*probs.tolist())
        return judgment, BilinearJudgeCache(u, v, probs, judgment.score)

    def judge(self, segment_text: str, question_text: str) -> RelevanceJudgment:
        judgment, _ = self.judge_cached(segment_text, question_text)
        return judgment

    def score_gradient(self, cache: BilinearJudgeCache) -> np.ndarray:
        """d score / d weights for one judged pair, shape (3, d, d)."""
        p = cache.label_probs
        dz = p * (_LABEL_WEIGHTS - cache.score)
        return dz[:, None, None] * np.outer(cache.segment_vec, cache.question_vec)[None, :, :]


class RemoteRelevanceScorer:
    """Scorer backed by an external model behind a simple wire contract.

    The transport receives ``{"prompt": <str>}`` and must return
    ``{"label_logprobs": {"highly": x, "partially": y, "not": z}}``; the three
    log-probabilities are renormalized through a softmax. Transport errors and
    malformed responses surface as BackendFailure.
    """

    def __init__(
        self,
        transport: Callable[[dict], dict],
        budget: int = RETRIEVER_TOKEN_BUDGET,
    ):
        self.transport = transport
        self.budget = budget

    def judge(self, segment_text: str, question_text: str) -> RelevanceJudgment:
        presentation = truncate_presentation_for_budget(
            segment_text, question_text, self.budget
        )
        prompt = render_relevance_prompt(presentation, question_text)
        try:
            response = self.transport({"prompt": prompt})
        except Exception as exc:
            raise BackendFailure(f"relevance backend unreachable: {exc}") from exc
        try:
            raw = response["label_logprobs"]
            logprobs = np.array(
                [float(raw["highly"]), float(raw["partially"]), float(raw["not"])]
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise BackendFailure(f"malformed relevance response: {response!r}") from exc
        if not np.all(np.isfinite(logprobs)):
            raise BackendFailure(f"non-finite label log-probabilities: {logprobs!r}")
        probs = _softmax(logprobs)
        return RelevanceJudgment.from_probs(*probs.tolist())
