"""Correctness metrics, topic clustering, semantic entropy, and run evaluation.

All n-gram metrics share the package tokenizer with lowercased tokens. Raw
scores live in [0, 1]; the rendered report multiplies the correctness columns
by 100 for readability.
"""

from __future__ import annotations

import hashlib
import json
import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Protocol, Sequence

import numpy as np

from .corpus import read_questions
from .errors import AlignmentError, LengthMismatch, TooFewQuestions
from .textseg import split_sentences, tokenize

ROUGE_L_BETA = 1.2
METEOR_ALPHA = 0.9
METEOR_GAMMA = 0.5
METEOR_BETA = 3.0
DEFAULT_TOPIC_COUNT = 8


def _words(text: str) -> list[str]:
    return [tok.text.lower() for tok in tokenize(text)]


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


# --- BLEU ---


def bleu4(hypotheses: Sequence[str], references: Sequence[str]) -> float:
    """Corpus-level BLEU with clipped n-gram precision up to 4 and brevity penalty."""
    if len(hypotheses) != len(references):
        raise LengthMismatch(
            f"{len(hypotheses)} hypotheses vs {len(references)} references"
        )
    if not hypotheses:
        raise LengthMismatch("bleu4 needs at least one pair")

    hyp_tokens = [_words(h) for h in hypotheses]
    ref_tokens = [_words(r) for r in references]
    log_precisions = 0.0
    for n in range(1, 5):
        matched = 0
        total = 0
        for hyp, ref in zip(hyp_tokens, ref_tokens):
            hyp_counts = _ngrams(hyp, n)
            ref_counts = _ngrams(ref, n)
            matched += sum(min(c, ref_counts[g]) for g, c in hyp_counts.items())
            total += max(len(hyp) - n + 1, 0)
        if matched == 0 or total == 0:
            return 0.0
        log_precisions += math.log(matched / total)

    c = sum(len(h) for h in hyp_tokens)
    r = sum(len(t) for t in ref_tokens)
    bp = 1.0 if c >= r else math.exp(1.0 - r / c)
    return bp * math.exp(log_precisions / 4.0)


def sentence_bleu4(hypothesis: str, reference: str) -> float:
    """Per-question diagnostic BLEU with add-one smoothing on the 2-4 gram counts."""
    hyp = _words(hypothesis)
    ref = _words(reference)
    if not hyp or not ref:
        return 0.0
    log_precisions = 0.0
    for n in range(1, 5):
        hyp_counts = _ngrams(hyp, n)
        ref_counts = _ngrams(ref, n)
        matched = sum(min(c, ref_counts[g]) for g, c in hyp_counts.items())
        total = max(len(hyp) - n + 1, 0)
        if n == 1:
            if matched == 0 or total == 0:
                return 0.0
        else:
            matched += 1
            total += 1
        log_precisions += math.log(matched / total)
    bp = 1.0 if len(hyp) >= len(ref) else math.exp(1.0 - len(ref) / len(hyp))
    return bp * math.exp(log_precisions / 4.0)


# --- ROUGE ---


def rouge_n(hypothesis: str, reference: str, n: int) -> tuple[float, float, float]:
    """N-gram overlap precision, recall, and balanced F1."""
    if n < 1:
        raise ValueError("n must be >= 1")
    hyp_counts = _ngrams(_words(hypothesis), n)
    ref_counts = _ngrams(_words(reference), n)
    overlap = sum(min(c, ref_counts[g]) for g, c in hyp_counts.items())
    n_hyp = sum(hyp_counts.values())
    n_ref = sum(ref_counts.values())
    precision = overlap / n_hyp if n_hyp else 0.0
    recall = overlap / n_ref if n_ref else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def _lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0] * (len(b) + 1)
        for j, y in enumerate(b, start=1):
            cur[j] = prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1])
        prev = cur
    return prev[-1]


def rouge_l(hypothesis: str, reference: str, beta: float = ROUGE_L_BETA) -> float:
    """LCS-based F-score, recall-weighted by beta."""
    hyp = _words(hypothesis)
    ref = _words(reference)
    lcs = _lcs_length(hyp, ref)
    if lcs == 0:
        return 0.0
    precision = lcs / len(hyp)
    recall = lcs / len(ref)
    denom = recall + beta * beta * precision
    return (1 + beta * beta) * precision * recall / denom if denom else 0.0


# --- METEOR ---

_STEM_SUFFIXES = (
    "ations", "ation", "ingly", "ings", "ing", "edly", "ies", "ied",
    "ed", "ly", "es", "s",
)


def stem(word: str) -> str:
    """Rule-based suffix stripper; stems shorter than three characters stay whole."""
    lowered = word.lower()
    for suffix in _STEM_SUFFIXES:
        if lowered.endswith(suffix) and len(lowered) - len(suffix) >= 3:
            return lowered[: -len(suffix)]
    return lowered


def _greedy_align(
    hyp: Sequence[str], ref: Sequence[str], key: Callable[[str], str]
) -> list[tuple[int, int]]:
    matches = []
    used_ref: set[int] = set()
    used_hyp: set[int] = set()
    for i, h in enumerate(hyp):
        for j, r in enumerate(ref):
            if j in used_ref:
                continue
            if key(h) == key(r):
                matches.append((i, j))
                used_ref.add(j)
                used_hyp.add(i)
                break
    return matches


def meteor_lite(hypothesis: str, reference: str) -> float:
    """Exact-then-stem unigram alignment with the chunk fragmentation penalty.

    The synonym stage of full METEOR is intentionally absent; scores are
    comparable only within this implementation.
    """
    hyp = _words(hypothesis)
    ref = _words(reference)
    if not hyp or not ref:
        return 0.0

    matches = _greedy_align(hyp, ref, key=lambda w: w)
    matched_hyp = {i for i, _ in matches}
    matched_ref = {j for _, j in matches}
    remaining_hyp = [(i, h) for i, h in enumerate(hyp) if i not in matched_hyp]
    remaining_ref = [(j, r) for j, r in enumerate(ref) if j not in matched_ref]
    stem_matches = _greedy_align(
        [h for _, h in remaining_hyp], [r for _, r in remaining_ref], key=stem
    )
    matches += [
        (remaining_hyp[a][0], remaining_ref[b][0]) for a, b in stem_matches
    ]

    m = len(matches)
    if m == 0:
        return 0.0
    precision = m / len(hyp)
    recall = m / len(ref)
    f_mean = (
        precision * recall / (METEOR_ALPHA * precision + (1 - METEOR_ALPHA) * recall)
    )

    matches.sort()
    chunks = 1
    for (i0, j0), (i1, j1) in zip(matches, matches[1:]):
        if i1 != i0 + 1 or j1 != j0 + 1:
            chunks += 1
    penalty = METEOR_GAMMA * (chunks / m) ** METEOR_BETA
    return f_mean * (1.0 - penalty)


# --- embedding F1 ---


class TokenEmbedder(Protocol):
    def embed(self, token: str) -> np.ndarray: ...


class HashedNgramEmbedder:
    """Deterministic token vectors from hashed character n-grams, unit-normalized."""

    def __init__(self, dim: int = 256, n_min: int = 3, n_max: int = 5):
        self.dim = dim
        self.n_min = n_min
        self.n_max = n_max
        self._cache: dict[str, np.ndarray] = {}

    def embed(self, token: str) -> np.ndarray:
        cached = self._cache.get(token)
        if cached is not None:
            return cached
        padded = f"#{token}#"
        vec = np.zeros(self.dim)
        for n in range(self.n_min, self.n_max + 1):
            for i in range(max(len(padded) - n + 1, 0)):
                gram = padded[i : i + n].encode("utf-8")
                slot = int.from_bytes(
                    hashlib.blake2s(gram, digest_size=8).digest(), "little"
                ) % self.dim
                vec[slot] += 1.0
        norm = np.linalg.norm(vec)
        if norm > 0:
            vec /= norm
        self._cache[token] = vec
        return vec


def embed_f1(hypothesis: str, reference: str, embedder: TokenEmbedder) -> float:
    """Greedy max-cosine token matching in both directions, combined as F1."""
    hyp = _words(hypothesis)
    ref = _words(reference)
    if not hyp or not ref:
        return 0.0
    hyp_vecs = np.stack([embedder.embed(t) for t in hyp])
    ref_vecs = np.stack([embedder.embed(t) for t in ref])
    sims = hyp_vecs @ ref_vecs.T
    precision = float(sims.max(axis=1).mean())
    recall = float(sims.max(axis=0).mean())
    if precision + recall == 0.0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


# --- topic model and semantic entropy ---


@dataclass
class TopicModel:
    """Seeded term-weight clustering standing in for a per-company topic model."""

    k: int
    terms: dict[str, int]
    idf: np.ndarray
    centroids: np.ndarray
    seed: int

    def vectorize(self, text: str) -> np.ndarray:
        vec = np.zeros(len(self.terms))
        words = [w for w in _words(text) if w in self.terms]
        if not words:
            return vec
        for word, count in Counter(words).items():
            idx = self.terms[word]
            vec[idx] = (count / len(words)) * self.idf[idx]
        norm = np.linalg.norm(vec)
        return vec / norm if norm > 0 else vec

    def _distribution(self, text: str) -> np.ndarray:
        vec = self.vectorize(text)
        distances = np.linalg.norm(self.centroids - vec, axis=1)
        shifted = -distances + distances.min()
        weights = np.exp(shifted)
        return weights / weights.sum()


def fit_topic_model(questions: Sequence[str], k: int, seed: int) -> TopicModel:
    """Cluster question term-weight vectors with seeded centers, <=100 iterations."""
    if k < 2:
        raise ValueError("k must be >= 2")
    if len(questions) < k:
        raise TooFewQuestions(f"need at least {k} questions, got {len(questions)}")

    token_lists = [[w for w in _words(q)] for q in questions]
    vocab = sorted({w for toks in token_lists for w in toks})
    terms = {w: i for i, w in enumerate(vocab)}
    n_docs = len(questions)
    df = np.zeros(len(vocab))
    for toks in token_lists:
        for w in set(toks):
            df[terms[w]] += 1
    idf = np.log((1.0 + n_docs) / (1.0 + df)) + 1.0

    model = TopicModel(k=k, terms=terms, idf=idf, centroids=np.zeros((k, len(vocab))), seed=seed)
    vectors = np.stack([model.vectorize(q) for q in questions])

    # seeded first center, then farthest-point spreading (ties to lower index)
    rng = np.random.default_rng(seed)
    unique_rows = np.unique(vectors, axis=0)
    if len(unique_rows) >= k:
        chosen = [int(rng.integers(len(unique_rows)))]
        while len(chosen) < k:
            dists = np.min(
                np.linalg.norm(unique_rows[:, None, :] - unique_rows[chosen][None], axis=2),
                axis=1,
            )
            chosen.append(int(np.argmax(dists)))
        centroids = unique_rows[chosen].copy()
    else:
        pick = rng.choice(len(vectors), size=k, replace=True)
        centroids = vectors[pick] + rng.normal(0.0, 1e-6, size=(k, vectors.shape[1]))

    assignment = np.full(len(vectors), -1)
    for _ in range(100):
        distances = np.linalg.norm(vectors[:, None, :] - centroids[None, :, :], axis=2)
        new_assignment = distances.argmin(axis=1)
        if np.array_equal(new_assignment, assignment):
            break
        assignment = new_assignment
        # deterministic re-seed order for empty clusters: worst-fit points first
        reseed_order = iter(np.argsort(-distances.min(axis=1)))
        for c in range(k):
            members = vectors[assignment == c]
            if len(members):
                centroids[c] = members.mean(axis=0)
            else:
                centroids[c] = vectors[int(next(reseed_order))]

    model.centroids = centroids
    return model


@dataclass
class TopicDistribution:
    probs: list[float]

    def __post_init__(self) -> None:
        if any(not (0.0 <= p <= 1.0) for p in self.probs):
            raise ValueError("topic probabilities must lie in [0,1]")
        if abs(sum(self.probs) - 1.0) > 1e-9:
            raise ValueError("topic probabilities must sum to 1")


def topic_distribution(model: TopicModel, question: str) -> TopicDistribution:
    """Sentence-level granularity: the mean of each sentence's distribution and
    the whole paragraph's distribution."""
    sentences = split_sentences(question)
    parts = [model._distribution(s) for s in sentences]
    parts.append(model._distribution(question))
    mean = np.mean(parts, axis=0)
    mean = mean / mean.sum()
    return TopicDistribution(probs=mean.tolist())


def sem_ent(model: TopicModel, generated_questions: Sequence[str]) -> float:
    """Entropy of the aggregate topic distribution; ln k when perfectly uniform."""
    if not generated_questions:
        raise ValueError("sem_ent needs at least one question")
    agg = np.mean(
        [topic_distribution(model, q).probs for q in generated_questions], axis=0
    )
    nonzero = agg[agg > 0.0]
    return float(-(nonzero * np.log(nonzero)).sum())


# --- report assembly ---


@dataclass
class QuestionScores:
    transcript_id: str
    question_id: str
    bleu4: float
    rouge2: float
    rougeL: float
    meteor: float
    embed_f1: float


@dataclass
class EvalReport:
    bleu4: float
    rouge2: float
    rougeL: float
    meteor: float
    embed_f1: float
    sem_ent: float
    n_questions: int
    rows: list[QuestionScores]

    def to_dict(self) -> dict:
        return {
            "bleu4": self.bleu4,
            "rouge2": self.rouge2,
            "rougeL": self.rougeL,
            "meteor": self.meteor,
            "embed_f1": self.embed_f1,
            "sem_ent": self.sem_ent,
            "n_questions": self.n_questions,
            "rows": [vars(row) for row in self.rows],
        }


def evaluate_pairs(
    generated: Sequence[tuple[str, str, str]],
    references: Mapping[tuple[str, str], str],
    topic_models: Mapping[str, TopicModel],
    embedder: TokenEmbedder | None = None,
) -> EvalReport:
    """Score aligned (transcript_id, question_id, text) rows against references."""
    embedder = embedder or HashedNgramEmbedder()
    gen_keys = {(tid, qid) for tid, qid, _ in generated}
    unmatched = sorted(gen_keys ^ set(references))
    if unmatched:
        raise AlignmentError(
            f"{len(unmatched)} unmatched (transcript_id, question_id) ids: "
            f"{unmatched[:10]}",
            unmatched=unmatched,
        )

    ordered = sorted(generated, key=lambda row: (row[0], row[1]))
    rows = []
    hyps = []
    refs = []
    by_transcript: dict[str, list[str]] = {}
    for tid, qid, text in ordered:
        ref = references[(tid, qid)]
        hyps.append(text)
        refs.append(ref)
        by_transcript.setdefault(tid, []).append(text)
        rows.append(
            QuestionScores(
                transcript_id=tid,
                question_id=qid,
                bleu4=sentence_bleu4(text, ref),
                rouge2=rouge_n(text, ref, 2)[2],
                rougeL=rouge_l(text, ref),
                meteor=meteor_lite(text, ref),
                embed_f1=embed_f1(text, ref, embedder),
            )
        )

    entropies = []
    for tid, texts in by_transcript.items():
        model = topic_models.get(tid)
        if model is not None:
            entropies.append(sem_ent(model, texts))

    return EvalReport(
        bleu4=bleu4(hyps, refs),
        rouge2=float(np.mean([r.rouge2 for r in rows])),
        rougeL=float(np.mean([r.rougeL for r in rows])),
        meteor=float(np.mean([r.meteor for r in rows])),
        embed_f1=float(np.mean([r.embed_f1 for r in rows])),
        sem_ent=float(np.mean(entropies)) if entropies else 0.0,
        n_questions=len(rows),
        rows=rows,
    )


def evaluate_run(
    generated_path: str | Path,
    references_path: str | Path,
    topic_models: Mapping[str, TopicModel],
    embedder: TokenEmbedder | None = None,
) -> EvalReport:
    """File-level entry point over question JSONL; ids must align one-to-one."""
    generated = [
        (q.transcript_id, q.question_id, q.text) for q in read_questions(generated_path)
    ]
    references = {
        (q.transcript_id, q.question_id): q.text for q in read_questions(references_path)
    }
    return evaluate_pairs(generated, references, topic_models, embedder)


def render_report_table(report: EvalReport) -> str:
    """Plain-text table in the usual column order; correctness columns are x100."""
    headers = ("BLEU-4", "ROUGE-2", "ROUGE-L", "METEOR", "embed_f1", "Sem-Ent")
    values = (
        report.bleu4 * 100,
        report.rouge2 * 100,
        report.rougeL * 100,
        report.meteor * 100,
        report.embed_f1 * 100,
        report.sem_ent,
    )
    cells = [f"{v:.3f}" for v in values]
    widths = [max(len(h), len(c)) for h, c in zip(headers, cells)]
    header_row = "  ".join(h.rjust(w) for h, w in zip(headers, widths))
    value_row = "  ".join(c.rjust(w) for c, w in zip(cells, widths))
    return (
        f"{header_row}\n{value_row}\n"
        f"(correctness columns x100; {report.n_questions} questions)"
    )


def write_report(report: EvalReport, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8"
    )
