from __future__ import annotations

import itertools
import math
import random
from collections import Counter
from functools import lru_cache

import numpy as np
import pytest

from callprep.errors import AlignmentError, LengthMismatch, TooFewQuestions
from callprep.metrics import (
    HashedNgramEmbedder,
    QuestionScores,
    bleu4,
    embed_f1,
    evaluate_pairs,
    fit_topic_model,
    meteor_lite,
    render_report_table,
    rouge_l,
    rouge_n,
    sem_ent,
    sentence_bleu4,
    stem,
    topic_distribution,
)
from callprep.textseg import tokenize

WORDS = ["margin", "revenue", "growth", "guidance", "cash", "flow", "why", "when"]


def toks(text: str) -> list[str]:
    return [t.text.lower() for t in tokenize(text)]


# --- independent oracles, coded without the package's n-gram helpers ---


def oracle_bleu4(hyps: list[str], refs: list[str]) -> float:
    log_sum = 0.0
    for n in range(1, 5):
        clipped = 0
        total = 0
        for h, r in zip(hyps, refs):
            ht, rt = toks(h), toks(r)
            h_grams = [tuple(ht[i : i + n]) for i in range(len(ht) - n + 1)]
            r_grams = [tuple(rt[i : i + n]) for i in range(len(rt) - n + 1)]
            r_counts = Counter(r_grams)
            used = Counter()
            for g in h_grams:
                if used[g] < r_counts[g]:
                    clipped += 1
                    used[g] += 1
            total += len(h_grams)
        if clipped == 0 or total == 0:
            return 0.0
        log_sum += math.log(clipped / total)
    c = sum(len(toks(h)) for h in hyps)
    r = sum(len(toks(x)) for x in refs)
    bp = math.exp(1 - r / c) if c < r else 1.0
    return bp * math.exp(log_sum / 4)


def oracle_rouge_n(h: str, r: str, n: int) -> tuple[float, float, float]:
    ht, rt = toks(h), toks(r)
    h_grams = [tuple(ht[i : i + n]) for i in range(len(ht) - n + 1)]
    r_grams = [tuple(rt[i : i + n]) for i in range(len(rt) - n + 1)]
    r_counts = Counter(r_grams)
    used = Counter()
    overlap = 0
    for g in h_grams:
        if used[g] < r_counts[g]:
            overlap += 1
            used[g] += 1
    p = overlap / len(h_grams) if h_grams else 0.0
    rec = overlap / len(r_grams) if r_grams else 0.0
    f1 = 2 * p * rec / (p + rec) if p + rec else 0.0
    return p, rec, f1


def oracle_lcs(a: tuple, b: tuple) -> int:
    @lru_cache(maxsize=None)
    def rec(i: int, j: int) -> int:
        if i == len(a) or j == len(b):
            return 0
        if a[i] == b[j]:
            return 1 + rec(i + 1, j + 1)
        return max(rec(i + 1, j), rec(i, j + 1))

    return rec(0, 0)


def oracle_rouge_l(h: str, r: str, beta: float = 1.2) -> float:
    ht, rt = tuple(toks(h)), tuple(toks(r))
    lcs = oracle_lcs(ht, rt)
    if lcs == 0:
        return 0.0
    p = lcs / len(ht)
    rec = lcs / len(rt)
    return (1 + beta**2) * p * rec / (rec + beta**2 * p)


def oracle_embed_f1(h: str, r: str, embedder) -> float:
    ht, rt = toks(h), toks(r)
    if not ht or not rt:
        return 0.0
    p_total = 0.0
    for a in ht:
        p_total += max(float(embedder.embed(a) @ embedder.embed(b)) for b in rt)
    r_total = 0.0
    for b in rt:
        r_total += max(float(embedder.embed(a) @ embedder.embed(b)) for a in ht)
    p = p_total / len(ht)
    rec = r_total / len(rt)
    return 2 * p * rec / (p + rec) if p + rec else 0.0


def random_sentence(rng: random.Random, n_min=1, n_max=10) -> str:
    return " ".join(rng.choice(WORDS) for _ in range(rng.randint(n_min, n_max)))


class TestBleu4:
    def test_perfect_match_is_one(self):
        text = "how is margin trending this quarter"
        assert bleu4([text], [text]) == pytest.approx(1.0)

    def test_disjoint_vocabulary_is_zero(self):
        assert bleu4(["alpha beta gamma delta"], ["one two three four"]) == 0.0

    def test_matches_oracle_on_toy_corpus(self):
        hyps = ["the margin grew this quarter", "cash flow stayed strong"]
        refs = ["the margin grew a lot this quarter", "cash flow was strong"]
        assert bleu4(hyps, refs) == pytest.approx(oracle_bleu4(hyps, refs), abs=1e-9)

    def test_matches_oracle_on_random_pairs(self):
        rng = random.Random(31)
        for _ in range(50):
            n = rng.randint(1, 4)
            hyps = [random_sentence(rng, 4, 12) for _ in range(n)]
            refs = [random_sentence(rng, 4, 12) for _ in range(n)]
            assert bleu4(hyps, refs) == pytest.approx(
                oracle_bleu4(hyps, refs), abs=1e-9
            )

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            bleu4(["a"], ["a", "b"])

    def test_brevity_penalty_direction(self):
        long_ref = "margin revenue growth guidance cash flow why when margin revenue"
        short_hyp = "margin revenue growth guidance"
        unpenalized = bleu4([long_ref], [long_ref])
        penalized = bleu4([short_hyp], [long_ref])
        assert penalized < unpenalized

    def test_sentence_bleu_smoothing_gives_nonzero_without_4gram_match(self):
        assert sentence_bleu4("margin grew fast", "margin grew very fast") > 0.0


class TestRouge:
    def test_identical_strings_f1_one(self):
        assert rouge_n("a b c", "a b c", 2)[2] == pytest.approx(1.0)
        assert rouge_l("a b c", "a b c") == pytest.approx(1.0)

    def test_hand_computed_lcs_case(self):
        # LCS("a c d", "a b c d") = 3; P = 3/3, R = 3/4
        f1 = rouge_l("a c d", "a b c d")
        p, r, beta = 1.0, 0.75, 1.2
        expected = (1 + beta**2) * p * r / (r + beta**2 * p)
        assert f1 == pytest.approx(expected, abs=1e-12)

    def test_no_shared_bigram_is_zero(self):
        assert rouge_n("a b c", "b a c a", 2)[2] == 0.0

    def test_rouge2_matches_oracle_random(self):
        rng = random.Random(13)
        for _ in range(100):
            h, r = random_sentence(rng), random_sentence(rng)
            assert rouge_n(h, r, 2) == pytest.approx(oracle_rouge_n(h, r, 2), abs=1e-12)

    def test_rouge_l_exhaustive_small_alphabet(self):
        # all pairs over {a,b,c} up to length 3 each (plus the empty string)
        alphabet = "abc"
        strings = [""]
        for n in range(1, 4):
            strings += [" ".join(p) for p in itertools.product(alphabet, repeat=n)]
        for h in strings:
            for r in strings:
                assert rouge_l(h, r) == pytest.approx(oracle_rouge_l(h, r), abs=1e-12)

    def test_rouge_l_random_up_to_twelve_tokens(self):
        rng = random.Random(19)
        for _ in range(2000):
            h = " ".join(rng.choice("abc") for _ in range(rng.randint(0, 12)))
            r = " ".join(rng.choice("abc") for _ in range(rng.randint(0, 12)))
            assert rouge_l(h, r) == pytest.approx(oracle_rouge_l(h, r), abs=1e-12)


class TestMeteorLite:
    def test_identical_strings_formula(self):
        text = "margins improved across all segments"
        m = 5
        expected = 1.0 - 0.5 * (1.0 / m) ** 3
        assert meteor_lite(text, text) == pytest.approx(expected, abs=1e-12)

    def test_zero_matches(self):
        assert meteor_lite("alpha beta", "gamma delta") == 0.0

    def test_hand_computed_stem_only_match(self):
        # exact: we, expect, today; stem: margins -> margin
        # matches (0,0) (1,1) (3,3) (4,4): m=4, P=R=4/5, F=0.8, chunks=2
        hyp = "we expect strong margins today"
        ref = "we expect weak margin today"
        f_mean = 0.8
        penalty = 0.5 * (2 / 4) ** 3
        assert meteor_lite(hyp, ref) == pytest.approx(f_mean * (1 - penalty), abs=1e-9)

    def test_stemmer_rules(self):
        assert stem("margins") == "margin"
        assert stem("trending") == "trend"
        assert stem("was") == "was"  # stem would drop below three characters
        assert stem("Improved") == "improv"

    def test_chunk_penalty_orders_fragmentation(self):
        contiguous = meteor_lite("a b c d", "a b c d")
        fragmented = meteor_lite("a c b d", "a b c d")
        assert fragmented < contiguous


class TestEmbedF1:
    def test_identical_strings(self):
        embedder = HashedNgramEmbedder()
        assert embed_f1("margin grew", "margin grew", embedder) == pytest.approx(1.0)

    def test_orthogonal_embeddings_zero(self):
        class OneHot:
            def __init__(self):
                self.seen = {}

            def embed(self, token):
                idx = self.seen.setdefault(token, len(self.seen))
                vec = np.zeros(16)
                vec[idx] = 1.0
                return vec

        assert embed_f1("alpha beta", "gamma delta", OneHot()) == 0.0

    def test_matches_brute_force_oracle(self):
        embedder = HashedNgramEmbedder()
        rng = random.Random(23)
        for _ in range(50):
            h, r = random_sentence(rng), random_sentence(rng)
            assert embed_f1(h, r, embedder) == pytest.approx(
                oracle_embed_f1(h, r, embedder), abs=1e-9
            )

    def test_embedder_deterministic_unit_norm(self):
        embedder = HashedNgramEmbedder()
        v1 = embedder.embed("guidance")
        v2 = HashedNgramEmbedder().embed("guidance")
        np.testing.assert_array_equal(v1, v2)
        assert np.linalg.norm(v1) == pytest.approx(1.0)


def two_cluster_questions() -> list[str]:
    # no term crosses the groups, so they are orthogonal in term-weight space
    margins = [
        "gross margins moved higher sequentially",
        "gross margins compressed slightly sequentially",
        "gross margins widened nicely sequentially",
        "gross margins stabilized sequentially",
    ]
    capital = [
        "ongoing buyback program continues apace",
        "expanded buyback program announced today",
        "steady buyback program returning capital",
        "accelerated buyback program pacing well",
    ]
    return margins + capital


class TestTopicModel:
    def test_separable_clusters_recovered(self):
        questions = two_cluster_questions()
        model = fit_topic_model(questions, k=2, seed=0)
        assignments = [
            int(np.argmax(topic_distribution(model, q).probs)) for q in questions
        ]
        assert len(set(assignments[:4])) == 1
        assert len(set(assignments[4:])) == 1
        assert assignments[0] != assignments[4]

    def test_refit_same_seed_identical(self):
        questions = two_cluster_questions()
        a = fit_topic_model(questions, k=3, seed=9)
        b = fit_topic_model(questions, k=3, seed=9)
        np.testing.assert_array_equal(a.centroids, b.centroids)

    def test_too_few_questions(self):
        with pytest.raises(TooFewQuestions):
            fit_topic_model(["only one"], k=2, seed=0)

    def test_k_below_two_rejected(self):
        with pytest.raises(ValueError):
            fit_topic_model(["a", "b"], k=1, seed=0)


class TestTopicDistribution:
    def test_single_sentence_equals_paragraph_distribution(self):
        model = fit_topic_model(two_cluster_questions(), k=2, seed=0)
        question = "how did margins move this quarter"
        dist = topic_distribution(model, question)
        paragraph_only = model._distribution(question)
        np.testing.assert_allclose(dist.probs, paragraph_only, atol=1e-12)

    def test_two_sentence_average_hand_computed(self):
        model = fit_topic_model(two_cluster_questions(), k=2, seed=0)
        q = "How did margins move? Any update on buyback plans?"
        s1 = model._distribution("How did margins move?")
        s2 = model._distribution("Any update on buyback plans?")
        whole = model._distribution(q)
        expected = (s1 + s2 + whole) / 3.0
        np.testing.assert_allclose(topic_distribution(model, q).probs, expected, atol=1e-12)

    def test_valid_distribution_on_random_text(self):
        model = fit_topic_model(two_cluster_questions(), k=3, seed=2)
        rng = random.Random(8)
        for _ in range(200):
            text = random_sentence(rng, 1, 15)
            probs = topic_distribution(model, text).probs
            assert all(0.0 <= p <= 1.0 for p in probs)
            assert sum(probs) == pytest.approx(1.0, abs=1e-9)

    def test_near_centroid_tends_to_one_hot(self):
        model = fit_topic_model(two_cluster_questions(), k=2, seed=0)
        # push centroids far apart so the nearest dominates
        model.centroids[1] += 100.0
        probs = topic_distribution(model, "how did margins move this quarter").probs
        assert probs[0] > 0.999999


class FixedDistributionModel:
    """Minimal stand-in exposing what sem_ent needs."""

    def __init__(self, table: dict[str, list[float]]):
        self.table = table
        self.k = len(next(iter(table.values())))

    def _distribution(self, text):
        return np.array(self.table[text])


class TestSemEnt:
    def test_uniform_aggregate_reaches_log_k(self):
        k = 4
        model = FixedDistributionModel({f"q{i}": [1.0 / k] * k for i in range(6)})
        value = sem_ent(model, [f"q{i}" for i in range(6)])
        assert value == pytest.approx(math.log(k), abs=1e-9)

    def test_single_topic_is_zero(self):
        model = FixedDistributionModel({"q": [1.0, 0.0, 0.0]})
        assert sem_ent(model, ["q"]) == 0.0

    def test_two_point_aggregate(self):
        model = FixedDistributionModel(
            {"a": [1.0, 0.0, 0.0, 0.0], "b": [0.0, 1.0, 0.0, 0.0]}
        )
        assert sem_ent(model, ["a", "b"]) == pytest.approx(math.log(2), abs=1e-12)

    def test_permutation_invariant(self):
        model = FixedDistributionModel(
            {"a": [0.7, 0.2, 0.1], "b": [0.1, 0.8, 0.1], "c": [0.3, 0.3, 0.4]}
        )
        base = sem_ent(model, ["a", "b", "c"])
        assert sem_ent(model, ["c", "a", "b"]) == pytest.approx(base, abs=1e-12)

    def test_duplicate_never_exceeds_log_k(self):
        model = FixedDistributionModel(
            {"a": [0.9, 0.05, 0.05], "b": [0.05, 0.9, 0.05]}
        )
        for qs in (["a"], ["a", "a"], ["a", "b"], ["a", "a", "b"]):
            assert sem_ent(model, qs) <= math.log(3) + 1e-12

    def test_real_model_bounds(self):
        model = fit_topic_model(two_cluster_questions(), k=4, seed=1)
        value = sem_ent(model, two_cluster_questions())
        assert 0.0 <= value <= math.log(4) + 1e-12


class TestEvaluate:
    def _models(self):
        model = fit_topic_model(two_cluster_questions(), k=2, seed=0)
        return {"t1": model, "t2": model}

    def test_identical_generated_and_reference_scores_one(self):
        refs = {
            ("t1", "q0"): "how did margins move this quarter",
            ("t2", "q0"): "any update on buyback plans",
        }
        generated = [(tid, qid, text) for (tid, qid), text in refs.items()]
        report = evaluate_pairs(generated, refs, self._models())
        assert report.bleu4 == pytest.approx(1.0)
        assert report.rouge2 == pytest.approx(1.0)
        assert report.rougeL == pytest.approx(1.0)
        assert report.embed_f1 == pytest.approx(1.0)
        assert report.n_questions == 2

    def test_alignment_error_lists_unmatched(self):
        refs = {("t1", "q0"): "a b c"}
        generated = [("t1", "q1", "a b c")]
        with pytest.raises(AlignmentError) as err:
            evaluate_pairs(generated, refs, self._models())
        assert ("t1", "q0") in err.value.unmatched
        assert ("t1", "q1") in err.value.unmatched

    def test_report_composes_per_metric_oracles(self):
        refs = {
            ("t1", "q0"): "how did margins move this quarter",
            ("t1", "q1"): "what pressured gross margins",
            ("t2", "q0"): "any update on buyback plans",
            ("t2", "q1"): "will dividends grow next year",
        }
        generated = [
            ("t1", "q0", "how did margins move"),
            ("t1", "q1", "what pressured margins this quarter"),
            ("t2", "q0", "any buyback update"),
            ("t2", "q1", "will the dividend grow"),
        ]
        report = evaluate_pairs(generated, refs, self._models())
        hyps = [g[2] for g in sorted(generated)]
        ordered_refs = [refs[(g[0], g[1])] for g in sorted(generated)]
        assert report.bleu4 == pytest.approx(oracle_bleu4(hyps, ordered_refs), abs=1e-9)
        expected_rouge_l = np.mean(
            [oracle_rouge_l(h, r) for h, r in zip(hyps, ordered_refs)]
        )
        assert report.rougeL == pytest.approx(expected_rouge_l, abs=1e-9)
        embedder = HashedNgramEmbedder()
        expected_embed = np.mean(
            [oracle_embed_f1(h, r, embedder) for h, r in zip(hyps, ordered_refs)]
        )
        assert report.embed_f1 == pytest.approx(expected_embed, abs=1e-9)
        assert [r.transcript_id for r in report.rows] == sorted(
            r.transcript_id for r in report.rows
        )

    def test_render_table_layout(self):
        report = evaluate_pairs(
            [("t1", "q0", "how did margins move this quarter")],
            {("t1", "q0"): "how did margins move this quarter"},
            self._models(),
        )
        table = render_report_table(report)
        header = table.splitlines()[0]
        assert header.index("BLEU-4") < header.index("ROUGE-2") < header.index("ROUGE-L")
        assert header.index("ROUGE-L") < header.index("METEOR") < header.index("embed_f1")
        assert header.index("embed_f1") < header.index("Sem-Ent")
