from __future__ import annotations

import random

import pytest

from callprep.corpus import (
    QaTurn,
    Transcript,
    corpus_stats,
    extract_questions,
    parse_transcript,
    read_corpus,
    read_questions,
    write_corpus,
    write_questions,
)
from callprep.errors import (
    EmptyCorpus,
    MalformedTurn,
    MissingPresentation,
    SchemaViolation,
)
from tests.conftest import RAW_FIXTURE

# Interleaved-operator fixture; expected roles were labeled by hand before
# the parser existed.
TEN_TURN_RAW = """\
== PRESENTATION ==
Opening remarks about the quarter.
== QA ==
-- Operator Voice (Operator) --
First question comes from Pat.

-- Pat Lee (Analyst) --
How did margins move?

-- Casey Fox (Manager) --
They expanded slightly.

-- Operator Voice (Operator) --
Next question from Robin.

-- Robin Ward (Analyst) --
Any update on guidance?

-- Casey Fox (Manager) --
We reaffirm the full year.

-- Operator Voice (Operator) --
Next up is Sam.

-- Sam Chen (Analyst) --
What drove the cash flow beat?

-- Casey Fox (Manager) --
Working capital timing.

-- Dana Kim (Moderator) --
That concludes the call.
"""

TEN_TURN_ROLES = [
    "operator", "analyst", "manager", "operator", "analyst",
    "manager", "operator", "analyst", "manager", "operator",
]


def one_hundred_word_transcript() -> Transcript:
    return Transcript(
        id="t1",
        company="acme",
        date="2023-01-01",
        presentation=[" ".join(["word"] * 100)],
        qa_turns=[
            QaTurn("analyst", " ".join(["ten"] * 10)),
            QaTurn("analyst", " ".join(["twenty"] * 20)),
        ],
    )


class TestParseTranscript:
    def test_structure_preserving_parse(self, fixture_transcript):
        t = fixture_transcript
        assert len(t.presentation) == 2
        assert len(t.qa_turns) == 3
        assert t.company == "Initech"
        assert t.date == "2023-05-04"
        assert t.presentation[0].startswith("Revenue grew")

    def test_missing_qa_section_gives_empty_turns(self):
        t = parse_transcript("== PRESENTATION ==\nSome remarks here.\n", id="x")
        assert t.qa_turns == []
        assert t.presentation == ["Some remarks here."]

    def test_hand_labeled_roles_with_interleaved_operator(self):
        t = parse_transcript(TEN_TURN_RAW, id="x")
        assert [turn.speaker_role for turn in t.qa_turns] == TEN_TURN_ROLES

    def test_missing_presentation_marker(self):
        with pytest.raises(MissingPresentation):
            parse_transcript("just some text", id="x")

    def test_empty_presentation_region(self):
        with pytest.raises(MissingPresentation):
            parse_transcript("== PRESENTATION ==\n\n== QA ==\n", id="x")

    def test_qa_line_without_speaker_marker(self):
        raw = "== PRESENTATION ==\nRemarks.\n== QA ==\nrogue line of text\n"
        with pytest.raises(MalformedTurn):
            parse_transcript(raw, id="x")

    def test_order_preserved(self, fixture_transcript):
        texts = [turn.text for turn in fixture_transcript.qa_turns]
        assert texts[0].startswith("How is margin")
        assert texts[2].startswith("What is the outlook")


class TestExtractQuestions:
    def test_no_analyst_turns(self):
        t = Transcript("t", "c", "2023-01-01", ["p"], [QaTurn("manager", "answer")])
        assert extract_questions(t) == []

    def test_three_analyst_turns_in_order(self):
        turns = [
            QaTurn("analyst", "first question"),
            QaTurn("manager", "an answer"),
            QaTurn("analyst", "second question"),
            QaTurn("operator", "next caller"),
            QaTurn("analyst", "third question"),
        ]
        t = Transcript("t", "c", "2023-01-01", ["p"], turns)
        records = extract_questions(t)
        assert [q.text for q in records] == [
            "first question", "second question", "third question",
        ]
        assert [q.question_id for q in records] == ["q0000", "q0001", "q0002"]

    def test_word_count_is_whitespace_tokens(self):
        t = Transcript(
            "t", "c", "2023-01-01", ["p"],
            [QaTurn("analyst", "How is margin trending this quarter?")],
        )
        assert extract_questions(t)[0].word_count == 6


class TestCorpusStats:
    def test_hand_computed_fixture(self):
        stats = corpus_stats([one_hundred_word_transcript()])
        assert stats.n_transcripts == 1
        assert stats.n_questions == 2
        assert stats.avg_presentation_len == 100
        assert stats.avg_question_len == 15
        assert stats.avg_questions_per_transcript == 2
        assert stats.q95_question_len == 20
        assert stats.max_presentation_len == 100

    def test_identical_transcripts_average_to_single_values(self):
        base = one_hundred_word_transcript()
        copies = [
            Transcript(f"t{i}", base.company, base.date, base.presentation, base.qa_turns)
            for i in range(4)
        ]
        stats = corpus_stats(copies)
        single = corpus_stats([base])
        assert stats.avg_presentation_len == single.avg_presentation_len
        assert stats.avg_question_len == single.avg_question_len
        assert stats.avg_questions_per_transcript == single.avg_questions_per_transcript

    def test_empty_corpus(self):
        with pytest.raises(EmptyCorpus):
            corpus_stats([])

    def test_permutation_invariant(self):
        rng = random.Random(3)
        transcripts = []
        for i in range(6):
            turns = [
                QaTurn("analyst", " ".join(["q"] * rng.randint(1, 30)))
                for _ in range(rng.randint(0, 4))
            ]
            transcripts.append(
                Transcript(
                    f"t{i}", "c", "2023-01-01",
                    [" ".join(["w"] * rng.randint(5, 200))], turns,
                )
            )
        reference = corpus_stats(transcripts)
        for _ in range(5):
            rng.shuffle(transcripts)
            assert corpus_stats(transcripts) == reference

    def test_q95_definition_minimal_covering(self):
        rng = random.Random(9)
        for _ in range(50):
            counts = [rng.randint(1, 60) for _ in range(rng.randint(1, 40))]
            transcripts = [
                Transcript(
                    f"t{i}", "c", "2023-01-01", ["w"],
                    [QaTurn("analyst", " ".join(["w"] * n))],
                )
                for i, n in enumerate(counts)
            ]
            q95 = corpus_stats(transcripts).q95_question_len
            covered = sum(1 for n in counts if n <= q95)
            assert covered >= 0.95 * len(counts)
            covered_below = sum(1 for n in counts if n <= q95 - 1)
            assert covered_below < 0.95 * len(counts)


class TestCorpusJsonl:
    def test_roundtrip_identity(self, tmp_path, fixture_transcript):
        more = parse_transcript(TEN_TURN_RAW, id="tr-0002")
        third = one_hundred_word_transcript()
        corpus = [fixture_transcript, more, third]
        path = tmp_path / "corpus.jsonl"
        write_corpus(corpus, path)
        assert read_corpus(path) == corpus

    def test_missing_presentation_key_reports_line(self, tmp_path):
        path = tmp_path / "corpus.jsonl"
        path.write_text(
            '{"id": "a", "company": "c", "date": "d", "presentation": ["x"], "qa": []}\n'
            '{"id": "b", "company": "c", "date": "d", "qa": []}\n',
            encoding="utf-8",
        )
        with pytest.raises(SchemaViolation) as err:
            read_corpus(path)
        assert err.value.line == 2

    def test_duplicate_id_rejected_on_read(self, tmp_path):
        row = '{"id": "a", "company": "c", "date": "d", "presentation": ["x"], "qa": []}\n'
        path = tmp_path / "corpus.jsonl"
        path.write_text(row + row, encoding="utf-8")
        with pytest.raises(SchemaViolation):
            read_corpus(path)

    def test_duplicate_id_rejected_on_write(self, tmp_path):
        t = one_hundred_word_transcript()
        with pytest.raises(SchemaViolation):
            write_corpus([t, t], tmp_path / "corpus.jsonl")


class TestQuestionJsonl:
    def test_roundtrip(self, tmp_path, fixture_transcript):
        questions = extract_questions(fixture_transcript)
        questions[0].control_code = "guidance"
        path = tmp_path / "questions.jsonl"
        write_questions(questions, path)
        assert read_questions(path) == questions

    def test_missing_text_reports_line(self, tmp_path):
        path = tmp_path / "questions.jsonl"
        path.write_text('{"transcript_id": "t", "question_id": "q"}\n', encoding="utf-8")
        with pytest.raises(SchemaViolation) as err:
            read_questions(path)
        assert err.value.line == 1
