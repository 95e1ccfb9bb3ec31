"""Transcript parsing, question extraction, dataset statistics, and JSONL io.

Raw transcripts are plain UTF-8 text. A `== PRESENTATION ==` line opens the
prepared remarks; an optional `== QA ==` line opens the question-and-answer
section, where each turn starts with `-- <name> (<role>) --`. Optional
`company:` / `date:` header lines may precede the presentation marker.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .errors import (
    EmptyCorpus,
    IoFailure,
    MalformedTurn,
    MissingPresentation,
    SchemaViolation,
)
from .textseg import split_words

PRESENTATION_MARKER = "== PRESENTATION =="
QA_MARKER = "== QA =="

ROLE_ANALYST = "analyst"
ROLE_MANAGER = "manager"
ROLE_OPERATOR = "operator"
ROLES = (ROLE_ANALYST, ROLE_MANAGER, ROLE_OPERATOR)

_TURN_RE = re.compile(r"^--\s*(?P<name>.*?)\s*\((?P<role>[^()]*)\)\s*--$")
_HEADER_RE = re.compile(r"^(?P<key>company|date)\s*:\s*(?P<value>.+)$", re.IGNORECASE)

DEFAULT_COMPANY = "unknown"
DEFAULT_DATE = "1970-01-01"


@dataclass
class QaTurn:
    speaker_role: str
    text: str


@dataclass
class Transcript:
    """One earnings call: prepared remarks plus the Q&A turns."""

    id: str
    company: str
    date: str
    presentation: list[str]
    qa_turns: list[QaTurn] = field(default_factory=list)


@dataclass
class QuestionRecord:
    """One analyst question, the reference unit for training and evaluation."""

    transcript_id: str
    question_id: str
    text: str
    word_count: int
    control_code: str | None = None


@dataclass
class CorpusStats:
    n_transcripts: int
    n_questions: int
    avg_presentation_len: float
    avg_question_len: float
    avg_questions_per_transcript: float
    q95_question_len: int
    max_presentation_len: int


def _role_from_tag(tag: str) -> str:
    lowered = tag.strip().lower()
    if lowered == "analyst":
        return ROLE_ANALYST
    if lowered == "manager":
        return ROLE_MANAGER
    return ROLE_OPERATOR


def parse_transcript(raw: str, id: str) -> Transcript:
    """Parse raw transcript text into a structured record.

    Paragraph and turn order follow the source. Raises MissingPresentation
    when the prepared-remarks region is absent or empty, MalformedTurn when
    Q&A content appears outside a `-- name (role) --` turn.
    """
    company = DEFAULT_COMPANY
    date = DEFAULT_DATE
    lines = raw.splitlines()

    try:
        pres_start = next(
            i for i, line in enumerate(lines) if line.strip() == PRESENTATION_MARKER
        )
    except StopIteration:
        raise MissingPresentation(f"transcript {id!r} has no {PRESENTATION_MARKER} line")

    for line in lines[:pres_start]:
        m = _HEADER_RE.match(line.strip())
        if m:
            if m.group("key").lower() == "company":
                company = m.group("value").strip()
            else:
                date = m.group("value").strip()

    qa_start = None
    for i in range(pres_start + 1, len(lines)):
        if lines[i].strip() == QA_MARKER:
            qa_start = i
            break

    pres_lines = lines[pres_start + 1 : qa_start if qa_start is not None else len(lines)]
    presentation = _paragraphs(pres_lines)
    if not presentation:
        raise MissingPresentation(f"transcript {id!r} has an empty presentation")

    qa_turns: list[QaTurn] = []
    if qa_start is not None:
        qa_turns = _parse_turns(lines[qa_start + 1 :], id)

    return Transcript(
        id=id, company=company, date=date, presentation=presentation, qa_turns=qa_turns
    )


def _paragraphs(lines: list[str]) -> list[str]:
    paragraphs: list[str] = []
    current: list[str] = []
    for line in lines:
        if line.strip():
            current.append(line.strip())
        elif current:
            paragraphs.append(" ".join(current))
            current = []
    if current:
        paragraphs.append(" ".join(current))
    return paragraphs


def _parse_turns(lines: list[str], transcript_id: str) -> list[QaTurn]:
    turns: list[QaTurn] = []
    role: str | None = None
    body: list[str] = []

    def close() -> None:
        nonlocal body
        if role is None:
            return
        text = " ".join(body).strip()
        if not text:
            raise MalformedTurn(f"transcript {transcript_id!r}: turn with empty text")
        turns.append(QaTurn(speaker_role=role, text=text))
        body = []

    for line in lines:
        stripped = line.strip()
        m = _TURN_RE.match(stripped)
        if m:
            close()
            role = _role_from_tag(m.group("role"))
        elif stripped:
            if role is None:
                raise MalformedTurn(
                    f"transcript {transcript_id!r}: Q&A line lacks a speaker marker: "
                    f"{stripped[:60]!r}"
                )
            body.append(stripped)
    close()
    return turns


def extract_questions(t: Transcript) -> list[QuestionRecord]:
    """One record per analyst turn, in source order."""
    records = []
    for i, turn in enumerate(turn for turn in t.qa_turns if turn.speaker_role == ROLE_ANALYST):
        records.append(
            QuestionRecord(
                transcript_id=t.id,
                question_id=f"q{i:04d}",
                text=turn.text,
                word_count=len(split_words(turn.text)),
            )
        )
    return records


def presentation_word_count(t: Transcript) -> int:
    return sum(len(split_words(p)) for p in t.presentation)


def corpus_stats(corpus: list[Transcript]) -> CorpusStats:
    """Aggregate counts and means over the whole corpus.

    Means come from exact integer totals with a single final division; the
    95th-percentile question length is nearest-rank (the smallest word count
    covering at least 95% of questions).
    """
    if not corpus:
        raise EmptyCorpus("corpus_stats needs at least one transcript")

    pres_lens = [presentation_word_count(t) for t in corpus]
    question_lens = [
        q.word_count for t in corpus for q in extract_questions(t)
    ]

    n_transcripts = len(corpus)
    n_questions = len(question_lens)
    if n_questions:
        avg_q = sum(question_lens) / n_questions
        ordered = sorted(question_lens)
        rank = math.ceil(0.95 * n_questions)
        q95 = ordered[rank - 1]
    else:
        avg_q = 0.0
        q95 = 0

    return CorpusStats(
        n_transcripts=n_transcripts,
        n_questions=n_questions,
        avg_presentation_len=sum(pres_lens) / n_transcripts,
        avg_question_len=avg_q,
        avg_questions_per_transcript=n_questions / n_transcripts,
        q95_question_len=q95,
        max_presentation_len=max(pres_lens),
    )


# --- JSONL io ---


def write_corpus(corpus: Iterable[Transcript], path: str | Path) -> None:
    """One transcript per line; raises SchemaViolation on duplicate ids."""
    seen: set[str] = set()
    rows = []
    for t in corpus:
        if t.id in seen:
            raise SchemaViolation(f"duplicate transcript id {t.id!r}")
        seen.add(t.id)
        rows.append(
            json.dumps(
                {
                    "id": t.id,
                    "company": t.company,
                    "date": t.date,
                    "presentation": t.presentation,
                    "qa": [{"role": turn.speaker_role, "text": turn.text} for turn in t.qa_turns],
                },
                ensure_ascii=False,
            )
        )
    try:
        Path(path).write_text("".join(row + "\n" for row in rows), encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot write corpus to {path}: {exc}") from exc


def read_corpus(path: str | Path) -> list[Transcript]:
    """Read corpus JSONL, enforcing schema and invariants line by line."""
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise IoFailure(f"cannot read corpus from {path}: {exc}") from exc

    corpus: list[Transcript] = []
    seen: set[str] = set()
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
        except json.JSONDecodeError as exc:
            raise SchemaViolation(f"invalid JSON: {exc.msg}", line=lineno) from exc
        if not isinstance(row, dict):
            raise SchemaViolation("expected a JSON object", line=lineno)
        for key in ("id", "company", "date", "presentation", "qa"):
            if key not in row:
                raise SchemaViolation(f"missing {key!r}", line=lineno)
        tid = row["id"]
        if not isinstance(tid, str) or not tid:
            raise SchemaViolation("id must be a non-empty string", line=lineno)
        if tid in seen:
            raise SchemaViolation(f"duplicate transcript id {tid!r}", line=lineno)
        seen.add(tid)
        presentation = row["presentation"]
        if (
            not isinstance(presentation, list)
            or not presentation
            or not all(isinstance(p, str) and p.strip() for p in presentation)
        ):
            raise SchemaViolation(
                "presentation must be a non-empty array of non-blank strings", line=lineno
            )
        turns = []
        if not isinstance(row["qa"], list):
            raise SchemaViolation("qa must be an array", line=lineno)
        for turn in row["qa"]:
            if (
                not isinstance(turn, dict)
                or turn.get("role") not in ROLES
                or not isinstance(turn.get("text"), str)
                or not turn["text"]
            ):
                raise SchemaViolation("qa turn needs a valid role and non-empty text", line=lineno)
            turns.append(QaTurn(speaker_role=turn["role"], text=turn["text"]))
        corpus.append(
            Transcript(
                id=tid,
                company=str(row["company"]),
                date=str(row["date"]),
                presentation=list(presentation),
                qa_turns=turns,
            )
        )
    return corpus


def write_questions(questions: Iterable[QuestionRecord], path: str | Path) -> None:
    rows = []
    for q in questions:
        row = {
            "transcript_id": q.transcript_id,
            "question_id": q.question_id,
            "text": q.text,
        }
        if q.control_code is not None:
            row["control_code"] = q.control_code
        rows.append(json.dumps(row, ensure_ascii=False))
    try:
        Path(path).write_text("".join(row + "\n" for row in rows), encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot write questions to {path}: {exc}") from exc


def read_questions(path: str | Path) -> list[QuestionRecord]:
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise IoFailure(f"cannot read questions from {path}: {exc}") from exc

    records: list[QuestionRecord] = []
    seen: set[tuple[str, str]] = set()
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
        except json.JSONDecodeError as exc:
            raise SchemaViolation(f"invalid JSON: {exc.msg}", line=lineno) from exc
        if not isinstance(row, dict):
            raise SchemaViolation("expected a JSON object", line=lineno)
        for key in ("transcript_id", "question_id", "text"):
            if key not in row or not isinstance(row[key], str) or not row[key]:
                raise SchemaViolation(f"missing or invalid {key!r}", line=lineno)
        key = (row["transcript_id"], row["question_id"])
        if key in seen:
            raise SchemaViolation(f"duplicate question id {key}", line=lineno)
        seen.add(key)
        control = row.get("control_code")
        if control is not None and not isinstance(control, str):
            raise SchemaViolation("control_code must be a string", line=lineno)
        records.append(
            QuestionRecord(
                transcript_id=row["transcript_id"],
                question_id=row["question_id"],
                text=row["text"],
                word_count=len(split_words(row["text"])),
                control_code=control,
            )
        )
    return records
