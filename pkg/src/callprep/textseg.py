"""Tokenization, presentation segmentation, and sentence splitting.

A token is either a maximal run of alphanumeric characters or a single
punctuation character; whitespace separates tokens and is discarded (but
remains recoverable through byte spans). The 128-token cap on segments is
enforced against this token definition.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Sequence

from .errors import IoFailure, SchemaViolation

if TYPE_CHECKING:
    from .corpus import Transcript

MAX_SEGMENT_TOKENS = 128

# Alphanumeric run, or any single non-space non-alphanumeric character.
# Underscore is word-class in regex but punctuation for our purposes.
_TOKEN_RE = re.compile(r"[^\W_]+|[^\w\s]|_", re.UNICODE)

# Sentence boundary: terminal punctuation, whitespace, then an uppercase
# letter. A digit after the period (e.g. "8.5") never matches.
_SENT_BOUNDARY_RE = re.compile(r"(?<=[.!?])\s+(?=[A-Z])")


@dataclass(frozen=True)
class Token:
    """One token with its byte span into the UTF-8 encoding of the source."""

    text: str
    byte_span: tuple[int, int]


@dataclass
class Segment:
    """A contiguous slice of a presentation, at most 128 tokens long."""

    transcript_id: str
    index: int
    tokens: list[Token]
    text: str

    @property
    def n_tokens(self) -> int:
        return len(self.tokens)


def tokenize(text: str) -> list[Token]:
    """Split text into tokens with byte offsets.

    Every non-whitespace character belongs to exactly one token, and each
    token's text equals the byte slice of the source it spans.
    """
    tokens: list[Token] = []
    char_pos = 0
    byte_pos = 0
    for m in _TOKEN_RE.finditer(text):
        byte_start = byte_pos + len(text[char_pos : m.start()].encode("utf-8"))
        byte_end = byte_start + len(m.group().encode("utf-8"))
        tokens.append(Token(m.group(), (byte_start, byte_end)))
        char_pos = m.end()
        byte_pos = byte_end
    return tokens


def is_punctuation(token_text: str) -> bool:
    """Single non-alphanumeric characters form the punctuation class."""
    return len(token_text) == 1 and not token_text.isalnum()


def detokenize(tokens: Sequence[Token | str]) -> str:
    """Join token texts with single spaces, omitting the space before punctuation."""
    parts: list[str] = []
    for tok in tokens:
        text = tok.text if isinstance(tok, Token) else tok
        if parts and not is_punctuation(text):
            parts.append(" ")
        parts.append(text)
    return "".join(parts)


def split_words(text: str) -> list[str]:
    """Whitespace word split; the counting rule behind all word-count statistics."""
    return text.split()


def split_sentences(text: str) -> list[str]:
    """Rule-based sentence split on [.!?] + whitespace + uppercase letter.

    Abbreviations get no special handling; concatenating the result
    reconstructs the input modulo whitespace.
    """
    stripped = text.strip()
    if not stripped:
        return []
    return [s for s in (_SENT_BOUNDARY_RE.split(stripped)) if s.strip()]


def _byte_slice(text: str, start: int, end: int) -> str:
    return text.encode("utf-8")[start:end].decode("utf-8")


def _sentence_pieces(sentence: str, max_tokens: int) -> list[tuple[str, int]]:
    """Break a sentence into (text, n_tokens) pieces of at most max_tokens.

    Sentences within the cap pass through whole; longer ones are hard-split
    at token boundaries, slicing the original text so spacing survives.
    """
    toks = tokenize(sentence)
    if len(toks) <= max_tokens:
        return [(sentence, len(toks))] if toks else []
    pieces = []
    for i in range(0, len(toks), max_tokens):
        chunk = toks[i : i + max_tokens]
        piece = _byte_slice(sentence, chunk[0].byte_span[0], chunk[-1].byte_span[1])
        pieces.append((piece, len(chunk)))
    return pieces


def segment_presentation(
    transcript: "Transcript", max_tokens: int = MAX_SEGMENT_TOKENS
) -> list[Segment]:
    """Divide a presentation into ordered segments of at most max_tokens tokens.

    Whole sentences are packed greedily in source order; a sentence that
    alone exceeds the cap is hard-split at the cap. Concatenating segment
    texts in index order reconstructs the presentation up to whitespace.
    """
    pieces: list[tuple[str, int]] = []
    for paragraph in transcript.presentation:
        for sentence in split_sentences(paragraph):
            pieces.extend(_sentence_pieces(sentence, max_tokens))

    segments: list[Segment] = []
    current: list[str] = []
    current_count = 0

    def flush() -> None:
        nonlocal current, current_count
        if not current:
            return
        text = " ".join(current)
        segments.append(
            Segment(
                transcript_id=transcript.id,
                index=len(segments),
                tokens=tokenize(text),
                text=text,
            )
        )
        current = []
        current_count = 0

    for text, count in pieces:
        if current and current_count + count > max_tokens:
            flush()
        current.append(text)
        current_count += count
    flush()
    return segments


def write_segments(segments: Iterable[Segment], path: str | Path) -> None:
    """Write segments as JSONL with keys transcript_id, index, text, n_tokens."""
    try:
        with open(path, "w", encoding="utf-8") as fh:
            for seg in segments:
                fh.write(
                    json.dumps(
                        {
                            "transcript_id": seg.transcript_id,
                            "index": seg.index,
                            "text": seg.text,
                            "n_tokens": seg.n_tokens,
                        },
                        ensure_ascii=False,
                    )
                    + "\n"
                )
    except OSError as exc:
        raise IoFailure(f"cannot write segments to {path}: {exc}") from exc


def read_segments(path: str | Path) -> list[Segment]:
    """Read segment JSONL back; tokens are rebuilt from the stored text."""
    segments: list[Segment] = []
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise IoFailure(f"cannot read segments from {path}: {exc}") from exc
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
        except json.JSONDecodeError as exc:
            raise SchemaViolation(f"invalid JSON: {exc.msg}", line=lineno) from exc
        try:
            transcript_id = row["transcript_id"]
            index = row["index"]
            text = row["text"]
            n_tokens = row["n_tokens"]
        except (KeyError, TypeError) as exc:
            raise SchemaViolation(f"missing key {exc}", line=lineno) from exc
        tokens = tokenize(text)
        if len(tokens) != n_tokens:
            raise SchemaViolation(
                f"n_tokens={n_tokens} does not match text ({len(tokens)} tokens)",
                line=lineno,
            )
        segments.append(Segment(transcript_id, index, tokens, text))
    return segments
