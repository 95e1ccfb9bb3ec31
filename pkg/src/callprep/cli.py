"""Command-line pipeline: ingest -> stats -> segment -> train -> generate -> evaluate -> report.

Configuration is one JSON document; command-line flags override file values,
which override the built-in defaults. Exit codes: 0 success, 1 validation
error, 2 runtime error. Verbosity comes from the CALLPREP_LOG environment
variable (error, info, or debug).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import re
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

from . import corpus as corpus_mod
from . import metrics as metrics_mod
from . import textseg
from .errors import CallprepError, ConfigInvalid, IoFailure, ParseError, SchemaViolation
from .generator import DecodeParams, generate_question, load_generator
from .retrieval import RetrievalResult
from .training import RETRIEVER_KINDS, TrainConfig, train

logger = logging.getLogger(__name__)

_LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


@dataclass
class PathsSection:
    corpus: str = "corpus.jsonl"
    questions: str = "questions.jsonl"
    segments: str = "segments.jsonl"
    checkpoints: str = "checkpoints"
    report: str = "report.json"


@dataclass
class TrainSection:
    epochs: int = 3
    warmup_ratio: float = 0.1
    max_grad_norm: float = 1.0
    accumulation_steps: int = 32
    micro_batch: int = 1
    top_k: int = 6
    lr: float = 2e-4
    scorer_lr: float | None = None
    input_budget: int = 1400


@dataclass
class DecodeSection:
    strategy: str = "sample"
    temperature: float = 0.7
    top_p: float = 0.9
    max_new_tokens: int = 200


@dataclass
class ModelSection:
    d_model: int = 64
    n_layers: int = 1
    n_heads: int = 2
    context_len: int = 512
    init_scale: float = 0.02
    scorer_init_scale: float = 0.1
    vocab_min_freq: int = 2


@dataclass
class MetricsSection:
    k_topics: int = 8
    bm25_k1: float = 1.2
    bm25_b: float = 0.75


@dataclass
class RunConfig:
    seed: int = 0
    retriever: str = "pro"
    num_questions: int = 5
    paths: PathsSection = field(default_factory=PathsSection)
    train: TrainSection = field(default_factory=TrainSection)
    decode: DecodeSection = field(default_factory=DecodeSection)
    model: ModelSection = field(default_factory=ModelSection)
    metrics: MetricsSection = field(default_factory=MetricsSection)

    def validate(self) -> None:
        if self.retriever not in RETRIEVER_KINDS:
            raise ConfigInvalid(
                "retriever", f"must be one of {RETRIEVER_KINDS}, got {self.retriever!r}"
            )
        if self.num_questions < 1:
            raise ConfigInvalid("num_questions", "must be >= 1")
        path_fields = [(f.name, getattr(self.paths, f.name)) for f in fields(self.paths)]
        seen: dict[str, str] = {}
        for name, value in path_fields:
            if not isinstance(value, str) or not value:
                raise ConfigInvalid(f"paths.{name}", "must be a non-empty string")
            if value in seen:
                raise ConfigInvalid(
                    f"paths.{name}", f"duplicates paths.{seen[value]} ({value!r})"
                )
            seen[value] = name
        try:
            self.as_train_config()
            self.decode_params(self.seed)
        except ValueError as exc:
            raise ConfigInvalid("train/decode", str(exc)) from exc

    def as_train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.train.epochs,
            warmup_ratio=self.train.warmup_ratio,
            max_grad_norm=self.train.max_grad_norm,
            accumulation_steps=self.train.accumulation_steps,
            micro_batch=self.train.micro_batch,
            top_k=self.train.top_k,
            seed=self.seed,
            checkpoint_dir=self.paths.checkpoints,
        )

    def decode_params(self, seed: int) -> DecodeParams:
        return DecodeParams(
            strategy=self.decode.strategy,
            temperature=self.decode.temperature,
            top_p=self.decode.top_p,
            max_new_tokens=self.decode.max_new_tokens,
            seed=seed,
        )

    def model_dims(self) -> dict:
        return {
            "d_model": self.model.d_model,
            "n_layers": self.model.n_layers,
            "n_heads": self.model.n_heads,
            "context_len": self.model.context_len,
        }


def _build_section(cls, data: object, prefix: str):
    if not isinstance(data, dict):
        raise ConfigInvalid(prefix or "config", "must be a JSON object")
    known = {f.name for f in fields(cls)}
    section = cls()
    for key, value in data.items():
        dotted = f"{prefix}.{key}" if prefix else key
        if key not in known:
            raise ConfigInvalid(dotted, "unknown field")
        default = getattr(section, key)
        if isinstance(default, bool) or isinstance(value, bool):
            raise ConfigInvalid(dotted, "unexpected boolean")
        if isinstance(default, int) and not isinstance(value, int):
            raise ConfigInvalid(dotted, f"expected integer, got {value!r}")
        if isinstance(default, float) and not isinstance(value, (int, float)):
            raise ConfigInvalid(dotted, f"expected number, got {value!r}")
        if isinstance(default, str) and not isinstance(value, str):
            raise ConfigInvalid(dotted, f"expected string, got {value!r}")
        setattr(section, key, float(value) if isinstance(default, float) else value)
    return section


_SECTIONS = {
    "paths": PathsSection,
    "train": TrainSection,
    "decode": DecodeSection,
    "model": ModelSection,
    "metrics": MetricsSection,
}


def config_from_dict(data: dict) -> RunConfig:
    config = RunConfig()
    for key, value in data.items():
        if key in _SECTIONS:
            setattr(config, key, _build_section(_SECTIONS[key], value, key))
        elif key == "seed":
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigInvalid("seed", f"expected integer, got {value!r}")
            config.seed = value
        elif key == "retriever":
            if not isinstance(value, str):
                raise ConfigInvalid("retriever", f"expected string, got {value!r}")
            config.retriever = value
        elif key == "num_questions":
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigInvalid("num_questions", f"expected integer, got {value!r}")
            config.num_questions = value
        else:
            raise ConfigInvalid(key, "unknown field")
    config.validate()
    return config


def load_config(path: str | Path) -> RunConfig:
    """Parse a JSON config file; unspecified fields keep their defaults."""
    try:
        raw = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot read config {path}: {exc}") from exc
    try:
        data = json.loads(raw) if raw.strip() else {}
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, line=exc.lineno, column=exc.colno) from exc
    if not isinstance(data, dict):
        raise ParseError("config root must be a JSON object")
    return config_from_dict(data)


# --- command implementations ---


def _collect_raw_files(inputs: list[str]) -> list[Path]:
    paths: list[Path] = []
    for item in inputs:
        p = Path(item)
        if p.is_dir():
            paths.extend(sorted(p.glob("*.txt")))
        else:
            paths.append(p)
    return paths


def cmd_ingest(args: argparse.Namespace, config: RunConfig) -> int:
    raw_files = _collect_raw_files(args.inputs)
    if not raw_files:
        raise ConfigInvalid("inputs", "no raw transcript files found")
    transcripts = []
    for path in raw_files:
        try:
            raw = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise IoFailure(f"cannot read {path}: {exc}") from exc
        transcripts.append(corpus_mod.parse_transcript(raw, id=path.stem))
    corpus_out = args.out or config.paths.corpus
    questions_out = args.questions_out or config.paths.questions
    corpus_mod.write_corpus(transcripts, corpus_out)
    questions = [q for t in transcripts for q in corpus_mod.extract_questions(t)]
    corpus_mod.write_questions(questions, questions_out)
    print(
        f"ingested {len(transcripts)} transcripts, {len(questions)} questions "
        f"-> {corpus_out}, {questions_out}"
    )
    return 0


def _format_stat(value: float | int) -> str:
    return f"{value:g}" if isinstance(value, float) else str(value)


def cmd_stats(args: argparse.Namespace, config: RunConfig) -> int:
    transcripts = corpus_mod.read_corpus(args.corpus or config.paths.corpus)
    stats = corpus_mod.corpus_stats(transcripts)
    for name in (
        "n_transcripts",
        "n_questions",
        "avg_presentation_len",
        "avg_question_len",
        "avg_questions_per_transcript",
        "q95_question_len",
        "max_presentation_len",
    ):
        print(f"{name}: {_format_stat(getattr(stats, name))}")
    return 0


def cmd_segment(args: argparse.Namespace, config: RunConfig) -> int:
    transcripts = corpus_mod.read_corpus(args.corpus or config.paths.corpus)
    out = args.out or config.paths.segments
    all_segments = []
    for t in transcripts:
        all_segments.extend(textseg.segment_presentation(t))
    textseg.write_segments(all_segments, out)
    print(f"wrote {len(all_segments)} segments -> {out}")
    return 0


def _paired_examples(config: RunConfig, corpus_path: str, questions_path: str):
    transcripts = {t.id: t for t in corpus_mod.read_corpus(corpus_path)}
    pairs = []
    for q in corpus_mod.read_questions(questions_path):
        t = transcripts.get(q.transcript_id)
        if t is None:
            raise SchemaViolation(
                f"question {q.question_id!r} references unknown transcript "
                f"{q.transcript_id!r}"
            )
        pairs.append((t, q))
    return pairs


def cmd_train(args: argparse.Namespace, config: RunConfig) -> int:
    pairs = _paired_examples(
        config, args.corpus or config.paths.corpus, args.questions or config.paths.questions
    )
    train_config = config.as_train_config()
    if args.out:
        train_config.checkpoint_dir = args.out
    result = train(
        pairs,
        train_config,
        retriever=config.retriever,
        model_dims=config.model_dims(),
        lr=config.train.lr,
        scorer_lr=config.train.scorer_lr,
        init_scale=config.model.init_scale,
        scorer_init_scale=config.model.scorer_init_scale,
        input_budget=config.train.input_budget,
        vocab_min_freq=config.model.vocab_min_freq,
        bm25_k1=config.metrics.bm25_k1,
        bm25_b=config.metrics.bm25_b,
    )
    final_loss = result.log[-1]["loss"] if result.log else float("nan")
    print(
        f"trained {train_config.epochs} epochs ({len(result.log)} optimizer steps), "
        f"final loss {final_loss:.4f}; checkpoints in {result.checkpoint_dir}"
    )
    return 0


def _latest_checkpoint(checkpoint_dir: str) -> Path:
    best: tuple[int, Path] | None = None
    for path in Path(checkpoint_dir).glob("epoch-*.ckpt"):
        m = re.fullmatch(r"epoch-(\d+)\.ckpt", path.name)
        if m:
            epoch = int(m.group(1))
            if best is None or epoch > best[0]:
                best = (epoch, path)
    if best is None:
        raise IoFailure(f"no epoch-<n>.ckpt files in {checkpoint_dir}")
    return best[1]


def _selection_for(segments, indices: list[int] | None) -> RetrievalResult:
    if indices:
        valid = sorted({i for i in indices if 0 <= i < len(segments)})
        if not valid:
            raise ConfigInvalid(
                "segments", f"no valid segment indices among {indices} (have {len(segments)})"
            )
    else:
        valid = list(range(len(segments)))
    return RetrievalResult(segment_indices=valid, scores=[0.0] * len(valid))


def cmd_generate(args: argparse.Namespace, config: RunConfig) -> int:
    # The relevance scorer is training-only; this path never constructs one.
    ckpt = Path(args.checkpoint) if args.checkpoint else _latest_checkpoint(
        config.paths.checkpoints
    )
    state = load_generator(ckpt)
    transcripts = {t.id: t for t in corpus_mod.read_corpus(args.corpus or config.paths.corpus)}
    base_seed = config.seed if args.seed is None else args.seed
    n = args.num_questions or config.num_questions
    out = args.out or "generated.jsonl"

    rows: list[corpus_mod.QuestionRecord] = []
    if args.align_to:
        references = corpus_mod.read_questions(args.align_to)
        if args.transcript:
            references = [q for q in references if q.transcript_id == args.transcript]
        for i, ref in enumerate(references):
            t = transcripts.get(ref.transcript_id)
            if t is None:
                raise SchemaViolation(
                    f"reference {ref.question_id!r} names unknown transcript "
                    f"{ref.transcript_id!r}"
                )
            segments = textseg.segment_presentation(t)
            result = _selection_for(segments, args.segments)
            text = generate_question(
                state, segments, result, config.decode_params(base_seed + i)
            )
            rows.append(
                corpus_mod.QuestionRecord(
                    transcript_id=ref.transcript_id,
                    question_id=ref.question_id,
                    text=text or "<empty>",
                    word_count=max(1, len(text.split())),
                )
            )
    else:
        if not args.transcript:
            raise ConfigInvalid("transcript", "generate needs --transcript (or --align-to)")
        t = transcripts.get(args.transcript)
        if t is None:
            raise ConfigInvalid("transcript", f"unknown transcript id {args.transcript!r}")
        segments = textseg.segment_presentation(t)
        result = _selection_for(segments, args.segments)
        for i in range(n):
            text = generate_question(
                state, segments, result, config.decode_params(base_seed + i)
            )
            rows.append(
                corpus_mod.QuestionRecord(
                    transcript_id=t.id,
                    question_id=f"gen{i:02d}",
                    text=text or "<empty>",
                    word_count=max(1, len(text.split())),
                )
            )
    corpus_mod.write_questions(rows, out)
    print(f"wrote {len(rows)} generated questions -> {out}")
    return 0


def _topic_models_by_transcript(
    config: RunConfig, corpus_path: str, references: list[corpus_mod.QuestionRecord]
) -> dict[str, metrics_mod.TopicModel]:
    """Fit one topic model per company on its reference questions.

    Companies with too few questions share a fallback model fitted on all
    references; transcripts are keyed to their company's model.
    """
    transcripts = corpus_mod.read_corpus(corpus_path)
    company_of = {t.id: t.company for t in transcripts}
    by_company: dict[str, list[str]] = {}
    for q in references:
        company = company_of.get(q.transcript_id, "")
        by_company.setdefault(company, []).append(q.text)

    all_texts = [q.text for q in references]
    k_cap = config.metrics.k_topics

    def fit(texts: list[str]) -> metrics_mod.TopicModel | None:
        k = min(k_cap, len(texts))
        if k < 2:
            return None
        return metrics_mod.fit_topic_model(texts, k=k, seed=config.seed)

    fallback = fit(all_texts)
    models: dict[str, metrics_mod.TopicModel] = {}
    company_models: dict[str, metrics_mod.TopicModel | None] = {}
    for company, texts in by_company.items():
        model = fit(texts) if len(texts) >= 2 else None
        company_models[company] = model or fallback
    for tid, company in company_of.items():
        model = company_models.get(company, fallback)
        if model is not None:
            models[tid] = model
    return models


def cmd_evaluate(args: argparse.Namespace, config: RunConfig) -> int:
    references_path = args.references or config.paths.questions
    references = corpus_mod.read_questions(references_path)
    topic_models = _topic_models_by_transcript(
        config, args.corpus or config.paths.corpus, references
    )
    report = metrics_mod.evaluate_run(args.generated, references_path, topic_models)
    out = args.out or config.paths.report
    metrics_mod.write_report(report, out)
    print(metrics_mod.render_report_table(report))
    print(f"report -> {out}")
    return 0


def cmd_report(args: argparse.Namespace, config: RunConfig) -> int:
    path = args.report or config.paths.report
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise IoFailure(f"cannot read report {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, line=exc.lineno, column=exc.colno) from exc
    rows = [metrics_mod.QuestionScores(**row) for row in data.pop("rows", [])]
    report = metrics_mod.EvalReport(rows=rows, **data)
    print(metrics_mod.render_report_table(report))
    return 0


# --- argument parsing and dispatch ---


def _parse_segment_list(text: str) -> list[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"--segments expects I,J,K integers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="callprep",
        description="Retrieval-augmented question generation for earnings-call prep.",
    )
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--seed", type=int, default=None, help="global seed override")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse raw transcript text into corpus/question JSONL")
    p.add_argument("inputs", nargs="+", help="raw .txt files or directories")
    p.add_argument("--out", help="corpus JSONL output path")
    p.add_argument("--questions-out", help="questions JSONL output path")

    p = sub.add_parser("stats", help="print corpus statistics")
    p.add_argument("--corpus", help="corpus JSONL path")

    p = sub.add_parser("segment", help="emit segment JSONL")
    p.add_argument("--corpus", help="corpus JSONL path")
    p.add_argument("--out", help="segment JSONL output path")

    p = sub.add_parser("train", help="run co-training")
    p.add_argument("--corpus", help="corpus JSONL path")
    p.add_argument("--questions", help="questions JSONL path")
    p.add_argument("--retriever", choices=RETRIEVER_KINDS, default=None)
    p.add_argument("--top-k", type=int, default=None)
    p.add_argument("--out", help="checkpoint directory")

    p = sub.add_parser("generate", help="generate questions from chosen segments")
    p.add_argument("--checkpoint", help="generator checkpoint (default: latest epoch)")
    p.add_argument("--corpus", help="corpus JSONL path")
    p.add_argument("--transcript", help="transcript id")
    p.add_argument("--segments", type=_parse_segment_list, default=None,
                   help="comma-separated segment indices, e.g. 0,2,5")
    p.add_argument("--num-questions", type=int, default=None)
    p.add_argument("--align-to", help="reference questions JSONL; generate one question per row")
    p.add_argument("--out", help="generated questions JSONL output path")

    p = sub.add_parser("evaluate", help="score generated questions against references")
    p.add_argument("--generated", required=True, help="generated questions JSONL")
    p.add_argument("--references", help="reference questions JSONL")
    p.add_argument("--corpus", help="corpus JSONL path (company mapping)")
    p.add_argument("--out", help="report JSON output path")

    p = sub.add_parser("report", help="render a saved report as a table")
    p.add_argument("--report", help="report JSON path")

    return parser


_COMMANDS = {
    "ingest": cmd_ingest,
    "stats": cmd_stats,
    "segment": cmd_segment,
    "train": cmd_train,
    "generate": cmd_generate,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
}


def _configure_logging() -> None:
    level_name = os.environ.get("CALLPREP_LOG", "error").lower()
    level = _LOG_LEVELS.get(level_name)
    if level is None:
        print(f"warning: unknown CALLPREP_LOG level {level_name!r}; using error",
              file=sys.stderr)
        level = logging.ERROR
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def run(args: argparse.Namespace, config: RunConfig) -> int:
    return _COMMANDS[args.command](args, config)


def main(argv: list[str] | None = None) -> int:
    _configure_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse uses exit code 2 for usage problems; those are validation errors
        return 1 if exc.code == 2 else int(exc.code or 0)

    try:
        config = load_config(args.config) if args.config else RunConfig()
        if args.seed is not None:
            config.seed = args.seed
        if getattr(args, "retriever", None):
            config.retriever = args.retriever
        if getattr(args, "top_k", None):
            config.train.top_k = args.top_k
        if getattr(args, "num_questions", None):
            config.num_questions = args.num_questions
        config.validate()
        return run(args, config)
    except (ConfigInvalid, ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except CallprepError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
