"""Retrieval-augmented multi-question generation for earnings-call preparation."""

from .corpus import (
    CorpusStats,
    QaTurn,
    QuestionRecord,
    Transcript,
    corpus_stats,
    extract_questions,
    parse_transcript,
    read_corpus,
    read_questions,
    write_corpus,
    write_questions,
)
from .generator import (
    DecodeParams,
    GeneratorConfig,
    GeneratorState,
    Vocab,
    build_input,
    decode,
    forward,
    generate_question,
    gradients,
    init_generator,
    load_generator,
    loss,
    save_generator,
)
from .metrics import (
    EvalReport,
    HashedNgramEmbedder,
    TopicModel,
    bleu4,
    embed_f1,
    evaluate_run,
    fit_topic_model,
    meteor_lite,
    render_report_table,
    rouge_l,
    rouge_n,
    sem_ent,
    topic_distribution,
)
from .retrieval import (
    BilinearRelevanceScorer,
    Bm25Index,
    RelevanceJudgment,
    RemoteRelevanceScorer,
    RetrievalResult,
    bm25_build,
    bm25_score,
    random_retrieve,
    render_relevance_prompt,
    score_segment,
    top_k_select,
)
from .textseg import (
    Segment,
    Token,
    detokenize,
    segment_presentation,
    split_sentences,
    split_words,
    tokenize,
)
from .training import (
    CoTrainer,
    OptimState,
    RetrieverUpdateState,
    TrainConfig,
    adamw_step,
    clip_grad_norm,
    lr_at,
    make_synthetic_corpus,
    train,
)

__version__ = "0.1.0"
