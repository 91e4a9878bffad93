from .archive import (
    ArchiveError,
    EmbeddingCache,
    ExemplarRecord,
    KeepAllFilter,
    RetrievalMode,
    Selection,
    build_candidate_set,
    dump_archive,
    embed_texts,
    load_archive,
    parse_archive,
    select_exemplars,
)
from .cutoff import DegenerateProfile, adaptive_cutoff, cutoff_objective, segment_fit_rmse
from .filtering import FILTER_TEMPLATE, ParseFailure, parse_filter_output, render_filter_prompt
from .similarity import EmbeddingError, SimilarityProfile, cosine_similarity, rank_by_similarity

__all__ = [
    "ArchiveError",
    "DegenerateProfile",
    "EmbeddingCache",
    "EmbeddingError",
    "ExemplarRecord",
    "FILTER_TEMPLATE",
    "KeepAllFilter",
    "ParseFailure",
    "RetrievalMode",
    "Selection",
    "SimilarityProfile",
    "adaptive_cutoff",
    "build_candidate_set",
    "cosine_similarity",
    "cutoff_objective",
    "dump_archive",
    "embed_texts",
    "load_archive",
    "parse_archive",
    "parse_filter_output",
    "rank_by_similarity",
    "render_filter_prompt",
    "segment_fit_rmse",
    "select_exemplars",
]
