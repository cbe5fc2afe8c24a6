from .agreement import krippendorff_alpha
from .bleu import bleu, tokenize_text
from .codebleu import CodeBleuConfig, codebleu, dataflow_match, syntax_match
from .scoring import (
    AggregateReport,
    OptionScore,
    ScoreRecord,
    aggregate,
    read_records,
    score_trajectory,
    write_records,
)

__all__ = [
    "AggregateReport",
    "CodeBleuConfig",
    "OptionScore",
    "ScoreRecord",
    "aggregate",
    "bleu",
    "codebleu",
    "dataflow_match",
    "krippendorff_alpha",
    "read_records",
    "score_trajectory",
    "syntax_match",
    "tokenize_text",
    "write_records",
]
