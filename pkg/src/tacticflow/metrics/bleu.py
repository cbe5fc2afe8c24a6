"""Plain 4-gram BLEU with add-one smoothing on higher-order precisions and a
multiplicative brevity penalty; used for subproblem-recognition scoring."""

from __future__ import annotations

import math
import re
from collections import Counter
from typing import Sequence

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")

MAX_N = 4


def tokenize_text(text: str) -> list[str]:
    """Whitespace plus punctuation splitting."""
    return _TOKEN_RE.findall(text)


def _ngram_counts(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu_from_tokens(candidate: Sequence[str], reference: Sequence[str], max_n: int = MAX_N) -> float:
    if not candidate or not reference:
        return 0.0
    log_sum = 0.0
    for n in range(1, max_n + 1):
        cand_counts = _ngram_counts(candidate, n)
        ref_counts = _ngram_counts(reference, n)
        total = sum(cand_counts.values())
        matched = sum(min(c, ref_counts[g]) for g, c in cand_counts.items())
        if n == 1:
            if matched == 0:
                return 0.0
            precision = matched / total
        else:
            # add-one smoothing on higher-order precisions
            precision = (matched + 1) / (total + 1)
        log_sum += math.log(precision)
    score = math.exp(log_sum / max_n)
    c, r = len(candidate), len(reference)
    bp = 1.0 if c >= r else math.exp(1.0 - r / c)
    return bp * score


def bleu(candidate: str, reference: str) -> float:
    """BLEU in [0, 1]; empty candidate scores 0."""
    return bleu_from_tokens(tokenize_text(candidate), tokenize_text(reference))
