"""Krippendorff's alpha for nominal labels with missing entries, computed
over the coincidence matrix."""

from __future__ import annotations

from collections import Counter, defaultdict
from typing import Hashable, Optional, Sequence


def krippendorff_alpha(annotations: Sequence[Sequence[Optional[Hashable]]]) -> float:
    """Alpha = 1 - observed/expected disagreement.

    ``annotations`` is units x annotators; None marks a missing entry. Units
    with fewer than two values are ignored (unpairable). Zero expected
    disagreement (all labels identical) yields 1.0 by convention.
    """
    coincidence: dict[tuple, float] = defaultdict(float)
    label_totals: Counter = Counter()
    n = 0.0
    usable_units = 0
    for unit in annotations:
        values = [v for v in unit if v is not None]
        m = len(values)
        if m < 2:
            continue
        usable_units += 1
        n += m
        for i, a in enumerate(values):
            label_totals[a] += 1
            for j, b in enumerate(values):
                if i != j:
                    coincidence[(a, b)] += 1.0 / (m - 1)
    if usable_units < 1 or n < 2:
        raise ValueError("need at least one unit with two or more labels")

    observed_disagreement = sum(v for (a, b), v in coincidence.items() if a != b) / n
    expected_disagreement = sum(
        label_totals[a] * label_totals[b]
        for a in label_totals
        for b in label_totals
        if a != b
    ) / (n * (n - 1))
    if expected_disagreement == 0:
        return 1.0
    return 1.0 - observed_disagreement / expected_disagreement
