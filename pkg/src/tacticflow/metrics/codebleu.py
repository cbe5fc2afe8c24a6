"""CodeBLEU program similarity: token n-gram match, keyword-weighted n-gram
match, AST subtree match, and def-use dataflow match, combined by weights
with renormalization when a component's reference side is empty."""

from __future__ import annotations

import ast
import keyword
import math
import re
from collections import Counter
from dataclasses import dataclass
from typing import Optional, Sequence

PYTHON_KEYWORDS = frozenset(keyword.kwlist)


@dataclass(frozen=True)
class CodeBleuConfig:
    weights: tuple[float, float, float, float] = (0.15, 0.15, 0.35, 0.35)
    threshold: float = 0.15
    keyword_multiplier: float = 5.0

    def __post_init__(self):
        if abs(sum(self.weights) - 1.0) > 1e-9:
            raise ValueError(f"component weights must sum to 1, got {self.weights}")
        if not (0.0 < self.threshold < 1.0):
            raise ValueError(f"threshold must be in (0, 1), got {self.threshold}")


_CODE_TOKEN_RE = re.compile(
    r"""
    \"\"\"(?:[^"\\]|\\.)*?\"\"\" | '''(?:[^'\\]|\\.)*?''' |
    "(?:[^"\\\n]|\\.)*" | '(?:[^'\\\n]|\\.)*' |
    [A-Za-z_]\w* |
    \d+\.\d+ | \d+ |
    [^\sA-Za-z0-9_]
    """,
    re.VERBOSE,
)


def tokenize_code(code: str) -> list[str]:
    return _CODE_TOKEN_RE.findall(code)


def _ngram_counts(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def _ngram_precision_product(
    candidate: Sequence[str], reference: Sequence[str], weight_fn=None, max_n: int = 4
) -> float:
    """Geometric mean of (optionally weighted) clipped precisions with
    add-one smoothing above unigrams, times a brevity penalty."""
    if not candidate or not reference:
        return 0.0
    log_sum = 0.0
    for n in range(1, max_n + 1):
        cand_counts = _ngram_counts(candidate, n)
        ref_counts = _ngram_counts(reference, n)
        total = matched = 0.0
        for gram, count in cand_counts.items():
            w = weight_fn(gram) if weight_fn else 1.0
            total += count * w
            matched += min(count, ref_counts[gram]) * w
        if n == 1:
            if matched == 0:
                return 0.0
            precision = matched / total
        else:
            precision = (matched + 1) / (total + 1)
        log_sum += math.log(precision)
    score = math.exp(log_sum / max_n)
    c, r = len(candidate), len(reference)
    bp = 1.0 if c >= r else math.exp(1.0 - r / c)
    return bp * score


def ngram_match(candidate: str, reference: str) -> float:
    return _ngram_precision_product(tokenize_code(candidate), tokenize_code(reference))


def weighted_ngram_match(candidate: str, reference: str, multiplier: float = 5.0) -> float:
    def weight(gram: tuple[str, ...]) -> float:
        return multiplier if any(tok in PYTHON_KEYWORDS for tok in gram) else 1.0

    return _ngram_precision_product(tokenize_code(candidate), tokenize_code(reference), weight)


def _try_parse(source: str) -> Optional[ast.AST]:
    try:
        return ast.parse(source)
    except (SyntaxError, ValueError):
        return None


def _subtree_shapes(tree: ast.AST) -> list:
    """Node-kind shapes of all subtrees of height >= 1 (identifiers compared
    by kind, not spelling)."""
    shapes = []

    def shape(node):
        children = list(ast.iter_child_nodes(node))
        s = (type(node).__name__, tuple(shape(c) for c in children))
        if children:
            shapes.append(s)
        return s

    shape(tree)
    return shapes


def syntax_match(candidate: str, reference: str) -> Optional[float]:
    """Fraction of reference AST subtrees present in the candidate AST.

    Returns None when the reference does not parse (component dropped
    upstream); an unparseable candidate scores 0.
    """
    ref_tree = _try_parse(reference)
    if ref_tree is None:
        return None
    ref_shapes = _subtree_shapes(ref_tree)
    if not ref_shapes:
        return None
    cand_tree = _try_parse(candidate)
    if cand_tree is None:
        return 0.0
    cand_shapes = set(map(repr, _subtree_shapes(cand_tree)))
    matched = sum(1 for s in ref_shapes if repr(s) in cand_shapes)
    return matched / len(ref_shapes)


class _DataflowExtractor:
    """Def-use edges per straight-line scope.

    An assignment defines; a name read uses the most recent definition in
    scope. Edges are (used variable, defined variable) pairs after canonical
    first-occurrence renaming; a bare use (no enclosing definition) pairs
    with the "_" sink.
    """

    def __init__(self):
        self.canon: dict[str, str] = {}
        self.edges: list[tuple[str, str]] = []

    def _canon(self, name: str) -> str:
        if name not in self.canon:
            self.canon[name] = f"var_{len(self.canon)}"
        return self.canon[name]

    def extract(self, tree: ast.Module) -> list[tuple[str, str]]:
        self._scope(tree.body, set())
        return self.edges

    def _scope(self, body: list[ast.stmt], defined: set[str]) -> None:
        for stmt in body:
            self._stmt(stmt, defined)

    def _reads(self, nodes, defined: set[str]) -> list[str]:
        names = []
        for node in nodes:
            if node is None:
                continue
            for sub in ast.walk(node):
                if isinstance(sub, ast.Name) and isinstance(sub.ctx, ast.Load) and sub.id in defined:
                    names.append(sub.id)
        return names

    def _targets(self, nodes) -> list[str]:
        names = []
        for node in nodes:
            if node is None:
                continue
            for sub in ast.walk(node):
                if isinstance(sub, ast.Name) and isinstance(sub.ctx, ast.Store):
                    names.append(sub.id)
        return names

    def _emit(self, reads: list[str], targets: list[str], defined: set[str]) -> None:
        sinks = [self._canon(t) for t in targets] or ["_"]
        for r in reads:
            rc = self._canon(r)
            for sink in sinks:
                self.edges.append((rc, sink))
        for t in targets:
            self._canon(t)
            defined.add(t)

    def _stmt(self, stmt: ast.stmt, defined: set[str]) -> None:
        if isinstance(stmt, (ast.Assign, ast.AnnAssign)):
            targets = stmt.targets if isinstance(stmt, ast.Assign) else [stmt.target]
            self._emit(self._reads([getattr(stmt, "value", None)], defined), self._targets(targets), defined)
        elif isinstance(stmt, ast.AugAssign):
            reads = self._reads([stmt.value, stmt.target], defined) if isinstance(stmt.target, ast.Name) else self._reads([stmt.value], defined)
            self._emit(reads, self._targets([stmt.target]), defined)
        elif isinstance(stmt, ast.For):
            self._emit(self._reads([stmt.iter], defined), self._targets([stmt.target]), defined)
            self._scope(stmt.body, defined)
            self._scope(stmt.orelse, defined)
        elif isinstance(stmt, (ast.While, ast.If)):
            self._emit(self._reads([stmt.test], defined), [], defined)
            self._scope(stmt.body, defined)
            self._scope(stmt.orelse, defined)
        elif isinstance(stmt, ast.With):
            for item in stmt.items:
                self._emit(
                    self._reads([item.context_expr], defined),
                    self._targets([item.optional_vars] if item.optional_vars else []),
                    defined,
                )
            self._scope(stmt.body, defined)
        elif isinstance(stmt, (ast.FunctionDef, ast.AsyncFunctionDef)):
            defined.add(stmt.name)
            self._canon(stmt.name)
            inner = {a.arg for a in stmt.args.args + stmt.args.kwonlyargs}
            for a in inner:
                self._canon(a)
            self._scope(stmt.body, set(inner))
        elif isinstance(stmt, ast.ClassDef):
            defined.add(stmt.name)
            self._canon(stmt.name)
            self._scope(stmt.body, set())
        elif isinstance(stmt, (ast.Return, ast.Expr)):
            self._emit(self._reads([stmt.value], defined), [], defined)
        elif isinstance(stmt, ast.Try):
            self._scope(stmt.body, defined)
            for handler in stmt.handlers:
                self._scope(handler.body, defined)
            self._scope(stmt.orelse, defined)
            self._scope(stmt.finalbody, defined)
        # imports, pass, etc. contribute no def-use edges


def dataflow_edges(source: str) -> Optional[list[tuple[str, str]]]:
    tree = _try_parse(source)
    if tree is None:
        return None
    return _DataflowExtractor().extract(tree)


def dataflow_match(candidate: str, reference: str) -> Optional[float]:
    """Fraction of reference def-use edges present in the candidate after
    canonical variable renaming.

    Returns None when the reference does not parse or has no edges
    (component dropped upstream); an unparseable candidate scores 0.
    """
    ref_edges = dataflow_edges(reference)
    if not ref_edges:
        return None
    cand_edges = dataflow_edges(candidate)
    if cand_edges is None:
        return 0.0
    cand_counts = Counter(cand_edges)
    matched = 0
    for edge in ref_edges:
        if cand_counts[edge] > 0:
            cand_counts[edge] -= 1
            matched += 1
    return matched / len(ref_edges)


def codebleu(candidate: str, reference: str, config: CodeBleuConfig = CodeBleuConfig()) -> float:
    """Weighted combination of the four components in [0, 1].

    Components with an empty reference side (no keywords, unparseable
    reference AST, no reference dataflow) are dropped and the remaining
    weights renormalized; an unparseable candidate scores 0 on syntax and
    dataflow without dropping them.
    """
    w_ngram, w_weighted, w_syntax, w_dataflow = config.weights
    ref_tokens = tokenize_code(reference)

    parts: list[tuple[float, float]] = []  # (weight, score)
    if ref_tokens:
        parts.append((w_ngram, ngram_match(candidate, reference)))
        if any(tok in PYTHON_KEYWORDS for tok in ref_tokens):
            parts.append((w_weighted, weighted_ngram_match(candidate, reference, config.keyword_multiplier)))
    syn = syntax_match(candidate, reference)
    if syn is not None:
        parts.append((w_syntax, syn))
    df = dataflow_match(candidate, reference)
    if df is not None:
        parts.append((w_dataflow, df))
    if not parts:
        return 0.0
    total_weight = sum(w for w, _ in parts)
    return sum(w * s for w, s in parts) / total_weight
