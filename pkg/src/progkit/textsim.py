"""Pluggable text similarity for free-text action arguments.

Any callable ``(str, str) -> float`` can be used as long as it satisfies
the contract checked by ``check_text_similarity``: range [0, 1], symmetry,
and self-similarity 1 for non-empty strings. The default implementation is
a deterministic, dependency-free bag-of-words cosine; an embedding-backed
scorer can be swapped in behind the same contract.
"""

from __future__ import annotations

import math
from collections import Counter
from typing import Callable, Sequence

TextSimilarityFn = Callable[[str, str], float]

#: Identifier recorded in library config snapshots.
TOKEN_COSINE_ID = "token-cosine/1"


def token_cosine(a: str, b: str) -> float:
    """Cosine similarity of lowercase whitespace-token count vectors."""
    counts_a = Counter(a.lower().split())
    counts_b = Counter(b.lower().split())
    if not counts_a and not counts_b:
        return 1.0
    if not counts_a or not counts_b:
        return 0.0
    dot = sum(count * counts_b[token] for token, count in counts_a.items())
    norm = math.sqrt(sum(c * c for c in counts_a.values())) * math.sqrt(
        sum(c * c for c in counts_b.values())
    )
    return dot / norm


_DEFAULT_PROBES: tuple[str, ...] = (
    "open settings",
    "open settings",
    "search for apple pie",
    "SEARCH for APPLE pie",
    "completely unrelated words here",
    "x",
)


def check_text_similarity(
    fn: TextSimilarityFn, probes: Sequence[str] = _DEFAULT_PROBES
) -> list[str]:
    """Conformance harness for similarity functions; returns violations.

    Checks range, symmetry, and self-similarity 1 over all probe pairs.
    """
    problems: list[str] = []
    for a in probes:
        if a.strip() and abs(fn(a, a) - 1.0) > 1e-9:
            problems.append(f"self-similarity of {a!r} is {fn(a, a)}, expected 1")
        for b in probes:
            ab, ba = fn(a, b), fn(b, a)
            if not 0.0 <= ab <= 1.0:
                problems.append(f"similarity({a!r}, {b!r}) = {ab} outside [0, 1]")
            if abs(ab - ba) > 1e-9:
                problems.append(f"asymmetric on ({a!r}, {b!r}): {ab} vs {ba}")
    return problems
