"""Soft and classic longest-common-subsequence dynamic programming.

The soft variant scores a matched action pair with a real-valued weight
instead of 0/1 equality: free-text actions (INPUT/ANSWER) match with text
similarity, idle NOTHING pairs with a fixed penalty weight, and all other
kinds only on exact equality. With purely discrete inputs the soft score
degenerates to the classic integer LCS length.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .model import Action, ActionKind, Trajectory
from .textsim import TextSimilarityFn, token_cosine

#: Match weight for a NOTHING/NOTHING pair. Lower than 1 so idle steps do
#: not crowd out real actions, but not 0: some idling is necessary waiting.
NOTHING_MATCH_WEIGHT = 0.4

#: DP values closer than this are treated as equal during backtrace.
_TIE_EPS = 1e-12


def soft_match(
    a: Action,
    b: Action,
    ts: TextSimilarityFn = token_cosine,
    epsilon: float = NOTHING_MATCH_WEIGHT,
) -> float:
    """Pairwise action match weight in [0, 1]."""
    if a.kind is not b.kind:
        return 0.0
    if a.kind in (ActionKind.INPUT, ActionKind.ANSWER):
        return ts(a.text or "", b.text or "")
    if a.kind is ActionKind.NOTHING:
        return epsilon
    return 1.0 if a == b else 0.0


def _match_matrix(
    a: Sequence[Action],
    b: Sequence[Action],
    ts: TextSimilarityFn,
    epsilon: float,
) -> list[list[float]]:
    return [[soft_match(x, y, ts, epsilon) for y in b] for x in a]


def _dp_table(
    a: Sequence[Action],
    b: Sequence[Action],
    ts: TextSimilarityFn,
    epsilon: float,
) -> list[list[float]]:
    m, n = len(a), len(b)
    weights = _match_matrix(a, b, ts, epsilon)
    table = [[0.0] * (n + 1) for _ in range(m + 1)]
    for i in range(1, m + 1):
        row = table[i]
        prev = table[i - 1]
        wrow = weights[i - 1]
        for j in range(1, n + 1):
            diagonal = prev[j - 1] + wrow[j - 1]
            up = prev[j]
            left = row[j - 1]
            best = diagonal
            if up > best:
                best = up
            if left > best:
                best = left
            row[j] = best
    return table


def soft_lcs(
    a: Sequence[Action],
    b: Sequence[Action],
    ts: TextSimilarityFn = token_cosine,
    epsilon: float = NOTHING_MATCH_WEIGHT,
) -> float:
    """Soft LCS score; 0 when either sequence is empty."""
    if not a or not b:
        return 0.0
    return _dp_table(a, b, ts, epsilon)[len(a)][len(b)]


@dataclass(frozen=True)
class AlignmentPair:
    """One matched position pair: indices into A and B plus the match weight."""

    i: int
    j: int
    contribution: float


@dataclass(frozen=True)
class Alignment:
    score: float
    pairs: tuple[AlignmentPair, ...]

    def replay_score(self) -> float:
        return sum(pair.contribution for pair in self.pairs)


def soft_lcs_align(
    a: Sequence[Action],
    b: Sequence[Action],
    ts: TextSimilarityFn = token_cosine,
    epsilon: float = NOTHING_MATCH_WEIGHT,
) -> Alignment:
    """Soft LCS with backtrace.

    Tie-break on equal DP values: prefer taking a (positive-weight) match,
    then skipping in A, then skipping in B. This maximizes matched pairs
    and makes the alignment deterministic.
    """
    if not a or not b:
        return Alignment(score=0.0, pairs=())
    table = _dp_table(a, b, ts, epsilon)
    weights = _match_matrix(a, b, ts, epsilon)
    pairs: list[AlignmentPair] = []
    i, j = len(a), len(b)
    while i > 0 and j > 0:
        weight = weights[i - 1][j - 1]
        if weight > 0.0 and abs(table[i][j] - (table[i - 1][j - 1] + weight)) <= _TIE_EPS:
            pairs.append(AlignmentPair(i - 1, j - 1, weight))
            i -= 1
            j -= 1
        elif abs(table[i][j] - table[i - 1][j]) <= _TIE_EPS:
            i -= 1
        else:
            j -= 1
    pairs.reverse()
    return Alignment(score=table[len(a)][len(b)], pairs=tuple(pairs))


def classic_lcs_len(a: Sequence[Action], b: Sequence[Action]) -> int:
    """Classic LCS length under exact action equality."""
    m, n = len(a), len(b)
    if m == 0 or n == 0:
        return 0
    previous = [0] * (n + 1)
    for i in range(1, m + 1):
        current = [0] * (n + 1)
        ai = a[i - 1]
        for j in range(1, n + 1):
            if ai == b[j - 1]:
                current[j] = previous[j - 1] + 1
            else:
                current[j] = max(previous[j], current[j - 1])
        previous = current
    return previous[n]


def similarity(
    ti: Trajectory,
    tj: Trajectory,
    ts: TextSimilarityFn = token_cosine,
    epsilon: float = NOTHING_MATCH_WEIGHT,
) -> float:
    """Soft-LCS score normalized by the shorter trajectory length."""
    if not ti.steps or not tj.steps:
        raise ValueError("similarity requires non-empty trajectories")
    score = soft_lcs(ti.actions, tj.actions, ts, epsilon)
    return score / min(len(ti.steps), len(tj.steps))


def fold_lcs(
    sequences: Sequence[Sequence[Action]],
    ts: TextSimilarityFn = token_cosine,
    epsilon: float = NOTHING_MATCH_WEIGHT,
) -> list[Action]:
    """Multi-sequence common subsequence via a left-associative pairwise fold.

    Exact multi-sequence LCS is exponential in the number of sequences, so
    the pairwise extraction is applied left to right. On a soft (non-exact)
    match the retained action is the left operand's, so earlier sequences
    in the fold order decide surviving free text.
    """
    if not sequences:
        raise ValueError("fold_lcs requires at least one sequence")
    accumulated = list(sequences[0])
    for other in sequences[1:]:
        alignment = soft_lcs_align(accumulated, other, ts, epsilon)
        accumulated = [accumulated[pair.i] for pair in alignment.pairs]
        if not accumulated:
            break
    return accumulated
