"""Small shared helpers: atomic writes, derived seeds, bounded parallel map."""

from __future__ import annotations

import hashlib
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Sequence, TypeVar

T = TypeVar("T")
R = TypeVar("R")


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    """Write to a temp file in the target directory, then rename into place.

    Guarantees no partial output file exists if the process dies mid-write.
    """
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            handle.write(text)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.unlink(tmp_path)
        raise


def derive_seed(*parts: object) -> int:
    """Stable 64-bit seed derived from arbitrary parts (platform independent)."""
    digest = hashlib.sha256("\x1f".join(str(p) for p in parts).encode("utf-8"))
    return int.from_bytes(digest.digest()[:8], "big")


def parallel_map(
    fn: Callable[[T], R], items: Iterable[T], threads: int = 1
) -> list[R]:
    """Order-preserving map, optionally over a thread pool.

    Results are identical regardless of ``threads``; parallelism only pays
    off for callables that release the GIL or block on I/O.
    """
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def percentile(sorted_values: Sequence[float], fraction: float) -> float:
    """Nearest-rank percentile on an already sorted sequence."""
    if not sorted_values:
        raise ValueError("empty sequence")
    rank = max(0, min(len(sorted_values) - 1, round(fraction * (len(sorted_values) - 1))))
    return sorted_values[rank]
