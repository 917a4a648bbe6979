"""Streaming sample buffer with incremental Gram-matrix sufficient statistics.

Every quadratic statistic of a sample range (start, end] reduces to a
difference of two prefix Gram matrices, so segment costs never re-scan raw
samples.  Prefix matrices are retained only for time indices the caller still
needs (live candidates plus committed boundaries); memory is O(|kept| * p^2)
instead of O(n * p^2).

Single-writer contract: push/evict happen on one logical stream thread.
Reads via :meth:`GramStore.segment_gram` are safe concurrently between
writes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class RetentionError(RuntimeError):
    """A prefix Gram needed by a reader was already evicted.

    This signals a retention-policy bug in the caller, not a user error.
    """


@dataclass(frozen=True)
class SegmentGram:
    """Gram statistics of the half-open sample range (start, end].

    ``gram[j, k] = sum_{t in (start, end]} y[j, t] * y[k, t]``.
    """

    start: int
    end: int
    gram: np.ndarray

    @property
    def length(self) -> int:
        return self.end - self.start


class GramStore:
    """Append-only buffer of p-channel samples plus prefix Gram matrices.

    Parameters
    ----------
    p : channel count.
    keep_raw : retain raw samples for the window spanning the kept prefixes
        (needed only for the periodic drift recomputation and diagnostics).
    recompute_every : every this many pushed samples, rebuild the current
        prefix from retained raw samples to shed accumulated summation
        drift. 0 disables.
    """

    def __init__(self, p: int, keep_raw: bool = True, recompute_every: int = 1024):
        if p < 1:
            raise ValueError("channel count must be >= 1")
        self.p = int(p)
        self.n = 0
        self.keep_raw = bool(keep_raw)
        self.recompute_every = int(recompute_every)
        self._prefix: dict[int, np.ndarray] = {0: np.zeros((self.p, self.p))}
        self._raw: dict[int, np.ndarray] = {}

    # ------------------------------------------------------------------ write

    def push_sample(self, y) -> "GramStore":
        """Append one p-vector; updates the current prefix by a rank-one term.

        Rejects (without state change) samples of wrong dimension or with
        non-finite entries.
        """
        y = np.asarray(y, dtype=float)
        if y.shape != (self.p,):
            raise ValueError(f"expected a sample of {self.p} channels, got shape {y.shape}")
        if not np.all(np.isfinite(y)):
            raise ValueError("sample has non-finite entries")
        g = self._prefix[self.n] + np.outer(y, y)
        self.n += 1
        self._prefix[self.n] = g
        if self.keep_raw:
            self._raw[self.n] = y.copy()
            if self.recompute_every and self.n % self.recompute_every == 0:
                self._recompute_current()
        return self

    def evict_before(self, keep_set) -> "GramStore":
        """Release prefix Grams (and mirrored raw samples) not in ``keep_set``.

        ``keep_set`` must contain the current time index.  Index 0 (the zero
        matrix) is always retained.  Raw samples are kept for the contiguous
        window behind the earliest kept nonzero prefix, which is exactly what
        the drift recomputation needs.
        """
        keep = set(int(t) for t in keep_set) | {0}
        if self.n not in keep:
            raise ValueError("keep set must contain the current time index")
        for t in [t for t in self._prefix if t not in keep]:
            del self._prefix[t]
        if self.keep_raw and self._raw:
            nonzero = keep - {0}
            anchor = min(nonzero) if nonzero else self.n
            for t in [t for t in self._raw if t <= anchor]:
                del self._raw[t]
        return self

    # ------------------------------------------------------------------- read

    def segment_gram(self, start: int, end: int) -> SegmentGram:
        """Gram statistics of (start, end] as a prefix difference."""
        if not 0 <= start < end <= self.n:
            raise ValueError(f"invalid segment ({start}, {end}] for stream of length {self.n}")
        try:
            g = self._prefix[end] - self._prefix[start]
        except KeyError as exc:
            raise RetentionError(
                f"prefix Gram for index {exc.args[0]} was evicted; "
                f"retained: {sorted(self._prefix)}"
            ) from None
        return SegmentGram(int(start), int(end), g)

    def retained_indices(self) -> list[int]:
        return sorted(self._prefix)

    def raw_window(self) -> list[int]:
        return sorted(self._raw)

    # -------------------------------------------------------------- internals

    def _recompute_current(self) -> None:
        """Rebuild the newest prefix from raw samples if coverage allows.

        Uses the largest retained prefix m < n with a contiguous raw window
        (m, n]; re-adds the rank-one terms in push order so the result matches
        a drift-free accumulation.
        """
        if not self._raw:
            return
        lowest = min(self._raw) - 1
        anchors = [t for t in self._prefix if lowest <= t < self.n]
        if not anchors:
            return
        m = max(anchors)
        g = self._prefix[m].copy()
        for t in range(m + 1, self.n + 1):
            y = self._raw[t]
            g += np.outer(y, y)
        self._prefix[self.n] = g
