"""Portable counter-based random numbers.

Every random draw in the toolkit comes from SplitMix64 so that results are
reproducible bit-for-bit across platforms and can be matched by a
reimplementation in another language.  The algorithm is fixed:

* stream output ``k`` (k = 1, 2, ...) for seed ``s`` is
  ``fmix64(s + k * 0x9E3779B97F4A7C15)`` (all arithmetic mod 2**64), where
  ``fmix64`` is the SplitMix64 finalizer;
* a uniform double is ``(x >> 11) * 2**-53``;
* an integer in ``[0, n)`` is ``floor(u * n)``;
* a standard normal is Box-Muller on two consecutive uniforms,
  ``sqrt(-2 ln(1 - u1)) * cos(2 pi u2)``;
* sub-seeds are ``combine(seed, word) = fmix64(seed ^ fmix64(word + GOLDEN))``
  applied left to right; strings enter as their FNV-1a 64-bit hash.

Because output ``k`` is a pure function of ``(s, k)``, whole blocks of draws
can be produced with vectorised numpy arithmetic.
"""

from __future__ import annotations

import numpy as np

GOLDEN = 0x9E3779B97F4A7C15
_MASK = (1 << 64) - 1
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def fmix64(x: np.ndarray) -> np.ndarray:
    """SplitMix64 finalizer on a uint64 array (wrapping arithmetic)."""
    z = np.asarray(x, dtype=np.uint64)
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def _fmix_int(x: int) -> int:
    x &= _MASK
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK
    return x ^ (x >> 31)


def fnv1a64(text: str) -> int:
    h = 0xCBF29CE484222325
    for byte in text.encode("utf-8"):
        h ^= byte
        h = (h * 0x100000001B3) & _MASK
    return h


def combine(seed: int, *words: int | str) -> int:
    """Derive a sub-seed from ``seed`` and any number of ints/strings."""
    h = int(seed) & _MASK
    for w in words:
        if isinstance(w, str):
            w = fnv1a64(w)
        h = _fmix_int(h ^ _fmix_int((int(w) + GOLDEN) & _MASK))
    return h


def raw_block(seeds, start: int, count: int) -> np.ndarray:
    """Outputs ``start+1 .. start+count`` for each seed; shape ``seeds.shape + (count,)``."""
    seeds = np.asarray(seeds, dtype=np.uint64)
    k = np.arange(start + 1, start + count + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        state = seeds[..., None] + k * np.uint64(GOLDEN)
        return fmix64(state)


def to_uniform(x: np.ndarray) -> np.ndarray:
    return (x >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)


def uniform_block(seeds, count: int, start: int = 0) -> np.ndarray:
    return to_uniform(raw_block(seeds, start, count))


def index_block(seeds, n: int, count: int | None = None) -> np.ndarray:
    """Integers in ``[0, n)``; ``count`` draws (default ``n``) per seed."""
    count = n if count is None else count
    u = uniform_block(seeds, count)
    return np.minimum((u * n).astype(np.int64), n - 1)


class SplitMix64:
    """Sequential view of one SplitMix64 stream."""

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK
        self._counter = 0

    def _take(self, count: int) -> np.ndarray:
        out = raw_block(np.uint64(self.seed), self._counter, count)
        self._counter += count
        return out

    def uniform(self, size: int) -> np.ndarray:
        return to_uniform(self._take(int(size)))

    def integers(self, n: int, size: int) -> np.ndarray:
        u = self.uniform(size)
        return np.minimum((u * n).astype(np.int64), n - 1)

    def normal(self, size: int) -> np.ndarray:
        size = int(size)
        u = self.uniform(2 * size).reshape(size, 2) if size else np.zeros((0, 2))
        return np.sqrt(-2.0 * np.log1p(-u[:, 0])) * np.cos(2.0 * np.pi * u[:, 1])

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates shuffle of ``range(n)`` driven by this stream."""
        perm = np.arange(n)
        if n < 2:
            return perm
        u = self.uniform(n - 1)
        for i in range(n - 1, 0, -1):
            j = min(int(u[n - 1 - i] * (i + 1)), i)
            perm[i], perm[j] = perm[j], perm[i]
        return perm

    def choice(self, n: int, k: int) -> np.ndarray:
        """``k`` distinct indices from ``range(n)``, sorted."""
        return np.sort(self.permutation(n)[:k])


def sub_seeds(key: int, count: int) -> np.ndarray:
    """``combine(key, b)`` for b = 0 .. count-1, vectorised."""
    b = np.arange(count, dtype=np.uint64)
    with np.errstate(over="ignore"):
        inner = fmix64(b + np.uint64(GOLDEN))
    return fmix64(np.uint64(int(key) & _MASK) ^ inner)
