"""Portable, splittable pseudo-random streams.

SplitMix64 (Steele, Lea & Flood 2014) in pure Python integer arithmetic, so
the same ``(seed, *keys)`` yields the same sequence on every platform and
numpy version. Streams are keyed by hashing each key into the state with the
SplitMix64 finalizer; bounded draws use rejection sampling (no modulo bias)
and shuffles are forward Fisher-Yates.
"""
MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15


def mix64(z):
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9 & MASK64
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB & MASK64
    return z ^ (z >> 31)


class SplitMix64:
    def __init__(self, seed, *keys):
        state = mix64((seed & MASK64) ^ GOLDEN)
        for k in keys:
            state = mix64((state + GOLDEN + (k & MASK64)) & MASK64)
        self.state = state

    def next_u64(self):
        self.state = (self.state + GOLDEN) & MASK64
        return mix64(self.state)

    def below(self, n):
        """Uniform integer in ``[0, n)``."""
        if n <= 0:
            raise ValueError("bound must be positive")
        threshold = (1 << 64) % n
        while True:
            r = self.next_u64()
            if r >= threshold:
                return r % n

    def shuffle(self, items):
        """Shuffle a list (or 1-D array) in place and return it."""
        n = len(items)
        for i in range(n - 1):
            j = i + self.below(n - i)
            if j != i:
                items[i], items[j] = items[j], items[i]
        return items

    def permutation(self, n):
        return self.shuffle(list(range(n)))
