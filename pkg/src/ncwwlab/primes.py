"""Sieve-backed prime enumeration and the von Mangoldt function."""
from __future__ import annotations

import math
import threading

import numpy as np

#: Sieve extension granularity (entries).
SIEVE_CHUNK = 1 << 20


def _eratosthenes(limit: int) -> np.ndarray:
    is_prime = np.ones(limit + 1, dtype=bool)
    is_prime[:2] = False
    for i in range(2, math.isqrt(limit) + 1):
        if is_prime[i]:
            is_prime[i * i::i] = False
    return is_prime


class PrimeTable:
    """Lazily extended sieve; safe to query from several threads."""

    def __init__(self, chunk: int = SIEVE_CHUNK):
        self.chunk = chunk
        self._lock = threading.Lock()
        self._limit = -1
        self._primes = np.zeros(0, dtype=np.int64)
        self._mangoldt = np.zeros(0, dtype=float)
        self._is_prime = np.zeros(0, dtype=bool)

    @property
    def limit(self) -> int:
        return self._limit

    def extend(self, n: int) -> None:
        """Make the table valid for all integers ``<= n``."""
        if n <= self._limit:
            return
        with self._lock:
            if n <= self._limit:
                return
            limit = -(-(n + 1) // self.chunk) * self.chunk - 1
            is_prime = _eratosthenes(limit)
            primes = np.flatnonzero(is_prime).astype(np.int64)
            lam = np.zeros(limit + 1, dtype=float)
            logs = np.log(primes.astype(float))
            lam[primes] = logs
            for p, lp in zip(primes[primes <= math.isqrt(limit)], logs):
                pk = int(p) * int(p)
                while pk <= limit:
                    lam[pk] = lp
                    pk *= int(p)
            # publish arrays before the limit so readers never see a short table
            is_prime.flags.writeable = False
            self._primes = primes
            self._mangoldt = lam
            self._is_prime = is_prime
            self._limit = limit

    def nth_prime(self, j: int) -> int:
        """``p_j`` in the increasing enumeration with ``p_0 = 2``."""
        if j < 0:
            raise ValueError("prime index must be >= 0")
        return int(self.first_primes(j + 1)[j])

    def first_primes(self, n: int) -> np.ndarray:
        if n <= 0:
            return np.zeros(0, dtype=np.int64)
        while len(self._primes) < n:
            # p_n < n (ln n + ln ln n) for n >= 6
            m = max(n, 6)
            self.extend(max(int(m * (math.log(m) + math.log(math.log(m)))) + 1, 2 * self._limit + 2))
        return self._primes[:n]

    def mangoldt(self, start: int, stop: int) -> np.ndarray:
        """``Lambda(k)`` for ``start <= k < stop``."""
        if stop > 0:
            self.extend(stop - 1)
        return self._mangoldt[start:stop]

    def is_prime(self, start: int, stop: int) -> np.ndarray:
        """Boolean primality mask for ``start <= k < stop``."""
        if stop > 0:
            self.extend(stop - 1)
        return self._is_prime[start:stop]


#: Process-wide table shared by every generator.
PRIMES = PrimeTable()
