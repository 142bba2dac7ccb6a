"""Simulated leveled SIMD arithmetic over real slot vectors.

Values are kept as float64 arrays on a fixed-point grid (``k / 2**scale_log``).
There is no noise model: the only numerical drift is the rounding performed
after every rescale. Levels, rotations and collective protocol events are
tracked in a :class:`CostLedger` so that higher layers can be audited by
counting rather than timing.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .exceptions import DimensionError, LevelError, StateError

COUNTERS = (
    "rotations",
    "ct_mults",
    "pt_mults",
    "additions",
    "bootstraps",
    "key_switches",
    "messages",
    "bytes_model",
)


@dataclass(frozen=True)
class EngineParams:
    """Ring degree, level budget and fixed-point scale of the simulated scheme."""

    ring_log: int = 14
    initial_level: int = 9
    scale_log: int = 31
    quantize: bool = True

    def __post_init__(self):
        if self.ring_log < 4:
            raise ValueError(f"ring_log must be >= 4, got {self.ring_log}")
        if self.initial_level < 1:
            raise ValueError(f"initial_level must be >= 1, got {self.initial_level}")
        if self.scale_log < 1:
            raise ValueError(f"scale_log must be >= 1, got {self.scale_log}")

    @property
    def ring_degree(self) -> int:
        return 1 << self.ring_log

    @property
    def slot_count(self) -> int:
        return 1 << (self.ring_log - 1)

    def ciphertext_bytes(self, level: int | None = None) -> int:
        """Modeled ciphertext size: two polynomials of ring_degree coefficients
        per remaining modulus (level + 1 limbs), 8 bytes each."""
        if level is None:
            level = self.initial_level
        return 2 * self.ring_degree * (level + 1) * 8

    def round_to_grid(self, values: np.ndarray) -> np.ndarray:
        if not self.quantize:
            return values
        s = float(1 << self.scale_log)
        return np.round(values * s) / s


@dataclass(frozen=True, eq=False)
class SlotVector:
    """One simulated ciphertext (or encoded plaintext).

    ``owner`` is "collective" for values under the shared key, or the id of
    the party that a key switch re-encrypted the value for.
    """

    slots: np.ndarray
    level: int
    encrypted: bool = False
    owner: str = "collective"

    def __post_init__(self):
        if self.level < 0:
            raise LevelError(f"level cannot be negative (got {self.level})")
        if self.slots.flags.writeable:
            arr = np.array(self.slots, dtype=np.float64)
            arr.flags.writeable = False
            object.__setattr__(self, "slots", arr)

    def __len__(self):
        return self.slots.shape[0]


class CostLedger:
    """Event counters for one party (or the aggregation server).

    Counters only ever grow. ``tag`` opens a named scope; every event recorded
    inside it is also added to that scope's sub-counter, which is how callers
    attribute costs to e.g. a single weight matrix's transforms.
    """

    def __init__(self):
        self.counts = dict.fromkeys(COUNTERS, 0)
        self.tags: dict[str, dict[str, int]] = {}
        self.rotation_keys: set[int] = set()
        self._active: list[str] = []

    def record(self, name: str, amount: int = 1):
        if name not in self.counts:
            raise KeyError(f"unknown counter {name!r}")
        if amount < 0:
            raise ValueError("counters are monotone; amount must be >= 0")
        self.counts[name] += amount
        for t in self._active:
            bucket = self.tags.setdefault(t, dict.fromkeys(COUNTERS, 0))
            bucket[name] += amount

    @contextmanager
    def tag(self, name: str):
        self._active.append(name)
        try:
            yield self
        finally:
            self._active.pop()

    def tagged(self, name: str, counter: str) -> int:
        return self.tags.get(name, {}).get(counter, 0)

    def snapshot(self) -> dict[str, int]:
        return dict(self.counts)

    def since(self, snap: dict[str, int]) -> dict[str, int]:
        return {k: self.counts[k] - snap.get(k, 0) for k in COUNTERS}

    def merge(self, other: "CostLedger"):
        for k, v in other.counts.items():
            self.counts[k] += v
        for t, bucket in other.tags.items():
            mine = self.tags.setdefault(t, dict.fromkeys(COUNTERS, 0))
            for k, v in bucket.items():
                mine[k] += v
        self.rotation_keys |= other.rotation_keys

    def rows(self, scope: str = "total") -> list[tuple[str, str, int]]:
        out = [(scope, k, self.counts[k]) for k in COUNTERS]
        out.append((scope, "rotation_keys", len(self.rotation_keys)))
        for t in sorted(self.tags):
            out.extend((f"{scope}/{t}", k, self.tags[t][k]) for k in COUNTERS)
        return out

    def __getattr__(self, name):
        counts = self.__dict__.get("counts")
        if counts is not None and name in counts:
            return counts[name]
        raise AttributeError(name)


class Engine:
    """Arithmetic on SlotVectors with level checks and event accounting.

    ``edges`` is the number of network edges a collective protocol message
    traverses (N-1 on a tree, N on a star); it only affects ``messages`` and
    ``bytes_model``.
    """

    def __init__(self, params: EngineParams, ledger: CostLedger | None = None, edges: int = 0):
        self.params = params
        self.ledger = ledger if ledger is not None else CostLedger()
        self.edges = int(edges)

    # -- construction -----------------------------------------------------
    def encode(self, values: Sequence[float] | np.ndarray, level: int | None = None) -> SlotVector:
        vals = np.asarray(values, dtype=np.float64).ravel()
        n = self.params.slot_count
        if vals.size > n:
            raise DimensionError(f"{vals.size} values do not fit in {n} slots")
        slots = np.zeros(n)
        slots[: vals.size] = vals
        lvl = self.params.initial_level if level is None else level
        return SlotVector(self.params.round_to_grid(slots), lvl, False)

    def zeros(self, encrypted: bool = False) -> SlotVector:
        v = self.encode([])
        return self.encrypt(v) if encrypted else v

    def ones(self) -> SlotVector:
        return self.encode(np.ones(self.params.slot_count))

    def encrypt(self, pt: SlotVector) -> SlotVector:
        if pt.encrypted:
            raise StateError("value is already encrypted")
        return replace(pt, encrypted=True, owner="collective")

    def decrypt(self, ct: SlotVector) -> SlotVector:
        """Decrypt a ciphertext.

        Collective decryption is a key switch to the all-zero key and is
        counted as one; a value already switched to a single owner is
        decrypted locally at no protocol cost.
        """
        if not ct.encrypted:
            raise StateError("value is not encrypted")
        if ct.owner == "collective":
            self.ledger.record("key_switches")
        return replace(ct, encrypted=False)

    def key_switch(self, ct: SlotVector, target: str) -> SlotVector:
        if not ct.encrypted:
            raise StateError("key switch needs a ciphertext")
        self.ledger.record("key_switches")
        return replace(ct, owner=str(target))

    # -- arithmetic -------------------------------------------------------
    @staticmethod
    def _level(*vs: SlotVector) -> int:
        enc = [v.level for v in vs if v.encrypted]
        return min(enc) if enc else min(v.level for v in vs)

    def add(self, a: SlotVector, b: SlotVector) -> SlotVector:
        self._check_len(a, b)
        enc = a.encrypted or b.encrypted
        if enc:
            self.ledger.record("additions")
        return SlotVector(a.slots + b.slots, self._level(a, b), enc)

    def sub(self, a: SlotVector, b: SlotVector) -> SlotVector:
        self._check_len(a, b)
        enc = a.encrypted or b.encrypted
        if enc:
            self.ledger.record("additions")
        return SlotVector(a.slots - b.slots, self._level(a, b), enc)

    def mul(self, a: SlotVector, b: SlotVector) -> SlotVector:
        self._check_len(a, b)
        if not (a.encrypted or b.encrypted):
            return SlotVector(self.params.round_to_grid(a.slots * b.slots), self._level(a, b), False)
        lvl = self._level(a, b)
        if lvl < 1:
            raise LevelError("multiplication at level 0; bootstrap the ciphertext first")
        self.ledger.record("ct_mults" if (a.encrypted and b.encrypted) else "pt_mults")
        return SlotVector(self.params.round_to_grid(a.slots * b.slots), lvl - 1, True)

    def lincomb(self, terms: Iterable[tuple[float, SlotVector]], const: float = 0.0) -> SlotVector:
        """Sum of scalar multiples plus a constant.

        Scalars are folded into the scale of the next rescale, so no level is
        consumed; only the additions are counted.
        """
        terms = list(terms)
        if not terms:
            return self.encode(np.full(self.params.slot_count, const))
        acc = np.full(self.params.slot_count, float(const))
        enc = any(v.encrypted for _, v in terms)
        for c, v in terms:
            acc = acc + c * v.slots
        n_add = len(terms) - 1 + (1 if const != 0.0 else 0)
        if enc and n_add:
            self.ledger.record("additions", n_add)
        lvl = self._level(*(v for _, v in terms))
        return SlotVector(self.params.round_to_grid(acc), lvl, enc)

    def rotate(self, c: SlotVector, k: int) -> SlotVector:
        """Cyclic left shift by k slots (negative k shifts right)."""
        n = self.params.slot_count
        k = int(k) % n
        if k == 0:
            return c
        if c.encrypted:
            self.ledger.record("rotations")
            self.ledger.rotation_keys.add(k)
        return replace(c, slots=np.roll(c.slots, -k))

    def inner_sum(self, c: SlotVector, stride: int, count: int) -> SlotVector:
        if count < 1 or count & (count - 1):
            raise ValueError(f"count must be a power of two, got {count}")
        if stride * count > self.params.slot_count:
            raise DimensionError("stride * count exceeds the slot count")
        acc = c
        step = 1
        while step < count:
            acc = self.add(acc, self.rotate(acc, step * stride))
            step *= 2
        return acc

    # -- level management -------------------------------------------------
    def bootstrap(self, c: SlotVector) -> SlotVector:
        if not c.encrypted:
            raise StateError("only ciphertexts are bootstrapped")
        self.ledger.record("bootstraps")
        with self.ledger.tag("bootstrap"):
            self._message(self.edges)
        return SlotVector(self.params.round_to_grid(c.slots), self.params.initial_level, True, c.owner)

    def drop_level(self, c: SlotVector, level: int) -> SlotVector:
        """Modulus-switch down to ``level`` (free, values unchanged)."""
        if level > c.level:
            raise LevelError(f"cannot raise level {c.level} to {level} without a bootstrap")
        return replace(c, level=level)

    def send(self, n_ciphertexts: int = 1, hops: int = 1):
        """Account for ciphertexts transferred across ``hops`` edges."""
        self._message(n_ciphertexts * hops)

    def _message(self, count: int):
        if count:
            self.ledger.record("messages", count)
            self.ledger.record("bytes_model", count * self.params.ciphertext_bytes())

    def _check_len(self, a: SlotVector, b: SlotVector):
        if a.slots.shape != b.slots.shape:
            raise DimensionError("slot vectors have different lengths")
