"""Block-matrix packing and encrypted matrix algebra on top of the slot engine.

A logical matrix is cut into δ×δ blocks; each block is one SlotVector whose
slots hold ``p`` parallel copies (or parallel batch slices) of that block laid
out slice-major: element (b, i, j) of a block lives at slot
``b*δ² + i*δ + j``.

Permutations used by the Jiang-style product:

    sigma(A)[i][j] = A[i][(i+j) % δ]
    tau(A)[i][j]   = A[(i+j) % δ][j]
    phi_k(A)[i][j] = A[i][(j+k) % δ]
    psi_k(A)[i][j] = A[(i+k) % δ][j]
    xi(A)          = A transposed

so that ``A @ B == sum_k phi_k(sigma(A)) * psi_k(tau(B))`` for δ×δ blocks.
Every permutation is stored as a set of (offset, mask) diagonals and
evaluated with masked rotations, so rotation counts come from execution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np

from .engine import Engine, EngineParams, SlotVector
from .exceptions import DimensionError, LayoutError, LevelError

EVAL_MODES = ("naive", "bsgs")
KINDS = ("sigma", "tau", "phi", "psi", "xi")


def _is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class BlockLayout:
    delta: int
    rows: int
    cols: int
    parallel: int
    params: EngineParams

    def __post_init__(self):
        if self.delta < 1:
            raise LayoutError(f"delta must be >= 1, got {self.delta}")
        if self.rows < 1 or self.cols < 1:
            raise LayoutError(f"matrix must be non-empty, got {self.rows}x{self.cols}")
        if not _is_pow2(self.parallel):
            raise LayoutError(f"parallel count must be a power of two, got {self.parallel}")
        if self.parallel * self.delta**2 > self.params.slot_count:
            raise LayoutError(
                f"p*delta^2 = {self.parallel * self.delta**2} exceeds {self.params.slot_count} slots"
            )

    @property
    def grid(self) -> tuple[int, int]:
        return -(-self.rows // self.delta), -(-self.cols // self.delta)

    @property
    def full(self) -> bool:
        return self.parallel * self.delta**2 == self.params.slot_count

    def with_shape(self, rows: int, cols: int) -> "BlockLayout":
        return replace(self, rows=rows, cols=cols)


def max_parallel(delta: int, params: EngineParams) -> int:
    """Largest power-of-two slice count that fits ``delta``-blocks in one ciphertext."""
    room = params.slot_count // (delta * delta)
    if room < 1:
        raise LayoutError(f"a {delta}x{delta} block does not fit in {params.slot_count} slots")
    return 1 << (room.bit_length() - 1)


def make_layout(delta: int, rows: int, cols: int, params: EngineParams, parallel: int | None = None):
    return BlockLayout(delta, rows, cols, parallel or max_parallel(delta, params), params)


@dataclass(frozen=True, eq=False)
class PackedMatrix:
    blocks: tuple[tuple[SlotVector, ...], ...]
    layout: BlockLayout
    replicated: bool = False

    @property
    def shape(self) -> tuple[int, int]:
        return self.layout.rows, self.layout.cols

    @property
    def encrypted(self) -> bool:
        return self.blocks[0][0].encrypted

    @property
    def level(self) -> int:
        return min(c.level for row in self.blocks for c in row)

    @property
    def n_ciphertexts(self) -> int:
        return sum(len(r) for r in self.blocks)

    def map(self, fn) -> "PackedMatrix":
        return replace(self, blocks=tuple(tuple(fn(c) for c in row) for row in self.blocks))


# -- packing ------------------------------------------------------------------


def _tensor_to_blocks(t: np.ndarray, layout: BlockLayout) -> list[list[np.ndarray]]:
    p, d = layout.parallel, layout.delta
    gr, gc = layout.grid
    full = np.zeros((p, gr * d, gc * d))
    full[: t.shape[0], : t.shape[1], : t.shape[2]] = t
    blk = full.reshape(p, gr, d, gc, d).transpose(1, 3, 0, 2, 4)
    n = layout.params.slot_count
    out = []
    for i in range(gr):
        row = []
        for j in range(gc):
            slots = np.zeros(n)
            slots[: p * d * d] = blk[i, j].ravel()
            row.append(slots)
        out.append(row)
    return out


def pack(eng: Engine, batch, layout: BlockLayout, encrypt: bool = True, replicated: bool = False) -> PackedMatrix:
    """Pack a B×rows×cols tensor; batch entry b goes to parallel slice b."""
    t = np.asarray(batch, dtype=np.float64)
    if t.ndim == 2:
        t = t[None]
    if t.ndim != 3:
        raise DimensionError(f"expected a B x rows x cols tensor, got shape {t.shape}")
    if t.shape[0] > layout.parallel:
        raise LayoutError(f"batch of {t.shape[0]} exceeds {layout.parallel} parallel slices")
    if t.shape[1:] != (layout.rows, layout.cols):
        raise DimensionError(f"matrix shape {t.shape[1:]} does not match layout {layout.rows}x{layout.cols}")
    blocks = []
    for row in _tensor_to_blocks(t, layout):
        cts = []
        for slots in row:
            v = eng.encode(slots)
            cts.append(eng.encrypt(v) if encrypt else v)
        blocks.append(tuple(cts))
    return PackedMatrix(tuple(blocks), layout, replicated)


def pack_replicated(eng: Engine, matrix, layout: BlockLayout, encrypt: bool = True) -> PackedMatrix:
    m = np.asarray(matrix, dtype=np.float64)
    return pack(eng, np.broadcast_to(m, (layout.parallel,) + m.shape), layout, encrypt, replicated=True)


def unpack(m: PackedMatrix) -> np.ndarray:
    """Read the p×rows×cols logical tensor (simulator view, no protocol cost)."""
    lay = m.layout
    p, d = lay.parallel, lay.delta
    gr, gc = lay.grid
    blk = np.empty((gr, gc, p, d, d))
    for i in range(gr):
        for j in range(gc):
            blk[i, j] = m.blocks[i][j].slots[: p * d * d].reshape(p, d, d)
    full = blk.transpose(2, 0, 3, 1, 4).reshape(p, gr * d, gc * d)
    return full[:, : lay.rows, : lay.cols].copy()


def row_groups(n_rows: int, delta: int, parallel: int) -> int:
    return max(1, -(-n_rows // (parallel * delta)))


def batch_layout(delta: int, n_rows: int, cols: int, params: EngineParams, parallel: int | None = None):
    """Layout for a batch matrix whose rows are spread over the parallel slices."""
    p = parallel or max_parallel(delta, params)
    return BlockLayout(delta, row_groups(n_rows, delta, p) * delta, cols, p, params)


def rows_to_tensor(x: np.ndarray, layout: BlockLayout) -> np.ndarray:
    """Map batch rows to slices: row r sits in group r // (pδ), slice
    (r % pδ) // δ, slice-row group*δ + r % δ."""
    x = np.asarray(x, dtype=np.float64)
    p, d = layout.parallel, layout.delta
    g = layout.rows // d
    if x.shape[0] > g * p * d:
        raise LayoutError(f"{x.shape[0]} rows do not fit in {g} row groups")
    pad = np.zeros((g * p * d, x.shape[1]))
    pad[: x.shape[0]] = x
    return pad.reshape(g, p, d, -1).transpose(1, 0, 2, 3).reshape(p, g * d, -1)


def tensor_to_rows(t: np.ndarray, n_rows: int, delta: int) -> np.ndarray:
    p, gd, c = t.shape
    g = gd // delta
    return t.reshape(p, g, delta, c).transpose(1, 0, 2, 3).reshape(g * p * delta, c)[:n_rows]


def pack_rows(eng: Engine, x, layout: BlockLayout, encrypt: bool = True) -> PackedMatrix:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[1] != layout.cols:
        raise DimensionError(f"expected {layout.cols} columns, got {x.shape[1]}")
    return pack(eng, rows_to_tensor(x, layout), layout, encrypt)


def unpack_rows(m: PackedMatrix, n_rows: int) -> np.ndarray:
    return tensor_to_rows(unpack(m), n_rows, m.layout.delta)


def row_mask(n_rows: int, layout: BlockLayout) -> np.ndarray:
    """p × rows indicator of slice rows that hold a real batch row."""
    return rows_to_tensor(np.ones((n_rows, 1)), layout)[:, :, 0]


def encrypt_matrix(eng: Engine, m: PackedMatrix) -> PackedMatrix:
    return m.map(eng.encrypt)


def decrypt_matrix(eng: Engine, m: PackedMatrix) -> PackedMatrix:
    return m.map(eng.decrypt)


def constant(eng: Engine, like: PackedMatrix, value: float) -> PackedMatrix:
    v = eng.encode(np.full(eng.params.slot_count, float(value)))
    return like.map(lambda _c: v)


# -- linear transforms --------------------------------------------------------


@dataclass(frozen=True, eq=False)
class LinearTransform:
    kind: str
    index: int
    delta: int
    parallel: int
    diagonals: tuple[tuple[int, SlotVector], ...]

    @property
    def offsets(self) -> list[int]:
        return [o for o, _ in self.diagonals]


def _source(kind: str, k: int, d: int):
    i, j = np.divmod(np.arange(d * d), d)
    if kind == "sigma":
        si, sj = i, (i + j) % d
    elif kind == "tau":
        si, sj = (i + j) % d, j
    elif kind == "phi":
        si, sj = i, (j + k) % d
    elif kind == "psi":
        si, sj = (i + k) % d, j
    elif kind == "xi":
        si, sj = j, i
    else:
        raise ValueError(f"unknown transform kind {kind!r}")
    return si * d + sj - (i * d + j)


@lru_cache(maxsize=512)
def _diagonal_masks(kind: str, k: int, d: int, p: int, n: int):
    off = _source(kind, k, d)
    out = []
    for o in np.unique(off):
        m = np.zeros(n)
        local = (off == o).astype(np.float64)
        m[: p * d * d] = np.tile(local, p)
        m.flags.writeable = False
        out.append((int(o), m))
    return tuple(out)


def gen_transform(kind: str, layout: BlockLayout, index: int = 0) -> LinearTransform:
    if kind not in KINDS:
        raise ValueError(f"unknown transform kind {kind!r}")
    d = layout.delta
    if kind in ("phi", "psi"):
        if not 0 <= index < d:
            raise ValueError(f"shift index {index} outside [0, {d})")
    elif index:
        raise ValueError(f"{kind} takes no index")
    level = layout.params.initial_level
    diags = tuple(
        (o, SlotVector(m, level)) for o, m in _diagonal_masks(kind, index, d, layout.parallel, layout.params.slot_count)
    )
    return LinearTransform(kind, index, d, layout.parallel, diags)


def apply_clear(t: LinearTransform, slots: np.ndarray) -> np.ndarray:
    out = np.zeros_like(slots)
    for o, m in t.diagonals:
        out += m.slots * np.roll(slots, -o)
    return out


class Rotations:
    """Lazily rotated copies of one ciphertext, each offset rotated at most once."""

    def __init__(self, eng: Engine, base: SlotVector, tag: str | None = None):
        self.eng = eng
        self.base = base
        self.tag = tag
        self._cache = {0: base}

    def get(self, offset: int) -> SlotVector:
        n = self.eng.params.slot_count
        key = offset % n
        if key not in self._cache:
            if self.tag:
                with self.eng.ledger.tag(self.tag):
                    self._cache[key] = self.eng.rotate(self.base, key)
            else:
                self._cache[key] = self.eng.rotate(self.base, key)
        return self._cache[key]


def _bsgs_split(offsets: list[int]):
    nz = [o for o in offsets if o]
    if not nz:
        return 1, 1
    stride = 0
    for o in nz:
        stride = math.gcd(stride, abs(o))
    units = [o // stride for o in offsets]
    best = None
    n1 = 1
    span = max(units) - min(units) + 1
    while n1 <= span:
        babies = {u - (u // n1) * n1 for u in units}
        giants = {(u // n1) * n1 for u in units}
        cost = len(babies - {0}) + len(giants - {0})
        if best is None or cost < best[0]:
            best = (cost, n1)
        n1 *= 2
    return stride, best[1]


def masked_sum(eng: Engine, rots: Rotations, masks: dict[int, np.ndarray], mode: str = "naive") -> SlotVector:
    """Evaluate sum_o masks[o] ⊙ rotate(x, o) for the ciphertext behind ``rots``.

    ``naive`` rotates once per offset. ``bsgs`` splits offsets into
    baby + giant steps: baby rotations come from the shared cache, masks are
    pre-rotated in the clear, and each giant step costs one rotation.
    Both modes consume one level and give identical values.
    """
    if mode not in EVAL_MODES:
        raise ValueError(f"unknown evaluation mode {mode!r}")
    level = eng.params.initial_level
    offsets = sorted(masks)
    if mode == "naive":
        terms = [eng.mul(SlotVector(masks[o], level), rots.get(o)) for o in offsets]
        return _sum(eng, terms)
    stride, n1 = _bsgs_split(offsets)
    groups: dict[int, list[int]] = {}
    for o in offsets:
        u = o // stride
        g = (u // n1) * n1
        groups.setdefault(g, []).append(u - g)
    out = []
    for g in sorted(groups):
        shift = g * stride
        terms = []
        for b in groups[g]:
            m = np.roll(masks[shift + b * stride], shift)
            terms.append(eng.mul(SlotVector(m, level), rots.get(b * stride)))
        inner = _sum(eng, terms)
        if shift:
            if rots.tag:
                with eng.ledger.tag(rots.tag):
                    inner = eng.rotate(inner, shift)
            else:
                inner = eng.rotate(inner, shift)
        out.append(inner)
    return _sum(eng, out)


def _sum(eng: Engine, terms: list[SlotVector]) -> SlotVector:
    acc = terms[0]
    for t in terms[1:]:
        acc = eng.add(acc, t)
    return acc


def apply(eng: Engine, t: LinearTransform, c: SlotVector, mode: str = "naive", tag: str | None = None) -> SlotVector:
    """Apply a linear transform to one block ciphertext (consumes one level)."""
    if c.encrypted and c.level < 1:
        raise LevelError("linear transform needs level >= 1; bootstrap first")
    if not c.encrypted:
        return SlotVector(apply_clear(t, c.slots), c.level, False)
    masks = {o: m.slots for o, m in t.diagonals}
    return masked_sum(eng, Rotations(eng, c, tag), masks, mode)


def shift_family(eng: Engine, c: SlotVector, kind: str, layout: BlockLayout, mode: str = "naive", tag=None):
    """All δ members phi_0..phi_{δ-1} (or psi_*) of one block.

    In ``bsgs`` mode the two diagonals of every member share a single
    pre-shifted copy of the input, so the family costs δ rotations instead
    of 2(δ-1).
    """
    d = layout.delta
    ts = [gen_transform(kind, layout, k) for k in range(d)]
    if not c.encrypted:
        return [SlotVector(apply_clear(t, c.slots), c.level, False) for t in ts]
    if mode == "naive" or d == 1:
        return [apply(eng, t, c, "naive", tag) for t in ts]
    if c.level < 1:
        raise LevelError("linear transform needs level >= 1; bootstrap first")
    wrap = d if kind == "phi" else d * d
    step = 1 if kind == "phi" else d
    rots = Rotations(eng, c, tag)
    w = rots.get(-wrap)
    level = eng.params.initial_level
    out = [apply(eng, ts[0], c, "naive", tag)]
    for k in range(1, d):
        masks = dict((o, m.slots) for o, m in ts[k].diagonals)
        near, far = k * step, k * step - wrap
        terms = [
            eng.mul(SlotVector(np.roll(masks[near], near), level), c),
            eng.mul(SlotVector(np.roll(masks[far], near), level), w),
        ]
        inner = eng.add(*terms)
        if tag:
            with eng.ledger.tag(tag):
                out.append(eng.rotate(inner, near))
        else:
            out.append(eng.rotate(inner, near))
    return out


# -- matrix products ----------------------------------------------------------


class Prepared:
    """A matmul operand with its shear and shift family computed on demand.

    Left operands use sigma then phi_k, right operands tau then psi_k. When
    the other factor is a plaintext, only rotations of the sheared block are
    needed (the plaintext family is folded into the masks), which is what
    ``rotations`` caches. Keeping one Prepared alive across several products
    amortizes the transform cost; each cached family costs δ ciphertexts of
    memory.
    """

    def __init__(self, eng: Engine, m: PackedMatrix, side: str, mode: str = "naive", tag: str | None = None):
        if side not in ("left", "right"):
            raise ValueError("side must be 'left' or 'right'")
        if mode not in EVAL_MODES:
            raise ValueError(f"unknown evaluation mode {mode!r}")
        self.eng = eng
        self.matrix = m
        self.side = side
        self.mode = mode
        self.tag = tag
        self._sheared = {}
        self._family = {}
        self._rots = {}

    @property
    def encrypted(self):
        return self.matrix.encrypted

    @property
    def cached_ciphertexts(self) -> int:
        return sum(len(f) for f in self._family.values()) + sum(len(r._cache) for r in self._rots.values())

    def sheared(self, i: int, j: int) -> SlotVector:
        if (i, j) not in self._sheared:
            kind = "sigma" if self.side == "left" else "tau"
            t = gen_transform(kind, self.matrix.layout)
            self._sheared[i, j] = apply(self.eng, t, self.matrix.blocks[i][j], self.mode, self.tag)
        return self._sheared[i, j]

    def family(self, i: int, j: int) -> list[SlotVector]:
        if (i, j) not in self._family:
            kind = "phi" if self.side == "left" else "psi"
            self._family[i, j] = shift_family(
                self.eng, self.sheared(i, j), kind, self.matrix.layout, self.mode, self.tag
            )
        return self._family[i, j]

    def rotations(self, i: int, j: int) -> Rotations:
        if (i, j) not in self._rots:
            self._rots[i, j] = Rotations(self.eng, self.sheared(i, j), self.tag)
        return self._rots[i, j]


def _as_prepared(eng, x, side, mode) -> Prepared:
    if isinstance(x, Prepared):
        if x.side != side:
            raise ValueError(f"operand prepared for the {x.side} side used on the {side} side")
        return x
    return Prepared(eng, x, side, mode)


def prepare(eng: Engine, m: PackedMatrix, side: str, mode: str = "naive", tag: str | None = None) -> Prepared:
    return Prepared(eng, m, side, mode, tag)


def _fused_term(eng, enc: Prepared, clear: Prepared, ei, ej, ci, cj, mode):
    # Fold the clear operand's shift family into the masks of the encrypted
    # operand's shift family: one masked rotation sum, one level.
    lay = enc.matrix.layout
    kind = "phi" if enc.side == "left" else "psi"
    fam = clear.family(ci, cj)
    masks: dict[int, np.ndarray] = {}
    for k in range(lay.delta):
        for o, m in gen_transform(kind, lay, k).diagonals:
            contrib = m.slots * fam[k].slots
            masks[o] = masks[o] + contrib if o in masks else contrib
    return masked_sum(eng, enc.rotations(ei, ej), masks, mode)


def matmul(eng: Engine, A, B, mode: str = "naive") -> PackedMatrix:
    """Format-preserving product of two packed matrices (per-slice A @ B).

    Either argument may be a :class:`Prepared` operand to reuse cached
    transforms. Consumes three levels, or two when one side is plaintext.
    """
    pa = _as_prepared(eng, A, "left", mode)
    pb = _as_prepared(eng, B, "right", mode)
    la, lb = pa.matrix.layout, pb.matrix.layout
    if la.cols != lb.rows:
        raise DimensionError(f"inner dimensions differ: {la.rows}x{la.cols} @ {lb.rows}x{lb.cols}")
    if (la.delta, la.parallel) != (lb.delta, lb.parallel):
        raise LayoutError("operands use different delta or slice counts")
    need = 3 if (pa.encrypted and pb.encrypted) else 2
    for name, pm in (("left", pa), ("right", pb)):
        if pm.encrypted and pm.matrix.level < need:
            raise LevelError(
                f"{name} operand at level {pm.matrix.level}, product needs {need}; bootstrap first"
            )
    gr, gk = la.grid[0], lb.grid[1]
    gj = la.grid[1]
    out_layout = la.with_shape(la.rows, lb.cols)
    blocks = []
    for i in range(gr):
        row = []
        for k in range(gk):
            acc = None
            for j in range(gj):
                if pa.encrypted and pb.encrypted:
                    fa, fb = pa.family(i, j), pb.family(j, k)
                    term = _sum(eng, [eng.mul(x, y) for x, y in zip(fa, fb)])
                elif pb.encrypted:
                    term = _fused_term(eng, pb, pa, j, k, i, j, mode)
                elif pa.encrypted:
                    term = _fused_term(eng, pa, pb, i, j, j, k, mode)
                else:
                    fa, fb = pa.family(i, j), pb.family(j, k)
                    s = sum(x.slots * y.slots for x, y in zip(fa, fb))
                    term = SlotVector(eng.params.round_to_grid(s), pa.matrix.level, False)
                acc = term if acc is None else eng.add(acc, term)
            row.append(acc)
        blocks.append(tuple(row))
    return PackedMatrix(tuple(blocks), out_layout, pa.matrix.replicated and pb.matrix.replicated)


def jiang_matmul(eng: Engine, a: SlotVector, b: SlotVector, n: int) -> SlotVector:
    """Single-ciphertext product of two row-packed n×n matrices.

    Plain textbook form: shear both operands, then accumulate n products of
    column-shifted and row-shifted copies, every permutation evaluated by
    rotating once per nonzero diagonal.
    """
    params = eng.params
    if n * n > params.slot_count:
        raise DimensionError(f"{n}x{n} matrix needs {n * n} slots, have {params.slot_count}")
    idx = np.arange(n * n)
    i, j = np.divmod(idx, n)

    def permute(c, src):
        off = (src - idx) % params.slot_count
        out = None
        for o in np.unique(off):
            m = np.zeros(params.slot_count)
            m[: n * n] = off == o
            term = eng.mul(SlotVector(m, params.initial_level), eng.rotate(c, int(o)))
            out = term if out is None else eng.add(out, term)
        return out

    a0 = permute(a, i * n + (i + j) % n)
    b0 = permute(b, ((i + j) % n) * n + j)
    acc = None
    for k in range(n):
        ak = permute(a0, i * n + (j + k) % n)
        bk = permute(b0, ((i + k) % n) * n + j)
        prod = eng.mul(ak, bk)
        acc = prod if acc is None else eng.add(acc, prod)
    return acc


# -- other matrix operations --------------------------------------------------


def transpose(eng: Engine, A: PackedMatrix, mode: str = "naive", tag: str | None = None) -> PackedMatrix:
    """Per-block xi plus a swap of block-grid indices (free); one level."""
    if A.encrypted and A.level < 1:
        raise LevelError("transpose needs level >= 1; bootstrap first")
    t = gen_transform("xi", A.layout)
    gr, gc = A.layout.grid
    blocks = tuple(tuple(apply(eng, t, A.blocks[i][j], mode, tag) for i in range(gr)) for j in range(gc))
    return PackedMatrix(blocks, A.layout.with_shape(A.layout.cols, A.layout.rows), A.replicated)


def replicate(eng: Engine, A: PackedMatrix) -> PackedMatrix:
    """Copy slice 0 into every slice with log2(p) rotation doublings per block."""
    lay = A.layout
    stride = lay.delta**2

    def rep(c):
        step = 1
        while step < lay.parallel:
            c = eng.add(c, eng.rotate(c, -step * stride))
            step *= 2
        return c

    return replace(A.map(rep), replicated=True)


def reduce_slices(eng: Engine, G: PackedMatrix) -> PackedMatrix:
    """Sum over the p slices, result present in every slice.

    Needs the slices to fill the ciphertext (p·δ² = slot count) so that the
    cyclic inner sum wraps onto live slices; otherwise the sum is formed in
    slice 0, masked (one level) and replicated back.
    """
    lay = G.layout
    stride = lay.delta**2
    if lay.parallel == 1:
        return G
    if lay.full:
        return replace(G.map(lambda c: eng.inner_sum(c, stride, lay.parallel)), replicated=True)
    keep = np.zeros(lay.params.slot_count)
    keep[:stride] = 1.0
    keep_v = eng.encode(keep)

    def red(c):
        s = eng.inner_sum(c, stride, lay.parallel)
        return eng.mul(s, keep_v)

    return replicate(eng, G.map(red))


def _check_same(A: PackedMatrix, B: PackedMatrix):
    la, lb = A.layout, B.layout
    if (la.rows, la.cols, la.delta, la.parallel) != (lb.rows, lb.cols, lb.delta, lb.parallel):
        raise LayoutError(f"layouts differ: {la.rows}x{la.cols} vs {lb.rows}x{lb.cols}")


def _zip(fn, A: PackedMatrix, B: PackedMatrix) -> PackedMatrix:
    _check_same(A, B)
    blocks = tuple(tuple(fn(x, y) for x, y in zip(ra, rb)) for ra, rb in zip(A.blocks, B.blocks))
    return PackedMatrix(blocks, A.layout, A.replicated and B.replicated)


def elementwise_mul(eng: Engine, A: PackedMatrix, B: PackedMatrix) -> PackedMatrix:
    return _zip(eng.mul, A, B)


def elementwise_add(eng: Engine, A: PackedMatrix, B: PackedMatrix) -> PackedMatrix:
    return _zip(eng.add, A, B)


def elementwise_sub(eng: Engine, A: PackedMatrix, B: PackedMatrix) -> PackedMatrix:
    return _zip(eng.sub, A, B)


def scale(eng: Engine, A: PackedMatrix, k: float) -> PackedMatrix:
    kv = eng.encode(np.full(eng.params.slot_count, float(k)))
    return A.map(lambda c: eng.mul(c, kv))


def bootstrap_matrix(eng: Engine, A: PackedMatrix) -> PackedMatrix:
    return A.map(eng.bootstrap)


def align_levels(eng: Engine, A: PackedMatrix) -> PackedMatrix:
    lvl = A.level
    return A.map(lambda c: eng.drop_level(c, lvl) if c.encrypted else c)
