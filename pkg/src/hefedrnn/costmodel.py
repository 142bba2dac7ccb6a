"""Closed-form ciphertext, bootstrap and communication counts.

The formulas count ciphertexts of a block-packed batch: a ciphertext holds
N/(2δ) matrix rows of δ columns, so a b x c batch matrix needs
ceil(2δb/N) * ceil(c/δ) ciphertexts and an r x c weight needs
ceil(r/δ) * ceil(c/δ). Everything here is pure arithmetic apart from
``compare_packings``, which executes multiplications on the simulator and
reports the counted rotations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .engine import Engine, EngineParams
from .exceptions import LayoutError


def _ceil(a: int, b: int) -> int:
    return -(-int(a) // int(b))


def choose_delta(ring_log: int, max_batch: int, alpha: float = 1.0) -> int:
    """Smallest power-of-two δ with δ >= N*alpha / (2*max_batch)."""
    if not 0 < alpha <= 1:
        raise ValueError("alpha must be in (0, 1]")
    if max_batch < 1:
        raise ValueError("max_batch must be positive")
    N = 1 << ring_log
    bound = N * alpha / (2 * max_batch)
    delta = 1
    while delta < bound:
        delta *= 2
    if delta * delta > N // 2:
        raise LayoutError(f"delta={delta} exceeds sqrt(N/2) for ring_log={ring_log}; batch too small")
    return delta


def ciphertext_counts(batch: int, features: int, hidden: int, outputs: int, delta: int, ring_log: int,
                      arch: str = "elman") -> dict[str, int]:
    """Ciphertexts per tensor. Gradients mirror their weights, dz mirrors h and
    the h_t ⊗ dy intermediate I is counted like dz."""
    N = 1 << ring_log
    rows = _ceil(2 * delta * batch, N)
    cd, ch, co = _ceil(features, delta), _ceil(hidden, delta), _ceil(outputs, delta)
    out = {
        "x": rows * cd,
        "h": rows * ch,
        "p": rows * co,
        "U": cd * ch,
        "W": (co if arch == "jordan" else ch) * ch,
        "V": ch * co,
    }
    out["dz"] = out["h"]
    out["I"] = out["dz"]
    for k in ("U", "W", "V"):
        out[f"grad_{k}"] = out[k]
    return out


def bootstrap_budget(counts: dict, timesteps: int, kappa: int = 1, local_iters: int = 1,
                     global_iters: int = 1) -> int:
    """Bootstrapped ciphertexts: e(|U|+|W|+|V| + l|I|κ + Tl(|h|+|dz|))."""
    per = (counts["U"] + counts["W"] + counts["V"] + local_iters * counts["I"] * kappa
           + timesteps * local_iters * (counts["h"] + counts["dz"]))
    return global_iters * per


def per_sample_bootstraps(batch: int, timesteps: int) -> int:
    """Baseline that packs every sample in its own ciphertext: one refresh
    per sample and timestep."""
    return batch * timesteps


def comm_cost(counts: dict, timesteps: int, parties: int, ct_bytes: int, kappa: int = 1, local_iters: int = 1,
              global_iters: int = 1, edges: int | None = None) -> dict[str, int]:
    """FL_c (model/gradient transfers) and the BS_c bound (bootstrap traffic), in bytes."""
    e = parties - 1 if edges is None else edges
    fl = (2 * (counts["U"] + counts["W"] + counts["V"])) * global_iters * e * ct_bytes
    bs = bootstrap_budget(counts, timesteps, kappa, local_iters, global_iters) * e * ct_bytes
    return {"FL_c": fl, "BS_c": bs}


MEMORY_CLASSES = {
    "row": {"ring_class": "O(n^2)", "ciphertext_class": "O(1)", "eval_key_class": "O(n^3)"},
    "per-sample": {"ring_class": "O(n^2)", "ciphertext_class": "O(1)", "eval_key_class": "O(n^2 log n)"},
    "multi-dim": {"ring_class": "O(delta^2)", "ciphertext_class": "O(n^2/delta^2)", "eval_key_class": "O(delta^3)"},
}


def _measure(n: int, delta: int, count: int, ring_log: int, mode: str, seed: int, kind: str = "matmul") -> dict:
    from .packing import make_layout, matmul, max_parallel, pack, transpose, unpack

    params = EngineParams(ring_log=ring_log)
    p = min(count, max_parallel(delta, params))
    eng = Engine(params)
    rng = np.random.default_rng(seed)
    lay = make_layout(delta, n, n, params, p)
    A = pack(eng, rng.uniform(-1, 1, (p, n, n)), lay)
    B = pack(eng, rng.uniform(-1, 1, (p, n, n)), lay)
    if kind == "matmul":
        C = matmul(eng, A, B, mode)
        expected = np.einsum("pij,pjk->pik", unpack(A), unpack(B))
    else:
        C = transpose(eng, A, mode)
        expected = np.swapaxes(unpack(A), 1, 2)
    err = float(np.max(np.abs(unpack(C) - expected)))
    rounds = _ceil(count, p)
    rot = eng.ledger.rotations
    return {
        "ring_log": ring_log,
        "parallel": p,
        "rotations": rot * rounds,
        "amortized": rot * rounds / count,
        "ciphertexts": A.n_ciphertexts * rounds,
        "rotation_keys": len(eng.ledger.rotation_keys),
        "max_error": err,
    }


def compare_packings(n: int, delta: int, count: int, ring_log: int = 14, mode: str = "naive",
                     seed: int = 0, kind: str = "matmul") -> list[dict]:
    """Rotation counts for ``count`` products (or transposes) of n x n matrices.

    multi-dim: sub-matrices of side δ, executed. row: one matrix per slice
    block (δ = n, the single-ciphertext special case), executed on the
    smallest ring that holds an n x n matrix. per-sample: vector-matrix
    products, n * ceil(log2 n) rotations per product, modeled; matmul only.
    """
    if n < 1 or delta < 1 or count < 1:
        raise ValueError("n, delta and count must be positive")
    if kind not in ("matmul", "transpose"):
        raise ValueError(f"unknown benchmark kind {kind!r}")
    rows = []
    md = _measure(n, delta, count, ring_log, mode, seed, kind)
    rows.append({"scheme": "multi-dim", **md, **MEMORY_CLASSES["multi-dim"]})
    row_ring = max(ring_log, math.ceil(math.log2(2 * n * n)))
    rp = _measure(n, n, count, row_ring, mode, seed, kind)
    rows.append({"scheme": "row", **rp, **MEMORY_CLASSES["row"]})
    if kind == "transpose":
        return rows
    per = n * max(1, math.ceil(math.log2(n)))
    rows.append({
        "scheme": "per-sample", "ring_log": ring_log, "parallel": 1, "rotations": per * count,
        "amortized": float(per), "ciphertexts": count, "rotation_keys": max(1, math.ceil(math.log2(n))),
        "max_error": float("nan"), **MEMORY_CLASSES["per-sample"],
    })
    return rows


@dataclass
class CostReport:
    """Counts, bootstrap budget and communication for one configuration."""

    batch: int
    features: int
    hidden: int
    outputs: int
    timesteps: int
    delta: int
    ring_log: int
    parties: int
    kappa: int = 1
    local_iters: int = 1
    global_iters: int = 1
    levels: int = 9
    edges: int | None = None
    arch: str = "elman"
    counts: dict = field(init=False)

    def __post_init__(self):
        self.counts = ciphertext_counts(self.batch, self.features, self.hidden, self.outputs, self.delta,
                                        self.ring_log, self.arch)

    @property
    def ciphertext_bytes(self) -> int:
        return EngineParams(self.ring_log, self.levels).ciphertext_bytes()

    @property
    def bootstraps(self) -> int:
        return bootstrap_budget(self.counts, self.timesteps, self.kappa, self.local_iters, self.global_iters)

    @property
    def comm(self) -> dict[str, int]:
        return comm_cost(self.counts, self.timesteps, self.parties, self.ciphertext_bytes, self.kappa,
                         self.local_iters, self.global_iters, self.edges)

    def records(self) -> list[tuple[str, str, float]]:
        out = [("count", k, v) for k, v in self.counts.items()]
        out.append(("bootstrap", "budget", self.bootstraps))
        out.append(("bootstrap", "per_sample_baseline", per_sample_bootstraps(self.batch, self.timesteps)
                    * self.global_iters * self.local_iters))
        out.extend(("comm", k, v) for k, v in self.comm.items())
        out.append(("comm", "ciphertext_bytes", self.ciphertext_bytes))
        return out

    def table(self) -> str:
        width = max(len(k) for _, k, _ in self.records())
        lines = [f"{'group':<10} {'name':<{width}} value"]
        lines += [f"{g:<10} {k:<{width}} {v}" for g, k, v in self.records()]
        return "\n".join(lines)
