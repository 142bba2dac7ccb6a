"""Federated training over simulated parties.

Every party runs its local iterations on its own engine and ledger. Updates
travel up a balanced binary tree (or a star around a separate server), are
summed at each hop, clipped and applied at the root, and the refreshed
weights travel back down. All parties start from one encrypted model and
hold identical copies after every model update.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import reference
from .approx import ClipSpec, ExactFunction, PolyApprox, clip_poly, eval_encrypted
from .costmodel import choose_delta
from .engine import CostLedger, Engine, EngineParams
from .exceptions import ConfigError, DimensionError, ProtocolError
from .packing import (
    PackedMatrix,
    bootstrap_matrix,
    decrypt_matrix,
    elementwise_add,
    elementwise_sub,
    max_parallel,
    scale,
    unpack,
    unpack_rows,
)
from .rnn import BatchPlan, RnnModel, Runtime, forward, local_iteration, make_activation, pack_model

MODES = ("fedavg-grad", "fedavg-model", "centralized")


@dataclass(frozen=True)
class TreeTopology:
    """Parties 0..N-1. On a tree, party 0 is the root and hosts the
    aggregation server; party i reports to (i-1)//2. On a star every party
    reports directly to a separate server."""

    n_parties: int
    kind: str = "tree"

    def __post_init__(self):
        if self.n_parties < 1:
            raise ConfigError("topology needs at least one party")
        if self.kind not in ("tree", "star"):
            raise ConfigError(f"unknown topology {self.kind!r}")

    @property
    def edges(self) -> int:
        return self.n_parties - 1 if self.kind == "tree" else self.n_parties

    def parent(self, i: int) -> int | None:
        """Parent party id, or None for nodes that report to the server."""
        if self.kind == "star" or i == 0:
            return None
        return (i - 1) // 2

    def children(self, i: int) -> list[int]:
        if self.kind == "star":
            return []
        return [c for c in (2 * i + 1, 2 * i + 2) if c < self.n_parties]

    def depth(self, i: int) -> int:
        d = 0
        while self.parent(i) is not None:
            i = self.parent(i)
            d += 1
        return d

    def upward_order(self) -> list[int]:
        """Parties sorted so that every child comes before its parent."""
        return sorted(range(self.n_parties), key=lambda i: (-self.depth(i), i))


@dataclass(frozen=True)
class ModelConfig:
    arch: str = "elman"
    hidden: int = 32
    outputs: int = 1
    activation: str = "tanh"
    act_degree: int = 7
    act_interval: tuple[float, float] | None = None
    exact_activations: bool = False
    use_bias: bool = True
    derivative: str = "identity"

    def __post_init__(self):
        if self.arch not in ("elman", "jordan", "gru"):
            raise ConfigError(f"model.arch: cannot train {self.arch!r}")
        if self.hidden < 1 or self.outputs < 1:
            raise ConfigError("model.hidden and model.outputs must be positive")
        if self.derivative not in ("identity", "poly"):
            raise ConfigError(f"model.derivative: unknown value {self.derivative!r}")


@dataclass(frozen=True)
class TrainConfig:
    global_iters: int = 200
    local_iters: int = 1
    lr: float = 0.1
    batch: int = 256
    mode: str = "fedavg-grad"
    clip: ClipSpec | None = field(default_factory=ClipSpec)
    clip_degree: int = 7
    clip_interval: tuple[float, float] = (-60.0, 60.0)
    clip_approx: PolyApprox | None = None
    ring_log: int = 14
    levels: int = 9
    scale_log: int = 31
    quantize: bool = True
    delta: int | None = None
    parallel: int | None = None
    topology: str = "tree"
    cached_transforms: bool = False
    transform_mode: str = "naive"
    policy: str = "eager"
    carry_state: bool = False
    shuffle: bool = True

    def __post_init__(self):
        if self.global_iters < 0:
            raise ConfigError("train.global_iters must be >= 0")
        if self.local_iters < 1:
            raise ConfigError("train.local_iters must be >= 1")
        if self.batch < 1:
            raise ConfigError("train.batch must be >= 1")
        if not self.lr > 0:
            raise ConfigError("train.lr must be positive")
        if self.mode not in MODES:
            raise ConfigError(f"train.mode: unknown mode {self.mode!r}")
        if self.mode != "fedavg-model" and self.local_iters != 1:
            raise ConfigError("train.local_iters > 1 needs mode fedavg-model")
        if self.transform_mode not in ("naive", "bsgs"):
            raise ConfigError(f"train.transform_mode: unknown value {self.transform_mode!r}")
        if self.policy not in ("eager", "lazy"):
            raise ConfigError(f"train.policy: unknown value {self.policy!r}")

    def engine_params(self) -> EngineParams:
        return EngineParams(self.ring_log, self.levels, self.scale_log, self.quantize)


@dataclass
class Prediction:
    values: np.ndarray
    owner: str
    key_switches: int


def _lincomb(eng: Engine, terms, like: PackedMatrix) -> PackedMatrix:
    """Scalar combination of equally laid out matrices (no level consumed)."""
    gr, gc = like.layout.grid
    blocks = tuple(
        tuple(eng.lincomb([(a, M.blocks[i][j]) for a, M in terms]) for j in range(gc)) for i in range(gr)
    )
    return PackedMatrix(blocks, like.layout, like.replicated)


class Federation:
    """Simulated federation holding the parties' data shards.

    ``shards`` is a list of (X, Y) arrays, X of shape (n_i, T, d) and Y of
    shape (n_i, kappa, o).
    """

    def __init__(self, shards, model_cfg: ModelConfig = ModelConfig(), train_cfg: TrainConfig = TrainConfig(),
                 seed: int = 0):
        if not shards:
            raise ConfigError("at least one data shard is required")
        self.model_cfg = model_cfg
        self.cfg = train_cfg
        self.seed = int(seed)
        shards = [(np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)) for x, y in shards]
        for x, y in shards:
            if x.ndim != 3 or y.ndim != 3 or len(x) != len(y):
                raise DimensionError("each shard needs X (n, T, d) and Y (n, kappa, o) with matching n")
            if x.shape[1:] != shards[0][0].shape[1:] or y.shape[1:] != shards[0][1].shape[1:]:
                raise DimensionError("all shards must share T, d, kappa and o")
        if train_cfg.mode == "centralized":
            shards = [(np.concatenate([x for x, _ in shards]), np.concatenate([y for _, y in shards]))]
        if shards[0][1].shape[2] != model_cfg.outputs:
            raise DimensionError(f"targets have {shards[0][1].shape[2]} outputs, model expects {model_cfg.outputs}")
        seq = np.random.SeedSequence(self.seed)
        children = seq.spawn(len(shards) + 1)
        self._init_rng = np.random.default_rng(children[0])
        if train_cfg.shuffle and not train_cfg.carry_state:
            shards = [
                (x[p], y[p])
                for (x, y), p in ((s, np.random.default_rng(c).permutation(len(s[0]))) for s, c in zip(shards, children[1:]))
            ]
        self.shards = shards
        self.timesteps = shards[0][0].shape[1]
        self.features = shards[0][0].shape[2]
        self.kappa = shards[0][1].shape[1]
        self.topology = TreeTopology(len(shards), train_cfg.topology)
        self.params = train_cfg.engine_params()
        if train_cfg.batch > min(len(x) for x, _ in shards):
            raise ConfigError("train.batch exceeds the smallest shard")
        self.delta = train_cfg.delta or choose_delta(train_cfg.ring_log, train_cfg.batch, 1.0)
        self.parallel = train_cfg.parallel or max_parallel(self.delta, self.params)
        edges = self.topology.edges
        self.server = Engine(self.params, CostLedger(), edges)
        self.parties = [Engine(self.params, CostLedger(), edges) for _ in shards]
        self.query_ledger = CostLedger()
        act = make_activation(model_cfg.activation, model_cfg.exact_activations, model_cfg.act_degree,
                              model_cfg.act_interval, model_cfg.derivative)
        gate = make_activation("sigmoid", model_cfg.exact_activations, model_cfg.act_degree,
                               derivative=model_cfg.derivative)
        self.act, self.gate = act, gate
        self.runtimes = [self._runtime(e) for e in self.parties]
        self.clip_fn = None
        if train_cfg.clip is not None:
            if train_cfg.clip_approx is not None:
                self.clip_fn = train_cfg.clip_approx
            elif model_cfg.exact_activations:
                self.clip_fn = ExactFunction(train_cfg.clip, train_cfg.clip_degree, "clip", train_cfg.clip_interval)
            else:
                self.clip_fn = clip_poly(train_cfg.clip, train_cfg.clip_degree, train_cfg.clip_interval)
        self.initial_weights = reference.init_weights(
            model_cfg.arch, self.features, model_cfg.hidden, model_cfg.outputs, self._init_rng, model_cfg.use_bias
        )
        self.model: RnnModel | None = None
        self.iteration = 0
        self._states = [None] * len(shards)

    def _runtime(self, eng: Engine) -> Runtime:
        c = self.cfg
        return Runtime(eng, self.delta, self.parallel, self.act, self.gate, c.transform_mode,
                       c.cached_transforms, c.policy)

    @property
    def sizes(self) -> np.ndarray:
        return np.array([len(x) for x, _ in self.shards])

    @property
    def clip_depth(self) -> int:
        return 0 if self.clip_fn is None else self.clip_fn.depth

    @property
    def gradient_level_needed(self) -> int:
        """Party pre-scale, clip polynomial and learning-rate step."""
        return 1 + self.clip_depth + 1

    # -- phases -----------------------------------------------------------
    def setup(self) -> RnnModel:
        """Encrypt the initial model at the server and broadcast it."""
        self.model = pack_model(self.server, self.model_cfg.arch, self.initial_weights, self.delta, self.parallel)
        with self.server.ledger.tag("setup"):
            self.server.send(self.model.n_ciphertexts, self.topology.edges)
        self.iteration = 0
        self._states = [None] * len(self.shards)
        return self.model

    def _batch(self, i: int, k: int):
        X, Y = self.shards[i]
        idx = reference.batch_indices(len(X), self.cfg.batch, k)
        return X[idx], Y[idx]

    def local_gradients(self, i: int, model: RnnModel, k: int):
        rt = self.runtimes[i]
        X, Y = self._batch(i, k)
        state = self._states[i] if self.cfg.carry_state else None
        grads, new_state = local_iteration(rt, model, X, Y, state)
        if self.cfg.carry_state:
            self._states[i] = new_state
        return grads

    def _prescale(self, i: int, tensors: dict, factor: float, need: int) -> dict:
        eng, rt = self.parties[i], self.runtimes[i]
        return {name: scale(eng, rt.ready(g, need), factor) for name, g in tensors.items()}

    def aggregate(self, contributions: list) -> dict:
        """Sum per-party tensors up the topology; returns the root's sum."""
        if len(contributions) != self.topology.n_parties or any(c is None for c in contributions):
            raise ProtocolError("every party must report before aggregation")
        names = list(contributions[0])
        for c in contributions:
            if list(c) != names:
                raise ProtocolError("parties reported different tensor sets")
        topo = self.topology
        partial = [dict(c) for c in contributions]
        n_ct = sum(m.n_ciphertexts for m in contributions[0].values())
        if topo.kind == "tree":
            for i in topo.upward_order():
                eng = self.parties[i]
                for ch in topo.children(i):
                    for k in names:
                        partial[i][k] = elementwise_add(eng, partial[i][k], partial[ch][k])
                if topo.parent(i) is not None:
                    with eng.ledger.tag("fl"):
                        eng.send(n_ct, 1)
            return partial[0]
        total = None
        for i in range(topo.n_parties):
            with self.parties[i].ledger.tag("fl"):
                self.parties[i].send(n_ct, 1)
            if total is None:
                total = partial[i]
            else:
                total = {k: elementwise_add(self.server, total[k], partial[i][k]) for k in names}
        return total

    def _clip_step(self, grad: PackedMatrix) -> PackedMatrix:
        eng = self.server
        need = self.clip_depth + 1
        if grad.level < need:
            with eng.ledger.tag("bootstrap:guard"):
                grad = bootstrap_matrix(eng, grad)
        if self.clip_fn is not None:
            grad = eval_encrypted(eng, self.clip_fn, grad)
        return scale(eng, grad, self.cfg.lr)

    def model_update(self, model: RnnModel, aggregate: dict) -> RnnModel:
        """Apply the aggregated (already averaged) gradient at the root."""
        eng = self.server
        new = {}
        for name, W in model.params.items():
            step = self._clip_step(aggregate[name])
            with eng.ledger.tag("bootstrap:weights"):
                new[name] = bootstrap_matrix(eng, elementwise_sub(eng, W, step))
        self._broadcast(model)
        return model.replace_params(new)

    def _average_models(self, model: RnnModel, averaged: dict) -> RnnModel:
        eng = self.server
        new = {}
        for name, W in model.params.items():
            A = averaged[name]
            if self.clip_fn is None:
                upd = A
            else:
                pseudo = _lincomb(eng, [(1.0 / self.cfg.lr, W), (-1.0 / self.cfg.lr, A)], W)
                upd = elementwise_sub(eng, W, self._clip_step(pseudo))
            with eng.ledger.tag("bootstrap:weights"):
                new[name] = bootstrap_matrix(eng, upd)
        self._broadcast(model)
        return model.replace_params(new)

    def _broadcast(self, model: RnnModel):
        with self.server.ledger.tag("fl"):
            self.server.send(model.n_ciphertexts, self.topology.edges)

    def step(self) -> RnnModel:
        """One global iteration."""
        if self.model is None:
            self.setup()
        sizes = self.sizes
        n, b = sizes.sum(), self.cfg.batch
        k = self.iteration * self.cfg.local_iters
        contributions = []
        if self.cfg.mode in ("fedavg-grad", "centralized"):
            for i in range(self.topology.n_parties):
                g = self.local_gradients(i, self.model, k)
                contributions.append(self._prescale(i, g, sizes[i] / (n * b), self.gradient_level_needed))
            self.model = self.model_update(self.model, self.aggregate(contributions))
        else:
            for i in range(self.topology.n_parties):
                contributions.append(self._prescale(i, self._local_model(i, k), sizes[i] / n, 1))
            self.model = self._average_models(self.model, self.aggregate(contributions))
        self.iteration += 1
        return self.model

    def _local_model(self, i: int, k: int) -> dict:
        eng, rt = self.parties[i], self.runtimes[i]
        local = self.model
        for li in range(self.cfg.local_iters):
            if li:
                local = local.replace_params({n: rt.ready(W, 4) for n, W in local.params.items()})
            grads = self.local_gradients(i, local, k + li)
            upd = {}
            for name, W in local.params.items():
                upd[name] = elementwise_sub(eng, W, scale(eng, rt.ready(grads[name], 1), self.cfg.lr / self.cfg.batch))
            local = local.replace_params(upd)
        return local.params

    def train(self, callback=None, every: int = 1) -> RnnModel:
        """Run the configured number of global iterations.

        ``callback(federation, iteration)`` is invoked after every ``every``
        iterations and after the last one.
        """
        if self.model is None:
            self.setup()
        for it in range(self.cfg.global_iters):
            self.step()
            if callback is not None and ((it + 1) % every == 0 or it + 1 == self.cfg.global_iters):
                callback(self, it + 1)
        return self.model

    # -- prediction -------------------------------------------------------
    def predict_oblivious(self, X, querier: str = "querier") -> Prediction:
        """Encrypt X under the collective key, evaluate, switch keys to the querier."""
        X = np.asarray(X, dtype=np.float64)
        if self.model is None:
            self.setup()
        if X.ndim != 3 or X.shape[2] != self.features:
            raise DimensionError(f"expected inputs (n, T, {self.features}), got {X.shape}")
        eng = Engine(self.params, self.query_ledger, self.topology.edges)
        rt = self._runtime(eng)
        plan = BatchPlan(rt, X.shape[0])
        before = self.query_ledger.key_switches
        xs = plan.pack_inputs(X, encrypt=True)
        st = forward(rt, self.model, xs, None, plan, self.kappa)
        outs = []
        for t in sorted(st.preds):
            owned = st.preds[t].map(lambda c: eng.key_switch(c, querier))
            outs.append(unpack_rows(decrypt_matrix(eng, owned), X.shape[0]))
        return Prediction(np.stack(outs, axis=1), querier, self.query_ledger.key_switches - before)

    def decrypted_weights(self) -> dict[str, np.ndarray]:
        """Collectively decrypt the global model (one key switch per ciphertext)."""
        if self.model is None:
            self.setup()
        eng = Engine(self.params, self.query_ledger, self.topology.edges)
        return {k: unpack(decrypt_matrix(eng, m))[0] for k, m in self.model.params.items()}

    def predict_decrypted(self, X) -> Prediction:
        before = self.query_ledger.key_switches
        w = self.decrypted_weights()
        out = reference.run(self.model_cfg.arch, w, np.asarray(X, dtype=np.float64), None, None,
                            self.act.plain(), self.gate.plain(), kappa=self.kappa)
        return Prediction(out["preds"], "public", self.query_ledger.key_switches - before)

    # -- accounting -------------------------------------------------------
    def ledger(self) -> CostLedger:
        """All party ledgers merged in party order, then the server's."""
        total = CostLedger()
        for e in self.parties:
            total.merge(e.ledger)
        total.merge(self.server.ledger)
        return total

    def weights(self) -> dict[str, np.ndarray]:
        """Simulator view of the current global model."""
        if self.model is None:
            self.setup()
        return self.model.peek()

    def reference_run(self, clip=None, act=None, gate=None) -> dict[str, np.ndarray]:
        """Plaintext training with the same shards, schedule and initial weights."""
        mode = "fedavg-grad" if self.cfg.mode == "centralized" else self.cfg.mode
        return reference.fedavg(
            self.model_cfg.arch, self.initial_weights, self.shards, self.cfg.global_iters, self.cfg.lr,
            self.cfg.batch, act or self.act.plain(), gate or self.gate.plain(), clip, mode,
            self.cfg.local_iters, self.cfg.carry_state, self.model_cfg.derivative,
        )
