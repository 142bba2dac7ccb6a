"""Encrypted forward and backward passes for Elman, Jordan and GRU networks.

All arithmetic goes through packed-matrix operations, so every rotation,
multiplication and bootstrap is charged to the party's ledger. Batches are
packed row-wise across the parallel slices; weights are replicated in every
slice and biases are stored as replicated 1 x n rows that get broadcast onto
the live batch rows with a plaintext indicator product.

Bootstrap placement (policy "eager"): h_t after every activation, dz at
every backward step and the h_t ⊗ dy intermediate at output steps. Any other
ciphertext that would run out of levels is refreshed by a guard just before
the operation that needs the levels.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import reference
from .approx import ExactFunction, PolyApprox, RangeGuard, activation_library, eval_encrypted
from .engine import Engine
from .exceptions import DimensionError, StateError
from .packing import (
    BlockLayout,
    PackedMatrix,
    Prepared,
    batch_layout,
    bootstrap_matrix,
    constant,
    elementwise_add,
    elementwise_mul,
    elementwise_sub,
    matmul,
    pack,
    pack_replicated,
    pack_rows,
    prepare,
    reduce_slices,
    row_mask,
    transpose,
    unpack,
)

ARCHITECTURES = ("elman", "jordan", "gru", "lstm")


@dataclass(frozen=True)
class RnnShape:
    batch: int
    features: int
    hidden: int
    timesteps: int
    outputs: int = 1
    output_steps: int = 1

    def __post_init__(self):
        for name in ("batch", "features", "hidden", "timesteps", "outputs", "output_steps"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.output_steps > self.timesteps:
            raise ValueError("output_steps cannot exceed timesteps")


# -- activations --------------------------------------------------------------


@dataclass(frozen=True)
class Activation:
    """Encrypted activation: the function, its derivative, and whether the
    derivative may be formed from the output (1 - y² for tanh, y(1 - y) for
    sigmoid) instead of evaluating a second polynomial."""

    name: str
    fn: PolyApprox | ExactFunction
    deriv: PolyApprox | ExactFunction | None = None
    from_output: bool = True

    def plain(self) -> reference.Act:
        grad_out = {"tanh": lambda y: 1.0 - y * y, "sigmoid": lambda y: y * (1.0 - y)}.get(self.name)
        df = self.deriv if self.deriv is not None else (lambda z: np.zeros_like(z))
        return reference.Act(self.fn, df, grad_out if self.from_output else None)


_EXACT = {
    "tanh": (np.tanh, lambda z: 1.0 - np.tanh(z) ** 2),
    "sigmoid": (reference._sig, lambda z: reference._sig(z) * (1.0 - reference._sig(z))),
    "softplus": (lambda z: np.logaddexp(0, z), reference._sig),
}


def make_activation(name: str, exact: bool = False, degree: int = 7, interval=None,
                    derivative: str = "identity", method: str = "minimax") -> Activation:
    """Approximated (default) or exact activation with matching level cost."""
    if name not in _EXACT:
        raise ValueError(f"unknown activation {name!r}")
    from_output = derivative == "identity" and name in ("tanh", "sigmoid")
    if exact:
        f, df = _EXACT[name]
        return Activation(name, ExactFunction(f, degree, name), ExactFunction(df, max(1, degree - 1), f"d{name}"),
                          from_output)
    poly, dpoly = activation_library(name, degree, interval, method)
    return Activation(name, poly, dpoly, from_output)


# -- model container ----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class RnnModel:
    arch: str
    features: int
    hidden: int
    outputs: int
    params: dict

    @property
    def use_bias(self) -> bool:
        return any(k.startswith("b_") for k in self.params)

    @property
    def n_ciphertexts(self) -> int:
        return sum(m.n_ciphertexts for m in self.params.values())

    @property
    def level(self) -> int:
        return min(m.level for m in self.params.values())

    def peek(self) -> dict[str, np.ndarray]:
        """Simulator view of the weights (slice 0); no protocol cost."""
        return {k: unpack(m)[0] for k, m in self.params.items()}

    def replace_params(self, params: dict) -> "RnnModel":
        return RnnModel(self.arch, self.features, self.hidden, self.outputs, params)


def weight_layout(delta: int, rows: int, cols: int, eng: Engine, parallel: int) -> BlockLayout:
    return BlockLayout(delta, rows, cols, parallel, eng.params)


def pack_model(eng: Engine, arch: str, weights: dict, delta: int, parallel: int, encrypt: bool = True) -> RnnModel:
    params = {}
    for name, w in weights.items():
        w = np.atleast_2d(np.asarray(w, dtype=np.float64))
        params[name] = pack_replicated(eng, w, weight_layout(delta, *w.shape, eng, parallel), encrypt)
    if arch == "lstm":
        d, h = weights["W_f"].shape
    elif arch == "gru":
        d, h = weights["U_z"].shape
    else:
        d, h = weights["U"].shape
    o = weights["V"].shape[1] if "V" in weights else h
    return RnnModel(arch, d, h, o, params)


# -- runtime ------------------------------------------------------------------


@dataclass
class Runtime:
    """Everything a pass needs besides the model and data."""

    engine: Engine
    delta: int
    parallel: int
    act: Activation
    gate: Activation | None = None
    mode: str = "naive"
    cached: bool = False
    policy: str = "eager"
    lstm_conventional: bool = False
    guard: RangeGuard | None = None

    def __post_init__(self):
        if self.policy not in ("eager", "lazy"):
            raise ValueError(f"unknown bootstrap policy {self.policy!r}")
        if self.gate is None:
            self.gate = make_activation("sigmoid", exact=isinstance(self.act.fn, ExactFunction),
                                        degree=self.act.fn.degree)

    # level management
    def ready(self, M: PackedMatrix, need: int) -> PackedMatrix:
        if M.encrypted and M.level < need:
            with self.engine.ledger.tag("bootstrap:guard"):
                return bootstrap_matrix(self.engine, M)
        return M

    def boot(self, M: PackedMatrix) -> PackedMatrix:
        if self.policy == "eager" and M.encrypted:
            with self.engine.ledger.tag("bootstrap:placed"):
                return bootstrap_matrix(self.engine, M)
        return M

    # arithmetic with guards
    def mm(self, A, B) -> PackedMatrix:
        enc_a = A.encrypted
        enc_b = B.encrypted
        need = 3 if (enc_a and enc_b) else 2
        if isinstance(A, PackedMatrix):
            A = self.ready(A, need)
        if isinstance(B, PackedMatrix):
            B = self.ready(B, need)
        return matmul(self.engine, A, B, self.mode)

    def tr(self, A: PackedMatrix, tag: str | None = None) -> PackedMatrix:
        return transpose(self.engine, self.ready(A, 1), self.mode, tag)

    def emul(self, A, B):
        return elementwise_mul(self.engine, self.ready(A, 1), self.ready(B, 1))

    def add(self, A, B):
        return elementwise_add(self.engine, A, B)

    def sub(self, A, B):
        return elementwise_sub(self.engine, A, B)

    def one_minus(self, A):
        return elementwise_sub(self.engine, constant(self.engine, A, 1.0), A)

    def apply(self, act: Activation, X: PackedMatrix) -> PackedMatrix:
        return eval_encrypted(self.engine, act.fn, self.ready(X, act.fn.depth), self.guard)

    def dapply(self, act: Activation, out: PackedMatrix, pre: PackedMatrix | None) -> PackedMatrix:
        if act.from_output:
            if act.name == "tanh":
                return self.one_minus(self.emul(out, out))
            return self.emul(out, self.one_minus(out))
        if pre is None:
            raise StateError("derivative needs the stored pre-activation")
        return eval_encrypted(self.engine, act.deriv, self.ready(pre, act.deriv.depth), self.guard)


class WeightCache:
    """Per-local-iteration access to weight operands.

    Transposes are formed once per pass. With ``cached`` the shear and shift
    families of each weight are also kept for the whole pass; otherwise every
    product re-derives them. Rotations spent on a weight's transforms are
    tagged ``transform:<name>``.
    """

    def __init__(self, rt: Runtime, model: RnnModel):
        self.rt = rt
        self.model = model
        self._mats: dict[str, PackedMatrix] = {}
        self._prep: dict[str, Prepared] = {}

    def matrix(self, name: str) -> PackedMatrix:
        if name in self.model.params:
            return self.model.params[name]
        if name not in self._mats:
            if not name.endswith("t"):
                raise KeyError(name)
            base = self.model.params[name[:-1]]
            self._mats[name] = self.rt.tr(base, f"transpose:{name[:-1]}")
        return self._mats[name]

    def right(self, name: str) -> Prepared:
        if self.rt.cached and name in self._prep:
            return self._prep[name]
        p = prepare(self.rt.engine, self.matrix(name), "right", self.rt.mode, f"transform:{name}")
        if self.rt.cached:
            self._prep[name] = p
        return p


@dataclass
class BatchPlan:
    """Layouts and plaintext helpers for one batch size."""

    rt: Runtime
    n_rows: int
    _layouts: dict = field(default_factory=dict)
    _bcast: PackedMatrix | None = None
    _sum: PackedMatrix | None = None

    def layout(self, cols: int) -> BlockLayout:
        if cols not in self._layouts:
            self._layouts[cols] = batch_layout(self.rt.delta, self.n_rows, cols, self.rt.engine.params, self.rt.parallel)
        return self._layouts[cols]

    @property
    def rows(self) -> int:
        return self.layout(1).rows

    def broadcaster(self) -> PackedMatrix:
        # live-row indicator column: (p, rows, 1) @ bias row (p, 1, n)
        if self._bcast is None:
            lay = self.layout(1)
            mask = row_mask(self.n_rows, lay)[:, :, None]
            self._bcast = pack(self.rt.engine, mask, lay, encrypt=False)
        return self._bcast

    def summer(self) -> PackedMatrix:
        # (p, 1, rows) all-ones row that sums a column into a bias row
        if self._sum is None:
            lay = BlockLayout(self.rt.delta, 1, self.rows, self.rt.parallel, self.rt.engine.params)
            self._sum = pack(self.rt.engine, np.ones((self.rt.parallel, 1, self.rows)), lay, encrypt=False)
        return self._sum

    def pack_inputs(self, X: np.ndarray, encrypt: bool = False) -> list[PackedMatrix]:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 3 or X.shape[0] != self.n_rows:
            raise DimensionError(f"expected inputs of shape ({self.n_rows}, T, d), got {X.shape}")
        lay = self.layout(X.shape[2])
        return [pack_rows(self.rt.engine, X[:, t], lay, encrypt) for t in range(X.shape[1])]

    def pack_targets(self, Y: np.ndarray, T: int) -> dict[int, PackedMatrix]:
        Y = np.asarray(Y, dtype=np.float64)
        if Y.ndim != 3 or Y.shape[0] != self.n_rows:
            raise DimensionError(f"expected targets of shape ({self.n_rows}, kappa, o), got {Y.shape}")
        kappa = Y.shape[1]
        lay = self.layout(Y.shape[2])
        return {T - kappa + j: pack_rows(self.rt.engine, Y[:, j], lay, encrypt=False) for j in range(kappa)}

    def zeros(self, cols: int) -> PackedMatrix:
        lay = self.layout(cols)
        eng = self.rt.engine
        z = eng.zeros(encrypted=True)
        gr, gc = lay.grid
        return PackedMatrix(tuple(tuple(z for _ in range(gc)) for _ in range(gr)), lay)


@dataclass
class ForwardState:
    inputs: list
    hs: list
    zs: list
    preds: dict
    extra: dict = field(default_factory=dict)
    transposed: dict = field(default_factory=dict)

    @property
    def last(self) -> PackedMatrix:
        return self.hs[-1]


def _bias(rt: Runtime, plan: BatchPlan, model: RnnModel, name: str):
    b = model.params.get(name)
    if b is None:
        return None
    return rt.mm(plan.broadcaster(), b)


def _plus(rt, A, B):
    return A if B is None else rt.add(A, B)


def _acc(acc: dict, key: str, value: PackedMatrix, rt: Runtime):
    acc[key] = value if key not in acc else rt.add(acc[key], value)


def _tr_state(rt: Runtime, st: ForwardState, key, M: PackedMatrix) -> PackedMatrix:
    if key not in st.transposed:
        st.transposed[key] = rt.tr(M)
    return st.transposed[key]


# -- Elman --------------------------------------------------------------------


def elman_forward(rt: Runtime, model: RnnModel, xs, h_prev: PackedMatrix, plan: BatchPlan,
                  kappa: int = 1, weights: WeightCache | None = None) -> ForwardState:
    wc = weights or WeightCache(rt, model)
    T = len(xs)
    led = rt.engine.ledger
    st = ForwardState(xs, [h_prev], [], {})
    bh = _bias(rt, plan, model, "b_h")
    by = _bias(rt, plan, model, "b_y") if kappa else None
    for t in range(T):
        with led.tag(f"forward:{t}"):
            z = rt.add(rt.mm(st.hs[-1], wc.right("W")), rt.mm(xs[t], wc.right("U")))
            z = _plus(rt, z, bh)
            h = rt.boot(rt.apply(rt.act, z))
            st.zs.append(z)
            st.hs.append(h)
            if t >= T - kappa:
                st.preds[t] = _plus(rt, rt.mm(h, wc.right("V")), by)
    return st


def elman_backward(rt: Runtime, model: RnnModel, st: ForwardState, ys: dict, plan: BatchPlan,
                   weights: WeightCache | None = None) -> dict:
    wc = weights or WeightCache(rt, model)
    T = len(st.inputs)
    led = rt.engine.ledger
    acc: dict[str, PackedMatrix] = {}
    dh_next = None
    for t in reversed(range(T)):
        with led.tag(f"backward:{t}"):
            h_t, h_prev = st.hs[t + 1], st.hs[t]
            dh = dh_next
            if t in st.preds:
                if t not in ys:
                    raise StateError(f"no target for output step {t}")
                dy = rt.sub(st.preds[t], ys[t])
                dh = _plus(rt, rt.mm(dy, wc.right("Vt")), dh)
                inter = rt.boot(rt.mm(_tr_state(rt, st, t + 1, h_t), dy))
                _acc(acc, "V", inter, rt)
                _acc(acc, "b_y", dy, rt)
            dz = rt.boot(rt.emul(dh, rt.dapply(rt.act, h_t, st.zs[t])))
            dh_next = rt.mm(dz, wc.right("Wt"))
            _acc(acc, "U", rt.mm(rt.tr(st.inputs[t]), dz), rt)
            _acc(acc, "W", rt.mm(_tr_state(rt, st, t, h_prev), dz), rt)
            _acc(acc, "b_h", dz, rt)
    return _finish(rt, model, acc, plan)


def _finish(rt: Runtime, model: RnnModel, acc: dict, plan: BatchPlan) -> dict:
    """Merge per-slice partial gradients; bias sums collapse onto a bias row."""
    eng = rt.engine
    out = {}
    with eng.ledger.tag("reduce"):
        for name in model.params:
            part = acc[name]
            if name.startswith("b_"):
                part = rt.mm(plan.summer(), part)
            if not part.layout.full:
                part = rt.ready(part, 1)
            out[name] = reduce_slices(eng, part)
    return out


# -- Jordan -------------------------------------------------------------------


def jordan_forward(rt: Runtime, model: RnnModel, xs, y_prev: PackedMatrix, plan: BatchPlan,
                   kappa: int = 1, weights: WeightCache | None = None) -> ForwardState:
    wc = weights or WeightCache(rt, model)
    T = len(xs)
    led = rt.engine.ledger
    st = ForwardState(xs, [], [], {})
    st.extra["ps"] = [y_prev]
    bh = _bias(rt, plan, model, "b_h")
    by = _bias(rt, plan, model, "b_y")
    for t in range(T):
        with led.tag(f"forward:{t}"):
            z = rt.add(rt.mm(st.extra["ps"][-1], wc.right("W")), rt.mm(xs[t], wc.right("U")))
            z = _plus(rt, z, bh)
            h = rt.boot(rt.apply(rt.act, z))
            p = _plus(rt, rt.mm(h, wc.right("V")), by)
            st.zs.append(z)
            st.hs.append(h)
            st.extra["ps"].append(p)
            if t >= T - kappa:
                st.preds[t] = p
    return st


def jordan_backward(rt: Runtime, model: RnnModel, st: ForwardState, ys: dict, plan: BatchPlan,
                    weights: WeightCache | None = None) -> dict:
    wc = weights or WeightCache(rt, model)
    T = len(st.inputs)
    led = rt.engine.ledger
    ps = st.extra["ps"]
    acc: dict[str, PackedMatrix] = {}
    dp_next = None
    for t in reversed(range(T)):
        with led.tag(f"backward:{t}"):
            h_t = st.hs[t]
            dy = dp_next
            if t in st.preds:
                dy = _plus(rt, rt.sub(st.preds[t], ys[t]), dy)
            dh = rt.mm(dy, wc.right("Vt"))
            _acc(acc, "V", rt.mm(_tr_state(rt, st, ("h", t), h_t), dy), rt)
            _acc(acc, "b_y", dy, rt)
            dz = rt.boot(rt.emul(dh, rt.dapply(rt.act, h_t, st.zs[t])))
            dp_next = rt.mm(dz, wc.right("Wt"))
            _acc(acc, "U", rt.mm(rt.tr(st.inputs[t]), dz), rt)
            _acc(acc, "W", rt.mm(_tr_state(rt, st, ("p", t), ps[t]), dz), rt)
            _acc(acc, "b_h", dz, rt)
    return _finish(rt, model, acc, plan)


# -- GRU ----------------------------------------------------------------------


def gru_forward(rt: Runtime, model: RnnModel, xs, h_prev: PackedMatrix, plan: BatchPlan,
                kappa: int = 1, weights: WeightCache | None = None) -> ForwardState:
    wc = weights or WeightCache(rt, model)
    T = len(xs)
    led = rt.engine.ledger
    st = ForwardState(xs, [h_prev], [], {})
    st.extra.update(z=[], r=[], n=[], rh=[], n_pre=[])
    bz, br, bn = (_bias(rt, plan, model, f"b_{g}") for g in "zrn")
    by = _bias(rt, plan, model, "b_y")
    for t in range(T):
        with led.tag(f"forward:{t}"):
            hp, x = st.hs[-1], xs[t]
            z = rt.apply(rt.gate, _plus(rt, rt.add(rt.mm(hp, wc.right("W_z")), rt.mm(x, wc.right("U_z"))), bz))
            r = rt.apply(rt.gate, _plus(rt, rt.add(rt.mm(hp, wc.right("W_r")), rt.mm(x, wc.right("U_r"))), br))
            rh = rt.emul(r, hp)
            n_pre = _plus(rt, rt.add(rt.mm(rh, wc.right("W_n")), rt.mm(x, wc.right("U_n"))), bn)
            n = rt.apply(rt.act, n_pre)
            h = rt.add(rt.emul(z, hp), rt.emul(rt.one_minus(z), n))
            h = rt.boot(h)
            for k, v in (("z", z), ("r", r), ("n", n), ("rh", rh), ("n_pre", n_pre)):
                st.extra[k].append(v)
            st.hs.append(h)
            if t >= T - kappa:
                st.preds[t] = _plus(rt, rt.mm(h, wc.right("V")), by)
    return st


def gru_backward(rt: Runtime, model: RnnModel, st: ForwardState, ys: dict, plan: BatchPlan,
                 weights: WeightCache | None = None) -> dict:
    wc = weights or WeightCache(rt, model)
    T = len(st.inputs)
    led = rt.engine.ledger
    ex = st.extra
    acc: dict[str, PackedMatrix] = {}
    dh_next = None
    for t in reversed(range(T)):
        with led.tag(f"backward:{t}"):
            x = st.inputs[t]
            hp, h_t = st.hs[t], st.hs[t + 1]
            z, r, n, rh = ex["z"][t], ex["r"][t], ex["n"][t], ex["rh"][t]
            dh = dh_next
            if t in st.preds:
                dy = rt.sub(st.preds[t], ys[t])
                dh = _plus(rt, rt.mm(dy, wc.right("Vt")), dh)
                _acc(acc, "V", rt.boot(rt.mm(_tr_state(rt, st, t + 1, h_t), dy)), rt)
                _acc(acc, "b_y", dy, rt)
            dn = rt.emul(rt.one_minus(z), dh)
            dn_raw = rt.emul(rt.dapply(rt.act, n, ex["n_pre"][t]), dn)
            dnw = rt.mm(dn_raw, wc.right("W_nt"))
            dr = rt.emul(dnw, hp)
            dr_raw = rt.emul(rt.dapply(rt.gate, r, None), dr)
            dzg = rt.emul(rt.sub(hp, n), dh)
            dz_raw = rt.emul(rt.dapply(rt.gate, z, None), dzg)
            dh_h = rt.emul(dh, z)
            dh_z = rt.mm(dz_raw, wc.right("W_zt"))
            dh_r = rt.mm(dr_raw, wc.right("W_rt"))
            dh_n = rt.emul(r, dnw)
            dh_next = rt.add(rt.add(dh_z, dh_h), rt.add(dh_n, dh_r))
            xt = rt.tr(x)
            hpt = _tr_state(rt, st, t, hp)
            _acc(acc, "U_z", rt.mm(xt, dz_raw), rt)
            _acc(acc, "U_r", rt.mm(xt, dr_raw), rt)
            _acc(acc, "U_n", rt.mm(xt, dn_raw), rt)
            _acc(acc, "W_z", rt.mm(hpt, dz_raw), rt)
            _acc(acc, "W_r", rt.mm(hpt, dr_raw), rt)
            _acc(acc, "W_n", rt.mm(rt.tr(rh), dn_raw), rt)
            _acc(acc, "b_z", dz_raw, rt)
            _acc(acc, "b_r", dr_raw, rt)
            _acc(acc, "b_n", dn_raw, rt)
    return _finish(rt, model, acc, plan)


# -- LSTM (forward only) ------------------------------------------------------


def lstm_forward(rt: Runtime, model: RnnModel, xs, h_prev: PackedMatrix, c_prev: PackedMatrix,
                 plan: BatchPlan, weights: WeightCache | None = None):
    """Returns (hidden states per step, c_last, h_last)."""
    wc = weights or WeightCache(rt, model)
    bias = {g: _bias(rt, plan, model, f"b_{g}") for g in "fioc"}
    hs = []
    hp, cp = h_prev, c_prev
    for x in xs:
        pre = {
            g: _plus(rt, rt.add(rt.mm(x, wc.right(f"W_{g}")), rt.mm(hp, wc.right(f"U_{g}"))), bias[g])
            for g in "fioc"
        }
        f, i, o = (rt.apply(rt.gate, pre[g]) for g in "fio")
        ca = rt.apply(rt.act, pre["c"])
        c = rt.add(rt.emul(f, cp), rt.emul(i, ca))
        c = rt.boot(c)
        if rt.lstm_conventional:
            h = rt.emul(o, rt.apply(rt.act, c))
        else:
            h = rt.add(rt.emul(o, cp), rt.apply(rt.act, c))
        h = rt.boot(h)
        hs.append(h)
        hp, cp = h, c
    return hs, cp, hp


# -- dispatch -----------------------------------------------------------------

_PASSES = {
    "elman": (elman_forward, elman_backward),
    "jordan": (jordan_forward, jordan_backward),
    "gru": (gru_forward, gru_backward),
}


def initial_state(model: RnnModel, plan: BatchPlan) -> PackedMatrix:
    cols = model.outputs if model.arch == "jordan" else model.hidden
    return plan.zeros(cols)


def forward(rt: Runtime, model: RnnModel, xs, state, plan: BatchPlan, kappa: int = 1,
            weights: WeightCache | None = None) -> ForwardState:
    if model.arch not in _PASSES:
        raise ValueError(f"no training pass for architecture {model.arch!r}")
    fwd, _ = _PASSES[model.arch]
    return fwd(rt, model, xs, state if state is not None else initial_state(model, plan), plan, kappa, weights)


def carried_state(model: RnnModel, st: ForwardState) -> PackedMatrix:
    return st.extra["ps"][-1] if model.arch == "jordan" else st.hs[-1]


def local_iteration(rt: Runtime, model: RnnModel, X: np.ndarray, Y: np.ndarray, state=None):
    """Forward and backward pass on one mini-batch.

    Returns (gradients, carried state). Gradients are merged across slices
    and replicated like the weights.
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    plan = BatchPlan(rt, X.shape[0])
    wc = WeightCache(rt, model)
    xs = plan.pack_inputs(X)
    ys = plan.pack_targets(Y, X.shape[1])
    st = forward(rt, model, xs, state, plan, Y.shape[1], wc)
    _, bwd = _PASSES[model.arch]
    grads = bwd(rt, model, st, ys, plan, wc)
    return grads, carried_state(model, st)
