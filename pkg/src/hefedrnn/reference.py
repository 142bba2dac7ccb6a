"""Plaintext numpy implementations used as oracles and as the exact baseline.

Everything here works on ordinary arrays: inputs X are (b, T, d), targets Y
are (b, kappa, o) for the last kappa timesteps, and the loss is half the
summed squared error.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

ARCHITECTURES = ("elman", "jordan", "gru", "lstm")


def param_shapes(arch: str, d: int, h: int, o: int, use_bias: bool = True) -> dict[str, tuple[int, int]]:
    """Name -> (rows, cols). Biases are 1 x n rows."""
    if arch == "elman":
        s = {"U": (d, h), "W": (h, h), "V": (h, o)}
        b = {"b_h": (1, h), "b_y": (1, o)}
    elif arch == "jordan":
        s = {"U": (d, h), "W": (o, h), "V": (h, o)}
        b = {"b_h": (1, h), "b_y": (1, o)}
    elif arch == "gru":
        s = {f"U_{g}": (d, h) for g in "zrn"}
        s.update({f"W_{g}": (h, h) for g in "zrn"})
        s["V"] = (h, o)
        b = {"b_z": (1, h), "b_r": (1, h), "b_n": (1, h), "b_y": (1, o)}
    elif arch == "lstm":
        s = {f"W_{g}": (d, h) for g in "fioc"}
        s.update({f"U_{g}": (h, h) for g in "fioc"})
        s["V"] = (h, o)
        b = {f"b_{g}": (1, h) for g in "fioc"}
        b["b_y"] = (1, o)
    else:
        raise ValueError(f"unknown architecture {arch!r}")
    if use_bias:
        s.update(b)
    return s


def init_weights(arch: str, d: int, h: int, o: int, rng: np.random.Generator, use_bias: bool = True):
    """Uniform(-1/sqrt(h), 1/sqrt(h)) weights, zero biases."""
    lim = 1.0 / np.sqrt(h)
    out = {}
    for name, shape in param_shapes(arch, d, h, o, use_bias).items():
        out[name] = np.zeros(shape) if name.startswith("b_") else rng.uniform(-lim, lim, size=shape)
    return out


@dataclass(frozen=True)
class Act:
    """Plain activation pair; ``grad_out`` gives the derivative from the output value."""

    f: Callable
    df: Callable
    grad_out: Callable | None = None


def _sig(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


TANH = Act(np.tanh, lambda z: 1.0 - np.tanh(z) ** 2, lambda y: 1.0 - y * y)
SIGMOID = Act(_sig, lambda z: _sig(z) * (1 - _sig(z)), lambda y: y * (1.0 - y))


def _bias(params, name, n):
    b = params.get(name)
    return 0.0 if b is None else b.reshape(1, n)


def _dphi(act: Act, z, h, derivative):
    if derivative == "identity" and act.grad_out is not None:
        return act.grad_out(h)
    return act.df(z)


def elman(params, X, Y=None, h0=None, act: Act = TANH, derivative="identity", kappa=None):
    """Forward (and backward when Y is given). Returns dict with preds, loss, grads, h_last."""
    b, T, _ = X.shape
    U, W, V = params["U"], params["W"], params["V"]
    h, o = W.shape[0], V.shape[1]
    kappa = kappa or (1 if Y is None else Y.shape[1])
    hs = [np.zeros((b, h)) if h0 is None else h0]
    zs, ps = [], {}
    for t in range(T):
        z = hs[-1] @ W + X[:, t] @ U + _bias(params, "b_h", h)
        zs.append(z)
        hs.append(act.f(z))
        if t >= T - kappa:
            ps[t] = hs[-1] @ V + _bias(params, "b_y", o)
    out = {"preds": np.stack([ps[t] for t in sorted(ps)], axis=1), "h_last": hs[-1]}
    if Y is None:
        return out
    g = {k: np.zeros_like(v) for k, v in params.items()}
    loss = 0.0
    dh_next = np.zeros((b, h))
    for t in reversed(range(T)):
        dh = dh_next
        if t in ps:
            dy = ps[t] - Y[:, t - (T - kappa)]
            loss += 0.5 * np.sum(dy**2)
            dh = dh + dy @ V.T
            g["V"] += hs[t + 1].T @ dy
            if "b_y" in g:
                g["b_y"] += dy.sum(0, keepdims=True)
        dz = dh * _dphi(act, zs[t], hs[t + 1], derivative)
        g["U"] += X[:, t].T @ dz
        g["W"] += hs[t].T @ dz
        if "b_h" in g:
            g["b_h"] += dz.sum(0, keepdims=True)
        dh_next = dz @ W.T
    out.update(loss=loss, grads=g)
    return out


def jordan(params, X, Y=None, y0=None, act: Act = TANH, derivative="identity", kappa=None):
    b, T, _ = X.shape
    U, W, V = params["U"], params["W"], params["V"]
    h, o = U.shape[1], V.shape[1]
    kappa = kappa or (1 if Y is None else Y.shape[1])
    ps = [np.zeros((b, o)) if y0 is None else y0]
    hs, zs = [], []
    for t in range(T):
        z = ps[-1] @ W + X[:, t] @ U + _bias(params, "b_h", h)
        zs.append(z)
        hs.append(act.f(z))
        ps.append(hs[-1] @ V + _bias(params, "b_y", o))
    out = {"preds": np.stack(ps[T - kappa + 1 :], axis=1), "h_last": ps[-1]}
    if Y is None:
        return out
    g = {k: np.zeros_like(v) for k, v in params.items()}
    loss = 0.0
    dp_next = np.zeros((b, o))
    for t in reversed(range(T)):
        dp = dp_next
        if t >= T - kappa:
            err = ps[t + 1] - Y[:, t - (T - kappa)]
            loss += 0.5 * np.sum(err**2)
            dp = dp + err
        g["V"] += hs[t].T @ dp
        if "b_y" in g:
            g["b_y"] += dp.sum(0, keepdims=True)
        dz = (dp @ V.T) * _dphi(act, zs[t], hs[t], derivative)
        g["U"] += X[:, t].T @ dz
        g["W"] += ps[t].T @ dz
        if "b_h" in g:
            g["b_h"] += dz.sum(0, keepdims=True)
        dp_next = dz @ W.T
    out.update(loss=loss, grads=g)
    return out


def gru(params, X, Y=None, h0=None, act: Act = TANH, gate: Act = SIGMOID, derivative="identity", kappa=None):
    b, T, _ = X.shape
    h = params["W_z"].shape[0]
    o = params["V"].shape[1]
    kappa = kappa or (1 if Y is None else Y.shape[1])
    P = params
    hs = [np.zeros((b, h)) if h0 is None else h0]
    cache = []
    ps = {}
    for t in range(T):
        x, hp = X[:, t], hs[-1]
        az = hp @ P["W_z"] + x @ P["U_z"] + _bias(P, "b_z", h)
        ar = hp @ P["W_r"] + x @ P["U_r"] + _bias(P, "b_r", h)
        z, r = gate.f(az), gate.f(ar)
        an = (r * hp) @ P["W_n"] + x @ P["U_n"] + _bias(P, "b_n", h)
        n = act.f(an)
        hs.append(z * hp + (1 - z) * n)
        cache.append((az, ar, an, z, r, n))
        if t >= T - kappa:
            ps[t] = hs[-1] @ P["V"] + _bias(P, "b_y", o)
    out = {"preds": np.stack([ps[t] for t in sorted(ps)], axis=1), "h_last": hs[-1]}
    if Y is None:
        return out
    g = {k: np.zeros_like(v) for k, v in params.items()}
    loss = 0.0
    dh_next = np.zeros((b, h))
    for t in reversed(range(T)):
        x, hp = X[:, t], hs[t]
        az, ar, an, z, r, n = cache[t]
        dh = dh_next
        if t in ps:
            dy = ps[t] - Y[:, t - (T - kappa)]
            loss += 0.5 * np.sum(dy**2)
            dh = dh + dy @ P["V"].T
            g["V"] += hs[t + 1].T @ dy
            if "b_y" in g:
                g["b_y"] += dy.sum(0, keepdims=True)
        d_an = dh * (1 - z) * _dphi(act, an, n, derivative)
        d_az = dh * (hp - n) * _dphi(gate, az, z, derivative)
        d_rh = d_an @ P["W_n"].T
        d_ar = d_rh * hp * _dphi(gate, ar, r, derivative)
        for gname, da in (("z", d_az), ("r", d_ar), ("n", d_an)):
            g[f"U_{gname}"] += x.T @ da
            if f"b_{gname}" in g:
                g[f"b_{gname}"] += da.sum(0, keepdims=True)
        g["W_z"] += hp.T @ d_az
        g["W_r"] += hp.T @ d_ar
        g["W_n"] += (r * hp).T @ d_an
        dh_next = dh * z + d_rh * r + d_az @ P["W_z"].T + d_ar @ P["W_r"].T
    out.update(loss=loss, grads=g)
    return out


def lstm(params, X, h0=None, c0=None, act: Act = TANH, gate: Act = SIGMOID, conventional=False):
    """LSTM forward. By default the hidden state follows h = o*c_prev + phi(c)."""
    b, T, _ = X.shape
    h = params["U_f"].shape[0]
    P = params
    hp = np.zeros((b, h)) if h0 is None else h0
    cp = np.zeros((b, h)) if c0 is None else c0
    hs = []
    for t in range(T):
        x = X[:, t]
        f = gate.f(x @ P["W_f"] + hp @ P["U_f"] + _bias(P, "b_f", h))
        i = gate.f(x @ P["W_i"] + hp @ P["U_i"] + _bias(P, "b_i", h))
        o = gate.f(x @ P["W_o"] + hp @ P["U_o"] + _bias(P, "b_o", h))
        ca = act.f(x @ P["W_c"] + hp @ P["U_c"] + _bias(P, "b_c", h))
        c = f * cp + i * ca
        hn = o * act.f(c) if conventional else o * cp + act.f(c)
        hs.append(hn)
        hp, cp = hn, c
    return {"hs": np.stack(hs, axis=1), "h_last": hp, "c_last": cp}


_RUNNERS = {"elman": elman, "jordan": jordan, "gru": gru}


def run(arch, params, X, Y=None, state=None, act: Act = TANH, gate: Act = SIGMOID, derivative="identity",
        kappa=None):
    if arch not in _RUNNERS:
        raise ValueError(f"architecture {arch!r} has no training pass")
    if arch == "gru":
        return gru(params, X, Y, state, act, gate, derivative, kappa)
    return _RUNNERS[arch](params, X, Y, state, act, derivative, kappa)


def loss(arch, params, X, Y, state=None, act: Act = TANH, gate: Act = SIGMOID):
    preds = run(arch, params, X, None, state, act, gate, kappa=Y.shape[1])["preds"]
    return 0.5 * float(np.sum((preds - Y) ** 2))


def batch_indices(n: int, b: int, k: int) -> np.ndarray:
    """Indices of the k-th cyclic mini-batch of size b over n samples."""
    return (k * b + np.arange(b)) % n


def fedavg(arch, init, shards, global_iters, lr, batch, act: Act = TANH, gate: Act = SIGMOID,
           clip: Callable | None = None, mode="fedavg-grad", local_iters=1, carry_state=False,
           derivative="identity"):
    """Plaintext federated training with the same schedule as the encrypted pipeline.

    ``shards`` is a list of (X, Y) pairs. Gradients are averaged as
    sum_i (n_i / n) * g_i / b, clipped element-wise, then applied with ``lr``.
    """
    params = {k: v.copy() for k, v in init.items()}
    sizes = np.array([len(x) for x, _ in shards], dtype=float)
    weights = sizes / sizes.sum()
    states = [None] * len(shards)
    step = 0
    for _ in range(global_iters):
        if mode == "fedavg-grad":
            agg = {k: np.zeros_like(v) for k, v in params.items()}
            for i, (X, Y) in enumerate(shards):
                idx = batch_indices(len(X), batch, step)
                res = run(arch, params, X[idx], Y[idx], states[i], act, gate, derivative)
                if carry_state:
                    states[i] = res["h_last"]
                for k in agg:
                    agg[k] += weights[i] * res["grads"][k] / batch
            step += 1
            for k in params:
                g = agg[k] if clip is None else clip(agg[k])
                params[k] = params[k] - lr * g
        elif mode == "fedavg-model":
            avg = {k: np.zeros_like(v) for k, v in params.items()}
            for i, (X, Y) in enumerate(shards):
                local = {k: v.copy() for k, v in params.items()}
                for li in range(local_iters):
                    idx = batch_indices(len(X), batch, step + li)
                    res = run(arch, local, X[idx], Y[idx], states[i], act, gate, derivative)
                    if carry_state:
                        states[i] = res["h_last"]
                    for k in local:
                        local[k] = local[k] - lr * res["grads"][k] / batch
                for k in avg:
                    avg[k] += weights[i] * local[k]
            step += local_iters
            for k in params:
                if clip is None:
                    params[k] = avg[k]
                else:
                    params[k] = params[k] - lr * clip((params[k] - avg[k]) / lr)
        else:
            raise ValueError(f"unknown mode {mode!r}")
    return params


def centralized_step(arch, params, batches, lr, act: Act = TANH, gate: Act = SIGMOID):
    """One gradient-descent step on the concatenation of several mini-batches."""
    X = np.concatenate([x for x, _ in batches])
    Y = np.concatenate([y for _, y in batches])
    res = run(arch, params, X, Y, None, act, gate)
    return {k: params[k] - lr * res["grads"][k] / len(X) for k in params}
