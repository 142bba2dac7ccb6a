"""Command-line front end.

    hefedrnn train       --config run.ini --out DIR
    hefedrnn predict     --config run.ini --out DIR --model DIR/model.npz
    hefedrnn fit-approx  --function soft-clip --degree 7 --interval -60 60 --out DIR
    hefedrnn bench       --sizes 32,64 --delta 32 --count 8 --out DIR
    hefedrnn cost-report --config run.ini --out DIR

Every run writes manifest.ini (effective config, seed, version) next to its
records. Records are comma-separated with a header row; floats use repr so
output is locale independent and byte-stable.

The output directory may also come from $HEFEDRNN_OUT; nothing else is read
from the environment.

Exit codes: 0 ok, 2 configuration error, 3 invariant violation, 4 data error.
"""

from __future__ import annotations

import argparse
import configparser
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, data, reference
from .approx import _ACTIVATIONS, CLIP_VARIANTS, ClipSpec, fit, load_poly, save_poly
from .costmodel import CostReport, choose_delta, compare_packings
from .exceptions import ConfigError, DataError, DimensionError, HeFedError, LayoutError
from .federation import Federation, ModelConfig, TrainConfig

EXIT_OK, EXIT_CONFIG, EXIT_INVARIANT, EXIT_DATA = 0, 2, 3, 4

DEFAULTS = {
    "model": {
        "arch": "elman",
        "hidden": "32",
        "activation": "tanh",
        "degree": "7",
        "interval": "",
        "bias": "yes",
        "derivative": "identity",
    },
    "train": {
        "global_iters": "200",
        "local_iters": "1",
        "lr": "0.1",
        "batch": "256",
        "mode": "fedavg-grad",
        "clip": "soft",
        "clip_threshold": "5",
        "clip_degree": "7",
        "clip_interval": "-60 60",
        "clip_file": "",
        "ring_log": "14",
        "levels": "9",
        "scale_log": "31",
        "quantize": "yes",
        "delta": "",
        "topology": "tree",
        "cached_transforms": "no",
        "transform_mode": "naive",
        "policy": "eager",
        "carry_state": "no",
        "eval_every": "50",
        "exact_activations": "no",
    },
    "data": {
        "source": "synth",
        "kind": "sine",
        "length": "8000",
        "noise": "0.05",
        "period": "50",
        "paths": "",
        "schema": "plain",
        "timesteps": "4",
        "kappa": "1",
        "split": "0.8",
        "parties": "10",
        "shard": "even",
        "task": "regression",
    },
    "run": {"seed": "0"},
}


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def write_records(path: Path, header, rows):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for r in rows:
            fh.write(",".join(_fmt(v) for v in r) + "\n")


def read_config(path: str | None, args) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    cp.read_dict(DEFAULTS)
    if path:
        try:
            with open(path, encoding="utf-8") as fh:
                cp.read_file(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
        for sec in cp.sections():
            if sec not in DEFAULTS:
                raise ConfigError(f"unknown config section [{sec}]")
            for key in cp[sec]:
                if key not in DEFAULTS[sec]:
                    raise ConfigError(f"unknown config key {sec}.{key}")
    # flag overrides
    if getattr(args, "seed", None) is not None:
        cp["run"]["seed"] = str(args.seed)
    if getattr(args, "exact_activations", False):
        cp["train"]["exact_activations"] = "yes"
    if getattr(args, "no_quantize", False):
        cp["train"]["quantize"] = "no"
    if getattr(args, "cached_transforms", False):
        cp["train"]["cached_transforms"] = "yes"
    if getattr(args, "topology", None):
        cp["train"]["topology"] = args.topology
    if getattr(args, "mode", None):
        cp["train"]["mode"] = args.mode
    return cp


def _get(cp, sec, key, kind=str):
    raw = cp[sec][key].strip()
    try:
        if kind is bool:
            return cp.getboolean(sec, key)
        if kind == "floats":
            return tuple(float(v) for v in raw.replace(",", " ").split()) if raw else None
        if kind == "optint":
            return int(raw) if raw else None
        return kind(raw)
    except ValueError:
        raise ConfigError(f"{sec}.{key}: cannot parse {raw!r} as {getattr(kind, '__name__', kind)}") from None


def build_configs(cp) -> tuple[ModelConfig, TrainConfig]:
    interval = _get(cp, "model", "interval", "floats")
    if interval is not None and len(interval) != 2:
        raise ConfigError("model.interval: expected two numbers")
    clip_iv = _get(cp, "train", "clip_interval", "floats")
    if clip_iv is None or len(clip_iv) != 2:
        raise ConfigError("train.clip_interval: expected two numbers")
    variant = _get(cp, "train", "clip")
    if variant not in (*CLIP_VARIANTS, "none"):
        raise ConfigError(f"train.clip: unknown variant {variant!r}")
    act = _get(cp, "model", "activation")
    if act not in _ACTIVATIONS:
        raise ConfigError(f"model.activation: unknown activation {act!r}")
    try:
        clip = None if variant == "none" else ClipSpec(_get(cp, "train", "clip_threshold", float), variant)
    except ValueError as exc:
        raise ConfigError(f"train.clip_threshold: {exc}") from None
    clip_file = _get(cp, "train", "clip_file")
    clip_approx = None
    if clip_file:
        try:
            clip_approx = load_poly(clip_file)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"train.clip_file: {exc}") from None
    mc = ModelConfig(
        arch=_get(cp, "model", "arch"),
        hidden=_get(cp, "model", "hidden", int),
        outputs=1,
        activation=act,
        act_degree=_get(cp, "model", "degree", int),
        act_interval=interval,
        exact_activations=_get(cp, "train", "exact_activations", bool),
        use_bias=_get(cp, "model", "bias", bool),
        derivative=_get(cp, "model", "derivative"),
    )
    tc = TrainConfig(
        global_iters=_get(cp, "train", "global_iters", int),
        local_iters=_get(cp, "train", "local_iters", int),
        lr=_get(cp, "train", "lr", float),
        batch=_get(cp, "train", "batch", int),
        mode=_get(cp, "train", "mode"),
        clip=clip,
        clip_degree=_get(cp, "train", "clip_degree", int),
        clip_interval=clip_iv,
        clip_approx=clip_approx,
        ring_log=_get(cp, "train", "ring_log", int),
        levels=_get(cp, "train", "levels", int),
        scale_log=_get(cp, "train", "scale_log", int),
        quantize=_get(cp, "train", "quantize", bool),
        delta=_get(cp, "train", "delta", "optint"),
        topology=_get(cp, "train", "topology"),
        cached_transforms=_get(cp, "train", "cached_transforms", bool),
        transform_mode=_get(cp, "train", "transform_mode"),
        policy=_get(cp, "train", "policy"),
        carry_state=_get(cp, "train", "carry_state", bool),
    )
    return mc, tc


def load_dataset(cp, seed: int):
    """Returns (per-party training sets, pooled test set, task)."""
    src = _get(cp, "data", "source")
    T = _get(cp, "data", "timesteps", int)
    kappa = _get(cp, "data", "kappa", int)
    frac = _get(cp, "data", "split", float)
    N = _get(cp, "data", "parties", int)
    mode = _get(cp, "data", "shard")
    task = _get(cp, "data", "task")
    rng = np.random.default_rng(seed)
    if src == "bcw":
        paths = _get(cp, "data", "paths").split()
        if len(paths) != 1:
            raise ConfigError("data.paths: bcw needs exactly one file")
        train, test = data.load_bcw(paths[0], seed)
        shards = data.shard(train, N, "half" if mode == "imbalanced" else "even", rng)
        return shards, test, "classification"
    if src == "synth":
        series = [data.synth(_get(cp, "data", "kind"), _get(cp, "data", "length", int),
                             _get(cp, "data", "noise", float), seed, _get(cp, "data", "period", float))]
        inputs = "all"
    elif src == "files":
        paths = _get(cp, "data", "paths").split()
        if not paths:
            raise ConfigError("data.paths: no input files given")
        schema = _get(cp, "data", "schema")
        series = [data.load_and_scale(p, schema) for p in paths]
        inputs = "features" if schema == "stock" else "all"
    else:
        raise ConfigError(f"data.source: unknown source {src!r}")
    train_sets, test_sets = [], []
    for s in series:
        head, tail = s.split(frac)
        train_sets.append(data.window(head, T, kappa, inputs=inputs))
        test_sets.append(data.window(tail, T, kappa, inputs=inputs))
    shards = data.shard(train_sets, N, "files" if mode == "imbalanced" else "even")
    return shards, data.concat(test_sets), task


def _version_manifest(out: Path, cp, command: str):
    m = configparser.ConfigParser(interpolation=None)
    m.read_dict({s: dict(cp[s]) for s in cp.sections()})
    m["manifest"] = {"command": command, "version": __version__, "seed": cp["run"]["seed"]}
    with open(out / "manifest.ini", "w", encoding="utf-8", newline="\n") as fh:
        m.write(fh)


def _ledger_rows(fed: Federation):
    rows = []
    for i, e in enumerate(fed.parties):
        rows += e.ledger.rows(f"party{i}")
    rows += fed.server.ledger.rows("server")
    rows += fed.ledger().rows("total")
    return rows


def _evaluate(fed: Federation, test: data.WindowedSet, task: str, oblivious: bool = False):
    pred = fed.predict_oblivious(test.inputs) if oblivious else fed.predict_decrypted(test.inputs)
    return data.metrics(pred.values, test.targets, task), pred


def cmd_train(args) -> int:
    cp = read_config(args.config, args)
    seed = _get(cp, "run", "seed", int)
    mc, tc = build_configs(cp)
    shards, test, task = load_dataset(cp, seed)
    outputs = shards[0].targets.shape[2]
    mc = ModelConfig(**{**mc.__dict__, "outputs": outputs})
    fed = Federation([s.as_pair() for s in shards], mc, tc, seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    every = max(1, _get(cp, "train", "eval_every", int))
    records = []
    names = ["accuracy"] if task == "classification" else ["mae", "r2"]

    def on_eval(f, it):
        m, _ = _evaluate(f, test, task)
        records.append([it, "test"] + [m[k] for k in names])

    fed.setup()
    fed.train(on_eval, every)
    _check_invariants(fed)
    write_records(out / "metrics.csv", ["iteration", "split"] + names, records)
    write_records(out / "ledger.csv", ["scope", "counter", "value"], _ledger_rows(fed))
    w = fed.weights()
    np.savez(out / "model.npz", arch=np.array(mc.arch), **{f"w_{k}": v for k, v in w.items()})
    _, pred = _evaluate(fed, test, task)
    write_records(out / "predictions.csv", ["row", "step", "output", "prediction", "target"],
                  _pred_rows(pred.values, test.targets))
    report = _cost_report(fed, cp)
    write_records(out / "cost.csv", ["group", "name", "value"], report.records())
    _version_manifest(out, cp, "train")
    if records:
        print(",".join(names), ",".join(_fmt(v) for v in records[-1][2:]))
    return EXIT_OK


def _check_invariants(fed: Federation):
    """Count identities that every run must satisfy."""
    led = fed.ledger()
    n_ct = fed.model.n_ciphertexts
    expected = 2 * n_ct * fed.topology.edges * fed.cfg.global_iters
    counted = led.tagged("fl", "messages")
    if counted != expected:
        raise AssertionError(f"model/gradient transfers: counted {counted}, expected {expected}")
    for k, v in fed.weights().items():
        if not np.all(np.isfinite(v)):
            raise AssertionError(f"weight {k} is not finite")


def _pred_rows(P, Y=None):
    rows = []
    for i in range(P.shape[0]):
        for t in range(P.shape[1]):
            for o in range(P.shape[2]):
                rows.append([i, t, o, float(P[i, t, o]), float(Y[i, t, o]) if Y is not None else ""])
    return rows


def _cost_report(fed: Federation, cp) -> CostReport:
    return CostReport(fed.cfg.batch, fed.features, fed.model_cfg.hidden, fed.model_cfg.outputs, fed.timesteps,
                      fed.delta, fed.cfg.ring_log, fed.topology.n_parties, fed.kappa, fed.cfg.local_iters,
                      fed.cfg.global_iters, fed.cfg.levels, fed.topology.edges, fed.model_cfg.arch)


def cmd_predict(args) -> int:
    cp = read_config(args.config, args)
    seed = _get(cp, "run", "seed", int)
    mc, tc = build_configs(cp)
    shards, test, task = load_dataset(cp, seed)
    try:
        saved = np.load(args.model)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read model {args.model}: {exc}") from None
    weights = {k[2:]: saved[k] for k in saved.files if k.startswith("w_")}
    arch = str(saved["arch"]) if "arch" in saved.files else mc.arch
    if arch != mc.arch:
        raise ConfigError(f"model file holds a {arch} network, config asks for {mc.arch}")
    mc = ModelConfig(**{**mc.__dict__, "outputs": shards[0].targets.shape[2]})
    expected = reference.param_shapes(arch, test.inputs.shape[2], mc.hidden, mc.outputs, mc.use_bias)
    got = {k: tuple(np.atleast_2d(v).shape) for k, v in weights.items()}
    if got != expected:
        raise DimensionError(f"model weights {got} do not match the configured shapes {expected}")
    tc = TrainConfig(**{**tc.__dict__, "global_iters": 0})
    fed = Federation([s.as_pair() for s in shards], mc, tc, seed)
    fed.initial_weights = {k: np.atleast_2d(v) for k, v in weights.items()}
    fed.setup()
    pred = fed.predict_decrypted(test.inputs) if args.decrypted else fed.predict_oblivious(test.inputs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_records(out / "predictions.csv", ["row", "step", "output", "prediction", "target"],
                  _pred_rows(pred.values, test.targets))
    m = data.metrics(pred.values, test.targets, task)
    write_records(out / "predict_summary.csv", ["key", "value"],
                  [["mode", "decrypted" if args.decrypted else "oblivious"], ["owner", pred.owner],
                   ["key_switches", pred.key_switches], *[[k, v] for k, v in m.items()]])
    _version_manifest(out, cp, "predict")
    return EXIT_OK


_FUNCTIONS = {
    "tanh": lambda m: np.tanh,
    "sigmoid": lambda m: _ACTIVATIONS["sigmoid"][0],
    "softplus": lambda m: _ACTIVATIONS["softplus"][0],
    "hard-clip": lambda m: ClipSpec(m, "hard"),
    "tanh-clip": lambda m: ClipSpec(m, "tanh"),
    "soft-clip": lambda m: ClipSpec(m, "soft"),
}


def cmd_fit(args) -> int:
    if args.function not in _FUNCTIONS:
        raise ConfigError(f"--function must be one of {sorted(_FUNCTIONS)}")
    lo, hi = args.interval
    poly = fit(_FUNCTIONS[args.function](args.threshold), (lo, hi), args.degree, args.method, args.function)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_poly(out / "poly.csv", poly)
    xs = np.linspace(lo, hi, args.points)
    ref = np.asarray(_FUNCTIONS[args.function](args.threshold)(xs), dtype=np.float64)
    val = poly(xs)
    write_records(out / "profile.csv", ["x", "reference", "approx", "error"],
                  [[x, r, v, v - r] for x, r, v in zip(xs, ref, val)])
    cp = configparser.ConfigParser(interpolation=None)
    cp["run"] = {"seed": "0"}
    cp["fit"] = {"function": args.function, "degree": str(args.degree), "interval": f"{lo!r} {hi!r}",
                 "method": args.method, "threshold": repr(args.threshold)}
    _version_manifest(out, cp, "fit-approx")
    print(f"max_error {poly.max_error!r} mean_abs_error {float(np.mean(np.abs(val - ref)))!r}")
    return EXIT_OK


def cmd_bench(args) -> int:
    try:
        sizes = [int(s) for s in args.sizes.split(",") if s]
    except ValueError:
        raise ConfigError(f"--sizes: cannot parse {args.sizes!r}") from None
    if not sizes:
        raise ConfigError("--sizes: no sizes given")
    seed = 0 if args.seed is None else args.seed
    keys = ["scheme", "ring_log", "parallel", "rotations", "amortized", "ciphertexts", "rotation_keys", "max_error",
            "ring_class", "ciphertext_class", "eval_key_class"]
    rows = []
    for n in sizes:
        try:
            found = compare_packings(n, args.delta, args.count, args.ring_log, args.transform_mode, seed, args.kind)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        for r in found:
            rows.append([args.kind, n, args.delta, args.count] + [r[k] for k in keys])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    header = ["kind", "n", "delta", "count"] + keys
    write_records(out / "bench.csv", header, rows)
    cp = configparser.ConfigParser(interpolation=None)
    cp["run"] = {"seed": str(seed)}
    cp["bench"] = {"kind": args.kind, "sizes": args.sizes, "delta": str(args.delta), "count": str(args.count),
                   "ring_log": str(args.ring_log), "transform_mode": args.transform_mode}
    _version_manifest(out, cp, "bench")
    for row in rows:
        print(f"n={row[1]} {row[4]:<10} rotations={row[7]} amortized={row[8]:.3f}")
    return EXIT_OK


def cmd_cost(args) -> int:
    cp = read_config(args.config, args)
    mc, tc = build_configs(cp)
    d = args.features
    b = tc.batch
    delta = tc.delta or choose_delta(tc.ring_log, b, 1.0)
    N = _get(cp, "data", "parties", int)
    edges = N - 1 if tc.topology == "tree" else N
    report = CostReport(b, d, mc.hidden, mc.outputs, _get(cp, "data", "timesteps", int), delta, tc.ring_log, N,
                        _get(cp, "data", "kappa", int), tc.local_iters, tc.global_iters, tc.levels, edges, mc.arch)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_records(out / "cost.csv", ["group", "name", "value"], report.records())
    _version_manifest(out, cp, "cost-report")
    print(report.table())
    return EXIT_OK


def _common(p: argparse.ArgumentParser, config=True):
    if config:
        p.add_argument("--config", help="INI file with [model], [train], [data], [run] sections")
    p.add_argument("--seed", type=int, default=None)
    env_out = os.environ.get("HEFEDRNN_OUT")
    p.add_argument("--out", default=env_out, required=env_out is None,
                   help="output directory (default: $HEFEDRNN_OUT)")
    p.add_argument("--exact-activations", action="store_true", help="exact activations at polynomial level cost")
    p.add_argument("--no-quantize", action="store_true", help="skip fixed-point rounding")
    p.add_argument("--cached-transforms", action="store_true", help="reuse weight transforms across timesteps")
    p.add_argument("--topology", choices=("tree", "star"))
    p.add_argument("--mode", choices=("fedavg-model", "fedavg-grad", "centralized"))


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hefedrnn", description="Encrypted federated RNN training simulator")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("train", help="train a model")
    _common(p)
    p.set_defaults(func=cmd_train)
    p = sub.add_parser("predict", help="oblivious prediction with a trained model")
    _common(p)
    p.add_argument("--model", required=True, help="model.npz written by train")
    p.add_argument("--decrypted", action="store_true", help="decrypt the model first instead")
    p.set_defaults(func=cmd_predict)
    p = sub.add_parser("fit-approx", help="fit a polynomial approximation")
    _common(p, config=False)
    p.add_argument("--function", default="soft-clip", help=f"one of {sorted(_FUNCTIONS)}")
    p.add_argument("--degree", type=int, default=7)
    p.add_argument("--interval", type=float, nargs=2, default=(-60.0, 60.0))
    p.add_argument("--method", choices=("minimax", "least-squares"), default="minimax")
    p.add_argument("--threshold", type=float, default=5.0)
    p.add_argument("--points", type=int, default=601)
    p.set_defaults(func=cmd_fit)
    p = sub.add_parser("bench", help="packing comparison by counted rotations")
    _common(p, config=False)
    p.add_argument("--kind", choices=("matmul", "transpose"), default="matmul")
    p.add_argument("--sizes", default="32,64")
    p.add_argument("--delta", type=int, default=32)
    p.add_argument("--count", type=int, default=8)
    p.add_argument("--ring-log", type=int, default=14)
    p.add_argument("--transform-mode", choices=("naive", "bsgs"), default="bsgs")
    p.set_defaults(func=cmd_bench)
    p = sub.add_parser("cost-report", help="closed-form ciphertext, bootstrap and traffic counts")
    _common(p)
    p.add_argument("--features", type=int, default=16)
    p.set_defaults(func=cmd_cost)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, LayoutError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, DimensionError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (HeFedError, AssertionError) as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
