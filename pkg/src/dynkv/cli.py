"""Command-line entry point.

Subcommands: gen-trace, allocate, profile, simulate, compare, inspect.
Exit codes: 0 success, 1 usage error, 2 data error (malformed trace),
3 internal error. Diagnostics go to stderr; artifacts go to files or stdout.

A ``--config FILE`` (UTF-8 ``key=value`` lines, ``#`` comments) may supply any
long-option value; explicit flags override the file. Unknown keys are
rejected by name.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .allocator import budget_report, run_prefill_compression
from .harness import compare_run, evaluate_cell, profile_csv, reports_csv, reports_json
from .model import ModelConfig, init_deterministic, prefill
from .policies import POLICIES, PolicyConfig
from .trace import (AttentionTrace, TraceError, read_trace_file, synth_trace,
                    trace_from_window_attention, write_trace_file)

FORMAT_VERSION = "dynkv-artifact-1"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); remap to usage error
        raise UsageError(message)


def _add_policy_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--wt", type=int, help="per-layer target cache size (tokens)")
    p.add_argument("--ws", type=int, help="observation window size")
    p.add_argument("--rmax", type=float, help="provisional buffer ratio r_max")
    p.add_argument("--m", type=int, help="progressive update interval (layers)")
    p.add_argument("--pool-kernel", type=int, help="odd max-pooling kernel")
    p.add_argument("--sink", type=int, help="streaming sink size")
    p.add_argument("--pyramid-min", type=int, help="pyramid last-layer budget")


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--layers", type=int, help="model layer count")
    p.add_argument("--q-heads", type=int, help="query head count")
    p.add_argument("--kv-heads", type=int, help="kv head count")
    p.add_argument("--d-k", type=int, help="head dimension")
    p.add_argument("--vocab", type=int, help="vocabulary size")
    p.add_argument("--model-seed", type=int, help="weight seed")


def build_parser() -> _Parser:
    ap = _Parser(prog="dynkv", description=__doc__,
                 formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--config", help="key=value config file; flags override")
    sub = ap.add_subparsers(dest="cmd", required=True)

    g = sub.add_parser("gen-trace", help="write a synthetic or toy-model trace")
    g.add_argument("--out", required=True)
    g.add_argument("--L", type=int, help="layers (synthetic)")
    g.add_argument("--H", type=int, help="heads (synthetic)")
    g.add_argument("--S", type=int, help="sequence length")
    g.add_argument("--ws", type=int, help="window size")
    g.add_argument("--profile",
                   help="uniform | early-heavy | late-heavy | wave | needle-at:<pos>:<mass>")
    g.add_argument("--seed", type=int, help="generator / token seed")
    g.add_argument("--label", help="task label stored in the header")
    g.add_argument("--from-model", action="store_true",
                   help="derive the trace from a toy-model prefill instead")
    g.add_argument("--pool-kernel", type=int)
    _add_model_flags(g)

    a = sub.add_parser("allocate", help="run budget allocation on a trace")
    a.add_argument("--trace", required=True)
    a.add_argument("--out", help="budget report JSON path (default stdout)")
    a.add_argument("--kv-heads", type=int, help="kv heads for byte accounting")
    a.add_argument("--d-k", type=int, help="head dim for byte accounting")
    a.add_argument("--bytes-per-elem", type=int)
    _add_policy_flags(a)

    pr = sub.add_parser("profile", help="per-layer retention-rate table from traces")
    pr.add_argument("traces", nargs="+")
    pr.add_argument("--per-layer-k", type=int)
    pr.add_argument("--out", help="CSV path (default stdout)")

    s = sub.add_parser("simulate", help="toy-model evaluation of one policy")
    s.add_argument("--policy", choices=POLICIES)
    s.add_argument("--S", type=int, help="prompt length")
    s.add_argument("--steps", type=int, help="teacher-forced decode steps")
    s.add_argument("--seed", type=int, help="token seed")
    s.add_argument("--out", help="EvalReport JSON path (default stdout)")
    s.add_argument("--bytes-per-elem", type=int)
    _add_model_flags(s)
    _add_policy_flags(s)

    c = sub.add_parser("compare", help="multi-policy comparison over a trace directory")
    c.add_argument("--trace-dir", required=True)
    c.add_argument("--policies", help="comma-separated policy names")
    c.add_argument("--out-csv")
    c.add_argument("--out-json")
    c.add_argument("--kv-heads", type=int)
    c.add_argument("--d-k", type=int)
    c.add_argument("--bytes-per-elem", type=int)
    _add_policy_flags(c)

    i = sub.add_parser("inspect", help="dump a trace header")
    i.add_argument("trace")
    return ap


DEFAULTS = {
    "L": 8, "H": 4, "S": 512, "ws": 32, "profile": "uniform", "seed": 0,
    "label": None, "pool_kernel": 7, "wt": 128, "rmax": 2.0, "m": 4,
    "sink": 4, "pyramid_min": 32, "layers": 8, "q_heads": 4, "kv_heads": 2,
    "d_k": 16, "vocab": 256, "model_seed": 0, "policy": "dynamic",
    "steps": 8, "per_layer_k": 128, "bytes_per_elem": 2,
    "policies": "full,streaming,h2o,snapkv,pyramid,dynamic",
}


def _apply_config_file(args: argparse.Namespace, path: str) -> None:
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        key, _, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if key not in DEFAULTS:
            raise UsageError(f"{path}:{lineno}: unknown config key {key!r}")
        if not hasattr(args, key) or getattr(args, key) is not None:
            continue  # not used by this subcommand, or overridden by a flag
        value = value.strip()
        caster = type(DEFAULTS[key]) if DEFAULTS[key] is not None else str
        setattr(args, key, caster(value))


def _fill_defaults(args: argparse.Namespace) -> None:
    for key, value in DEFAULTS.items():
        if hasattr(args, key) and getattr(args, key) is None:
            setattr(args, key, value)


def _policy_cfg(args, policy: str | None = None) -> PolicyConfig:
    return PolicyConfig(policy=policy or getattr(args, "policy", "dynamic"),
                        wt=args.wt, ws=args.ws, r_max=args.rmax, m=args.m,
                        pool_kernel=args.pool_kernel, sink=args.sink,
                        pyramid_min=args.pyramid_min)


def _model_cfg(args) -> ModelConfig:
    return ModelConfig(n_layers=args.layers, n_query_heads=args.q_heads,
                       n_kv_heads=args.kv_heads, head_dim=args.d_k,
                       vocab=args.vocab, seed=args.model_seed)


def _resolved_config(args) -> dict:
    return {k: getattr(args, k) for k in sorted(DEFAULTS) if hasattr(args, k)}


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


def _cmd_gen_trace(args) -> int:
    if args.from_model:
        mcfg = _model_cfg(args)
        model = init_deterministic(mcfg)
        rng = np.random.default_rng(args.seed)
        tokens = rng.integers(0, mcfg.vocab, size=args.S)
        _, wattn, _ = prefill(model, tokens, args.ws)
        t = trace_from_window_attention(wattn, args.ws, args.pool_kernel,
                                        label=args.label or "toy-model")
    else:
        t = synth_trace(args.L, args.H, args.S, args.ws, args.profile,
                        seed=args.seed, label=args.label)
    n = write_trace_file(t, args.out)
    print(f"wrote {args.out}: L={t.L} H={t.H} S={t.S} ws={t.ws} ({n} bytes)",
          file=sys.stderr)
    return 0


def _cmd_allocate(args) -> int:
    trace = read_trace_file(args.trace)
    cfg = _policy_cfg(args, "dynamic")
    result = run_prefill_compression(trace, cfg)
    report = budget_report(result, cfg, trace, n_kv_heads=args.kv_heads,
                           d_k=args.d_k, bytes_per_elem=args.bytes_per_elem)
    report["format_version"] = FORMAT_VERSION
    report["resolved_config"] = _resolved_config(args)
    _emit(json.dumps(report, indent=2, sort_keys=True), args.out)
    return 0


def _cmd_profile(args) -> int:
    traces = [read_trace_file(p) for p in args.traces]
    _emit(profile_csv(traces, args.per_layer_k), args.out)
    return 0


def _cmd_simulate(args) -> int:
    mcfg = _model_cfg(args)
    model = init_deterministic(mcfg)
    rng = np.random.default_rng(args.seed)
    tokens = rng.integers(0, mcfg.vocab, size=args.S)
    _, wattn, _ = prefill(model, tokens, args.ws)
    trace = trace_from_window_attention(wattn, args.ws, args.pool_kernel)
    cfg = _policy_cfg(args)
    rep = evaluate_cell("simulated", trace, cfg, model=model, tokens=tokens,
                        steps=args.steps, bytes_per_elem=args.bytes_per_elem)
    payload = dict(rep.row(), format_version=FORMAT_VERSION,
                   resolved_config=_resolved_config(args))
    _emit(json.dumps(payload, indent=2, sort_keys=True), args.out)
    return 0


def _cmd_compare(args) -> int:
    paths = sorted(Path(args.trace_dir).glob("*.kvt"))
    if not paths:
        raise UsageError(f"no *.kvt traces in {args.trace_dir}")
    traces = [(p.name, read_trace_file(p)) for p in paths]
    names = [n.strip() for n in args.policies.split(",") if n.strip()]
    for n in names:
        if n not in POLICIES:
            raise UsageError(f"unknown policy {n!r}")
    cfgs = [_policy_cfg(args, n) for n in names]
    reports = compare_run(traces, cfgs, n_kv_heads=args.kv_heads, d_k=args.d_k,
                          bytes_per_elem=args.bytes_per_elem)
    comment = f"{FORMAT_VERSION} config={json.dumps(_resolved_config(args), sort_keys=True)}"
    if args.out_csv:
        Path(args.out_csv).write_text(reports_csv(reports, comment), encoding="utf-8")
    if args.out_json:
        Path(args.out_json).write_text(reports_json(reports), encoding="utf-8")
    if not args.out_csv and not args.out_json:
        sys.stdout.write(reports_csv(reports, comment))
    return 0


def _cmd_inspect(args) -> int:
    t = read_trace_file(args.trace)
    print(f"magic:   KVTRACE1")
    print(f"L:       {t.L}")
    print(f"H:       {t.H}")
    print(f"S:       {t.S}")
    print(f"ws:      {t.ws}")
    print(f"label:   {t.label}")
    print(f"needles: {t.needle_positions}")
    print(f"scores:  shape {t.scores.shape}, "
          f"min {t.scores.min():.6g}, max {t.scores.max():.6g}, "
          f"mean {t.scores.mean():.6g}")
    return 0


COMMANDS = {
    "gen-trace": _cmd_gen_trace,
    "allocate": _cmd_allocate,
    "profile": _cmd_profile,
    "simulate": _cmd_simulate,
    "compare": _cmd_compare,
    "inspect": _cmd_inspect,
}


def dispatch(argv: list[str]) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.config:
            _apply_config_file(args, args.config)
        _fill_defaults(args)
        return COMMANDS[args.cmd](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (TraceError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # pragma: no cover
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
