"""Command-line entry point: one export per invocation."""

from __future__ import annotations

import argparse
import sys

from .exporter import ExportSpec, export_trace


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="kvtrace-export",
        description="Export pooled window-attention scores from a pretrained "
        "decoder-only model as a KVTRACE1 trace file.",
    )
    p.add_argument("--model", required=True,
                   help="model identifier or local checkpoint path")
    p.add_argument("--prompt", required=True,
                   help="prompt text file path, or '-' to read stdin")
    p.add_argument("--out", required=True, help="output .kvt path")
    p.add_argument("--ws", type=int, default=32,
                   help="observation window: number of trailing query rows averaged")
    p.add_argument("--pool-kernel", type=int, default=7,
                   help="odd max-pooling kernel applied along the key axis")
    p.add_argument("--device", default="cpu", help="torch device hint")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    spec = ExportSpec(model=args.model, prompt=args.prompt, out=args.out,
                      ws=args.ws, pool_kernel=args.pool_kernel,
                      device=args.device)
    try:
        path = export_trace(spec)
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(path)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
