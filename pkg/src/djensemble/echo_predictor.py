"""Reference subprocess predictor: replies with K copies of the last input frame.

Run as ``python -m djensemble.echo_predictor --k 3``. The ``--sleep``,
``--hang`` and ``--malformed`` switches exist to exercise the parent's
latency measurement and error handling.
"""

from __future__ import annotations

import argparse
import sys
import time

import numpy as np

from . import wire


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(prog="echo_predictor")
    ap.add_argument("--k", type=int, default=1, help="output frames per request")
    ap.add_argument("--sleep", type=float, default=0.0, help="seconds to sleep per request")
    ap.add_argument("--hang", action="store_true", help="never reply")
    ap.add_argument("--malformed", action="store_true", help="reply with a bad header")
    ap.add_argument("--exit-code", type=int, default=0, help="exit status after a request")
    args = ap.parse_args(argv)

    stdin, stdout = sys.stdin.buffer, sys.stdout.buffer
    while True:
        try:
            frames = wire.read_message(stdin)
        except wire.ProtocolError as exc:
            print(f"echo_predictor: {exc}", file=sys.stderr)
            return 1
        if frames is None:
            return 0
        if args.exit_code:
            return args.exit_code
        if args.hang:
            while True:
                time.sleep(3600)
        if args.sleep:
            time.sleep(args.sleep)
        if args.malformed:
            stdout.write(b"XXXX" + bytes(12))
            stdout.flush()
            continue
        out = np.repeat(frames[-1:], args.k, axis=0)
        wire.write_message(stdout, out)


if __name__ == "__main__":
    sys.exit(main())
