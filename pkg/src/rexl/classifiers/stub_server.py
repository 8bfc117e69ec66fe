"""Stand-alone stub classifier process speaking the rexl-clf/1 protocol.

Run as a script (``python stub_server.py --scores 0.2,0.8``). It answers
every request with fixed scores, or with scores derived from the mean
pixel (``--mean``), and can inject faults for transport tests. It only
uses the standard library so it starts fast and needs no package path.
"""

import argparse
import base64
import json
import struct
import sys
import time


def parse_args(argv=None):
    parser = argparse.ArgumentParser(description="rexl stub classifier process")
    parser.add_argument("--scores", default="1.0", help="comma-separated fixed scores")
    parser.add_argument("--height", type=int, default=28)
    parser.add_argument("--width", type=int, default=28)
    parser.add_argument("--channels", type=int, default=1)
    parser.add_argument("--kind", default="multilabel", choices=["softmax", "multilabel"])
    parser.add_argument("--mean", action="store_true", help="score class 0 by the mean pixel")
    parser.add_argument("--sleep", type=float, default=0.0, help="seconds to wait per request")
    parser.add_argument(
        "--fault",
        default="none",
        choices=["none", "bad-json", "wrong-id", "exit", "bad-handshake", "silent"],
    )
    parser.add_argument("--fault-after", type=int, default=0, help="requests served before the fault")
    return parser.parse_args(argv)


def emit(obj):
    sys.stdout.write(json.dumps(obj) + "\n")
    sys.stdout.flush()


def main(argv=None):
    args = parse_args(argv)
    scores = [float(s) for s in args.scores.split(",")]
    if args.mean:
        scores = [0.0, 0.0]
    n_values = args.height * args.width * args.channels

    if args.fault == "bad-handshake":
        emit({"protocol": "something-else/9"})
    else:
        emit(
            {
                "protocol": "rexl-clf/1",
                "classes": len(scores),
                "height": args.height,
                "width": args.width,
                "channels": args.channels,
                "kind": args.kind,
            }
        )

    served = 0
    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        request = json.loads(line)
        raw = base64.b64decode(request["pixels"])
        if len(raw) != 4 * n_values:
            sys.stderr.write("pixel payload has the wrong size\n")
            sys.stderr.flush()
            return 1
        if args.sleep:
            time.sleep(args.sleep)

        if served >= args.fault_after and args.fault != "none":
            if args.fault == "bad-json":
                sys.stdout.write("{not json\n")
                sys.stdout.flush()
            elif args.fault == "wrong-id":
                emit({"id": request["id"] + 1000, "scores": scores})
            elif args.fault == "exit":
                sys.stderr.write("stub exiting on purpose\n")
                sys.stderr.flush()
                return 3
            elif args.fault == "silent":
                pass
            served += 1
            continue

        if args.mean:
            values = struct.unpack("<%df" % n_values, raw)
            m = min(1.0, max(0.0, sum(values) / n_values))
            out = [m, 1.0 - m]
        else:
            out = scores
        emit({"id": request["id"], "scores": out})
        served += 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
