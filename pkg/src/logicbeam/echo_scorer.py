"""Reference scorer process: answers every request with uniform rows.

Usage: ``python -m logicbeam.echo_scorer VOCAB_SIZE [--mass M]``. ``--mass``
scales every row to total probability ``M`` (for exercising the client's
normalization check); ``--garbage`` answers with a malformed line.
"""

import argparse
import json
import math
import sys


def main(argv=None):
    parser = argparse.ArgumentParser()
    parser.add_argument("vocab_size", type=int)
    parser.add_argument("--mass", type=float, default=1.0)
    parser.add_argument("--garbage", action="store_true")
    args = parser.parse_args(argv)
    value = math.log(args.mass / args.vocab_size)
    for line in sys.stdin:
        if not line.strip():
            continue
        if args.garbage:
            sys.stdout.write("{not json\n")
        else:
            prefixes = json.loads(line)["prefixes"]
            rows = [[value] * args.vocab_size for _ in prefixes]
            sys.stdout.write(json.dumps({"logprobs": rows}) + "\n")
        sys.stdout.flush()


if __name__ == "__main__":
    main()
