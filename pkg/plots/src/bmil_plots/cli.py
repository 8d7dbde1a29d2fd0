"""bmil-plot --kind K --in FILES --predict JSON --out PATH"""

from __future__ import annotations

import argparse
import sys

from .figures import KINDS, FigureSpec, SchemaError, render


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="bmil-plot", description=__doc__)
    ap.add_argument("--kind", required=True, choices=KINDS)
    ap.add_argument("--in", dest="inputs", nargs="+", required=True)
    ap.add_argument("--predict", default=None)
    ap.add_argument("--out", required=True)
    args = ap.parse_args(argv)
    try:
        spec = FigureSpec(kind=args.kind, inputs=args.inputs, predict=args.predict, out=args.out)
        info = render(spec)
    except SchemaError as e:
        print(f"schema error: {e}", file=sys.stderr)
        return 2
    print(info["out"])
    return 0


if __name__ == "__main__":
    sys.exit(main())
