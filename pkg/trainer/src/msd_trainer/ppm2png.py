"""Convert binary PPM (P6) heatmaps produced by the core package to PNG.

Usage: msd-ppm2png figure.ppm [more.ppm ...]  -> writes figure.png, ...
Requires Pillow (install extra: msd-trainer[png]).
"""

import os
import sys


def convert(path) -> str:
    from PIL import Image
    out = os.path.splitext(path)[0] + ".png"
    with Image.open(path) as img:
        img.save(out)
    return out


def main(argv=None) -> int:
    args = sys.argv[1:] if argv is None else argv
    if not args:
        print(__doc__.strip(), file=sys.stderr)
        return 2
    for path in args:
        if not os.path.exists(path):
            print(f"missing file: {path}", file=sys.stderr)
            return 4
        print(convert(path))
    return 0


if __name__ == "__main__":
    sys.exit(main())
