#!/usr/bin/env python3
"""Download the MNIST (and optionally FashionMNIST) IDX files into the
dataset root expected by the configs: <root>/mnist/ and <root>/fashion-mnist/.

Usage: python scripts/fetch_mnist.py [root] [--fashion]
"""
import gzip
import sys
import urllib.request
from pathlib import Path

MIRRORS = {
    "mnist": "https://ossci-datasets.s3.amazonaws.com/mnist/",
    "fashion-mnist": "http://fashion-mnist.s3-website.eu-central-1.amazonaws.com/",
}
FILES = (
    "train-images-idx3-ubyte.gz",
    "train-labels-idx1-ubyte.gz",
    "t10k-images-idx3-ubyte.gz",
    "t10k-labels-idx1-ubyte.gz",
)


def fetch(dataset: str, root: Path) -> None:
    out = root / dataset
    out.mkdir(parents=True, exist_ok=True)
    for name in FILES:
        target = out / name[:-3]
        if target.exists():
            print(f"{target} already present")
            continue
        url = MIRRORS[dataset] + name
        print(f"fetching {url}")
        with urllib.request.urlopen(url) as resp:
            blob = resp.read()
        target.write_bytes(gzip.decompress(blob))
        print(f"wrote {target} ({target.stat().st_size} bytes)")


def main() -> int:
    args = [a for a in sys.argv[1:] if not a.startswith("--")]
    root = Path(args[0]) if args else Path("data")
    fetch("mnist", root)
    if "--fashion" in sys.argv:
        fetch("fashion-mnist", root)
    return 0


if __name__ == "__main__":
    sys.exit(main())
