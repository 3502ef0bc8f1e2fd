#!/usr/bin/env python3
"""Download the MovieLens-100k raw interactions file.

Run this on a machine with internet access, then copy the output next to the
repository (or point SEQBENCH_ML100K at the u.data file):

    python3 scripts/fetch_ml100k.py --out data/ml-100k

The benchmark only needs u.data (tab-separated: user, item, rating,
timestamp). The download is verified structurally: 100,000 lines of 4
tab-separated fields.
"""

from __future__ import annotations

import argparse
import io
import os
import sys
import urllib.error
import urllib.request
import zipfile

URL = "https://files.grouplens.org/datasets/movielens/ml-100k.zip"
MEMBER = "ml-100k/u.data"
EXPECTED_LINES = 100_000


def fetch(out_dir: str, url: str = URL) -> str:
    print(f"downloading {url} ...")
    with urllib.request.urlopen(url) as response:
        blob = response.read()
    print(f"got {len(blob)} bytes, extracting {MEMBER}")
    with zipfile.ZipFile(io.BytesIO(blob)) as archive:
        data = archive.read(MEMBER)
    lines = data.decode("utf-8").strip().splitlines()
    if len(lines) != EXPECTED_LINES:
        raise SystemExit(
            f"unexpected archive content: {len(lines)} lines in u.data, "
            f"expected {EXPECTED_LINES}"
        )
    bad = [i for i, line in enumerate(lines[:100]) if len(line.split("\t")) != 4]
    if bad:
        raise SystemExit(f"unexpected u.data layout near line {bad[0] + 1}")
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "u.data")
    with open(path, "wb") as fh:
        fh.write(data)
    print(f"wrote {path} ({len(lines)} interactions)")
    return path


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default="data/ml-100k", help="output directory")
    parser.add_argument("--url", default=URL, help="override the download URL")
    ns = parser.parse_args(argv)
    try:
        fetch(ns.out, ns.url)
    except (urllib.error.URLError, OSError) as exc:
        print(f"download failed: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
