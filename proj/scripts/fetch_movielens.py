#!/usr/bin/env python3
"""Fetch MovieLens 100K ratings (u.data) into data/ml-100k/.

Tries the GroupLens archive first. If that host is unreachable, falls back to
the copy of the ratings shipped inside the RecBole wheel on PyPI, which holds
the same 100,000 records (user, item, rating, timestamp).
"""

import argparse
import hashlib
import io
import pathlib
import subprocess
import sys
import tempfile
import urllib.request
import zipfile

GROUPLENS_URL = "https://files.grouplens.org/datasets/movielens/ml-100k.zip"
U_DATA_MD5 = "6e47046882bad158b0efbb84cd5cb987"


def from_grouplens():
    with urllib.request.urlopen(GROUPLENS_URL, timeout=30) as resp:
        archive = zipfile.ZipFile(io.BytesIO(resp.read()))
    return archive.read("ml-100k/u.data")


def from_recbole_wheel():
    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run(
            [sys.executable, "-m", "pip", "download", "recbole==1.2.1",
             "--no-deps", "-q", "-d", tmp],
            check=True,
        )
        wheel = next(pathlib.Path(tmp).glob("recbole-*.whl"))
        inter = zipfile.ZipFile(wheel).read(
            "recbole/dataset_example/ml-100k/ml-100k.inter").decode()
    lines = inter.splitlines()[1:]  # drop the typed header
    return "".join(line + "\n" for line in lines).encode()


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--dest", default="data/ml-100k/u.data")
    args = parser.parse_args()

    dest = pathlib.Path(args.dest)
    if dest.exists() and hashlib.md5(dest.read_bytes()).hexdigest() == U_DATA_MD5:
        print(f"{dest} already present")
        return 0

    payload = None
    for source in (from_grouplens, from_recbole_wheel):
        try:
            payload = source()
            break
        except Exception as exc:  # network or packaging failure; try the next source
            print(f"{source.__name__} failed: {exc}", file=sys.stderr)
    if payload is None:
        print("could not fetch MovieLens 100K", file=sys.stderr)
        return 1

    digest = hashlib.md5(payload).hexdigest()
    if digest != U_DATA_MD5:
        print(f"warning: md5 {digest} differs from the reference u.data", file=sys.stderr)
    dest.parent.mkdir(parents=True, exist_ok=True)
    dest.write_bytes(payload)
    count = payload.count(b"\n")
    print(f"wrote {dest} ({count} ratings)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
