#!/usr/bin/env python3
"""Fetch the Pima Indians Diabetes and MAGIC Gamma Telescope datasets.

The original UCI copies live at
  https://archive.ics.uci.edu/dataset/34/diabetes  (Pima, 768 rows)
  https://archive.ics.uci.edu/dataset/159/magic+gamma+telescope  (19020 rows)
When those hosts are unreachable the KEEL-format copies bundled in two PyPI
wheels are used instead. Both keep the UCI row order.

Writes headerless CSVs (features then label) to data/ next to this script's
parent directory, or to the directory given as the first argument.
"""

import io
import pathlib
import subprocess
import sys
import tempfile
import zipfile

SOURCES = {
    "pima.csv": ("common_datasets==0.2.6", "common_datasets/data/classification/pima/pima.dat",
                 {"negative": "0", "positive": "1"}),
    "magic04.csv": ("keel_ds==0.2.5", "keel_ds/data/balanced/raw/magic.dat", None),
}


def keel_rows(text):
    rows = []
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("@"):
            continue
        rows.append([f.strip() for f in line.split(",")])
    return rows


def main():
    out_dir = pathlib.Path(sys.argv[1]) if len(sys.argv) > 1 else pathlib.Path(__file__).resolve().parent.parent / "data"
    out_dir.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory() as tmp:
        for name, (req, member, relabel) in SOURCES.items():
            subprocess.run([sys.executable, "-m", "pip", "download", "--no-deps", "-q", "--retries", "10", "--timeout", "120", "-d", tmp, req], check=True)
            wheel = next(pathlib.Path(tmp).glob(req.split("==")[0] + "-*.whl"))
            rows = keel_rows(zipfile.ZipFile(wheel).read(member).decode())
            if relabel:
                for r in rows:
                    r[-1] = relabel[r[-1]]
            buf = io.StringIO()
            for r in rows:
                buf.write(",".join(r) + "\n")
            (out_dir / name).write_text(buf.getvalue())
            print(f"{out_dir / name}: {len(rows)} rows")


if __name__ == "__main__":
    main()
