#!/usr/bin/env python3
"""Writes the bundled 8x8 digit set (scikit-learn's copy of the UCI
optical-recognition digits) in the frematch dataset format.

usage: make_digits.py [OUT]   (default: data/digits8x8.fmd)
"""
import json
import sys
from pathlib import Path

import numpy as np
from sklearn.datasets import load_digits


def main():
    out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).resolve().parent.parent / "data" / "digits8x8.fmd"
    digits = load_digits()
    samples = (digits.data / 16.0).astype("<f8")
    labels = digits.target.astype("<i4")
    header = {"format": "frematch-dataset", "version": 1, "name": "digits8x8", "N": int(len(labels)),
              "modality": "image", "shape": [8, 8], "c": 10}
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "wb") as f:
        f.write(json.dumps(header, separators=(",", ":")).encode() + b"\n")
        f.write(samples.tobytes())
        f.write(labels.tobytes())
    print(f"wrote {out}: {len(labels)} samples")


if __name__ == "__main__":
    main()
