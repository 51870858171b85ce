#!/usr/bin/env python3
"""Independent readability oracle for tests/fixtures/readability_10.txt.

Re-derives every readability score with plain Python so the C++ values can
be frozen against it. Run from the repository root:

    python3 tests/oracles/readability_oracle.py > tests/oracles/readability_expected.json
"""
import json
import math
import re
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parents[2]
TEXT = ROOT / "tests" / "fixtures" / "readability_10.txt"
EASY = ROOT / "resources" / "dale_chall_easy_words.txt"


def sentences(text):
    # Terminal punctuation ends a sentence.
    parts = [p for p in re.split(r"[.!?]+", text) if p.strip()]
    return [re.findall(r"[A-Za-z0-9]+(?:['-][A-Za-z0-9]+)*", p) for p in parts]


def syllables(word):
    w = word.lower()
    groups = [m for m in re.finditer(r"[aeiouy]+", w)]
    n = len(groups)
    if n > 1 and groups[-1].group() == "e" and groups[-1].end() == len(w):
        n -= 1
    return n


def main():
    easy = {line.strip().lower() for line in EASY.read_text().splitlines() if line.strip()}
    sents = sentences(TEXT.read_text())
    words = [w for s in sents for w in s]
    n_w, n_s = len(words), len(sents)
    syl = [syllables(w) for w in words]
    poly = sum(1 for s in syl if s >= 3)
    difficult = sum(1 for w in words if w.lower() not in easy)
    wps = n_w / n_s
    spw = sum(syl) / n_w
    pct = 100.0 * difficult / n_w
    dale = 0.1579 * pct + 0.0496 * wps + (3.6365 if pct > 5.0 else 0.0)
    out = {
        "sentences": n_s,
        "words": n_w,
        "syllables": sum(syl),
        "polysyllables": poly,
        "difficult": difficult,
        "flesch": 206.835 - 1.015 * wps - 84.6 * spw,
        "flesch_kincaid": 0.39 * wps + 11.8 * spw - 15.59,
        "gunning_fog": 0.4 * (wps + 100.0 * poly / n_w),
        "smog": 1.0430 * math.sqrt(poly * 30.0 / n_s) + 3.1291,
        "dale_chall": dale,
    }
    json.dump(out, sys.stdout, indent=2)
    sys.stdout.write("\n")


if __name__ == "__main__":
    main()
