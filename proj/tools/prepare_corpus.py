#!/usr/bin/env python3
# SPDX-License-Identifier: Apache-2.0
"""Build data/shakespeare_char.txt from the public-domain play texts shipped in
the PyPI `shakespeare` sdist (shksprdata/texts/*_gut.txt).

Output layout follows the common char-level Shakespeare corpus: a "Speaker:"
line, the speech, then a blank line. Stage directions, act/scene headings and
characters outside the 65-symbol alphabet are dropped. The text is cut at a
speech boundary near 1.1 MB.

    pip download --no-deps --no-binary :all: shakespeare==0.6
    tar xzf shakespeare-0.6.tar.gz
    python3 tools/prepare_corpus.py shakespeare-0.6/shksprdata/texts data/shakespeare_char.txt
"""
import pathlib
import re
import string
import sys

PLAYS = [
    "coriolanus", "richard_iii", "richard_ii",
    "henry_vi_part_3", "winters_tale", "measure_for_measure",
    "taming_of_the_shrew", "tempest", "henry_vi_part_2", "julius_caesar", "henry_vi_part_1",
]
ALPHABET = set("\n !$&',-.3:;?" + string.ascii_letters)
TARGET_CHARS = 1_115_394
SPEAKER = re.compile(r"^([A-Z][A-Z' ]+[A-Z])\.\s*$")


def speeches(text):
    start = re.search(r"\nACT \S+", text).start()
    lines = text[start:].splitlines()
    text = "\n".join(lines)
    text = re.sub(r"\[[^\]]*\]", "", text, flags=re.S)
    speaker, body = None, []
    for raw in text.splitlines():
        line = raw.rstrip()
        if re.match(r"^\s*(ACT|SCENE)\b", line):
            continue
        m = SPEAKER.match(line)
        if m:
            if speaker and body:
                yield speaker, body
            speaker, body = m.group(1).title(), []
        elif line.strip() and speaker:
            body.append(line.strip())
    if speaker and body:
        yield speaker, body


def clean(s):
    return "".join(c for c in s if c in ALPHABET)


def main(src, dst):
    out, size = [], 0
    for play in PLAYS:
        text = pathlib.Path(src, f"{play}_gut.txt").read_text(encoding="latin-1")
        for speaker, body in speeches(text):
            block = clean(speaker) + ":\n" + "\n".join(clean(b) for b in body) + "\n\n"
            if size + len(block) > TARGET_CHARS:
                pathlib.Path(dst).write_text("".join(out), encoding="utf-8")
                return
            out.append(block)
            size += len(block)
    pathlib.Path(dst).write_text("".join(out), encoding="utf-8")


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
