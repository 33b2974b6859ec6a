#!/usr/bin/env python3
"""Brute-force goldens for the amz50 summarization fixture.

Reads only the corpus, the raw replay store and the prompt assets, and
recomputes every per-document quantity from scratch: summary extraction,
rating parse, label map, feature-hashed term counts, thirds split, cosine,
then phi, psi (alpha = 0.05, strict) and coverage means.

usage: fixture_oracle.py <fixture-dir> <assets-dir>   (writes JSON to stdout)
"""

import json
import math
import re
import sys
from pathlib import Path

ALPHA = 0.05
DIM = 4096
MARKER = "FINAL_SUMMARY:"
LABELS = ["negative", "neutral", "positive"]


def fnv1a64(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for b in data:
        h ^= b
        h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


def terms(text):
    out, cur = [], []
    for ch in text:
        if ch.isalnum():
            cur.append(ch)
        elif cur:
            out.append("".join(cur).lower())
            cur = []
    if cur:
        out.append("".join(cur).lower())
    return out


def embed(text):
    v = {}
    for t in terms(text):
        b = fnv1a64(t.encode()) % DIM
        v[b] = v.get(b, 0.0) + 1.0
    return v


def cosine(a, b):
    na = math.sqrt(sum(a[i] * a[i] for i in sorted(a)))
    nb = math.sqrt(sum(b[i] * b[i] for i in sorted(b)))
    if na == 0 or nb == 0:
        raise ValueError("zero vector")
    dot = sum(a[i] * b[i] for i in sorted(set(a) & set(b)))
    return max(-1.0, min(1.0, dot / (na * nb)))


def thirds(text):
    spans = [m.span() for m in re.finditer(r"\S+", text)]
    n = len(spans)
    sizes = [n // 3 + (1 if i < n % 3 else 0) for i in range(3)]
    cuts = [spans[sizes[0]][0], spans[sizes[0] + sizes[1]][0]]
    return text[:cuts[0]], text[cuts[0]:cuts[1]], text[cuts[1]:]


def main():
    fixture, assets = Path(sys.argv[1]), Path(sys.argv[2])
    store = {}
    for line in open(fixture / "replay.jsonl", encoding="utf-8"):
        e = json.loads(line)
        if e["request"]["kind"] == "complete":
            store[(e["request"]["model"], e["request"]["prompt"])] = e["response"]["value"]
    docs = [json.loads(l) for l in open(fixture / "corpus.jsonl", encoding="utf-8")]
    summarize = (assets / "templates/baseline_summarize.txt").read_text()
    rating = (assets / "prompts/judge_rating.txt").read_text()
    rating_strict = (assets / "prompts/judge_rating_strict.txt").read_text()

    def label(text):
        if not text.strip():
            return None
        for tpl in (rating, rating_strict):
            raw = store[("fixture-judge", tpl.replace("[TEXT]", text))]
            m = re.search(r"\b([1-5])\b", raw)
            if m:
                r = int(m.group(1))
                return "negative" if r <= 2 else "neutral" if r == 3 else "positive"
        return None

    quarantined, pairs, triples = 0, [], []
    for d in docs:
        raw = store[("fixture-model", summarize.replace("[DOCUMENT_TEXT]", d["text"]))]
        summary = raw[raw.rfind(MARKER) + len(MARKER):].strip() if MARKER in raw else raw.strip()
        c, s = label(d["text"]), label(summary)
        if not summary.strip():
            quarantined += 1
            continue
        sv = embed(summary)
        triples.append([cosine(sv, embed(p)) for p in thirds(d["text"])])
        if c and s:
            pairs.append((c, s))

    transitions = [[0] * 3 for _ in range(3)]
    for c, s in pairs:
        transitions[LABELS.index(c)][LABELS.index(s)] += 1
    n = len(triples)
    out = {
        "n_input": len(docs),
        "n_quarantined": quarantined,
        "framing_n": len(pairs),
        "unclassified": n - len(pairs),
        "phi_frame": sum(c != s for c, s in pairs) / len(pairs),
        "transitions": transitions,
        "coverage_n": n,
        "alpha": ALPHA,
        "psi_pri": sum(b > m + ALPHA for b, m, _ in triples) / n,
        "mean_s_b": sum(t[0] for t in triples) / n,
        "mean_s_m": sum(t[1] for t in triples) / n,
        "mean_s_e": sum(t[2] for t in triples) / n,
    }
    json.dump(out, sys.stdout, indent=2)
    sys.stdout.write("\n")


if __name__ == "__main__":
    main()
