#!/usr/bin/env python3
"""Independent recount of extract output over the fixture corpus.

Re-derives every record's counts from the raw pages and the emitted MHTML with
Python's own HTML parser, recomputes the stats report, and either freezes it
(--write) or compares it with a frozen copy (--check).

usage: recount_stats.py CORPUS_DIR EXTRACT_DIR (--write | --check) EXPECTED_JSON [--budget N]
"""

import argparse
import json
import os
import re
import sys
from html.parser import HTMLParser

WS = re.compile(r"[ \t\n\r\f\v]+")


class Visible(HTMLParser):
    def __init__(self):
        super().__init__(convert_charrefs=True)
        self.parts = []
        self.skip = 0

    def handle_starttag(self, tag, attrs):
        if tag in ("script", "style"):
            self.skip += 1

    def handle_endtag(self, tag):
        if tag in ("script", "style") and self.skip:
            self.skip -= 1

    def handle_data(self, data):
        if not self.skip:
            self.parts.append(data)


def visible_length(html):
    p = Visible()
    p.feed(html)
    p.close()
    return len(WS.sub(" ", "".join(p.parts)).strip())


def whitespace_tokens(text):
    count = 0
    for segment in text.split("<mask>"):
        runs = len(re.findall(r"[^ \t\n\r\f\v]+", segment))
        count += runs if runs else (1 if segment else 0)
    return count + text.count("<mask>")


def median(xs):
    n = len(xs)
    return xs[n // 2] if n % 2 else (xs[n // 2 - 1] + xs[n // 2]) / 2


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("corpus")
    ap.add_argument("extract")
    mode = ap.add_mutually_exclusive_group(required=True)
    mode.add_argument("--write")
    mode.add_argument("--check")
    ap.add_argument("--budget", type=int, default=1024)
    args = ap.parse_args()

    manifest = json.load(open(os.path.join(args.extract, "manifest.json")))
    records = []
    for shard in manifest["shards"]:
        with open(os.path.join(args.extract, shard["path"]), encoding="utf-8") as f:
            rows = [json.loads(line) for line in f]
        assert len(rows) == shard["record_count"], shard
        records += rows

    errors = []
    for r in records:
        raw = open(os.path.join(args.corpus, r["doc_id"]), "rb").read().decode("utf-8", errors="replace")
        text = visible_length(r["mhtml"])
        expect = {"raw_chars": len(raw), "mhtml_chars": len(r["mhtml"]), "text_chars": text,
                  "text_ratio": text / len(r["mhtml"])}
        for key, value in expect.items():
            if r[key] != value:
                errors.append(f"{r['doc_id']}: {key} {r[key]} != {value}")
        if not r["text_ratio"] > 0.46:
            errors.append(f"{r['doc_id']}: ratio {r['text_ratio']} not above 0.46")

    wrong_lang = 0
    for name in sorted(os.listdir(args.corpus)):
        if not name.endswith((".html", ".htm")):
            continue
        page = open(os.path.join(args.corpus, name), encoding="utf-8").read()
        m = re.search(r'<html[^>]*\blang="([^"]*)"', page, re.I)
        if not m or m.group(1).split("-")[0].lower() != "en":
            wrong_lang += 1
    if manifest["rejects"]["wrong_lang"] != wrong_lang:
        errors.append(f"wrong_lang {manifest['rejects']['wrong_lang']} != {wrong_lang}")

    reductions = sorted(1.0 - r["mhtml_chars"] / r["raw_chars"] for r in records)
    ratios = sorted(r["text_ratio"] for r in records)
    tokens = [whitespace_tokens(r["mhtml"]) for r in records]
    within = sum(1 for t in tokens if t <= args.budget)
    n = len(records)
    report = {
        "documents": n,
        "mean_reduction": sum(reductions) / n,
        "median_reduction": median(reductions),
        "text_ratio": {"min": ratios[0], "max": ratios[-1], "mean": sum(ratios) / n, "median": median(ratios)},
        "budget": args.budget,
        "within_budget": within,
        "within_budget_fraction": within / n,
        "mean_tokens": sum(tokens) / n,
        "accepted": n,
        "rejects": manifest["rejects"],
    }

    if args.write:
        with open(args.write, "w") as f:
            json.dump(report, f, indent=2)
            f.write("\n")
    else:
        frozen = json.load(open(args.check))
        if frozen != report:
            errors.append(f"report differs from {args.check}:\n{json.dumps(report, indent=2)}")
    for e in errors:
        print(e, file=sys.stderr)
    return 1 if errors else 0


if __name__ == "__main__":
    sys.exit(main())
