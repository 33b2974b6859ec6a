#!/usr/bin/env python3
"""Writes the offline fixtures: corpora plus a response script per fixture.

The script is a list of rules {starts_with, contains, responses}; the
recording step answers each prompt with the rule that matches it most
specifically and walks its responses on repeated calls. Run from the
repository root, then record the replay stores with

    cargo test -p framelens-core --test regen_fixtures -- --ignored
"""

import json
import random
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]
SUMMARIZE = "Please summarize the following text: "

PRODUCTS = ["blender", "kettle", "headset", "backpack", "desk lamp", "phone case", "toaster",
            "keyboard", "water bottle", "camera strap"]
OPENERS = {
    "pos": ["The {p} arrived early and works great.", "I love this {p} and use it daily.",
            "Excellent {p} for the price."],
    "neu": ["The {p} is fine for basic use.", "This {p} does the job without surprises.",
            "An average {p} overall."],
    "neg": ["The {p} broke within a week.", "Very disappointed with this {p}.",
            "The {p} stopped working after two uses."],
}
MIDDLES = [
    "Setup took about ten minutes with the included guide.",
    "The material feels sturdy but the buttons are stiff.",
    "Cleaning it requires a small brush that was not included.",
    "Battery life lasts roughly four days between charges.",
    "The color matches the photos on the listing.",
    "Customer support answered my question within a day.",
    "It is heavier than my previous model.",
    "The cord length is short for my kitchen counter.",
]
CLOSERS = {
    "pos": ["Would buy again without hesitation.", "Highly recommended to friends.",
            "Five stars from our family."],
    "neu": ["It is acceptable if you need one quickly.", "Maybe look around before buying.",
            "Three stars seems fair."],
    "neg": ["I returned it for a refund.", "Avoid this one.", "Save your money."],
}
TONE = {1: "neg", 2: "neg", 3: "neu", 4: "pos", 5: "pos"}


def rule(responses, contains="", starts_with=""):
    return {"starts_with": starts_with, "contains": contains, "responses": responses}


def amz50(rng):
    docs, rules = [], []
    for i in range(50):
        stars = 1 + i % 5
        tone = TONE[stars]
        p = PRODUCTS[i % len(PRODUCTS)]
        opener = rng.choice(OPENERS[tone]).format(p=p)
        mids = rng.sample(MIDDLES, 3)
        closer = rng.choice(CLOSERS[tone])
        text = " ".join([opener, *mids, closer])
        doc_id = f"amz-{i:03d}"
        docs.append({"id": doc_id, "text": text, "rating": stars})

        style = i % 4
        if style in (0, 1):
            summary = f"Review {i}: {opener}"
        elif style == 2:
            summary = f"Review {i}: {opener} {mids[1]} {closer}"
        else:
            summary = f"Review {i}: {closer}"
        if i == 33:
            summary = ""
        raw = f"FINAL_SUMMARY: {summary}"
        if i % 7 == 0:
            raw = f"Sure.\nFINAL_SUMMARY: draft\nFINAL_SUMMARY:  {summary}  "
        rules.append(rule([raw], contains=text, starts_with=SUMMARIZE))

        rules.append(rule([f"{stars}"], contains=text))
        if summary:
            judged = stars
            if i % 6 == 1:
                judged = {1: 4, 2: 5, 3: 1, 4: 3, 5: 2}[stars]
            if i == 17:
                rules.append(rule(["I cannot rate this.", "Not sure."], contains=summary))
            elif i % 10 == 4:
                rules.append(rule(["The summary sounds fine.", f"{judged}"], contains=summary))
            else:
                rules.append(rule([f"Rating: {judged}"], contains=summary))
    return docs, rules


def calib50(rng):
    records, rules = [], []
    texts = {
        1: "Terrible {p}, it fell apart on day one.",
        2: "Poor {p}, it works but barely.",
        3: "The {p} is okay, nothing special.",
        4: "Good {p}, I am mostly happy with it.",
        5: "Fantastic {p}, exceeded every expectation.",
    }
    # Gold ratings cycle 1..5. Judge answers agree on the label except at
    # indices 7, 19 and 44 (wrong label) and 28 (unparseable twice).
    for i in range(50):
        gold = 1 + i % 5
        p = PRODUCTS[i % len(PRODUCTS)]
        text = texts[gold].format(p=p) + f" Order {i}."
        records.append({"id": f"cal-{i:03d}", "text": text, "rating": gold})
        same_label = {1: 2, 2: 1, 3: 3, 4: 5, 5: 4}
        answer = [str(gold if i % 2 == 0 else same_label[gold])]
        if i == 7:
            answer = ["5"]
        elif i == 19:
            answer = ["3"]
        elif i == 44:
            answer = ["1"]
        elif i == 28:
            answer = ["no idea", "still no idea"]
        elif i in (3, 40):
            answer = ["It reads positive overall.", str(gold)]
        rules.append(rule(answer, contains=text))
    return records, rules


SUBJECTS = ["The city council", "The central bank", "The national team", "The university",
            "The health agency", "The transit authority", "The parliament", "The court",
            "The space agency", "The museum"]
VERBS = [("approved", "approve", "the new budget"), ("announced", "announce", "a merger"),
         ("opened", "open", "a second campus"), ("raised", "raise", "interest rates"),
         ("won", "win", "the regional final"), ("launched", "launch", "a lunar probe")]
BASELINE_PREFIX = "You are a fact-checking AI. For each statement"
EPISTEMIC_PREFIX = "You are a fact-checking AI. Analyze this statement"


def fc40(rng):
    pairs, rules = [], []
    # Hand-designed outcomes; see tally.json for the resulting counts.
    pre_true = ["True"] * 15 + ["False"] * 4 + [["Maybe.", "True"]]
    pre_false = ["False"] * 10 + ["True"] * 5 + ["False"] * 3 + ["True"] + [["Unclear", "Unsure"]]
    post_true = ["True"] * 12 + ["False"] * 8
    post_false = ["False"] * 6 + ["True"] * 6 + ["False"] * 6 + ["True"] * 2
    combos = [(s, v) for s in SUBJECTS for v in VERBS]
    rng.shuffle(combos)
    for horizon, trues, falses, year in (("pre_cutoff", pre_true, pre_false, 2022),
                                         ("post_cutoff", post_true, post_false, 2024)):
        for k in range(20):
            subj, (past, base, obj) = combos.pop()
            true_text = f"{subj} {past} {obj} in {year}."
            false_text = f"{subj} did not {base} {obj} in {year}."
            pid = f"{'pre' if horizon == 'pre_cutoff' else 'post'}-{k:02d}"
            pairs.append({"pair_id": pid, "true_text": true_text, "falsified_text": false_text,
                          "event_date": f"{year}-{1 + k % 12:02d}-15", "horizon": horizon})
            for side, text, ans in (("t", true_text, trues[k]), ("f", false_text, falses[k])):
                plain = ans if isinstance(ans, list) else [ans]
                rules.append(rule(plain, contains=f"Statement: {text}", starts_with=BASELINE_PREFIX))
                conf = "High" if (k % 2 == 0 if side == "t" else k % 3 == 0) else "Low"
                if isinstance(ans, list) and ans[-1] in ("True", "False"):
                    tagged = [ans[-1], f"{ans[-1]} [{conf} Confidence]"]
                elif isinstance(ans, list):
                    tagged = ans
                else:
                    tagged = [f"{ans} [{conf} Confidence]"]
                rules.append(rule(tagged, contains=f"Statement: {text}", starts_with=EPISTEMIC_PREFIX))
    return pairs, rules


def write_jsonl(path, rows):
    with open(path, "w", encoding="utf-8") as f:
        for r in rows:
            f.write(json.dumps(r, ensure_ascii=False) + "\n")


def main():
    rng = random.Random(2024)
    out = ROOT
    for name, fn, data_file in (("amz50", amz50, "corpus.jsonl"), ("calib50", calib50, "calibration.jsonl"),
                                ("fc40", fc40, "pairs.jsonl")):
        d = out / name
        d.mkdir(parents=True, exist_ok=True)
        rows, rules = fn(rng)
        keys = [r["contains"] + "\0" + r["starts_with"] for r in rules]
        assert len(set(keys)) == len(keys), f"{name}: ambiguous rules"
        write_jsonl(d / data_file, rows)
        with open(d / "script.json", "w", encoding="utf-8") as f:
            json.dump(rules, f, indent=1, ensure_ascii=False)
            f.write("\n")
        print(f"{name}: {len(rows)} items, {len(rules)} rules", file=sys.stderr)


if __name__ == "__main__":
    main()
