"""Extracts the prompt-template table from a LaTeX source and writes one
plain-text snapshot per row.

usage: template_oracle.py <latex-source> <out-dir>

Conversion: ``...'' quotes dropped; \\newline plus surrounding whitespace
-> one newline; \\phantom{--} -> two spaces; \\texttt{x} -> x; \\_ -> _;
\\% -> %; \\{ \\} -> { }.
"""
import re
import sys

ROWS = {
    "Self-Awareness Prompting": "self_awareness",
    "Chain-of-Thought (Summarization)": "chain_of_thought",
    "Cloze-Style Prompt": "cloze",
    "Cognitive Counterfactual Simulation (Final Revision)": "cognitive_counterfactual",
    "Self-Help Debias (Rewrite Stage)": "self_help_debias",
    "Partial Summaries Ensemble (Merge Prompt)": "partial_summaries_merge",
    "Weighted Summaries (Chunk Prompt)": "weighted_summaries_chunk",
    "Attention-Sort Re-ordering (Final Prompt)": "attention_sort",
    "Position-Invariant Shuffle (Prompt)": "position_invariant_shuffle",
    "Baseline": "factcheck_baseline",
    "Prompt Calibration (CoT)": "cot_calibration",
    "Knowledge Boundary Awareness": "knowledge_boundary",
    "Epistemic Tagging": "epistemic_tagging",
}


def convert(body):
    s = re.sub(r"\\texttt\{((?:[^{}]|\\\{|\\\})*)\}", lambda m: m.group(1), body)
    s = s.replace("\\_", "_").replace("\\%", "%").replace("\\{", "{").replace("\\}", "}")
    s = re.sub(r"\s*\\newline\s*", "\n", s)
    s = s.replace("\\phantom{--}", "  ")
    return s.strip()


def main(src, out):
    tex = open(src, encoding="utf-8").read()
    start = tex.index("\\begin{tabular}{p{3.5cm}")
    end = tex.index("\\end{tabular}", start)
    table = tex[start:end]
    found = {}
    for m in re.finditer(r"\n([^\n&\\]+?)\s*&\s*``(.*?)''\s*\\\\", table, re.S):
        label = m.group(1).strip()
        if label in ROWS:
            found[ROWS[label]] = convert(m.group(2))
    missing = set(ROWS.values()) - set(found)
    if missing:
        sys.exit(f"rows not found: {sorted(missing)}")
    for name, text in sorted(found.items()):
        with open(f"{out}/{name}.txt", "w", encoding="utf-8") as f:
            f.write(text)
        print(name, len(text))


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
