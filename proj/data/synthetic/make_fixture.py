#!/usr/bin/env python3
"""Writes the synthetic benchmark: generator.lm, evaluator.lm, items.jsonl.

The outputs are committed; rerun only to change them.
"""
import json
import pathlib

HERE = pathlib.Path(__file__).resolve().parent

VOCAB = ["first", "then", "next", "we", "add", "subtract", "count", "check",
         "the", "numbers", "result", "again", "so", "answer", "is",
         "1", "2", "3", "4", "5", ".", "</s>", "<unk>"]
DIGITS = ["1", "2", "3", "4", "5"]

# Generator grammar: previous symbol(s) -> weights of the next symbol.
GEN = {
    ("first",): {"we": 8, "the": 2},
    ("then",): {"we": 6, "check": 2, "count": 2},
    ("next",): {"we": 7, "add": 3},
    ("we",): {"add": 4, "subtract": 2, "count": 2, "check": 2},
    ("add",): {"the": 7, "again": 3},
    ("subtract",): {"the": 8, "1": 1, "2": 1},
    ("count",): {"the": 6, "again": 4},
    ("check",): {"the": 8, "again": 2},
    ("the",): {"numbers": 5, "result": 3, "answer": 2},
    ("numbers",): {".": 8, "again": 2},
    ("result",): {".": 6, "is": 4},
    ("again",): {".": 10},
    ("so",): {"the": 7, "we": 3},
    ("answer",): {"is": 10},
    ("is",): {"1": 2, "2": 3, "3": 3, "4": 2, "5": 2},
    (".",): {"then": 4, "next": 3, "we": 2, "so": 3, "</s>": 1},
    ("<unk>", "."): {"first": 5, "we": 3, "then": 2},
    (): {"first": 1, "we": 1},
}
for d in DIGITS:
    GEN[(d,)] = {".": 10}
    GEN[(d, ".")] = {"</s>": 8, "then": 1, "so": 1}

# Evaluator: a differently weighted grammar, smoothed so every symbol has
# positive mass.
EVAL = {
    ("first",): {"we": 5, "the": 5},
    ("then",): {"we": 3, "check": 5, "count": 2},
    ("next",): {"we": 4, "add": 6},
    ("we",): {"add": 6, "subtract": 1, "count": 1, "check": 4},
    ("add",): {"the": 9, "again": 1},
    ("subtract",): {"the": 5, "1": 3, "2": 2},
    ("count",): {"the": 3, "again": 7},
    ("check",): {"the": 5, "again": 5},
    ("the",): {"numbers": 7, "result": 2, "answer": 3},
    ("numbers",): {".": 5, "again": 5},
    ("result",): {".": 3, "is": 7},
    ("again",): {".": 10},
    ("so",): {"the": 9, "we": 1},
    ("answer",): {"is": 10},
    ("is",): {"1": 1, "2": 2, "3": 5, "4": 3, "5": 1},
    ("answer", "is"): {"1": 1, "2": 4, "3": 4, "4": 2, "5": 1},
    ("result", "is"): {"1": 4, "2": 1, "3": 1, "4": 3, "5": 3},
    (".",): {"then": 2, "next": 5, "we": 4, "so": 2, "</s>": 2},
    ("<s>",): {"first": 2, "we": 7, "then": 1},
    ("<unk>",): {"first": 6, "we": 2, "so": 2},
    (): {"we": 1},
}
for d in DIGITS:
    EVAL[(d,)] = {".": 10}


def rows(grammar, smooth):
    out = []
    scoreable = [s for s in VOCAB]
    for ctx in sorted(grammar, key=lambda c: (len(c), c)):
        w = grammar[ctx]
        weights = [w.get(s, 0) * smooth + (1 if smooth > 1 else 0) for s in scoreable]
        total = sum(weights)
        out.append(" ".join(list(ctx) + [f"{x}/{total}" for x in weights]))
    return out


def write_lm(path, order, grammar, smooth, title):
    lines = [f"# {title}", "vocab " + " ".join(VOCAB), f"order {order}"]
    lines += rows(grammar, smooth)
    path.write_text("\n".join(lines) + "\n")


QUESTIONS = [
    ("What is 1 + 2?", "3"), ("What is 4 - 3?", "1"), ("What is 2 + 2?", "4"),
    ("What is 10 / 2?", "5"), ("What is 7 - 5?", "2"), ("What is 1 + 1 + 1?", "3"),
    ("What is 9 - 5?", "4"), ("What is 3 * 1?", "3"), ("What is 6 - 1?", "5"),
    ("What is 8 / 4?", "2"), ("What is 5 - 4?", "1"), ("What is 2 * 2?", "4"),
    ("What is 15 / 5?", "3"), ("What is 12 / 6?", "2"), ("What is 3 + 2?", "5"),
    ("What is 9 / 9?", "1"), ("What is 11 - 7?", "4"), ("What is 0 + 3?", "3"),
    ("What is 20 / 4?", "5"), ("What is 6 / 3?", "2"),
]


def main():
    write_lm(HERE / "generator.lm", 2, GEN, 1, "synthetic generator")
    write_lm(HERE / "evaluator.lm", 2, EVAL, 10, "synthetic evaluator")
    with open(HERE / "items.jsonl", "w") as f:
        for i, (q, a) in enumerate(QUESTIONS, 1):
            f.write(json.dumps({"item_id": f"syn-{i:02d}", "question": q,
                                "task_type": "open_ended", "gold_answer": a}) + "\n")


if __name__ == "__main__":
    main()
