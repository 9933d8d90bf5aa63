"""Independent reference implementations used to cross-check the package."""


def read_spans(tags):
    """Scan tags left to right; a span starts at B-T and runs over following I-T."""
    spans = []
    i = 0
    while i < len(tags):
        if tags[i].startswith("B-"):
            etype = tags[i][2:]
            j = i + 1
            while j < len(tags) and tags[j] == "I-" + etype:
                j += 1
            spans.append((etype, i, j - 1))
            i = j
        else:
            i += 1
    return spans


def f1_oracle(gold_sents, pred_sents):
    """Materialise (sentence index, span) sets for both sides and intersect them."""
    gold = {(k, sp) for k, s in enumerate(gold_sents) for sp in read_spans(s.tags)}
    pred = {(k, sp) for k, s in enumerate(pred_sents) for sp in read_spans(s.tags)}
    correct = len(gold & pred)
    p = correct / len(pred) if pred else 0.0
    r = correct / len(gold) if gold else 0.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    return {"gold": len(gold), "predicted": len(pred), "correct": correct, "precision": p, "recall": r, "f1": f}
