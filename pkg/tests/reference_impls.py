"""Deliberately naive reference implementations for cross-checking.

Everything here favors obviousness over speed: explicit loops, list
scans, no numpy vectorization. The real modules must agree with these on
randomized inputs.
"""

from __future__ import annotations

import math


# -- sampler truncation ------------------------------------------------------


def ref_top_k(probs, k) -> set[int]:
    order = sorted(range(len(probs)), key=lambda i: (-probs[i], i))
    return set(order[: min(k, len(probs))])


def ref_top_p(probs, p) -> set[int]:
    order = sorted(range(len(probs)), key=lambda i: (-probs[i], i))
    kept: set[int] = set()
    mass = 0.0
    for i in order:
        kept.add(i)
        mass += probs[i]
        if mass >= p:
            break
    return kept


def ref_min_p(probs, p_base) -> set[int]:
    bar = p_base * max(probs)
    return {i for i, q in enumerate(probs) if q >= bar}


# -- n-gram metrics ----------------------------------------------------------


def ref_ngrams(tokens, n):
    return [tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1)]


def ref_distinct(tokens, n) -> float:
    grams = ref_ngrams(tokens, n)
    if not grams:
        return 0.0
    uniq = []
    for g in grams:
        if g not in uniq:
            uniq.append(g)
    return len(uniq) / len(grams)


def ref_bleu(candidate, references) -> float:
    c = len(candidate)
    if c == 0:
        return 0.0
    log_sum = 0.0
    used = 0
    for n in range(1, 5):
        cand_grams = ref_ngrams(candidate, n)
        if not cand_grams:
            continue
        hits = 0
        counted: dict[tuple, int] = {}
        for g in cand_grams:
            counted[g] = counted.get(g, 0) + 1
        for g, cnt in counted.items():
            best = 0
            for ref in references:
                in_ref = 0
                for rg in ref_ngrams(ref, n):
                    if rg == g:
                        in_ref += 1
                if in_ref > best:
                    best = in_ref
            hits += min(cnt, best)
        used += 1
        log_sum += math.log(max(hits / len(cand_grams), 1e-9))
    if used == 0:
        return 0.0
    best_r = None
    for ref in references:
        r = len(ref)
        if best_r is None or (abs(r - c), r) < (abs(best_r - c), best_r):
            best_r = r
    bp = 1.0 if c > best_r else math.exp(1.0 - best_r / c)
    return bp * math.exp(log_sum / used)


def ref_self_bleu(token_lists) -> float:
    scores = []
    for i, cand in enumerate(token_lists):
        refs = [t for j, t in enumerate(token_lists) if j != i]
        scores.append(ref_bleu(cand, refs))
    return sum(scores) / len(scores)


def ref_ead(token_lists, vocab_sizes) -> float:
    vals = []
    for n in range(1, 6):
        grams = []
        for toks in token_lists:
            grams.extend(ref_ngrams(toks, n))
        if not grams:
            continue
        v = vocab_sizes[n]
        seen = []
        for g in grams:
            if g not in seen:
                seen.append(g)
        expected = v * (1.0 - ((v - 1.0) / v) ** len(grams))
        vals.append(len(seen) / expected)
    if not vals:
        return 0.0
    return 100.0 * sum(vals) / len(vals)


# -- embedding diversity -----------------------------------------------------


def ref_embed_div(vectors) -> float:
    unit = []
    for v in vectors:
        norm = math.sqrt(sum(x * x for x in v))
        unit.append([x / norm for x in v] if norm > 0 else list(v))
    dists = []
    for i in range(len(unit)):
        for j in range(i + 1, len(unit)):
            sim = sum(a * b for a, b in zip(unit[i], unit[j]))
            dists.append(1.0 - sim)
    return 100.0 * sum(dists) / len(dists)
