"""Report-text evaluation: BLEU, ROUGE, METEOR, CIDEr, Jaccard, TF-IDF cosine, Distinct-n.

All functions take already-tokenized sequences (lists of str) except
``tokenize`` itself. Variants are fixed: exact-match METEOR, plain CIDEr
(no length penalty or clipping) scaled by 10, unsmoothed BLEU by default.
"""
from __future__ import annotations

import math
import string
import warnings
from collections import Counter
from dataclasses import dataclass, field

from .errors import InputError

_STRIP = string.punctuation.replace("%", "")


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, trim edge punctuation (keeps '%' and inner '-' / '.')."""
    out = []
    for raw in text.lower().split():
        tok = raw.strip(_STRIP)
        if tok:
            out.append(tok)
    return out


def ngrams(tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


# --------------------------------------------------------------------------
# BLEU


def _closest_ref_len(c: int, refs) -> int:
    return min((abs(len(r) - c), len(r)) for r in refs)[1]


def _clipped(candidate, references, n):
    cand = ngrams(candidate, n)
    max_ref = Counter()
    for ref in references:
        for g, k in ngrams(ref, n).items():
            if k > max_ref[g]:
                max_ref[g] = k
    matched = sum(min(k, max_ref[g]) for g, k in cand.items())
    return matched, max(len(candidate) - n + 1, 0)


def _bleu_from_counts(matched, totals, c, r, max_n, smooth):
    if c == 0:
        return [0.0] * max_n
    bp = 1.0 if c >= r else math.exp(1.0 - r / c)
    scores, log_sum = [], 0.0
    for n in range(1, max_n + 1):
        m, t = matched[n - 1], totals[n - 1]
        if smooth and n > 1:
            m, t = m + 1, t + 1
        if m == 0 or t == 0:
            # a zero precision zeroes this and every higher order
            scores.extend([0.0] * (max_n - n + 1))
            break
        log_sum += math.log(m / t)
        scores.append(bp * math.exp(log_sum / n))
    return scores


def bleu(candidate, references, max_n: int = 4, smooth: bool = False) -> list[float]:
    """Sentence BLEU-1..max_n. ``references`` is a list of token lists."""
    references = _as_refs(references)
    matched, totals = zip(*(_clipped(candidate, references, n) for n in range(1, max_n + 1)))
    return _bleu_from_counts(matched, totals, len(candidate),
                             _closest_ref_len(len(candidate), references), max_n, smooth)


def corpus_bleu(candidates, references_list, max_n: int = 4, smooth: bool = False) -> list[float]:
    """Corpus BLEU with clipped counts and lengths summed over all pairs."""
    matched = [0] * max_n
    totals = [0] * max_n
    c_len = r_len = 0
    for cand, refs in zip(candidates, references_list):
        refs = _as_refs(refs)
        for n in range(1, max_n + 1):
            m, t = _clipped(cand, refs, n)
            matched[n - 1] += m
            totals[n - 1] += t
        c_len += len(cand)
        r_len += _closest_ref_len(len(cand), refs)
    return _bleu_from_counts(matched, totals, c_len, r_len, max_n, smooth)


def _as_refs(references):
    if not references:
        raise InputError("at least one reference is required")
    if isinstance(references[0], str):
        return [list(references)]
    return [list(r) for r in references]


# --------------------------------------------------------------------------
# ROUGE


def _f1(overlap, n_cand, n_ref):
    if n_cand == 0 or n_ref == 0 or overlap == 0:
        return 0.0
    p, r = overlap / n_cand, overlap / n_ref
    return 2 * p * r / (p + r)


def lcs_length(a, b) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge(candidate, reference) -> dict:
    if not candidate and not reference:
        return {"rouge1": 1.0, "rouge2": 1.0, "rougeL": 1.0}
    out = {}
    for n in (1, 2):
        c, r = ngrams(candidate, n), ngrams(reference, n)
        overlap = sum((c & r).values())
        out[f"rouge{n}"] = _f1(overlap, sum(c.values()), sum(r.values()))
    out["rougeL"] = _f1(lcs_length(candidate, reference), len(candidate), len(reference))
    return out


# --------------------------------------------------------------------------
# METEOR


METEOR_SEARCH_BUDGET = 200_000


class _BudgetExceeded(Exception):
    pass


def _count_chunks(pairs) -> int:
    """Chunks in an alignment given as (cand_pos, ref_pos) pairs."""
    pairs = sorted(pairs)
    chunks = 0
    prev = None
    for i, j in pairs:
        if prev is None or i != prev[0] + 1 or j != prev[1] + 1:
            chunks += 1
        prev = (i, j)
    return chunks


def _greedy_alignment(candidate, reference):
    """Repeatedly align the longest run of unmatched words common to both sides."""
    free_c = [True] * len(candidate)
    free_r = [True] * len(reference)
    pairs = []
    while True:
        best = (0, 0, 0)
        for i in range(len(candidate)):
            for j in range(len(reference)):
                k = 0
                while (i + k < len(candidate) and j + k < len(reference) and free_c[i + k]
                       and free_r[j + k] and candidate[i + k] == reference[j + k]):
                    k += 1
                if k > best[0]:
                    best = (k, i, j)
        k, i, j = best
        if k == 0:
            return pairs
        for d in range(k):
            free_c[i + d] = free_r[j + d] = False
            pairs.append((i + d, j + d))


def meteor_alignment(candidate, reference, budget: int = METEOR_SEARCH_BUDGET) -> tuple[int, int]:
    """Exact-match alignment: maximum matches, then fewest chunks.

    Returns ``(matches, chunks)``. Solved exactly by memoized search over
    candidate positions; only words occurring on both sides branch. Chunk
    minimization is NP-hard in general, so once the search visits more than
    ``budget`` states the greedy longest-run alignment is used instead.
    """
    ref_pos = {}
    for j, w in enumerate(reference):
        ref_pos.setdefault(w, []).append(j)
    cand_count = Counter(candidate)
    need = {w: min(k, len(ref_pos.get(w, ()))) for w, k in cand_count.items()}
    m = sum(need.values())
    if m == 0:
        return 0, 0

    n = len(candidate)
    # occurrences of each word still ahead of position i (inclusive)
    ahead = [None] * n
    seen = Counter()
    for i in range(n - 1, -1, -1):
        seen[candidate[i]] += 1
        ahead[i] = seen[candidate[i]]

    memo = {}

    def best(i, used, last, left):
        # used: frozenset of taken reference positions; last: ref pos matched at i-1 or None
        if i == n:
            return 0
        key = (i, used, last)
        if key in memo:
            return memo[key]
        if len(memo) >= budget:
            raise _BudgetExceeded
        w = candidate[i]
        options = []
        still = left.get(w, 0)
        if ahead[i] > still:
            options.append(best(i + 1, used, None, left))
        if still > 0:
            left2 = dict(left)
            left2[w] = still - 1
            for j in ref_pos[w]:
                if j in used:
                    continue
                cost = 0 if last is not None and j == last + 1 else 1
                options.append(cost + best(i + 1, used | {j}, j, left2))
        memo[key] = min(options)
        return memo[key]

    try:
        chunks = best(0, frozenset(), None, {w: k for w, k in need.items() if k})
    except _BudgetExceeded:
        chunks = _count_chunks(_greedy_alignment(candidate, reference))
    return m, chunks


def meteor(candidate, reference) -> float:
    m, chunks = meteor_alignment(candidate, reference)
    if m == 0:
        return 0.0
    p = m / len(candidate)
    r = m / len(reference)
    fmean = 10 * p * r / (r + 9 * p)
    penalty = 0.5 * (chunks / m) ** 3
    return fmean * (1 - penalty)


# --------------------------------------------------------------------------
# Corpus statistics, CIDEr and TF-IDF


@dataclass
class Corpus:
    """Candidate/reference pairs plus document frequencies built from references only."""
    candidates: list
    references: list
    df: dict = field(default_factory=dict)  # n -> Counter of n-gram document frequencies

    def __post_init__(self):
        self.references = [_as_refs(r) for r in self.references]
        if len(self.candidates) != len(self.references):
            raise InputError("every candidate needs a reference list")
        for n in range(1, 5):
            df = Counter()
            for refs in self.references:
                grams = set()
                for ref in refs:
                    grams.update(ngrams(ref, n))
                df.update(grams)
            self.df[n] = df

    @property
    def size(self) -> int:
        return len(self.references)

    def idf(self, gram) -> float:
        return math.log(self.size / max(1, self.df[len(gram)][gram]))


def _tfidf(tokens, n, corpus: Corpus) -> dict:
    return {g: k * corpus.idf(g) for g, k in ngrams(tokens, n).items()}


def _cosine(u: dict, v: dict) -> float:
    nu = math.sqrt(sum(x * x for x in u.values()))
    nv = math.sqrt(sum(x * x for x in v.values()))
    if nu == 0 or nv == 0:
        return 0.0
    return sum(x * v.get(g, 0.0) for g, x in u.items()) / (nu * nv)


def cider(corpus: Corpus) -> tuple[list[float], float]:
    """Per-pair CIDEr and the corpus mean (10 x mean over n=1..4 of TF-IDF cosines)."""
    if corpus.size < 2:
        warnings.warn("CIDEr on a single-pair corpus: every IDF is zero", RuntimeWarning, stacklevel=2)
    scores = []
    for cand, refs in zip(corpus.candidates, corpus.references):
        per_n = []
        for n in range(1, 5):
            vc = _tfidf(cand, n, corpus)
            per_n.append(sum(_cosine(vc, _tfidf(r, n, corpus)) for r in refs) / len(refs))
        scores.append(10.0 * sum(per_n) / 4)
    mean = sum(scores) / len(scores) if scores else 0.0
    return scores, mean


def tfidf_cosine(candidate, reference, corpus: Corpus) -> float:
    return _cosine(_tfidf(candidate, 1, corpus), _tfidf(reference, 1, corpus))


def jaccard(candidate, reference) -> float:
    a, b = set(candidate), set(reference)
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)


def distinct_n(texts, n: int) -> float:
    if n < 1:
        raise InputError("n must be >= 1")
    grams = Counter()
    for toks in texts:
        grams.update(ngrams(toks, n))
    total = sum(grams.values())
    return len(grams) / total if total else 0.0


# --------------------------------------------------------------------------
# Full metric row


def evaluate_corpus(candidates, references) -> dict:
    """Table-shaped metric row over tokenized candidates and references.

    BLEU is corpus-level; the remaining pairwise metrics are averaged over
    pairs against the first reference of each pair.
    """
    corpus = Corpus(list(candidates), list(references))
    pairs = list(zip(corpus.candidates, corpus.references))
    if not pairs:
        raise InputError("empty corpus")
    b = corpus_bleu(corpus.candidates, corpus.references)
    k = len(pairs)
    rouges = [rouge(c, refs[0]) for c, refs in pairs]
    _, cider_mean = cider(corpus)
    return {
        "bleu1": b[0], "bleu2": b[1], "bleu3": b[2], "bleu4": b[3],
        "rouge1": sum(r["rouge1"] for r in rouges) / k,
        "rouge2": sum(r["rouge2"] for r in rouges) / k,
        "rougeL": sum(r["rougeL"] for r in rouges) / k,
        "meteor": sum(meteor(c, refs[0]) for c, refs in pairs) / k,
        "cider": cider_mean,
        "jaccard": sum(jaccard(c, refs[0]) for c, refs in pairs) / k,
        "tfidf_cosine": sum(tfidf_cosine(c, refs[0], corpus) for c, refs in pairs) / k,
        "dist1": distinct_n(corpus.candidates, 1),
        "dist2": distinct_n(corpus.candidates, 2),
        "n_pairs": k,
    }
