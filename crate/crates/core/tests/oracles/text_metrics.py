"""Reference values for the text metrics, computed straight from the formulas.

Run with `python3 text_metrics.py`; the printed numbers are pinned in the Rust tests.
"""
import hashlib
import math
import re
from collections import Counter

PAIRS = [
    ("the cat sat on the mat", "the cat is on the mat"),
    ("a man is riding a red bicycle down the street", "a person rides a bike along the road"),
    ("The bear walks slowly across the rocky river bank.", "A large brown bear is walking across the river."),
]
DIM = 64


def tokens(s):
    return re.sub(r"[^\w\s]|_", " ", s.lower()).split()


def grams(toks, n):
    return Counter(tuple(toks[i:i + n]) for i in range(len(toks) - n + 1))


def bleu4(cand, refs):
    c = tokens(cand)
    rs = [tokens(r) for r in refs]
    if not c:
        return 0.0
    logs = 0.0
    for n in range(1, 5):
        cg = grams(c, n)
        best = Counter()
        for r in rs:
            best |= grams(r, n)
        hit = sum(min(k, best[g]) for g, k in cg.items())
        tot = sum(cg.values())
        if n == 1:
            if hit == 0:
                return 0.0
            p = hit / tot
        else:
            p = (hit + 1) / (tot + 1)
        logs += math.log(p) / 4
    r = min((abs(len(x) - len(c)), len(x)) for x in rs)[1]
    bp = 1.0 if len(c) > r else math.exp(1 - r / len(c))
    return bp * math.exp(logs)


def lcs(a, b):
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(cand, ref, beta=1.2):
    c, r = tokens(cand), tokens(ref)
    m = lcs(c, r)
    if m == 0:
        return 0.0
    p, rec = m / len(c), m / len(r)
    return (1 + beta ** 2) * p * rec / (rec + beta ** 2 * p)


def cider_d(cands, refs, sigma=6.0):
    rts = [tokens(r) for r in refs]
    df = Counter()
    for r in rts:
        for n in range(1, 5):
            df.update(set(grams(r, n)))
    log_n = math.log(len(refs))

    def vec(toks):
        out = []
        for n in range(1, 5):
            out.append({g: k * (log_n - math.log(max(1.0, df[g]))) for g, k in grams(toks, n).items()})
        return out

    scores = []
    for cand, rt in zip(cands, rts):
        ct = tokens(cand)
        vc, vr = vec(ct), vec(rt)
        total = 0.0
        for n in range(4):
            a, b = vc[n], vr[n]
            na = math.sqrt(sum(v * v for v in a.values()))
            nb = math.sqrt(sum(v * v for v in b.values()))
            val = sum(min(a[g], b[g]) * b[g] for g in a if g in b)
            if na != 0 and nb != 0:
                val /= na * nb
            val *= math.exp(-((len(ct) - len(rt)) ** 2) / (2 * sigma ** 2))
            total += val
        scores.append(total / 4 * 10)
    return scores


def embed(tok):
    v = []
    block = 0
    while len(v) < DIM:
        d = hashlib.sha256(f"{tok}\0{block}".encode()).digest()
        v.extend((b - 127.5) / 127.5 for b in d[: DIM - len(v)])
        block += 1
    n = math.sqrt(sum(x * x for x in v))
    return [x / n for x in v]


def cos(a, b):
    return sum(x * y for x, y in zip(a, b)) / (math.sqrt(sum(x * x for x in a)) * math.sqrt(sum(y * y for y in b)))


def bertscore(cand, ref):
    c = [embed(t) for t in tokens(cand)]
    r = [embed(t) for t in tokens(ref)]
    p = sum(max(cos(x, y) for y in r) for x in c) / len(c)
    rec = sum(max(cos(x, y) for x in c) for y in r) / len(r)
    return 2 * p * rec / (p + rec)


if __name__ == "__main__":
    cid = cider_d([c for c, _ in PAIRS], [r for _, r in PAIRS])
    for (c, r), ci in zip(PAIRS, cid):
        print(f"{bleu4(c, [r]):.12f} {rouge_l(c, r):.12f} {ci:.12f} {bertscore(c, r):.12f}")
