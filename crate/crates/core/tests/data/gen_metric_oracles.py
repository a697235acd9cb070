"""Regenerates metric_oracles.json from NLTK and SciPy.

Usage: PYTHONPATH=<nltk install> python3 gen_metric_oracles.py > metric_oracles.json
"""
import json
import random
from collections import Counter

from nltk.translate.bleu_score import SmoothingFunction, corpus_bleu, sentence_bleu
from scipy import stats

rng = random.Random(20240611)
ALPHA = list("abcdef")


def toks(lo, hi):
    return [rng.choice(ALPHA) for _ in range(rng.randint(lo, hi))]


def ngrams(t, n):
    return Counter(tuple(t[i:i + n]) for i in range(len(t) - n + 1))


def prf(hit, c, r):
    p = hit / c if c else 0.0
    rec = hit / r if r else 0.0
    f = 2 * p * rec / (p + rec) if p + rec else 0.0
    return [p, rec, f]


def rouge_n(c, r, n):
    cc, rc = ngrams(c, n), ngrams(r, n)
    hit = sum(min(v, rc[k]) for k, v in cc.items())
    return prf(hit, max(len(c) - n + 1, 0), max(len(r) - n + 1, 0))


def lcs(a, b):
    t = [[0] * (len(b) + 1) for _ in range(len(a) + 1)]
    for i in range(len(a)):
        for j in range(len(b)):
            t[i + 1][j + 1] = t[i][j] + 1 if a[i] == b[j] else max(t[i][j + 1], t[i + 1][j])
    return t[-1][-1]


smooth = SmoothingFunction().method2
bleu = []
for _ in range(60):
    n = rng.randint(1, 5)
    cands = [toks(1, 7) for _ in range(n)]
    refs = [[toks(1, 7) for _ in range(rng.randint(1, 3))] for _ in range(n)]
    if rng.random() < 0.3:
        refs[0][0] = list(cands[0])
    bleu.append({
        "candidates": cands,
        "references": refs,
        "corpus1": corpus_bleu(refs, cands, weights=(1.0,)),
        "corpus2": corpus_bleu(refs, cands, weights=(0.5, 0.5)),
        "sentence1": [sentence_bleu(r, c, weights=(1.0,), smoothing_function=smooth) for c, r in zip(cands, refs)],
        "sentence2": [sentence_bleu(r, c, weights=(0.5, 0.5), smoothing_function=smooth) for c, r in zip(cands, refs)],
    })

rouge = []
for _ in range(100):
    c, r = toks(0, 9), toks(1, 9)
    rouge.append({
        "candidate": c,
        "reference": r,
        "rouge1": rouge_n(c, r, 1),
        "rouge2": rouge_n(c, r, 2),
        "rougeL": prf(lcs(c, r), len(c), len(r)),
    })

ttest = []
for _ in range(40):
    n = rng.randint(2, 30)
    a = [round(rng.uniform(0, 1), 4) for _ in range(n)]
    b = [round(x + rng.gauss(0.05, 0.2), 4) for x in a]
    res = stats.ttest_rel(a, b)
    ttest.append({"a": a, "b": b, "t": float(res.statistic), "df": n - 1, "p": float(res.pvalue)})

print(json.dumps({"bleu": bleu, "rouge": rouge, "ttest": ttest}))
