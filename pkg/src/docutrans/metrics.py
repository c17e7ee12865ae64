"""Translation quality metrics: corpus BLEU with n-gram breakdown, METEOR
(exact-match variant), ROUGE-L, and TER with greedy block shifts.

All operations are pure functions over token lists. `evaluate_corpus` applies
the shared whitespace tokenizer to raw segment strings and aggregates:
BLEU at corpus level, the rest as segment means.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field

from .errors import DataFormatError
from .nmtdata import tokenize

# TER block shifts longer than this are never considered (standard cap).
MAX_SHIFT_LENGTH = 10


@dataclass
class MetricReport:
    bleu: float
    bleu_n: list[float]          # cumulative BLEU-1..BLEU-4
    meteor: float
    rouge_l: float
    ter: float
    segments: int
    precisions: list[float] = field(default_factory=list)  # per-order p_n, debug only

    def to_dict(self) -> dict:
        d = {"BLEU": self.bleu}
        for i, score in enumerate(self.bleu_n, start=1):
            d[f"BLEU-{i}"] = score
        d["METEOR"] = self.meteor
        d["ROUGE-L"] = self.rouge_l
        d["TER"] = self.ter
        d["segments"] = self.segments
        return d

    def to_json(self) -> str:
        """Fixed 6-decimal formatting for every score."""
        parts = []
        for key, value in self.to_dict().items():
            if key == "segments":
                parts.append(f'"segments": {value}')
            else:
                parts.append(f'"{key}": {value:.6f}')
        return "{" + ", ".join(parts) + "}"

    @classmethod
    def from_json(cls, text: str) -> "MetricReport":
        d = json.loads(text)
        return cls(
            bleu=d["BLEU"],
            bleu_n=[d[f"BLEU-{i}"] for i in range(1, 5)],
            meteor=d["METEOR"],
            rouge_l=d["ROUGE-L"],
            ter=d["TER"],
            segments=d["segments"],
        )


def _ngram_counts(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu(
    hyps: list[list[str]], refs: list[list[str]], max_n: int = 4, smoothing: bool = True
) -> tuple[float, list[float]]:
    """Corpus BLEU: clipped n-gram precisions pooled over all segments.

    bleu_n is the cumulative score BP * exp(mean(log p_1..p_n)). The brevity
    penalty is min(1, exp(1 - r/c)) for total reference length r and total
    hypothesis length c. With smoothing on, a zero match count for n >= 2
    becomes (matches+1)/(total+1); p_1 is never smoothed. Orders whose
    denominator is zero corpus-wide (every segment shorter than n) drop out
    of the geometric mean, so an identical corpus always scores 1.0.
    """
    if len(hyps) != len(refs):
        raise DataFormatError(f"{len(hyps)} hypotheses vs {len(refs)} references")
    if not hyps:
        raise DataFormatError("empty corpus")
    matched = [0] * max_n
    total = [0] * max_n
    hyp_len = ref_len = 0
    for hyp, ref in zip(hyps, refs):
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in range(1, max_n + 1):
            hc = _ngram_counts(hyp, n)
            rc = _ngram_counts(ref, n)
            total[n - 1] += sum(hc.values())
            matched[n - 1] += sum(min(count, rc[g]) for g, count in hc.items())

    if hyp_len == 0:
        return 0.0, [0.0] * max_n
    bp = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)

    precisions: list[float | None] = []
    for n in range(max_n):
        num, den = matched[n], total[n]
        if den == 0:
            precisions.append(None)
            continue
        if smoothing and n >= 1 and num == 0:
            num, den = num + 1, den + 1
        precisions.append(num / den)

    cumulative = []
    for n in range(1, max_n + 1):
        ps = [p for p in precisions[:n] if p is not None]
        if not ps or min(ps) <= 0.0:
            cumulative.append(0.0)
        else:
            cumulative.append(bp * math.exp(sum(math.log(p) for p in ps) / len(ps)))
    return cumulative[max_n - 1], cumulative


def _align_chunks(hyp: list[str], ref: list[str]) -> tuple[int, int]:
    """Exact-match unigram alignment: greedily pair the longest contiguous
    common block first (ties: earliest in hyp, then ref), so matches are
    maximal and the chunk count is minimized in the standard greedy sense.

    Returns (matches, chunks).
    """
    hyp_free = [True] * len(hyp)
    ref_free = [True] * len(ref)
    matches = chunks = 0
    while True:
        best_len, best = 0, None
        for i in range(len(hyp)):
            if not hyp_free[i]:
                continue
            for j in range(len(ref)):
                if not ref_free[j] or hyp[i] != ref[j]:
                    continue
                length = 0
                while (
                    i + length < len(hyp)
                    and j + length < len(ref)
                    and hyp_free[i + length]
                    and ref_free[j + length]
                    and hyp[i + length] == ref[j + length]
                ):
                    length += 1
                if length > best_len:
                    best_len, best = length, (i, j)
        if best is None:
            return matches, chunks
        i, j = best
        for k in range(best_len):
            hyp_free[i + k] = False
            ref_free[j + k] = False
        matches += best_len
        chunks += 1


def meteor(hyp: list[str], ref: list[str]) -> float:
    """F-mean 10PR/(R+9P) scaled by the fragmentation penalty 0.5*(chunks/m)^3."""
    if not hyp or not ref:
        return 0.0
    m, chunks = _align_chunks(hyp, ref)
    if m == 0:
        return 0.0
    precision = m / len(hyp)
    recall = m / len(ref)
    f_mean = 10.0 * precision * recall / (recall + 9.0 * precision)
    penalty = 0.5 * (chunks / m) ** 3
    return f_mean * (1.0 - penalty)


def _lcs_length(a: list[str], b: list[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for i in range(1, len(a) + 1):
        curr = [0] * (len(b) + 1)
        for j in range(1, len(b) + 1):
            if a[i - 1] == b[j - 1]:
                curr[j] = prev[j - 1] + 1
            else:
                curr[j] = max(prev[j], curr[j - 1])
        prev = curr
    return prev[len(b)]


def rouge_l(hyp: list[str], ref: list[str]) -> float:
    """Harmonic mean of LCS precision and recall."""
    lcs = _lcs_length(hyp, ref)
    if lcs == 0:
        return 0.0
    precision = lcs / len(hyp)
    recall = lcs / len(ref)
    return 2.0 * precision * recall / (precision + recall)


def _edit_distance(a: list[str], b: list[str]) -> int:
    """Levenshtein distance with unit-cost insert/delete/substitute."""
    if not a:
        return len(b)
    if not b:
        return len(a)
    prev = list(range(len(b) + 1))
    for i in range(1, len(a) + 1):
        curr = [i] + [0] * len(b)
        for j in range(1, len(b) + 1):
            sub = prev[j - 1] + (a[i - 1] != b[j - 1])
            curr[j] = min(sub, prev[j] + 1, curr[j - 1] + 1)
        prev = curr
    return prev[len(b)]


def _ref_block_set(ref: list[str], max_len: int) -> set[tuple[str, ...]]:
    blocks = set()
    for length in range(1, min(max_len, len(ref)) + 1):
        for j in range(len(ref) - length + 1):
            blocks.add(tuple(ref[j : j + length]))
    return blocks


def ter(hyp: list[str], ref: list[str], allow_shifts: bool = True) -> float:
    """Edits (insert/delete/substitute) plus block shifts, per reference token.

    Greedy shift search: repeatedly apply the block shift that most reduces
    the remaining edit distance; each shift costs 1, so only shifts with a
    net gain (reduction > 1) are applied. Candidate blocks are restricted to
    spans that occur verbatim in the reference.
    """
    if not ref:
        raise DataFormatError("TER requires a non-empty reference")
    current = list(hyp)
    distance = _edit_distance(current, ref)
    shifts = 0
    if allow_shifts:
        ref_blocks = _ref_block_set(ref, MAX_SHIFT_LENGTH)
        while distance > 0:
            best_gain, best_seq = 1, None
            for start in range(len(current)):
                for length in range(1, min(MAX_SHIFT_LENGTH, len(current) - start) + 1):
                    block = current[start : start + length]
                    if tuple(block) not in ref_blocks:
                        continue
                    rest = current[:start] + current[start + length :]
                    for pos in range(len(rest) + 1):
                        if pos == start:
                            continue
                        candidate = rest[:pos] + block + rest[pos:]
                        gain = distance - _edit_distance(candidate, ref)
                        if gain > best_gain:
                            best_gain, best_seq = gain, candidate
            if best_seq is None:
                break
            current = best_seq
            distance -= best_gain
            shifts += 1
    return (shifts + distance) / len(ref)


def evaluate_corpus(
    hyps: list[str], refs: list[str], tokenizer=tokenize, bleu_smoothing: bool = True
) -> MetricReport:
    """Tokenize aligned segment strings and aggregate every metric."""
    if len(hyps) != len(refs):
        raise DataFormatError(f"{len(hyps)} hypotheses vs {len(refs)} references")
    if not hyps:
        raise DataFormatError("empty corpus")
    hyp_tokens = [tokenizer(h) for h in hyps]
    ref_tokens = [tokenizer(r) for r in refs]
    bleu_score, bleu_cumulative = bleu(hyp_tokens, ref_tokens, smoothing=bleu_smoothing)

    # Per-order precisions recomputed for the debug field.
    matched = [0] * 4
    total = [0] * 4
    for hyp, ref in zip(hyp_tokens, ref_tokens):
        for n in range(1, 5):
            hc = _ngram_counts(hyp, n)
            rc = _ngram_counts(ref, n)
            total[n - 1] += sum(hc.values())
            matched[n - 1] += sum(min(c, rc[g]) for g, c in hc.items())
    precisions = [m / t if t else 0.0 for m, t in zip(matched, total)]

    meteor_mean = sum(meteor(h, r) for h, r in zip(hyp_tokens, ref_tokens)) / len(hyps)
    rouge_mean = sum(rouge_l(h, r) for h, r in zip(hyp_tokens, ref_tokens)) / len(hyps)
    ter_mean = sum(ter(h, r) for h, r in zip(hyp_tokens, ref_tokens)) / len(hyps)
    return MetricReport(
        bleu=bleu_score,
        bleu_n=bleu_cumulative,
        meteor=meteor_mean,
        rouge_l=rouge_mean,
        ter=ter_mean,
        segments=len(hyps),
        precisions=precisions,
    )
