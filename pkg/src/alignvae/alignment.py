"""Alignment prediction from posterior means and AER scoring.

Link convention: a link is a pair (j, i) of 1-based positions, j on the
L2 side and i on the L1 side with NULL excluded (the padded L1 index of
the first real word is 1, which matches the gold numbering). Gold files
hold lines ``sid j i flag`` with flag S (sure, the default) or P
(possible); sure links are implicitly possible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import model as model_mod
from .corpus import SentencePair
from .errors import GoldFormatError
from .model import ModelConfig


@dataclass(frozen=True)
class GoldAlignment:
    sure: frozenset
    possible: frozenset

    def __post_init__(self):
        if not self.sure <= self.possible:
            raise GoldFormatError("sure links must be a subset of possible links")


def best_position(scores) -> int:
    """Aligned L1 position for one L2 token given per-position scores.

    Word positions tie toward the lowest index; position 0 (NULL) wins
    only strictly. Returns 0 when the token should stay unaligned.
    """
    scores = np.asarray(scores)
    if scores.shape[0] < 2:
        return 0
    best = 1 + int(np.argmax(scores[1:]))
    return 0 if scores[0] > scores[best] else best


def argmax_links(score_matrix) -> set:
    """Links {(j, i)} from an [m, n] score matrix (rows are L1 positions)."""
    scores = np.asarray(score_matrix)
    links = set()
    for j in range(scores.shape[1]):
        i = best_position(scores[:, j])
        if i != 0:
            links.add((j + 1, i))
    return links


def viterbi_align(pair: SentencePair, params, cfg: ModelConfig) -> set:
    """Most likely L1 position for each L2 token, from posterior means.

    Conditions on the posterior locations u_i and scores each position
    with the exact L2 head (the uniform alignment prior is constant per
    token, so the argmax is prior-free); ties and NULL per
    ``best_position``.
    """
    if cfg.hierarchical:
        u = _hier_posterior_means(pair, params, cfg)
    else:
        u = model_mod.posterior_means(pair.x, params, cfg)
    log_probs = model_mod.l2_head_log_probs(u, params)  # [m, v_y]
    return argmax_links(log_probs[:, np.asarray(pair.y, dtype=np.intp)])


def _hier_posterior_means(pair, params, cfg) -> np.ndarray:
    """Posterior locations conditioned on the sentence posterior mean."""
    from . import hiermodel

    u_k, _ = hiermodel.infer_sentence_posterior(pair.x, params)
    h = model_mod.encode(pair.x, params, cfg)
    l, _ = hiermodel.infer_word_posterior_conditioned(u_k, h, params)
    return l.data


def aer(pred_links, gold: GoldAlignment) -> float:
    """1 - (|A & S| + |A & P|) / (|A| + |S|); 0 when both A and S are empty."""
    a = set(pred_links)
    n_s = len(a & gold.sure)
    n_p = len(a & gold.possible)
    denom = len(a) + len(gold.sure)
    if denom == 0:
        return 0.0
    return 1.0 - (n_s + n_p) / denom


def corpus_aer(preds: dict, golds: dict):
    """Aggregate AER over sentence ids, plus the raw counts.

    Counts are summed over sentences before the ratio is taken, so the
    result does not depend on evaluation order. Sentences missing from
    either mapping contribute empty sets.
    """
    tot_a = tot_s = tot_as = tot_ap = tot_p = 0
    for sid in sorted(set(preds) | set(golds)):
        a = set(preds.get(sid, ()))
        gold = golds.get(sid)
        sure = gold.sure if gold else frozenset()
        poss = gold.possible if gold else frozenset()
        tot_a += len(a)
        tot_s += len(sure)
        tot_p += len(poss)
        tot_as += len(a & sure)
        tot_ap += len(a & poss)
    denom = tot_a + tot_s
    score = 0.0 if denom == 0 else 1.0 - (tot_as + tot_ap) / denom
    return score, {"A": tot_a, "S": tot_s, "P": tot_p}


def parse_gold(path) -> dict:
    """Read ``sid j i [S|P]`` lines into GoldAlignment per sentence id."""
    sure: dict[int, set] = {}
    poss: dict[int, set] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) not in (3, 4):
                raise GoldFormatError(
                    f"{path}:{lineno}: expected 'sid j i [S|P]', got {line!r}"
                )
            try:
                sid, j, i = (int(p) for p in parts[:3])
            except ValueError:
                raise GoldFormatError(
                    f"{path}:{lineno}: non-integer position in {line!r}"
                ) from None
            flag = parts[3].upper() if len(parts) == 4 else "S"
            if flag not in ("S", "P"):
                raise GoldFormatError(f"{path}:{lineno}: unknown flag {flag!r}")
            poss.setdefault(sid, set()).add((j, i))
            if flag == "S":
                sure.setdefault(sid, set()).add((j, i))
    return {
        sid: GoldAlignment(frozenset(sure.get(sid, ())), frozenset(poss[sid]))
        for sid in poss
    }


def write_links(links_by_sid: dict, path) -> None:
    """Write predicted links in the gold format, flag S, sorted blocks."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# sid l2_pos l1_pos flag (1-based, flag S=sure P=possible)\n")
        for sid in sorted(links_by_sid):
            for j, i in sorted(links_by_sid[sid]):
                fh.write(f"{sid} {j} {i} S\n")
