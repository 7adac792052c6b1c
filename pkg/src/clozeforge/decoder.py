"""Multi-token decoding for masked LMs.

Three orthogonal axes, mirrored in :class:`~clozeforge.core.DecoderConfig`:

* initial prediction: all masks in parallel (``independent``), left to right
  (``order``), or highest-probability-first over the remaining masked
  positions (``confidence``);
* refinement: re-mask and re-predict committed tokens, scanning left to right
  until a full scan changes nothing, or repeatedly re-predicting the
  lowest-confidence position until the re-prediction keeps the incumbent;
* extras: length normalization of the pseudo log-likelihood, confidence
  recomputation once neighbours have changed, and beam search with
  deduplication by filled token sequence.

The iteration budget is shared: an m-mask initial prediction consumes m
iterations, refinement spends the rest.  The outer :func:`decode` loop runs
the whole machine once per mask count from 1 to M and keeps the candidate
with the highest confidence.

Determinism rules used throughout: argmax ties break toward the smaller token
id, position ties toward the smaller index, and final rankings tie toward the
lexicographically smallest fill.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

from .core import (
    MASK,
    Candidate,
    ClozeForgeError,
    DecoderConfig,
    DistributionProvider,
    InvalidConfidence,
    MaskedQuery,
    ProviderFailure,
    TokenId,
    unmask,
)
from .toylm import recomputed_confidences


class NoViableFill(ClozeForgeError):
    """The provider assigns zero probability to every fill of some position."""


@dataclass(frozen=True)
class BeamItem:
    candidate: Candidate
    predicted_set: frozenset[int]


@dataclass(frozen=True)
class DecodeResult:
    best: Candidate
    per_m: dict[int, Candidate]


def score_candidate(confidence: Sequence[float], length_norm: bool = False) -> float:
    """Pseudo log-likelihood: sum of log confidences, divided by m when normalizing."""
    for c in confidence:
        if not (0.0 < c <= 1.0):
            raise InvalidConfidence(f"confidence {c} outside (0, 1]")
    total = sum(math.log(c) for c in confidence)
    return total / len(confidence) if length_norm else total


def _predict(provider, tokens, positions, top_k):
    try:
        return provider.predict(list(tokens), list(positions), top_k)
    except ClozeForgeError:
        raise
    except Exception as exc:  # backend-specific failure
        raise ProviderFailure(str(exc)) from exc


def _make_candidate(query: MaskedQuery, filled, confidence, length_norm=False) -> Candidate:
    return Candidate(
        tokens=unmask(query, filled),
        filled=tuple(filled),
        confidence=tuple(confidence),
        score=score_candidate(confidence, length_norm),
        mask_count=query.mask_count,
    )


def predict_independent(query: MaskedQuery, provider: DistributionProvider) -> Candidate:
    """Fill every masked position from one predict call with all masks present."""
    span = list(query.span_positions)
    dists = _predict(provider, query.tokens, span, 1)
    filled, confs = [], []
    for k, dist in zip(span, dists):
        if not dist:
            raise NoViableFill(f"no viable token at position {k}")
        tok, logp = dist[0]
        filled.append(tok)
        confs.append(math.exp(logp))
    return _make_candidate(query, filled, confs)


def predict_autoregressive(
    query: MaskedQuery,
    provider: DistributionProvider,
    order: str = "left_to_right",
) -> Candidate:
    """Fill masks one per step, each step conditioning on all committed fills.

    ``order="left_to_right"`` commits positions in sequence order;
    ``order="confidence"`` commits, at each step, the globally most probable
    (position, token) pair among the remaining masked positions.
    """
    if order not in ("left_to_right", "confidence"):
        raise ValueError(f"unknown order {order!r}")
    tokens = list(query.tokens)
    span = list(query.span_positions)
    confs = {k: None for k in span}
    remaining = list(span)
    while remaining:
        if order == "left_to_right":
            k = remaining[0]
            (dist,) = _predict(provider, tokens, [k], 1)
            if not dist:
                raise NoViableFill(f"no viable token at position {k}")
            tok, logp = dist[0]
        else:
            dists = _predict(provider, tokens, remaining, 1)
            best = None
            for k_i, dist in zip(remaining, dists):
                if not dist:
                    continue
                tok_i, logp_i = dist[0]
                key = (-logp_i, k_i, tok_i)
                if best is None or key < best[0]:
                    best = (key, k_i, tok_i, logp_i)
            if best is None:
                raise NoViableFill("no viable token at any remaining position")
            _, k, tok, logp = best
        tokens[k] = tok
        confs[k] = math.exp(logp)
        remaining.remove(k)
    i, j = query.mask_span
    return _make_candidate(query, tokens[i:j + 1], [confs[k] for k in span])


def recompute_confidence(
    cand: Candidate,
    query: MaskedQuery,
    provider: DistributionProvider,
    length_norm: bool = False,
) -> Candidate:
    """Refresh stale confidences: c_k = p(committed token | all others unmasked).

    Tokens are unchanged and the operation is idempotent.
    """
    confs = recomputed_confidences(cand.tokens, query.span_positions, provider)
    if any(c <= 0.0 for c in confs):
        raise NoViableFill("committed token has zero probability under recomputation")
    return replace(
        cand,
        confidence=tuple(confs),
        score=score_candidate(confs, length_norm),
    )


def refine(
    cand: Candidate,
    query: MaskedQuery,
    provider: DistributionProvider,
    strategy: str,
    budget: int,
    recompute: bool = False,
) -> tuple[Candidate, int]:
    """Iteratively re-mask and re-predict committed tokens.

    ``order``: repeated left-to-right scans, stopping when a full scan changes
    nothing.  ``confidence``: repeatedly re-predict the minimum-confidence
    position, stopping when the re-prediction keeps the incumbent token.
    Every position visit consumes one unit of ``budget``.  With ``recompute``
    the whole confidence vector is refreshed after each accepted change.
    Returns the refined candidate and the number of iterations used.
    """
    if strategy not in ("order", "confidence"):
        raise ValueError(f"unknown refine strategy {strategy!r}")
    if budget < 0:
        raise ValueError("budget must be >= 0")
    if budget == 0:
        return cand, 0
    tokens = list(cand.tokens)
    span = list(query.span_positions)
    confs = {k: c for k, c in zip(span, cand.confidence)}
    used = 0

    def repredict(k):
        committed = tokens[k]
        tokens[k] = MASK
        (dist,) = _predict(provider, tokens, [k], 1)
        tokens[k] = committed
        if not dist:
            return committed, confs[k]  # nothing viable: keep the incumbent
        tok, logp = dist[0]
        return tok, math.exp(logp)

    def apply_recompute():
        fresh = recomputed_confidences(tokens, span, provider)
        for k, c in zip(span, fresh):
            if c <= 0.0:
                raise NoViableFill("zero confidence during recomputation")
            confs[k] = c

    if strategy == "order":
        while used < budget:
            changed = False
            for k in span:
                if used >= budget:
                    break
                tok, conf = repredict(k)
                used += 1
                confs[k] = conf  # fresher even when the token is confirmed
                if tok != tokens[k]:
                    tokens[k] = tok
                    changed = True
                    if recompute:
                        apply_recompute()
            else:
                if not changed:
                    break
                continue
            break  # budget exhausted mid-scan
    else:
        while used < budget:
            k = min(span, key=lambda p: (confs[p], p))
            tok, conf = repredict(k)
            used += 1
            if tok == tokens[k]:
                break
            tokens[k] = tok
            confs[k] = conf
            if recompute:
                apply_recompute()

    i, j = query.mask_span
    out = _make_candidate(query, tokens[i:j + 1], [confs[k] for k in span])
    return out, used


def greedy_decode(
    query: MaskedQuery,
    provider: DistributionProvider,
    cfg: DecoderConfig,
) -> Candidate:
    """The B=1 path: initial prediction, optional recomputation, refinement."""
    m = query.mask_count
    if cfg.init_strategy == "independent":
        cand = predict_independent(query, provider)
    elif cfg.init_strategy == "order":
        cand = predict_autoregressive(query, provider, "left_to_right")
    else:
        cand = predict_autoregressive(query, provider, "confidence")
    if cfg.recompute:
        cand = recompute_confidence(cand, query, provider)
    budget = max(0, cfg.max_iterations - m)
    if cfg.refine_strategy != "none" and budget > 0:
        cand, _ = refine(
            cand, query, provider, cfg.refine_strategy, budget, recompute=cfg.recompute
        )
    return replace(cand, score=score_candidate(cand.confidence, cfg.length_norm))


# ---------------------------------------------------------------------------
# Beam search


@dataclass
class _Item:
    """Mutable per-beam state during search.

    ``tokens`` holds MASK at not-yet-predicted span positions during the init
    phase.  ``cursor``/``scan_changed`` drive order-based refinement scans;
    ``converged`` freezes an item once its strategy's stopping rule fires.
    """

    tokens: list
    confs: dict
    predicted: frozenset
    cursor: int = 0
    scan_changed: bool = False
    converged: bool = False

    def partial_score(self):
        return sum(math.log(self.confs[k]) for k in self.predicted)

    def sort_key(self):
        return (-self.partial_score(), tuple(-1 if t is MASK else t for t in self.tokens))


def _dedup_truncate(items: list[_Item], beam: int) -> list[_Item]:
    items.sort(key=lambda it: it.sort_key() + (it.cursor,))
    seen, out = set(), []
    for it in items:
        key = tuple(-1 if t is MASK else t for t in it.tokens)
        if key in seen:
            continue  # higher-scoring copy already kept
        seen.add(key)
        out.append(it)
        if len(out) >= beam:
            break
    return out


def beam_decode(
    query: MaskedQuery,
    provider: DistributionProvider,
    cfg: DecoderConfig,
) -> list[BeamItem]:
    """Beam-searched decoding of one masked query.

    Runs the configured init strategy keeping the top-B extensions per step,
    then the refinement strategy per surviving item, within the shared
    iteration budget.  Items are deduplicated by their filled token sequence
    (the higher-scoring copy survives) before truncation to B.  Returns fully
    filled items sorted by descending score, ties toward the
    lexicographically smallest fill.
    """
    m = query.mask_count
    span = list(query.span_positions)
    B = cfg.beam

    items = _init_phase(query, provider, cfg, span, B)
    if not items:
        return []

    if cfg.recompute:
        items = _recompute_items(items, span, provider)
        if not items:
            return []

    budget = max(0, cfg.max_iterations - m)
    if cfg.refine_strategy != "none":
        for _ in range(budget):
            if all(it.converged for it in items):
                break
            pool = []
            for it in items:
                if it.converged:
                    pool.append(it)
                    continue
                pool.extend(_refine_step(it, query, provider, cfg, span, B))
            items = _dedup_truncate(pool, B)
            if cfg.recompute:
                items = _recompute_items(items, span, provider)
            if not items:
                return []

    out = []
    i, j = query.mask_span
    for it in items:
        filled = tuple(it.tokens[i:j + 1])
        confs = [it.confs[k] for k in span]
        cand = Candidate(
            tokens=tuple(it.tokens),
            filled=filled,
            confidence=tuple(confs),
            score=score_candidate(confs, cfg.length_norm),
            mask_count=m,
        )
        out.append(BeamItem(candidate=cand, predicted_set=frozenset(span)))
    out.sort(key=lambda b: (-b.candidate.score, b.candidate.filled))
    return out


def _recompute_items(items, span, provider):
    """Refresh every item's confidence vector; drop fills that became impossible."""
    out = []
    for it in items:
        fresh = recomputed_confidences(it.tokens, span, provider)
        if any(c <= 0.0 for c in fresh):
            continue
        it.confs = {k: c for k, c in zip(span, fresh)}
        out.append(it)
    return out


def _init_phase(query, provider, cfg, span, B):
    m = query.mask_count

    if cfg.init_strategy == "independent":
        dists = _predict(provider, query.tokens, span, max(B, 1))
        if any(not d for d in dists):
            return []
        # exact top-B joint fills under per-position independence
        partials = [((), 0.0)]
        for dist in dists:
            nxt = [
                (fill + (tok,), lp_sum + logp)
                for fill, lp_sum in partials
                for tok, logp in dist
            ]
            nxt.sort(key=lambda fl: (-fl[1], fl[0]))
            partials = nxt[:B]
        items = []
        i, _ = query.mask_span
        for fill, _lp in partials:
            tokens = list(unmask(query, fill))
            per_pos = {k: math.exp(dict(dists[n])[fill[n]]) for n, k in enumerate(span)}
            items.append(_Item(tokens=tokens, confs=per_pos, predicted=frozenset(span)))
        return _dedup_truncate(items, B)

    items = [_Item(tokens=list(query.tokens), confs={}, predicted=frozenset())]
    for _ in range(m):
        pool = []
        for it in items:
            remaining = [k for k in span if k not in it.predicted]
            if cfg.init_strategy == "order":
                positions = [remaining[0]]
            else:
                positions = remaining
            dists = _predict(provider, it.tokens, positions, B)
            exts = []
            for k, dist in zip(positions, dists):
                for tok, logp in dist:
                    exts.append((-logp, k, tok, logp))
            exts.sort()
            for _neg, k, tok, logp in exts[:B]:
                tokens = list(it.tokens)
                tokens[k] = tok
                confs = dict(it.confs)
                confs[k] = math.exp(logp)
                pool.append(_Item(tokens=tokens, confs=confs,
                                  predicted=it.predicted | {k}))
        items = _dedup_truncate(pool, B)
        if not items:
            return []
    return items


def _refine_step(item, query, provider, cfg, span, B):
    """Expand one beam item by re-predicting a single position per its strategy."""
    if cfg.refine_strategy == "order":
        k = span[item.cursor]
    else:
        k = min(span, key=lambda p: (item.confs[p], p))
    incumbent = item.tokens[k]
    probe = list(item.tokens)
    probe[k] = MASK
    (dist,) = _predict(provider, probe, [k], B)

    children = []
    top_token = dist[0][0] if dist else incumbent
    for tok, logp in dist[:B] if dist else [(incumbent, math.log(item.confs[k]))]:
        tokens = list(item.tokens)
        tokens[k] = tok
        confs = dict(item.confs)
        confs[k] = math.exp(logp)
        child = _Item(tokens=tokens, confs=confs, predicted=item.predicted)
        if cfg.refine_strategy == "order":
            changed = item.scan_changed or (tok != incumbent)
            cursor = item.cursor + 1
            if cursor == len(span):  # scan completed
                child.converged = not changed
                child.cursor = 0
                child.scan_changed = False
            else:
                child.cursor = cursor
                child.scan_changed = changed
        else:
            # convergence: the re-predicted (argmax) token keeps the incumbent
            if tok == incumbent:
                child.tokens[k] = incumbent
                child.confs = dict(item.confs)  # no update without a change
                child.converged = top_token == incumbent
        children.append(child)
    return children


def select_best(per_m: dict[int, Candidate]) -> tuple[int, Candidate]:
    """Argmax over per-mask-count candidates; ties break toward the smaller m."""
    if not per_m:
        raise NoViableFill("no candidate for any mask count")
    best_m = None
    for m in sorted(per_m):
        if best_m is None or per_m[m].score > per_m[best_m].score:
            best_m = m
    return best_m, per_m[best_m]


def decode(
    query_builder: Callable[[int], MaskedQuery],
    provider: DistributionProvider,
    cfg: DecoderConfig,
) -> DecodeResult:
    """Enumerate mask counts 1..M, beam-decode each, keep the most confident.

    Mask counts for which the provider admits no fill are simply absent from
    ``per_m``.  When ``cfg.recompute`` is set the per-m scores have already
    been recomputed inside the beam, so the final selection uses fresh
    confidences; otherwise it uses the generation-time ones.
    """
    per_m = {}
    for m in range(1, cfg.max_masks + 1):
        q = query_builder(m)
        if q.mask_count != m:
            raise ValueError(f"query builder returned {q.mask_count} masks for m={m}")
        try:
            beam = beam_decode(q, provider, cfg)
        except NoViableFill:
            continue
        if beam:
            per_m[m] = beam[0].candidate
    _best_m, best = select_best(per_m)
    return DecodeResult(best=best, per_m=per_m)
