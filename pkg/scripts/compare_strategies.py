#!/usr/bin/env python3
"""Compare decoding strategies on randomized toy instances.

For each (init, refine) combination, measures how often the decoder's best
fill matches the brute-force pseudo-log-likelihood argmax, and how many
provider calls it spends.  Numbers are deterministic for a fixed seed.

Usage: python scripts/compare_strategies.py [--trials N] [--seed S] [--beam B]
"""

import argparse
import random
import sys

from clozeforge.core import DecoderConfig, make_query
from clozeforge.decoder import NoViableFill, beam_decode
from clozeforge.toylm import TableLM, brute_force_best_fill


class Counting:
    def __init__(self, inner):
        self.inner = inner
        self.calls = 0

    def __getattr__(self, name):
        return getattr(self.inner, name)

    def predict(self, tokens, mask_positions, top_k):
        self.calls += 1
        return self.inner.predict(tokens, mask_positions, top_k)


def random_instance(rng):
    v = rng.randint(3, 7)
    m = rng.randint(2, 3)
    length = m + rng.randint(0, 2)
    sentences = [[rng.randrange(v) for _ in range(length)]
                 for _ in range(rng.randint(2, 8))]
    lm = TableLM(sentences, alpha=0.5, vocab=[f"w{i}" for i in range(v)])
    start = rng.randint(0, length - m)
    query = make_query(rng.choice(sentences), (start, start + m - 1))
    return lm, query


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--trials", type=int, default=200)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--beam", type=int, default=2)
    parser.add_argument("--recompute", action="store_true")
    args = parser.parse_args()

    rng = random.Random(f"compare:{args.seed}")
    instances = [random_instance(rng) for _ in range(args.trials)]
    oracles = [brute_force_best_fill(q, lm) for lm, q in instances]

    combos = [(i, r) for i in ("independent", "order", "confidence")
              for r in ("none", "order", "confidence")]
    print(f"{args.trials} instances, beam={args.beam}, recompute={args.recompute}")
    print(f"{'init':<12} {'refine':<12} {'oracle match':>12} {'avg calls':>10}")
    for init, refine in combos:
        hits = 0
        calls = 0
        for (lm, query), oracle in zip(instances, oracles):
            cfg = DecoderConfig(max_masks=query.mask_count, beam=args.beam,
                                init_strategy=init, refine_strategy=refine,
                                recompute=args.recompute)
            counting = Counting(lm)
            try:
                beam = beam_decode(query, counting, cfg)
            except NoViableFill:
                beam = []
            calls += counting.calls
            if beam and beam[0].candidate.filled == oracle.filled:
                hits += 1
        print(f"{init:<12} {refine:<12} {hits / args.trials:>11.1%} "
              f"{calls / args.trials:>10.1f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
