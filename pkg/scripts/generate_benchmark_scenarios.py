#!/usr/bin/env python3
"""Generate a benchmark scenario set across all eleven interaction
categories: propose, instantiate, duplicate-filter, difficulty-screen,
export. Prints per-category acceptance counts and the batch location."""

import argparse
from collections import Counter

from coopbench.scenario import CATEGORIES
from coopbench.scenario_gen import (DifficultyBand, MapRegionLibrary,
                                    difficulty_screen, duplicate_filter,
                                    export_batch, instantiate, propose)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="generated_scenarios")
    parser.add_argument("--per-category", type=int, default=10)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--band", default="0.5,4.0")
    parser.add_argument("--contact-dist", type=float, default=2.5,
                        help="contact envelope for the screen (m)")
    args = parser.parse_args()

    low, high = (float(v) for v in args.band.split(","))
    band = DifficultyBand(low, high)
    regions = MapRegionLibrary()
    pool = []
    for category in CATEGORIES:
        schemas = propose(category, args.per_category, "template", args.seed)
        for k, schema in enumerate(schemas):
            pool.append(instantiate(schema, regions,
                                    seed=args.seed * 1000 + k,
                                    scenario_id=f"{category}_{k:03d}"))
    survivors = duplicate_filter(pool)
    screen = {s.id: difficulty_screen(s, band,
                                      contact_dist=args.contact_dist)
              for s in survivors}
    export_batch(survivors, args.out, screen)

    accepted = Counter(s.category for s in survivors if screen[s.id][0])
    total = Counter(s.category for s in survivors)
    print(f"pool {len(pool)} -> {len(survivors)} after duplicate filtering")
    print(f"{'category':<36}{'kept':>6}{'in-band':>9}")
    for category in CATEGORIES:
        print(f"{category:<36}{total[category]:>6}{accepted[category]:>9}")
    print(f"\nexported to {args.out} (see batch.index; edit a review file "
          f"with '<id> accept|reject' lines and pass it to `coopbench gen "
          f"export --review` to apply manual curation)")


if __name__ == "__main__":
    main()
