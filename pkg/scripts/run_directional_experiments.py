#!/usr/bin/env python3
"""Reproduce the two directional experiments on the crafted suites.

Experiment 1 runs the occluded-dashout suite under single-agent sensing and
perception sharing (clean channel and a 6-tick delay) and prints the SR/DS
split. Experiment 2 runs the multi-CAV conflict suite under negotiation and
under perception sharing alone, and prints collision/deadlock outcomes.
"""

import argparse

from coopbench.channel import ChannelConfig
from coopbench.engine import run_episode
from coopbench.suites import (SYMMETRIC_CROSSING_INDICES, conflict_suite,
                              occlusion_suite)


def occlusion_experiment() -> None:
    suite = occlusion_suite()
    print(f"occluded dashout suite ({len(suite)} scenarios)")
    print(f"{'scenario':<24}{'single':>10}{'coop@0':>10}{'coop@6t':>10}")
    totals = {"single": 0, "coop0": 0, "coop6": 0}
    for scen in suite:
        row = [scen.id]
        for key, policy, latency in (("single", "single", 0),
                                     ("coop0", "coop_perception", 0),
                                     ("coop6", "coop_perception", 6)):
            _, res = run_episode(scen, {"cav_1": policy},
                                 ChannelConfig(latency_ticks=latency))
            r = res["cav_1"]
            totals[key] += r.success
            row.append(f"{r.ds:7.1f}{'*' if r.success else ' '}")
        print(f"{row[0]:<24}{row[1]:>10}{row[2]:>10}{row[3]:>10}")
    n = len(suite)
    print(f"\nSR: single {100 * totals['single'] / n:.0f}%  "
          f"coop@0 {100 * totals['coop0'] / n:.0f}%  "
          f"coop@300ms {100 * totals['coop6'] / n:.0f}%   (* = success)\n")


def negotiation_experiment() -> None:
    suite = conflict_suite()
    print(f"multi-CAV conflict suite ({len(suite)} scenarios)")
    print(f"{'scenario':<28}{'negotiation':>14}{'coop only':>14}")
    for i, scen in enumerate(suite):
        cells = []
        for policy in ("negotiation", "coop_perception"):
            bindings = {c.id: policy for c in scen.cavs}
            trace, results = run_episode(scen, bindings)
            collisions = sum(1 for r in results.values()
                             for e in r.infractions
                             if e.kind == "collision_vehicle")
            outcome = trace.end_reason
            if collisions:
                outcome = f"{collisions} coll"
            cells.append(outcome)
        marker = " <- symmetric" if i in SYMMETRIC_CROSSING_INDICES else ""
        print(f"{scen.id:<28}{cells[0]:>14}{cells[1]:>14}{marker}")
    print()


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--skip-occlusion", action="store_true")
    parser.add_argument("--skip-negotiation", action="store_true")
    args = parser.parse_args()
    if not args.skip_occlusion:
        occlusion_experiment()
    if not args.skip_negotiation:
        negotiation_experiment()


if __name__ == "__main__":
    main()
