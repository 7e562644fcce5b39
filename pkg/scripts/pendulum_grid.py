"""Synthesize the pendulum controller and scan a grid over D.

    python3 scripts/pendulum_grid.py [--n 21] [--accept-n 2000] [--seed 0]
"""
import argparse
import collections
import time

import numpy as np

from clf_forge import benchmarks
from clf_forge.switching import SWITCH, decrease_holds
from clf_forge.synthesis import synthesize


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=21)
    ap.add_argument("--accept-n", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    cfg = benchmarks.default_config("pendulum", accept_n=args.accept_n, rng_seed=args.seed)
    t0 = time.perf_counter()
    res = synthesize(cfg)
    print(f"{res.report.outcome} with {res.report.demonstrations} demonstrations "
          f"in {time.perf_counter() - t0:.1f} s")
    if res.controller is None:
        return
    print(res.candidate.to_text())
    ctl = res.controller
    axes = [np.linspace(lo, hi, args.n) for lo, hi in zip(ctl.region.D_low, ctl.region.D_high)]
    statuses = collections.Counter()
    switches, bad_switches = [], 0
    for x in np.array(np.meshgrid(*axes, indexing="ij")).reshape(2, -1).T:
        tr = ctl.run(x)
        statuses[tr.status] += 1
        switches.append(tr.switch_count)
        bad_switches += sum(not decrease_holds(s, cfg.gamma) for s in tr.segments if s.status == SWITCH)
    print(dict(statuses))
    print(f"switches per run: mean {np.mean(switches):.2f}, max {max(switches)}; "
          f"switches violating decrease: {bad_switches}")


if __name__ == "__main__":
    main()
