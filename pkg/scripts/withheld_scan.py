"""For each demonstration of an accepted pendulum library, drop it and count
the 41x41 grid points whose first tracking segment fails the decrease test.
Shows which demonstrations are load-bearing.
"""
import numpy as np

from clf_forge import benchmarks
from clf_forge.falsifier import check_sample
from clf_forge.synthesis import build_controller, synthesize

cfg = benchmarks.default_config("pendulum", accept_n=2000)
res = synthesize(cfg)
lib = res.state.db.to_dict()
demos = lib["demonstrations"]
axes = [np.linspace(lo, hi, 41) for lo, hi in zip(cfg.D_low, cfg.D_high)]
pts = np.array(np.meshgrid(*axes, indexing="ij")).reshape(2, -1).T
pts = pts[np.linalg.norm(pts, axis=1) > cfg.eps0]
for i, d in enumerate(demos):
    ctl = build_controller(cfg, dict(lib, demonstrations=demos[:i] + demos[i + 1:]), res.candidate)
    fails = [x for x in pts if not check_sample(ctl, x).ok]
    start = np.round(np.asarray(d["states"][0]), 2).tolist()
    print(f"without demo {i} (start {start}): {len(fails)} failing grid points"
          + (f", e.g. {np.round(fails[0], 2).tolist()}" if fails else ""))
