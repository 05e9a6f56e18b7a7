"""
Does seeing the whole band help?
================================

Train the same U-Net twice on the same channels: once per subcarrier
(g = 1) and once on the full 242-subcarrier band, then compare the mean
Frobenius error of the recovered amplitude matrices.

The default settings are small enough for a laptop (a few minutes).  At
that size the full-band model sees 162 training bands, about 45 optimizer
steps in total, against tens of thousands of single-subcarrier samples, so
it usually loses.  Pass --desk for the 1,000-realization desk preset used by
the acceptance suite (tens of minutes per model on one core).  There the
full-band CNN comes out a few percent ahead.

Run:  python3 demos/03_integrated_vs_individual.py [--desk]
"""

import argparse
import logging

import numpy as np

from bfmlab.channel import load_profile, simulate_csi
from bfmlab.config import build_run_config
from bfmlab.evaluation import Experiment

ap = argparse.ArgumentParser()
ap.add_argument("--desk", action="store_true")
ap.add_argument("--seed", type=int, default=0)
args = ap.parse_args()
logging.basicConfig(level=logging.INFO, format="%(message)s")

overrides = {"seed": args.seed}
if not args.desk:
    overrides.update(sim={"n_samples": 200}, train={"max_epochs": 15})
cfg = build_run_config("desk", overrides=overrides)
print(f"{cfg.sim.n_samples} realizations, base channels {cfg.model['base_channels']}, "
      f"up to {cfg.train.max_epochs} epochs")

profile = load_profile(cfg.profile)
exp = Experiment(simulate_csi(profile, cfg.sim), cfg.sim, profile.name, cfg.train, **cfg.model)

results = {}
for variant, g in (("cnn", 1), ("cnn", 242), ("cnn_convlstm", 242)):
    res = exp.run(variant, g)
    results[(variant, g)] = res
    print(f"{variant:13s} g={g:3d}: mean error {res.report.mean:.4f} after {res.record.epochs} epochs "
          f"({res.record.stop_reason})")

# Per-subcarrier errors are not comparable between g = 1 and g = 242 sample
# by sample, so compare the distribution of per-realization errors.
for key, res in results.items():
    q = np.quantile(res.report.realization_errors, [0.25, 0.5, 0.75])
    print(f"{key[0]:13s} g={key[1]:3d}: per-realization quartiles {np.round(q, 4)}")

gap = 1 - results[("cnn", 242)].report.mean / results[("cnn", 1)].report.mean
side = "below" if gap >= 0 else "above"
print(f"full-band CNN error is {100 * abs(gap):.1f}% {side} the per-subcarrier CNN")
