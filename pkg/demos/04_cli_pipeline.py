"""
The command-line pipeline, driven from Python
=============================================

Every stage writes a self-checking artifact to the output directory:
a dataset container, a checkpoint, eval JSON plus a metrics CSV, and finally
CSV/SVG report files.  The same commands work from a shell via the
``bfmlab`` entry point.

Run:  python3 demos/04_cli_pipeline.py [out_dir]
"""

import json
import sys
from pathlib import Path

from bfmlab.cli import main

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_run")
out.mkdir(parents=True, exist_ok=True)

# A tiny configuration file; command-line flags would override it.
cfg = out / "run.json"
cfg.write_text(json.dumps({"sim": {"n_samples": 100}, "model": {"base_channels": 4},
                           "train": {"max_epochs": 5, "dtype": "float64"}}, indent=1))


def bfmlab(*argv):
    argv = ["--config", str(cfg), "--out-dir", str(out), *map(str, argv)]
    print("$ bfmlab", " ".join(argv))
    code = main(argv)
    if code:
        sys.exit(code)


bfmlab("validate-profile", "model-b")
bfmlab("simulate", "--seed", 3)
bfmlab("simulate", "--seed", 3, "--group-size", 1)
for g in (242, 1):
    bfmlab("train", "--seed", 3, "--dataset", out / f"dataset_g{g}.bfmc", "--variant", "cnn")
    bfmlab("eval", "--dataset", out / f"dataset_g{g}.bfmc", "--checkpoint", out / f"checkpoint_cnn_{g}.bfmw")
bfmlab("report", out / "eval_cnn_242.json", out / "eval_cnn_1.json")

print("\nmetrics:")
for p in sorted(out.glob("metrics_*.csv")):
    print(p.name, "->", p.read_text().splitlines()[1])
print("report files:", ", ".join(sorted(p.name for p in out.glob("report_*"))))
