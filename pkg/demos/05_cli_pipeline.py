#!/usr/bin/env python3
"""End-to-end experiment via the command-line front door.

Writes a small experiment config, then drives prepare -> train-il -> run ->
report -> ladder in a scratch directory and prints the emitted artifacts.
Everything the CLI produces is a CSV with a provenance header, ready for
whatever plotting tool you like.
"""
import tempfile
from pathlib import Path

import yaml

from rholoss.cli import main

config = {
    "dataset": {
        "kind": "synthetic",
        "synthetic": {"classes": 10, "per_class": 120, "dim": 16, "spread": 1.1, "radius": 3.0, "seed": 1},
        "split": {"test_fraction": 0.2, "holdout_fraction": 0.3, "seed": 2},
        "noise": {"kind": "uniform", "p": 0.1, "seed": 3},
    },
    "il": {"hidden": [64], "epochs": 10, "batch_size": 64, "scheme": "holdout", "seed": 4},
    "run": {
        "policy": {"kind": "rho-loss"},
        "n_b": 8,
        "n_B": 80,
        "epochs": 8,
        "model": {"hidden": [64], "seed": 5},
        "seeds": [1, 2],
        "targets": [0.5],
    },
    "ladder": {
        "n_b": 8, "n_B": 80, "ensemble_size": 3, "convergence_epochs": 3,
        "il_pretrain_epochs": 10, "hidden": [32], "small_hidden": [16], "batch_size": 32, "seed": 6,
    },
}

with tempfile.TemporaryDirectory() as tmp:
    cfg_path = Path(tmp) / "experiment.yaml"
    cfg_path.write_text(yaml.safe_dump(config))
    out = Path(tmp) / "out"

    for cmd in ("prepare", "train-il", "run", "report", "ladder"):
        print(f"\n$ rholoss {cmd} --config experiment.yaml --out out")
        rc = main([cmd, "--config", str(cfg_path), "--out", str(out)])
        assert rc == 0, f"{cmd} failed"

    print("\n== artifacts ==")
    for path in sorted(out.rglob("*")):
        if path.is_file():
            print(f"  {path.relative_to(out)}")

    print("\n== epochs-to-target report ==")
    print((out / "reports" / "epochs_to_target.csv").read_text())
