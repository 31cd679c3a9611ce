"""
The whole pipeline, offline
===========================

Write a labeled synthetic suite to disk, run screen -> verify -> eval
through the same entry points the CLI uses (mock verification client, so no
network), and read the report. Running this twice produces byte-identical
outputs.
"""

import json
from pathlib import Path

from vistad.cli import cmd_run
from vistad.config import PipelineConfig
from vistad.synthetic import write_suite

root = Path("demo_out/03")
manifest = write_suite(root / "data", n_series=6, T=2000, seed=11)
print(f"wrote suite + manifest under {root / 'data'}")

config = PipelineConfig(
    quantile_q=0.75,   # patch-local reference features: read the stroke rows
    client="mock-echo",
    make_plots=True,
).validate()

rc = cmd_run(str(manifest), config, root / "out")
print(f"pipeline exit code {rc}")

report = json.loads((root / "out" / "report.json").read_text())
print("\nfinal report (verified stage):")
print((root / "out" / "report.txt").read_text())

tokens = json.loads((root / "out" / "tokens.json").read_text())
print(f"token accounting: {tokens['totals']}")
print(f"per-series plots under {root / 'out'}/<series>/result.png")
