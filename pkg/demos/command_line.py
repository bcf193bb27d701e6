"""
The lab command line
====================

Every experiment is also a `lab` subcommand writing CSV/JSON files that embed
the resolved configuration.  Runs are byte-identical for any LAB_THREADS.
"""
import json
import os
import tempfile

from circlelab.cli import main
from circlelab.config import reference_config

out = tempfile.mkdtemp(prefix="lab-demo-")
cfg = os.path.join(out, "run.json")
with open(cfg, "w") as f:
    json.dump(dict(reference_config().raw, ensemble={"count": 16, "seed": 1}), f)

for argv in (["simulate", "--n", "100"], ["hyp", "--n", "1000"], ["event", "--trials", "200"]):
    code = main(argv + ["--config", cfg, "--out", out])
    print(argv[0], "exit", code)

with open(os.path.join(out, "event.json")) as f:
    print("hit rate:", json.load(f)["result"]["hit_rate"])
