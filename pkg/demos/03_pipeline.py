"""
The whole pipeline from the command line
========================================

Runs every ``lego`` command on the small smoke configuration in a temporary
workdir and prints what each stage left behind. Swap in
``configs/default.json`` for the full-size run (about 15 minutes on one core).
"""

import json
import sys
import tempfile
from pathlib import Path

from lego.cli import COMMANDS, run

config = Path(__file__).resolve().parents[1] / "configs" / "smoke.json"
if len(sys.argv) > 1:
    config = Path(sys.argv[1])

workdir = Path(tempfile.mkdtemp(prefix="lego-"))
for cmd in COMMANDS:
    code = run([cmd, "--config", str(config), "--workdir", str(workdir), "-q"])
    print(f"lego {cmd:<10s} exit {code}")
    if code:
        sys.exit(code)

###############################################################################
# Every artifact is a tensor, JSON or CSV file under the workdir.
for p in sorted(workdir.rglob("*")):
    if p.is_file() and p.name != ".lego.lock":
        print(f"  {p.relative_to(workdir)}  ({p.stat().st_size} bytes)")

###############################################################################
# The evaluation summary compares the adapted model with the pre-trained one.
summary = json.loads((workdir / "eval" / "eval_summary.json").read_text())
for k, v in summary["delta"].items():
    print(f"{k:>18s}: {v:+.4f}")

# and the mixing sweep, one row per ratio
print((workdir / "ablate" / "mix.csv").read_text())
