"""Synthetic-expert experiment: GAIL vs the prediction baseline vs the untrained actor.

    python3 scripts/smoke_experiment.py --out runs/smoke [--steps N] [--set key=value ...]

Writes data, checkpoints, generated trajectories, curvature histograms,
Q-maps and ``report.json`` under ``--out``; prints the report.
"""

import json
import sys
from pathlib import Path

from hwgail.cli import run_cli


def main(argv):
    code = run_cli(["smoke-test", *argv])
    if code == 0 and "--out" in argv:
        out = Path(argv[argv.index("--out") + 1])
        print(json.dumps(json.loads((out / "report.json").read_text()), indent=2))
    return code


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
