"""Full pipeline on UNIPEN-format data you supply.

    python3 scripts/run_unipen.py --in path/to/unipen.txt --out runs/unipen \
        [--levels DIGIT] [--steps 20000] [--baseline-steps 3000] [--config configs/unipen.yaml]

Ingests, trains GAIL and the prediction baseline, completes held-out prefixes
with both, compares curvature histograms and exports three Q-maps.
"""

import argparse
import sys
from pathlib import Path

from hwgail.cli import run_cli


def main(argv):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--levels", nargs="+")
    p.add_argument("--steps", type=int)
    p.add_argument("--baseline-steps", type=int)
    p.add_argument("--config")
    p.add_argument("--seed", type=int, default=0)
    a = p.parse_args(argv)
    out = Path(a.out)
    common = ["--seed", str(a.seed)] + (["--config", a.config] if a.config else [])
    data = out / "data"

    def run(*args):
        code = run_cli([*args, *common])
        if code != 0:
            sys.exit(code)

    ingest = ["ingest", "--format", "unipen", "--in", a.input, "--out", str(data)]
    run(*ingest, *(["--levels", *a.levels] if a.levels else []))
    train, test = str(data / "train.jsonl"), str(data / "test.jsonl")
    run("train-gail", "--data", train, "--out", str(out / "gail"), *(["--steps", str(a.steps)] if a.steps else []))
    bl_steps = ["--steps", str(a.baseline_steps)] if a.baseline_steps else []
    run("train-baseline", "--data", train, "--out", str(out / "baseline"), *bl_steps)
    for name in ("gail", "baseline"):
        run("generate", "--run", str(out / name), "--data", test, "--out", str(out / f"generated_{name}"))
    run("eval-curvature", "--reference", test, "--out", str(out / "eval"), "--candidate",
        f"gail={out / 'generated_gail' / 'generated.jsonl'}",
        f"baseline={out / 'generated_baseline' / 'generated.jsonl'}")
    run("qmap", "--run", str(out / "gail"), "--data", test, "--index", "0", "1", "2", "--out", str(out / "qmaps"))
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
