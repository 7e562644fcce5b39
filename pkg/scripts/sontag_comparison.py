"""Pendulum cost comparison against the Sontag-formula baseline through the CLI.

    python3 scripts/sontag_comparison.py [OUT_DIR]

Writes the run, ``compare.csv``, ``compare.json`` and the baseline CLF into
OUT_DIR (default ``runs/pendulum``), then prints the summary.
"""
import json
import sys

from clf_forge.cli import main



def run(out):
    code = main(["synthesize", "--benchmark", "pendulum", "--accept-n", "2000", "--out", out])
    if code == 0:
        code = main(["compare", "--run", out, "--n", "1000"])
    if code == 0:
        with open(f"{out}/compare.json") as fh:
            summary = json.load(fh)
        summary.pop("bins")
        print(json.dumps(summary, indent=2))
    return code


if __name__ == "__main__":
    sys.exit(run(sys.argv[1] if len(sys.argv) > 1 else "runs/pendulum"))
