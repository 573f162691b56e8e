"""Full oscillator pipeline through the CLI; artifacts land in --out."""
import argparse
import json
import sys
import tempfile
from pathlib import Path

from setiss import cli


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--system", default="oscillator", choices=["oscillator", "stuart_landau"])
    ap.add_argument("--out", type=Path, default=Path("runs/reproduce"))
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    with tempfile.NamedTemporaryFile("w", suffix=".json", delete=False) as fh:
        json.dump({"system": {"name": args.system}, "seed": args.seed}, fh)
    code = cli.main(["reproduce-example", "--config", fh.name, "--output-dir", str(args.out)])
    report = json.loads((args.out / "report.json").read_text())
    for name, stage in report["stages"].items():
        print(f"{name:12s} {'pass' if stage.get('pass') else 'FAIL'}")
    sys.exit(code)


if __name__ == "__main__":
    main()
