"""Build (or resume building) every artifact the acceptance suite consumes.

Thin wrapper around prefplan.driver so the same logic is importable from
the test suite. Expect several hours on a single desktop core; the
reference attribute-model runs dominate. Re-running skips finished work.
"""

import argparse
from pathlib import Path

from prefplan import driver


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--root", default="runs")
    ap.add_argument("--only", default=None, help="comma list: demo,ablation,attr,noise")
    args = ap.parse_args()
    root = Path(args.root)
    only = set(args.only.split(",")) if args.only else {"demo", "ablation", "attr", "noise"}
    if "demo" in only:
        driver.ensure_demo_run(root)
    if "ablation" in only:
        driver.ensure_step_ablation(root)
    if "attr" in only:
        driver.ensure_attr_run(root, "attr_full", 10_000)
        driver.ensure_attr_run(root, "attr_2000", 2_000)
        driver.ensure_attr_run(root, "attr_500", 500)
    if "noise" in only:
        driver.ensure_noise_run(root, "noise20", 0.2)
        driver.ensure_noise_run(root, "noise50", 0.5)
    driver._log("acceptance artifacts complete")


if __name__ == "__main__":
    main()
