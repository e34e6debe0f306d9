"""Train the full pipeline into a run directory. Usage:
   python scripts/run_pipeline.py RUN_DIR [PROFILE.yaml] [--set a.b=c ...]
"""
import sys
import time

from prefplan.config import load_config
from prefplan.stages import RunDir, run_training_pipeline

def main():
    run_dir = sys.argv[1]
    profile = None
    overrides = []
    args = sys.argv[2:]
    i = 0
    while i < len(args):
        if args[i] == "--set":
            overrides.append(args[i + 1]); i += 2
        else:
            profile = args[i]; i += 1
    cfg = load_config(profile, overrides)
    t0 = time.time()
    run = RunDir(run_dir)
    run.write_json("config.json", cfg.to_dict())
    run_training_pipeline(cfg, run, progress=True)
    print(f"pipeline done in {time.time()-t0:.0f}s -> {run_dir}", flush=True)

if __name__ == "__main__":
    main()
