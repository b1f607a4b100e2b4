"""Run `slforce pipeline` with wall-clock timing per material, reusing a finished run.

A run directory is reused when its timing.json records the same resolved config
hash, seed and package source hash; otherwise the pipeline is rerun from
scratch. Timing lives outside summary.json so the pipeline outputs stay
byte-deterministic.

    python scripts/timed_pipeline.py configs/stiffness_sweep.cfg --seed 0
"""
import argparse
import glob
import hashlib
import json
import os
import sys
import time

from slforce import cli
from slforce import config as cfgmod

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def source_sha256():
    h = hashlib.sha256()
    for path in sorted(glob.glob(os.path.join(ROOT, "src", "slforce", "*.py"))):
        h.update(os.path.basename(path).encode())
        with open(path, "rb") as f:
            h.update(f.read())
    return h.hexdigest()


def default_out(config_path, seed):
    stem = os.path.splitext(os.path.basename(config_path))[0]
    return os.path.join(ROOT, "results", f"{stem}-seed{seed}")


def timed_run(config_path, seed=0, out=None, force=False, echo=print):
    """Returns (summary dict, timing dict)."""
    out = out or default_out(config_path, seed)
    cp = cfgmod.read_config(config_path)
    key = dict(
        config_sha256=cfgmod.config_hash(cli.pipeline_sections(cp, seed)),
        seed=seed,
        source_sha256=source_sha256(),
    )
    timing_path = os.path.join(out, "timing.json")
    summary_path = os.path.join(out, "summary.json")
    if not force and os.path.exists(timing_path) and os.path.exists(summary_path):
        with open(timing_path) as f:
            timing = json.load(f)
        if all(timing.get(k) == v for k, v in key.items()):
            echo(f"reusing {out}")
            with open(summary_path) as f:
                return json.load(f), timing

    start = time.monotonic()
    per_material = {}
    last = [start]

    def progress(msg):
        now = time.monotonic()
        echo(f"[{now - start:7.1f}s] {msg}")
        name, _, rest = msg.partition(": ")
        if rest.startswith("evaluated"):
            per_material[name] = now - last[0]
            last[0] = now

    _, summary = cli.run_pipeline(cp, seed, out, progress=progress)
    timing = dict(key, seconds_per_material=per_material, seconds_total=time.monotonic() - start)
    with open(timing_path, "w") as f:
        json.dump(timing, f, indent=2, sort_keys=True)
        f.write("\n")
    return summary, timing


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("config")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.add_argument("--force", action="store_true", help="rerun even if a matching run exists")
    args = p.parse_args(argv)
    summary, timing = timed_run(args.config, args.seed, args.out, args.force)
    for row in summary["report"]:
        print(f"{row['material_id']:<6} {row['phase']:<9} n={row['n']:<5d} MAE={row['mae']:.4f} RMSE={row['rmse']:.4f}")
    print(json.dumps(timing["seconds_per_material"]), f"total {timing['seconds_total']:.0f}s")


if __name__ == "__main__":
    sys.exit(main())
