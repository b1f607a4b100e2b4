"""Command-line entry point: ``slforce <subcommand> [--config F] [--seed N] [--out DIR]``.

Exit codes: 0 success, 2 config error, 3 data error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import subprocess
import sys
from dataclasses import dataclass

import numpy as np

from . import __version__
from . import config as cfgmod
from . import forcenet as fn
from . import geometry as geo
from . import io as sio
from . import optim
from . import pattern as pat
from . import simulate as sim
from . import stereo
from .config import ConfigError
from .report import EvalReport

log = logging.getLogger("slforce")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class StageError(RuntimeError):
    def __init__(self, stage, exc):
        super().__init__(f"stage {stage}: {type(exc).__name__}: {exc}")
        self.stage = stage
        self.cause = exc


# config sections that only the CLI uses ---------------------------------------


@dataclass
class PatternSection:
    fringe_count: int = 64
    fringe_width_px: int = 10
    height_px: int = 480
    alphabet_size: int = 3
    window_len: int = 4
    symbol_hues_deg: tuple[float, ...] = (0.0, 120.0, 240.0)
    hue_tolerance_deg: float = 30.0

    def spec(self) -> pat.PatternSpec:
        return pat.PatternSpec(
            self.fringe_count,
            self.fringe_width_px,
            self.height_px,
            pat.de_bruijn(self.alphabet_size, self.window_len),
            self.symbol_hues_deg,
            hue_tolerance_deg=self.hue_tolerance_deg,
        )


@dataclass
class SimulateSection:
    n_pulls: int = 1
    first_pull: int = 0
    save_pairs: bool = False


@dataclass
class MatchSection:
    d_min: int = 0
    d_max: int = 64
    radius: int = 16
    p1: float = 8.0
    p2: float = 32.0
    n_paths: int = 8

    def match_config(self) -> stereo.MatchConfig:
        if self.n_paths not in (4, 8):
            raise ConfigError("[match] n_paths: must be 4 or 8")
        paths = stereo.EIGHT_PATHS if self.n_paths == 8 else stereo.FOUR_PATHS
        try:
            sgm = stereo.SgmParams(self.p1, self.p2, paths)
        except ValueError as exc:
            raise ConfigError(f"[match] {exc}") from exc
        return stereo.MatchConfig(self.d_min, self.d_max, self.radius, sgm)


@dataclass
class RigSection:
    focal_px: float = 800.0
    baseline_m: float = 0.004
    cx: float | None = None  # None: image centre
    cy: float | None = None


@dataclass
class PipelineSection:
    train_pulls: int
    test_pulls: int
    stiffnesses: tuple[float, ...] = ()  # empty: the scene's stiffness only
    test_first_pull: int = 1000  # held-out pulls draw disjoint random streams
    save_datasets: bool = False


# helpers ----------------------------------------------------------------------


def _load(path):
    return cfgmod.read_config(path) if path else None


def _out_dir(args, default="."):
    out = args.out or default
    os.makedirs(out, exist_ok=True)
    return out


def _usable(samples):
    keep = [s for s in samples if len(s.cloud) >= 2 and np.ptp(s.cloud.points, axis=0).max() > 0]
    return keep, len(samples) - len(keep)


def _xy(samples, n_points, seed):
    return sim.network_inputs(samples, n_points, seed), np.array([s.force_n for s in samples])


def git_revision():
    here = os.path.dirname(os.path.abspath(__file__))
    try:
        out = subprocess.run(
            ["git", "rev-parse", "HEAD"], cwd=here, capture_output=True, text=True, timeout=10
        )
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    return out.stdout.strip() if out.returncode == 0 else "unknown"


def _sha256(path):
    with open(path, "rb") as f:
        return hashlib.sha256(f.read()).hexdigest()


# subcommands --------------------------------------------------------------------


def cmd_gen_pattern(args):
    cp = _load(args.config)
    spec = cfgmod.build(PatternSection, cp, "pattern").spec()
    out = _out_dir(args)
    img = pat.generate_pattern(spec)
    sio.write_png(os.path.join(out, "pattern.png"), img.pixels)
    sio.write_pattern_sidecar(os.path.join(out, "pattern.cfg"), spec)
    print(f"wrote {img.width_px}x{img.height_px} pattern to {out}")
    return EXIT_OK


def cmd_simulate(args):
    cp = _load(args.config)
    scene = cfgmod.build(sim.SceneConfig, cp, "scene")
    job = cfgmod.build(SimulateSection, cp, "simulate")
    out = _out_dir(args)
    on_frame = None
    if job.save_pairs:
        pairs = os.path.join(out, "pairs")
        os.makedirs(pairs, exist_ok=True)

        def on_frame(sid, rendered, dm):
            for name, img in (
                ("left", rendered.pair.left),
                ("right", rendered.pair.right),
                ("ref_left", rendered.reference.left),
                ("ref_right", rendered.reference.right),
            ):
                sio.write_png(os.path.join(pairs, f"{sid:06d}_{name}.png"), img)

        sio.write_pattern_sidecar(os.path.join(out, "pattern.cfg"), scene.pattern_spec)
    samples = sim.generate_dataset(
        scene, job.n_pulls, args.seed, job.first_pull,
        progress=lambda pull, s: log.info("pull %d done (%d samples)", pull, len(s)),
        on_frame=on_frame,
    )
    sim.write_dataset(out, samples, scene)
    flagged = sum(s.flagged for s in samples)
    print(f"wrote {len(samples)} samples to {out} ({flagged} flagged)")
    return EXIT_OK


def cmd_match(args):
    cp = _load(args.config)
    overrides = {
        k: v
        for k, v in dict(
            d_min=args.d_min, d_max=args.d_max, radius=args.radius, p1=args.p1, p2=args.p2, n_paths=args.paths
        ).items()
        if v is not None
    }
    mcfg = cfgmod.build(MatchSection, cp, "match", overrides).match_config()
    spec = sio.read_pattern_sidecar(args.spec)
    pair = stereo.StereoPair(sio.read_png(args.left), sio.read_png(args.right))
    ref = None
    if args.ref_left or args.ref_right:
        if not (args.ref_left and args.ref_right):
            raise ConfigError("--ref-left and --ref-right must be given together")
        ref = stereo.StereoPair(sio.read_png(args.ref_left), sio.read_png(args.ref_right))
    dm = stereo.match(pair, spec, mcfg, ref)
    out = _out_dir(args)
    sio.write_pfm(os.path.join(out, "disparity.pfm"), np.where(dm.accepted, dm.disparity, np.nan))
    sio.write_provenance_png(os.path.join(out, "provenance.png"), dm.provenance)
    counts = {stereo.TAG_NAMES[t]: int((dm.provenance == t).sum()) for t in stereo.TAG_NAMES}
    print(" ".join(f"{k}={v}" for k, v in counts.items()))
    return EXIT_OK


def cmd_reconstruct(args):
    cp = _load(args.config)
    overrides = {
        k: v for k, v in dict(focal_px=args.focal, baseline_m=args.baseline).items() if v is not None
    }
    rs = cfgmod.build(RigSection, cp, "rig", overrides)
    disp = sio.read_pfm(args.disparity)
    h, w = disp.shape
    try:
        rig = geo.StereoRig(
            rs.focal_px,
            0.5 * (w - 1) if rs.cx is None else rs.cx,
            0.5 * (h - 1) if rs.cy is None else rs.cy,
            rs.baseline_m,
        )
    except ValueError as exc:
        raise ConfigError(f"[rig] {exc}") from exc
    cloud, skipped = geo.triangulate(disp, rig)
    out = _out_dir(args)
    path = os.path.join(out, "cloud.ply")
    geo.write_ply(path, cloud)
    print(f"wrote {len(cloud)} points to {path} ({skipped} non-positive disparities skipped)")
    return EXIT_OK


def _train_sections(cp, seed):
    net_cfg = cfgmod.build(fn.NetConfig, cp, "net")
    tcfg = cfgmod.build(optim.TrainConfig, cp, "train", {"seed": seed})
    return net_cfg, tcfg


def train_on_samples(samples, net_cfg, tcfg, val_samples=None, progress=None):
    usable, skipped = _usable(samples)
    if not usable:
        raise ValueError("no usable training samples")
    if skipped:
        log.warning("skipping %d training samples with degenerate clouds", skipped)
    x, y = _xy(usable, net_cfg.n_points, tcfg.seed)
    val = None
    if val_samples:
        vu, _ = _usable(val_samples)
        if vu:
            val = _xy(vu, net_cfg.n_points, tcfg.seed)
    return optim.train(net_cfg, x, y, tcfg, val=val, progress=progress)


def cmd_train(args):
    cp = _load(args.config)
    net_cfg, tcfg = _train_sections(cp, args.seed)
    samples = sim.load_dataset(args.dataset)
    val = sim.load_dataset(args.val) if args.val else None
    params, hist = train_on_samples(
        samples, net_cfg, tcfg, val,
        progress=lambda e, h: print(f"epoch {e} train_mse {h.train_mse[-1]:.6f}", flush=True),
    )
    out = _out_dir(args)
    fn.save_checkpoint(os.path.join(out, "checkpoint.ifn"), params)
    hist.to_csv(os.path.join(out, "history.csv"))
    return EXIT_OK


def _predict_samples(params, samples, seed):
    usable, skipped = _usable(samples)
    if not usable:
        raise ValueError("no usable evaluation samples")
    x, y = _xy(usable, params.config.n_points, seed)
    return usable, fn.predict(params, x), y, skipped


def evaluate(params, samples, seed) -> EvalReport:
    usable, pred, y, skipped = _predict_samples(params, samples, seed)
    return EvalReport.build(
        pred, y, [s.material_id for s in usable], [s.phase for s in usable], skipped
    )


def cmd_estimate(args):
    params = fn.load_checkpoint(args.checkpoint)
    cloud = geo.read_ply(args.cloud)
    if len(cloud) < 2:
        raise geo.DegenerateCloudError(f"{args.cloud}: fewer than 2 points")
    sub = geo.sample_points(cloud, params.config.n_points, args.seed)
    x = geo.normalize_cloud(sub).points[None]
    print(f"{float(fn.predict(params, x)[0]):.6f}")
    return EXIT_OK


def cmd_eval(args):
    params = fn.load_checkpoint(args.checkpoint)
    rep = evaluate(params, sim.load_dataset(args.dataset), args.seed)
    out = _out_dir(args)
    with open(os.path.join(out, "report.csv"), "w") as f:
        f.write(rep.to_csv())
    with open(os.path.join(out, "report.txt"), "w") as f:
        f.write(rep.to_table())
    print(rep.to_table(), end="")
    return EXIT_OK


def pipeline_sections(cp, seed) -> dict:
    """Resolved [pipeline], [scene], [net] and [train] sections; their hash identifies a run."""
    if cp is None:
        raise ConfigError("pipeline needs --config")
    net_cfg, tcfg = _train_sections(cp, seed)
    return {
        "pipeline": cfgmod.build(PipelineSection, cp, "pipeline"),
        "scene": cfgmod.build(sim.SceneConfig, cp, "scene"),
        "net": net_cfg,
        "train": tcfg,
    }


def run_pipeline(cp, seed, out, progress=None):
    """simulate -> train -> eval for each stiffness; returns (EvalReport, summary dict).

    Every output is a pure function of (config, seed): no timestamps, no
    wall-clock values.
    """
    sections = pipeline_sections(cp, seed)
    job, scene0, net_cfg, tcfg = (sections[k] for k in ("pipeline", "scene", "net", "train"))
    stiffnesses = job.stiffnesses or (scene0.stiffness_n_per_m,)
    os.makedirs(out, exist_ok=True)

    def stage(name, fn_, *a, **kw):
        try:
            return fn_(*a, **kw)
        except ConfigError:
            raise
        except Exception as exc:  # noqa: BLE001 - re-raised with the stage name
            raise StageError(name, exc) from exc

    all_pred, all_targ, all_mat, all_phase, skipped = [], [], [], [], 0
    runs = {}
    for k in stiffnesses:
        scene = scene0.replace(stiffness_n_per_m=float(k))
        name = scene.material_name
        run_dir = os.path.join(out, name)
        os.makedirs(run_dir, exist_ok=True)
        train_set = stage("simulate", sim.generate_dataset, scene, job.train_pulls, seed)
        test_set = stage("simulate", sim.generate_dataset, scene, job.test_pulls, seed, job.test_first_pull)
        if job.save_datasets:
            stage("simulate", sim.write_dataset, os.path.join(run_dir, "train"), train_set, scene)
            stage("simulate", sim.write_dataset, os.path.join(run_dir, "test"), test_set, scene)
        if progress:
            progress(f"{name}: simulated {len(train_set)} + {len(test_set)} samples")
        params, hist = stage(
            "train", train_on_samples, train_set, net_cfg, tcfg,
            progress=(lambda e, h: progress(f"{name}: epoch {e} train_mse {h.train_mse[-1]:.5f}"))
            if progress else None,
        )
        ckpt = os.path.join(run_dir, "checkpoint.ifn")
        fn.save_checkpoint(ckpt, params)
        hist.to_csv(os.path.join(run_dir, "history.csv"))
        usable, pred, y, n_skip = stage("eval", _predict_samples, params, test_set, seed)
        all_pred += list(pred)
        all_targ += list(y)
        all_mat += [s.material_id for s in usable]
        all_phase += [s.phase for s in usable]
        skipped += n_skip
        if progress:
            progress(f"{name}: evaluated {len(usable)} held-out samples")
        runs[name] = dict(
            stiffness_n_per_m=float(k),
            train_samples=len(train_set),
            test_samples=len(test_set),
            flagged=int(sum(s.flagged for s in train_set + test_set)),
            final_train_mse=hist.train_mse[-1] if hist.train_mse else None,
            checkpoint_sha256=_sha256(ckpt),
            history_sha256=_sha256(os.path.join(run_dir, "history.csv")),
        )
    report = EvalReport.build(all_pred, all_targ, all_mat, all_phase, skipped)
    with open(os.path.join(out, "report.csv"), "w") as f:
        f.write(report.to_csv())
    with open(os.path.join(out, "report.txt"), "w") as f:
        f.write(report.to_table())
    cfgmod.write_config(os.path.join(out, "resolved.cfg"), sections)
    summary = dict(
        version=__version__,
        git_revision=git_revision(),
        config_sha256=cfgmod.config_hash(sections),
        seed=seed,
        runs=runs,
        report_sha256=_sha256(os.path.join(out, "report.csv")),
        report=report.rows,
    )
    with open(os.path.join(out, "summary.json"), "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")
    return report, summary


def cmd_pipeline(args):
    cp = _load(args.config)
    report, _ = run_pipeline(cp, args.seed, _out_dir(args, "pipeline_out"), progress=print)
    print(report.to_table(), end="")
    return EXIT_OK


# argument parsing -----------------------------------------------------------------


def _u64(text):
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key-value config file (INI sections)")
    common.add_argument("--seed", type=_u64, default=0, help="PRNG seed (default 0)")
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="slforce", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("gen-pattern", parents=[common], help="write the fringe pattern PNG + sidecar")
    sp.set_defaults(func=cmd_gen_pattern)

    sp = sub.add_parser("simulate", parents=[common], help="synthesise a traction dataset")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("match", parents=[common], help="stereo-match a rectified PNG pair")
    sp.add_argument("left")
    sp.add_argument("right")
    sp.add_argument("--spec", required=True, help="pattern sidecar written by gen-pattern")
    sp.add_argument("--ref-left", help="left view under uniform white projection")
    sp.add_argument("--ref-right", help="right view under uniform white projection")
    sp.add_argument("--d-min", type=int)
    sp.add_argument("--d-max", type=int)
    sp.add_argument("--radius", type=int)
    sp.add_argument("--p1", type=float)
    sp.add_argument("--p2", type=float)
    sp.add_argument("--paths", type=int, choices=(4, 8))
    sp.set_defaults(func=cmd_match)

    sp = sub.add_parser("reconstruct", parents=[common], help="PFM disparity -> PLY cloud")
    sp.add_argument("disparity")
    sp.add_argument("--focal", type=float)
    sp.add_argument("--baseline", type=float)
    sp.set_defaults(func=cmd_reconstruct)

    sp = sub.add_parser("train", parents=[common], help="train the force network on a dataset")
    sp.add_argument("dataset")
    sp.add_argument("--val", help="optional validation dataset")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("estimate", parents=[common], help="force (N) for one PLY cloud")
    sp.add_argument("checkpoint")
    sp.add_argument("cloud")
    sp.set_defaults(func=cmd_estimate)

    sp = sub.add_parser("eval", parents=[common], help="error report for a checkpoint on a dataset")
    sp.add_argument("checkpoint")
    sp.add_argument("dataset")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("pipeline", parents=[common], help="simulate, train and evaluate in one go")
    sp.set_defaults(func=cmd_pipeline)
    return p


def _exit_code(exc):
    if isinstance(exc, StageError):
        exc = exc.cause
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, FloatingPointError):  # includes DivergenceError
        return EXIT_NUMERIC
    return EXIT_DATA


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s"
    )
    try:
        return args.func(args)
    except (ConfigError, StageError, FloatingPointError, ValueError, OSError, KeyError) as exc:
        print(f"slforce {args.command}: error: {exc}", file=sys.stderr)
        return _exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
