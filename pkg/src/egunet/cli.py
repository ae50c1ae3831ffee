"""Command-line pipeline: simulate -> bundle -> train -> unmix -> endmembers -> eval.

Every subcommand reads one JSON run config (``--config``), applies command
line flags on top (flags win), validates the result, writes a resolved
snapshot ``<subcommand>_config.json`` into the output directory and then
runs. Relative paths inside a config file are resolved against the file's
directory; snapshots store input paths relative to the output directory, so
a snapshot can be replayed from where it lies.

Exit codes: 0 success, 2 usage or config error, 3 numerical failure,
4 I/O error.
"""

import argparse
import copy
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import io
from .baselines import SolverError, blind_unmix, sunsal, unmix_pixels
from .bundles import BundleConfig, ExtractionError, extract_bundles, load_bundle, save_bundle, vca
from .checkpoint import load_checkpoint, save_checkpoint, write_training_log
from .data import (
    EndmemberMatrix,
    HsiCube,
    SceneSpec,
    classmap_to_abundance,
    export_abundance_images,
    gaussian_downsample,
    generate_scene,
    load_abundances,
    load_cube,
    load_endmembers,
    reference_endmembers_from_pure,
    save_abundances,
    save_cube,
    save_endmembers,
)
from .metrics import evaluate, recover_endmembers
from .network import ABLATIONS, VARIANTS, Widths, build_network
from .nn import NonFiniteError
from .reporting import format_table, summarize
from .training import TrainConfig, TrainingDiverged, infer_abundances, train

log = logging.getLogger("egunet")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4
SUBCOMMANDS = ("simulate", "gtchain", "bundle", "train", "unmix", "endmembers", "baseline", "eval")
# fixed stream index per subcommand: seeds stay put when subcommands are added or reordered
_STREAM = {"simulate": 0, "gtchain": 1, "bundle": 2, "train": 3, "unmix": 4, "endmembers": 5,
           "baseline": 6, "eval": 7}


class UsageError(ValueError):
    """Invalid run configuration."""


def _fields(cls, exclude=()):
    return {f.name: f.default for f in dataclasses.fields(cls) if f.name not in exclude}


SOLVER_DEFAULTS = {"method": "fclsu", "constraints": "anc+asc", "lam": 1e-3, "rho": 1e-2,
                   "tol": 1e-6, "max_iter": 1000, "asc_weight": 1e3, "blind": False, "n_outer": 50}
TRAIN_DEFAULTS = {**_fields(TrainConfig, exclude=("seed",)), "bn_stats": "shared",
                  "widths": {"encoder": list(Widths().encoder), "decoder": list(Widths().decoder)}}
SCHEMA = {
    "command": None,
    "seed": 0,
    "threads": None,
    "out_dir": "out",
    "log_level": "WARNING",
    "inputs": {"cube": None, "bundle": None, "checkpoint": None, "abundances": None,
               "endmembers": None, "truth": [], "estimate": [], "truth_endmembers": None,
               "estimate_endmembers": None, "highres_cube": None, "classmap": None},
    "scene": _fields(SceneSpec),
    "gtchain": {"r": 2, "purity_threshold": 1.0},
    "bundle": _fields(BundleConfig, exclude=("seed",)),
    "train": TRAIN_DEFAULTS,
    "solver": SOLVER_DEFAULTS,
    "eval": {"seeds": [], "methods": ["egunet", "fclsu"]},
}
SECTIONS = {
    "simulate": ("scene",),
    "gtchain": ("scene", "gtchain"),
    "bundle": ("bundle",),
    "train": ("train",),
    "unmix": (),
    "endmembers": (),
    "baseline": ("solver", "bundle"),
    "eval": ("eval", "scene", "bundle", "train", "solver"),
}
INPUTS = {
    "simulate": (),
    "gtchain": ("highres_cube", "classmap"),
    "bundle": ("cube",),
    "train": ("cube", "bundle"),
    "unmix": ("cube", "checkpoint"),
    "endmembers": ("cube", "abundances"),
    "baseline": ("cube", "endmembers", "bundle"),
    "eval": ("truth", "estimate", "truth_endmembers", "estimate_endmembers"),
}


def stream_seed(root, subcommand, run=0):
    """Independent 32-bit seed for ``subcommand`` derived from the root seed."""
    ss = np.random.SeedSequence(int(root), spawn_key=(_STREAM[subcommand], int(run)))
    return int(ss.generate_state(1, np.uint32)[0])


# ---------------------------------------------------------------------------
# config


def _merge(base, override, where="config"):
    out = copy.deepcopy(base)
    for key, value in override.items():
        if key not in base:
            raise UsageError(f"unknown key {where}.{key}")
        if isinstance(base[key], dict) and key != "widths":
            if not isinstance(value, dict):
                raise UsageError(f"{where}.{key} must be an object")
            out[key] = _merge(base[key], value, f"{where}.{key}")
        elif key == "widths":
            if not isinstance(value, dict) or set(value) - {"encoder", "decoder"}:
                raise UsageError(f"{where}.widths must have keys encoder/decoder")
            out[key] = {**base[key], **value}
        else:
            out[key] = value
    return out


def _resolve_paths(inputs, base_dir):
    def fix(p):
        if p is None:
            return None
        p = Path(p)
        return str(p if p.is_absolute() else (base_dir / p))
    return {k: ([fix(p) for p in v] if isinstance(v, list) else fix(v)) for k, v in inputs.items()}


def load_config(path):
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(raw, dict):
        raise UsageError(f"{path}: top level must be an object")
    cfg = _merge(SCHEMA, raw)
    base = Path(path).resolve().parent
    cfg["inputs"] = _resolve_paths(cfg["inputs"], base)
    if "out_dir" in raw and not Path(raw["out_dir"]).is_absolute():
        cfg["out_dir"] = str(base / raw["out_dir"])
    return cfg


def _flag_overrides(args):
    """Translate parsed flags into a config fragment (only flags actually given)."""
    o = {"inputs": {}, "train": {}, "solver": {}, "gtchain": {}, "eval": {}}
    if args.seed is not None:
        o["seed"] = args.seed
    if args.threads is not None:
        o["threads"] = args.threads
    if args.out is not None:
        o["out_dir"] = args.out
    if args.log_level is not None:
        o["log_level"] = args.log_level
    for name in ("cube", "bundle", "checkpoint", "abundances", "endmembers", "truth_endmembers",
                 "estimate_endmembers", "highres_cube", "classmap"):
        v = getattr(args, name, None)
        if v is not None:
            o["inputs"][name] = str(Path(v).resolve())
    for name in ("truth", "estimate"):
        v = getattr(args, name, None)
        if v:
            o["inputs"][name] = [str(Path(p).resolve()) for p in v]
    for name in ("variant", "ablation", "epochs"):
        if getattr(args, name, None) is not None:
            o["train"][name] = getattr(args, name)
    for flag, key in (("method", "method"), ("lam", "lam"), ("tol", "tol"), ("max_iter", "max_iter")):
        if getattr(args, flag, None) is not None:
            o["solver"][key] = getattr(args, flag)
    if getattr(args, "r", None) is not None:
        o["gtchain"]["r"] = args.r
    if getattr(args, "seeds", None):
        o["eval"]["seeds"] = args.seeds
    return {k: v for k, v in o.items() if v != {}}


def resolve_config(args):
    cfg = load_config(args.config) if args.config else copy.deepcopy(SCHEMA)
    if not args.config:
        cfg["inputs"] = _resolve_paths(cfg["inputs"], Path.cwd())
    cfg = _merge(cfg, _flag_overrides(args))
    cfg["out_dir"] = str(Path(cfg["out_dir"]).resolve())
    _validate(cfg, args.command)
    return cfg


def _validate(cfg, command):
    if cfg["command"] not in (None, command):
        raise UsageError(f"config was written for {cfg['command']!r}, not {command!r}")
    for key in ("truth", "estimate"):
        if isinstance(cfg["inputs"][key], str):
            cfg["inputs"][key] = [cfg["inputs"][key]]
    if not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
        raise UsageError("seed must be a nonnegative integer")
    if cfg["threads"] is not None and (not isinstance(cfg["threads"], int) or cfg["threads"] < 1):
        raise UsageError("threads must be a positive integer")
    if cfg["log_level"] not in ("DEBUG", "INFO", "WARNING", "ERROR"):
        raise UsageError("log_level must be DEBUG, INFO, WARNING or ERROR")
    t = cfg["train"]
    if t["variant"] not in VARIANTS:
        raise UsageError(f"train.variant must be one of {VARIANTS}")
    if t["ablation"] not in ABLATIONS:
        raise UsageError(f"train.ablation must be one of {ABLATIONS}")
    s = cfg["solver"]
    if s["method"] not in ("fclsu", "pclsu", "sunsal"):
        raise UsageError("solver.method must be fclsu, pclsu or sunsal")
    if s["constraints"] not in ("none", "anc", "anc+asc"):
        raise UsageError("solver.constraints must be none, anc or anc+asc")
    for m in cfg["eval"]["methods"]:
        if m not in ("egunet", "fclsu", "pclsu", "sunsal"):
            raise UsageError(f"unknown eval method {m!r}")
    required = {"bundle": ("cube",), "train": ("cube", "bundle"), "unmix": ("cube", "checkpoint"),
                "endmembers": ("cube", "abundances"), "baseline": ("cube",)}
    for key in required.get(command, ()):
        if not cfg["inputs"][key]:
            raise UsageError(f"{command} needs --{key.replace('_', '-')}")
    if command == "eval" and not cfg["eval"]["seeds"]:
        ins = cfg["inputs"]
        if not ins["truth"] or not ins["estimate"]:
            raise UsageError("eval needs --truth and --estimate, or --seeds for Monte-Carlo mode")
        if len(ins["truth"]) not in (1, len(ins["estimate"])):
            raise UsageError("give one --truth or one per --estimate")


def snapshot(cfg, command):
    """The part of the resolved config that ``command`` depends on."""
    out = Path(cfg["out_dir"])

    def rel(p):
        return None if p is None else os.path.relpath(p, out)
    inputs = {k: ([rel(p) for p in cfg["inputs"][k]] if isinstance(cfg["inputs"][k], list)
                  else rel(cfg["inputs"][k])) for k in INPUTS[command]}
    snap = {"command": command, "seed": cfg["seed"], "threads": cfg["threads"],
            "log_level": cfg["log_level"], "inputs": inputs}
    for section in SECTIONS[command]:
        snap[section] = cfg[section]
    return snap


def write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")
    return path


# ---------------------------------------------------------------------------
# pipeline pieces (shared by subcommands and Monte-Carlo eval)


def _scene_spec(section):
    d = dict(section)
    if d.get("scale_range") is not None:
        d["scale_range"] = tuple(d["scale_range"])
    try:
        return SceneSpec(**d).validate()
    except (TypeError, ValueError) as exc:
        raise UsageError(f"scene: {exc}") from exc


def _bundle_config(section, seed):
    return BundleConfig(**section, seed=seed)


def _train_config(section, seed):
    d = {k: v for k, v in section.items() if k not in ("widths", "bn_stats")}
    return TrainConfig(**d, seed=seed)


def _widths(section):
    w = section["widths"]
    return Widths(tuple(w["encoder"]), tuple(w["decoder"]))


def run_egunet(cube, bundle, train_section, seed, callback=None):
    config = _train_config(train_section, seed)
    net = build_network(cube.bands, bundle.n_classes, config.variant, config.ablation,
                        _widths(train_section), config.dropout_keep, config.seed,
                        train_section["bn_stats"])
    net, records = train(cube, bundle, config, net=net, callback=callback)
    return net, records, config


def run_solver(cube, E, solver):
    """Abundances ``H x W x C`` (and the endmembers used) from a classical solver."""
    X = cube.pixels().T
    method = solver["method"]
    if solver["blind"]:
        kw = {} if method != "sunsal" else {"constraints": solver["constraints"], "rho": solver["rho"],
                                             "max_iter": solver["max_iter"], "tol": solver["tol"]}
        E, Y = blind_unmix(X, E, method, n_outer=solver["n_outer"], lam=solver["lam"], **kw)
    elif method == "sunsal":
        Y = sunsal(X, E, lam=solver["lam"], constraints=solver["constraints"], rho=solver["rho"],
                   max_iter=solver["max_iter"], tol=solver["tol"]).Y
    elif method == "fclsu":
        Y = unmix_pixels(X, E, "fclsu", delta=solver["asc_weight"])
    else:
        Y = unmix_pixels(X, E, "pclsu")
    return Y.T.reshape(cube.height, cube.width, -1), E


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(cfg):
    out = Path(cfg["out_dir"])
    spec = _scene_spec(cfg["scene"])
    scene = generate_scene(spec, stream_seed(cfg["seed"], "simulate"))
    notes = {"seed": cfg["seed"], "provenance": "synthetic stand-in: parametric spectra, "
                                                "per-pixel scaling, gaussian + impulse noise"}
    # each header carries H, W, C and the seed so the three files cross-check
    save_cube(out / "cube.hsux", scene.cube, C=spec.C, **notes)
    save_abundances(out / "abundance.hsux", scene.abundances, **notes)
    save_endmembers(out / "endmembers.hsux", scene.endmembers, H=spec.H, W=spec.W, **notes)
    return ["cube.hsux", "abundance.hsux", "endmembers.hsux"]


def cmd_gtchain(cfg):
    out = Path(cfg["out_dir"])
    r = cfg["gtchain"]["r"]
    if not isinstance(r, int) or r < 1:
        raise UsageError("gtchain.r must be a positive integer")
    ins = cfg["inputs"]
    if (ins["highres_cube"] is None) != (ins["classmap"] is None):
        raise UsageError("gtchain needs both --highres-cube and --classmap, or neither")
    if ins["highres_cube"] is None:
        spec = _scene_spec(cfg["scene"])
        if spec.H % r or spec.W % r:
            raise UsageError(f"scene {spec.H}x{spec.W} is not divisible by r={r}")
        scene = generate_scene(spec, stream_seed(cfg["seed"], "gtchain"))
        high, label_map = scene.cube, scene.abundances.argmax(axis=-1)
        n_classes = spec.C
    else:
        high = load_cube(ins["highres_cube"])
        fractions = load_abundances(ins["classmap"])
        label_map, n_classes = fractions.argmax(axis=-1), fractions.shape[-1]
        if high.height % r or high.width % r:
            raise UsageError(f"image {high.height}x{high.width} is not divisible by r={r}")
    low = gaussian_downsample(high, r)
    A = classmap_to_abundance(label_map, r, n_classes)
    refs = reference_endmembers_from_pure(low, A, cfg["gtchain"]["purity_threshold"])
    notes = {"seed": cfg["seed"], "r": r, "provenance": "ground-truth chain from class map"}
    save_cube(out / "cube.hsux", low, C=n_classes, **notes)
    save_abundances(out / "abundance.hsux", A, **notes)
    save_endmembers(out / "endmembers.hsux", refs, H=low.height, W=low.width, **notes)
    return ["cube.hsux", "abundance.hsux", "endmembers.hsux"]


def cmd_bundle(cfg):
    out = Path(cfg["out_dir"])
    cube = load_cube(cfg["inputs"]["cube"])
    bundle = extract_bundles(cube, _bundle_config(cfg["bundle"], stream_seed(cfg["seed"], "bundle")))
    save_bundle(out / "bundle.hsux", bundle, seed=cfg["seed"])
    return ["bundle.hsux"]


def cmd_train(cfg):
    out = Path(cfg["out_dir"])
    cube = load_cube(cfg["inputs"]["cube"])
    bundle = load_bundle(cfg["inputs"]["bundle"])
    net, records, config = run_egunet(cube, bundle, cfg["train"], stream_seed(cfg["seed"], "train"))
    save_checkpoint(out / "checkpoint.egun", net, config)
    write_training_log(out / "train_log.csv", records)
    return ["checkpoint.egun", "train_log.csv"]


def cmd_unmix(cfg):
    out = Path(cfg["out_dir"])
    cube = load_cube(cfg["inputs"]["cube"])
    net, _ = load_checkpoint(cfg["inputs"]["checkpoint"])
    A = infer_abundances(cube, net)
    save_abundances(out / "abundance_est.hsux", A, seed=cfg["seed"], variant=net.variant,
                    ablation=net.ablation)
    maps = export_abundance_images(A, out / "maps")
    return ["abundance_est.hsux"] + [str(p.relative_to(out)) for p in maps]


def cmd_endmembers(cfg):
    out = Path(cfg["out_dir"])
    cube = load_cube(cfg["inputs"]["cube"])
    A = load_abundances(cfg["inputs"]["abundances"])
    if A.shape[:2] != (cube.height, cube.width):
        raise UsageError(f"abundance map {A.shape[:2]} does not match cube {cube.height}x{cube.width}")
    em = recover_endmembers(cube.pixels().T, A.reshape(-1, A.shape[-1]).T)
    save_endmembers(out / "endmembers_est.hsux", em, seed=cfg["seed"])
    return ["endmembers_est.hsux"]


def _initial_endmembers(cfg, cube):
    ins = cfg["inputs"]
    if ins["endmembers"]:
        return load_endmembers(ins["endmembers"]).E
    if ins["bundle"]:
        return load_bundle(ins["bundle"]).references.T
    C = cfg["bundle"]["n_classes"]
    if C is None:
        raise UsageError("baseline needs --endmembers, --bundle or bundle.n_classes")
    return vca(cube.pixels(), C, np.random.default_rng(stream_seed(cfg["seed"], "baseline"))).T


def cmd_baseline(cfg):
    out = Path(cfg["out_dir"])
    cube = load_cube(cfg["inputs"]["cube"])
    E0 = _initial_endmembers(cfg, cube)
    if E0.shape[0] != cube.bands:
        raise UsageError(f"endmembers have {E0.shape[0]} bands, cube has {cube.bands}")
    A, E = run_solver(cube, E0, cfg["solver"])
    method = cfg["solver"]["method"]
    files = [f"abundance_{method}.hsux"]
    save_abundances(out / files[0], A, seed=cfg["seed"], method=method, blind=cfg["solver"]["blind"])
    if cfg["solver"]["blind"]:
        files.append(f"endmembers_{method}.hsux")
        save_endmembers(out / files[1], EndmemberMatrix(E), seed=cfg["seed"], method=method)
    return files


def _report(A_true, A_est, E_true=None, E_est=None):
    if A_true.shape != A_est.shape:
        raise UsageError(f"truth {A_true.shape} and estimate {A_est.shape} differ")
    C = A_true.shape[-1]
    rep = evaluate(A_true.reshape(-1, C).T, A_est.reshape(-1, C).T, E_true, E_est)
    return rep.to_dict()


def _write_reports(out, runs, keyname):
    """Per-run reports plus a mean/std summary per group."""
    groups = {}
    for run in runs:
        groups.setdefault(run[keyname], []).append(run["report"])
    summary = {g: summarize(reps) for g, reps in groups.items()}
    write_json(out / "report.json", {"runs": runs, "summary": summary})
    text = "".join(f"# {g}\n" + format_table(s) for g, s in summary.items())
    (out / "report.txt").write_text(text)


def cmd_eval(cfg):
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    if cfg["eval"]["seeds"]:
        runs = monte_carlo(cfg)
        _write_reports(out, runs, "method")
        return ["report.json", "report.txt"]
    ins = cfg["inputs"]
    E_true = load_endmembers(ins["truth_endmembers"]).E if ins["truth_endmembers"] else None
    E_est = load_endmembers(ins["estimate_endmembers"]).E if ins["estimate_endmembers"] else None
    truths = ins["truth"] * len(ins["estimate"]) if len(ins["truth"]) == 1 else ins["truth"]
    reports = [_report(load_abundances(t), load_abundances(e), E_true, E_est)
               for t, e in zip(truths, ins["estimate"])]
    if len(reports) == 1:
        write_json(out / "report.json", reports[0])
        (out / "report.txt").write_text(format_table({"value": reports[0]}))
    else:
        runs = [{"estimate": os.path.relpath(e, out), "group": "all", "report": r}
                for e, r in zip(ins["estimate"], reports)]
        _write_reports(out, runs, "group")
    return ["report.json", "report.txt"]


def monte_carlo(cfg):
    """Simulate, extract, unmix and evaluate once per seed for every requested method."""
    runs = []
    spec = _scene_spec(cfg["scene"])
    for seed in cfg["eval"]["seeds"]:
        scene = generate_scene(spec, stream_seed(seed, "simulate"))
        bcfg = _bundle_config({**cfg["bundle"], "n_classes": cfg["bundle"]["n_classes"] or spec.C},
                              stream_seed(seed, "bundle"))
        bundle = extract_bundles(scene.cube, bcfg)
        for method in cfg["eval"]["methods"]:
            if method == "egunet":
                net, _, _ = run_egunet(scene.cube, bundle, cfg["train"], stream_seed(seed, "train"))
                A = infer_abundances(scene.cube, net)
                em = recover_endmembers(scene.cube.pixels().T, A.reshape(-1, A.shape[-1]).T).E
            else:
                A, em = run_solver(scene.cube, bundle.references.T, {**cfg["solver"], "method": method})
            rep = _report(scene.abundances, A, scene.endmembers.E, em)
            runs.append({"seed": seed, "method": method, "report": rep})
            log.info("seed %d %s: aRMSE %.4f", seed, method, rep["armse"])
    return runs


COMMANDS = {
    "simulate": cmd_simulate, "gtchain": cmd_gtchain, "bundle": cmd_bundle, "train": cmd_train,
    "unmix": cmd_unmix, "endmembers": cmd_endmembers, "baseline": cmd_baseline, "eval": cmd_eval,
}


# ---------------------------------------------------------------------------
# argument parsing


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("common")
    g.add_argument("--config", help="JSON run config; flags given here override its values")
    g.add_argument("--seed", type=int, help="root seed (default 0)")
    g.add_argument("--out", help="output directory (default ./out)")
    g.add_argument("--threads", type=int, help="cap on BLAS threads")
    g.add_argument("--log-level", choices=("DEBUG", "INFO", "WARNING", "ERROR"))

    parser = argparse.ArgumentParser(
        prog="egunet",
        description="Endmember-guided hyperspectral unmixing pipeline.",
        epilog="Precedence: built-in defaults < --config file < command-line flags.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text):
        return sub.add_parser(name, parents=[common], help=help_text)

    add("simulate", "generate a synthetic scene with ground truth")
    p = add("gtchain", "low-resolution cube and abundance ground truth from a class map")
    p.add_argument("--highres-cube")
    p.add_argument("--classmap", help="abundance file at high resolution; argmax gives the label")
    p.add_argument("--r", type=int, help="downsampling factor")
    p = add("bundle", "extract an endmember bundle with pseudo-abundance labels")
    p.add_argument("--cube")
    p = add("train", "train the two-stream network")
    p.add_argument("--cube")
    p.add_argument("--bundle")
    p.add_argument("--variant", choices=VARIANTS)
    p.add_argument("--ablation", choices=ABLATIONS)
    p.add_argument("--epochs", type=int)
    p = add("unmix", "infer abundances with a trained checkpoint")
    p.add_argument("--cube")
    p.add_argument("--checkpoint")
    p = add("endmembers", "recover endmembers from a cube and abundances")
    p.add_argument("--cube")
    p.add_argument("--abundances")
    p = add("baseline", "classical unmixing (fclsu, pclsu, sunsal)")
    p.add_argument("--cube")
    p.add_argument("--endmembers")
    p.add_argument("--bundle", help="use the bundle's reference endmembers")
    p.add_argument("--method", choices=("fclsu", "pclsu", "sunsal"))
    p.add_argument("--lam", type=float)
    p.add_argument("--tol", type=float)
    p.add_argument("--max-iter", type=int)
    p = add("eval", "score estimates against ground truth, or run a Monte-Carlo experiment")
    p.add_argument("--truth", nargs="+")
    p.add_argument("--estimate", nargs="+")
    p.add_argument("--truth-endmembers")
    p.add_argument("--estimate-endmembers")
    p.add_argument("--seeds", nargs="+", type=int, help="Monte-Carlo mode: one full run per seed")
    p.add_argument("--variant", choices=VARIANTS)
    p.add_argument("--ablation", choices=ABLATIONS)
    p.add_argument("--epochs", type=int)
    return parser


def run(args):
    cfg = resolve_config(args)
    logging.basicConfig(level=cfg["log_level"], format="%(levelname)s %(name)s: %(message)s")
    out = Path(cfg["out_dir"])
    write_json(out / f"{args.command}_config.json", snapshot(cfg, args.command))
    if cfg["threads"] is not None:
        with threadpool_limits(limits=cfg["threads"]):
            files = COMMANDS[args.command](cfg)
    else:
        files = COMMANDS[args.command](cfg)
    for f in files:
        print(out / f)
    return EXIT_OK


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return run(args)
    except (io.FormatError, OSError) as exc:
        print(f"egunet: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (TrainingDiverged, NonFiniteError, SolverError, ExtractionError, FloatingPointError,
            np.linalg.LinAlgError) as exc:
        print(f"egunet: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (UsageError, ValueError, TypeError) as exc:
        print(f"egunet: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
