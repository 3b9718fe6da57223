"""Command-line front end: synth | dictlearn | inpaint | ablate | certify | metrics.

Exit codes: 0 success, 2 usage or input error, 3 certification or precondition
failure, 4 numerical abort. Experiment settings come from an optional JSON
config file; command-line flags override it and the merged effective config is
echoed into every report.
"""

from __future__ import annotations

import argparse
import contextlib
import hashlib
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

from hsinpaint import __version__, kernels
from hsinpaint.benchmark import PRESET
from hsinpaint.cube import MASK_KINDS, HsiCube, degrade, load_cube, load_mask, make_mask, save_cube, save_mask, \
    synth_lowrank_cube
from hsinpaint.denoise import AveragedDenoiser, NlmConfig, build_averaged_nlm, certify_nonexpansive
from hsinpaint.dictionary import load_dictionary, save_dictionary
from hsinpaint.errors import CertificationError, CubeFormatError, NumericalAbort, ShapeMismatchError
from hsinpaint.lipdip import Network, certify_lipschitz, encoder_decoder
from hsinpaint.metrics import quality_report
from hsinpaint.solver import SolverConfig, learn_dictionary_for, solve

log = logging.getLogger("hsinpaint")

EXIT_OK, EXIT_USAGE, EXIT_CERT, EXIT_NUMERIC = 0, 2, 3, 4
NETWORK_SPECS = ("encoder_decoder", "identity")
PRESETS = {"benchmark": PRESET}


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# experiment config

@dataclass
class ExperimentConfig:
    input: str | None = None
    mask: str | None = None
    dictionary: str | None = None
    truth: str | None = None
    network: str | None = None
    network_spec: str = "encoder_decoder"
    out: str | None = None
    seed: int = 0
    metrics: bool = False
    solver: dict = field(default_factory=dict)

    def solver_config(self) -> SolverConfig:
        return SolverConfig.from_dict({**self.solver, "seed": self.seed})

    def effective(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "solver"}
        d["solver"] = self.solver_config().to_dict()
        return d


def _nlm_to_solver(nlm: dict) -> dict:
    known = {f.name for f in fields(NlmConfig)}
    unknown = set(nlm) - known
    if unknown:
        raise UsageError(f"unknown nlm config keys: {sorted(unknown)}")
    return {f"nlm_{k}": v for k, v in nlm.items()}


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def build_experiment(args) -> ExperimentConfig:
    """Defaults < preset < config file < command-line flags."""
    solver = dict(PRESETS[args.preset]) if getattr(args, "preset", None) else {}
    exp = {}
    if getattr(args, "config", None):
        try:
            raw = json.loads(Path(args.config).read_text())
        except FileNotFoundError:
            raise UsageError(f"config file not found: {args.config}") from None
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {args.config} is not valid JSON: {exc}") from None
        if not isinstance(raw, dict):
            raise UsageError("config file must hold a JSON object")
        solver.update(raw.pop("solver", {}))
        solver.update(_nlm_to_solver(raw.pop("nlm", {})))
        exp.update(raw)
    for name in ("input", "mask", "dictionary", "truth", "network", "network_spec", "out", "seed"):
        value = getattr(args, name, None)
        if value is not None:
            exp[name] = value
    if getattr(args, "metrics", False):
        exp["metrics"] = True
    shortcuts = {"branch": "branch", "gamma": "gamma", "w_lr": "w_lr", "w_s": "w_s", "max_iters": "max_outer_iters"}
    for flag, key in shortcuts.items():
        value = getattr(args, flag, None)
        if value is not None:
            solver[key] = value
    if getattr(args, "theory_mode", False):
        solver["theory_mode"] = True
    for item in getattr(args, "set", None) or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects key=value, got {item!r}")
        solver[key.strip()] = _parse_value(value)
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = set(exp) - known
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    cfg = ExperimentConfig(**exp, solver=solver)
    if cfg.network_spec not in NETWORK_SPECS:
        raise UsageError(f"network_spec must be one of {NETWORK_SPECS}")
    try:
        cfg.solver_config()
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid solver config: {exc}") from None
    return cfg


# ---------------------------------------------------------------------------
# manifests and hashing

def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(obj) -> str:
    return hashlib.sha256(_canonical(obj).encode()).hexdigest()


def file_pair_hash(path) -> str | None:
    """sha256 over the header and payload of a ``.json``/``.bin`` pair (or a single file)."""
    p = Path(path)
    if p.suffix in (".json", ".bin"):
        p = p.with_suffix("")
    parts = [p.with_name(p.name + ".json"), p.with_name(p.name + ".bin")]
    if not all(q.exists() for q in parts):
        parts = [Path(path)] if Path(path).is_file() else []
    if not parts:
        return None
    h = hashlib.sha256()
    for q in parts:
        h.update(q.read_bytes())
    return h.hexdigest()


def write_manifest(out: Path, command: str, config: dict, inputs: dict, outputs: list[str]) -> None:
    manifest = {
        "tool": "hsinpaint",
        "version": __version__,
        "command": command,
        "config_hash": config_hash(config),
        "inputs": {k: file_pair_hash(v) for k, v in sorted(inputs.items()) if v is not None},
        "outputs": {name: hashlib.sha256((out / name).read_bytes()).hexdigest() for name in sorted(outputs)},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n")


def _out_dir(path) -> Path:
    if path is None:
        raise UsageError("an output directory is required (--out)")
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


@contextlib.contextmanager
def _determinism(enabled: bool):
    """Single-threaded BLAS/OpenMP so reductions run in a fixed order."""
    if not enabled:
        yield
        return
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=1):
        yield


# ---------------------------------------------------------------------------
# loading helpers

def _require(path, what):
    if path is None:
        raise UsageError(f"missing {what} path")
    return path


def _load(loader, path, what):
    try:
        return loader(_require(path, what))
    except FileNotFoundError as exc:
        raise UsageError(f"{what} not found: {exc}") from None


def _network_for(exp: ExperimentConfig, cfg: SolverConfig, y: HsiCube) -> Network | None:
    if cfg.branch != "dip":
        return None
    if exp.network:
        return _load(Network.load, exp.network, "network")
    if exp.network_spec == "identity":
        return Network.identity(y.bands, y.rows, y.cols)
    spec = encoder_decoder(y.bands, widths=cfg.dip_widths, budget=cfg.lip_budget)
    return Network(spec, y.rows, y.cols, seed=cfg.seed, lr=cfg.dip_lr)


def run_inpaint(exp: ExperimentConfig, out: Path) -> dict:
    """Solve one experiment and write cube, trace, report and manifest into ``out``."""
    cfg = exp.solver_config()
    y = _load(load_cube, exp.input, "input cube")
    mask = _load(load_mask, exp.mask, "mask")
    phi = _load(load_dictionary, exp.dictionary, "dictionary")
    truth = _load(load_cube, exp.truth, "ground truth") if (exp.truth or exp.metrics) else None
    net = _network_for(exp, cfg, y)
    result = solve(y, mask, phi, cfg, net=net, truth=truth)
    save_cube(result.x, out / "inpainted")
    (out / "trace.csv").write_text(result.trace.to_csv())
    report = {
        "config": exp.effective(),
        "stop_reason": result.stop_reason,
        "iterations": result.iterations,
        "best_iteration": result.best_iteration,
        "certification": result.certification,
        "objective_check": result.objective_check,
        "quality": None,
        "input_quality": None,
    }
    if truth is not None:
        report["quality"] = quality_report(truth, result.x).to_dict()
        report["input_quality"] = quality_report(truth, y).to_dict()
    _write_json(out / "report.json", report)
    write_manifest(out, "inpaint", exp.effective(),
                   {"input": exp.input, "mask": exp.mask, "dictionary": exp.dictionary, "truth": exp.truth,
                    "network": exp.network},
                   ["inpainted.json", "inpainted.bin", "trace.csv", "report.json"])
    return report


# ---------------------------------------------------------------------------
# commands

def cmd_synth(args) -> int:
    if not 0.0 < args.fraction < 1.0:
        raise UsageError(f"--fraction must lie in (0, 1), got {args.fraction}")
    if args.sigma < 0:
        raise UsageError("--sigma must be >= 0")
    for name in ("rows", "cols", "bands", "rank"):
        if getattr(args, name) < 1:
            raise UsageError(f"--{name} must be >= 1")
    out = _out_dir(args.out)
    try:
        truth = synth_lowrank_cube(args.rows, args.cols, args.bands, args.rank, seed=args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    mask = make_mask(args.rows, args.cols, args.bands, args.mask, args.fraction, seed=args.seed + 1)
    y = degrade(truth, mask, args.sigma, seed=args.seed + 2)
    save_cube(truth, out / "truth")
    save_mask(mask, out / "mask")
    save_cube(y, out / "observed")
    config = {k: getattr(args, k) for k in ("rows", "cols", "bands", "rank", "mask", "fraction", "sigma", "seed")}
    names = [f"{n}.{e}" for n in ("truth", "mask", "observed") for e in ("json", "bin")]
    write_manifest(out, "synth", config, {}, names)
    print(json.dumps({"out": str(out), "missing_fraction": mask.missing_fraction()}))
    return EXIT_OK


def cmd_dictlearn(args) -> int:
    exp = build_experiment(args)
    cfg = exp.solver_config()
    y = _load(load_cube, exp.input, "input cube")
    out = _out_dir(exp.out)
    d = learn_dictionary_for(y, cfg, n_atoms=args.atoms, epochs=args.epochs, seed=exp.seed, w_s=args.sparsity)
    save_dictionary(d, out / "dictionary")
    config = {**exp.effective(), "atoms": d.n_atoms, "epochs": args.epochs, "sparsity": args.sparsity}
    write_manifest(out, "dictlearn", config, {"input": exp.input}, ["dictionary.json", "dictionary.bin"])
    print(json.dumps({"out": str(out / "dictionary"), "atom_len": d.atom_len, "n_atoms": d.n_atoms}))
    return EXIT_OK


def cmd_inpaint(args) -> int:
    exp = build_experiment(args)
    out = _out_dir(exp.out)
    report = run_inpaint(exp, out)
    print(json.dumps({"out": str(out), "stop_reason": report["stop_reason"], "iterations": report["iterations"],
                      "quality": report["quality"]}))
    return EXIT_OK


def _parse_grid(text: str) -> list[float]:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"grid values must be comma-separated numbers, got {text!r}") from None
    if not values or any(v < 0 or not math.isfinite(v) for v in values):
        raise UsageError(f"grid values must be finite and >= 0, got {text!r}")
    return values


def _cell_name(w_s, w_lr) -> str:
    return f"cell_ws{w_s:g}_wlr{w_lr:g}"


def _ablation_cell(job) -> tuple[float, float, float, str | None]:
    exp_dict, w_s, w_lr, out, deterministic = job
    exp = ExperimentConfig(**{**exp_dict, "solver": {**exp_dict["solver"], "w_s": w_s, "w_lr": w_lr}})
    cell = Path(out) / _cell_name(w_s, w_lr)
    cell.mkdir(parents=True, exist_ok=True)
    try:
        with _determinism(deterministic):
            report = run_inpaint(exp, cell)
        return w_s, w_lr, float(report["quality"]["mpsnr"]), None
    except (CertificationError, NumericalAbort, ShapeMismatchError, ValueError, UsageError) as exc:
        return w_s, w_lr, float("nan"), f"{type(exc).__name__}: {exc}"


def ablation_table(results, ws_values, wlr_values) -> str:
    """CSV with one row per w_s and one column per w_lr."""
    lookup = {(a, b): v for a, b, v, _ in results}
    lines = ["w_s\\w_lr," + ",".join(f"{b:g}" for b in wlr_values)]
    for a in ws_values:
        lines.append(f"{a:g}," + ",".join(
            "nan" if math.isnan(lookup[(a, b)]) else f"{lookup[(a, b)]:.6f}" for b in wlr_values))
    return "\n".join(lines) + "\n"


def cmd_ablate(args) -> int:
    exp = build_experiment(args)
    if not exp.truth:
        raise UsageError("ablate needs --truth to score the cells")
    for path, what in ((exp.input, "input cube"), (exp.mask, "mask"), (exp.dictionary, "dictionary"),
                       (exp.truth, "ground truth")):
        if file_pair_hash(_require(path, what)) is None:
            raise UsageError(f"{what} not found: {path}")
    out = _out_dir(exp.out)
    ws_values, wlr_values = _parse_grid(args.ws), _parse_grid(args.wlr)
    base = {f.name: getattr(exp, f.name) for f in fields(exp)}
    base["metrics"] = True
    jobs = [(base, a, b, str(out), args.deterministic) for a in ws_values for b in wlr_values]
    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            results = list(pool.map(_ablation_cell, jobs))
    else:
        results = [_ablation_cell(j) for j in jobs]
    (out / "ablation.csv").write_text(ablation_table(results, ws_values, wlr_values))
    failures = {_cell_name(a, b): err for a, b, _, err in results if err}
    _write_json(out / "ablation_report.json", {
        "config": exp.effective(), "w_s": ws_values, "w_lr": wlr_values,
        "cells": [{"w_s": a, "w_lr": b, "mpsnr": None if math.isnan(v) else v, "error": err}
                  for a, b, v, err in results],
    })
    write_manifest(out, "ablate", {**exp.effective(), "w_s": ws_values, "w_lr": wlr_values},
                   {"input": exp.input, "mask": exp.mask, "dictionary": exp.dictionary, "truth": exp.truth},
                   ["ablation.csv", "ablation_report.json"])
    for name, err in failures.items():
        log.error("%s failed: %s", name, err)
    sys.stdout.write((out / "ablation.csv").read_text())
    return EXIT_NUMERIC if len(failures) == len(results) else EXIT_OK


def cmd_certify(args) -> int:
    if not args.network and not args.guide:
        raise UsageError("certify needs --network and/or --guide")
    report = {}
    if args.guide:
        guide = _load(load_cube, args.guide, "guide cube")
        config = NlmConfig(args.nlm_patch_radius, args.nlm_search_radius, args.nlm_h, args.nlm_theta)
        d = build_averaged_nlm(guide.data, config)
        if args.scale != 1.0:
            d = AveragedDenoiser(d.weights * args.scale, d.theta)
        report["denoiser"] = certify_nonexpansive(d, trials=args.trials, seed=args.seed)
        report["denoiser"]["problems"] = d.check()
    if args.network:
        net = _load(Network.load, args.network, "network")
        report["network"] = certify_lipschitz(net, trials=args.trials, seed=args.seed)
    ok = all(r["pass"] for r in report.values())
    report["pass"] = ok
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.out:
        out = _out_dir(args.out)
        (out / "certification.json").write_text(text + "\n")
    print(text)
    return EXIT_OK if ok else EXIT_CERT


def cmd_metrics(args) -> int:
    truth = _load(load_cube, args.truth, "ground truth")
    test = _load(load_cube, args.test, "test cube")
    report = quality_report(truth, test).to_dict()
    text = json.dumps(report, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return EXIT_OK


def cmd_config(args) -> int:
    """Print the effective experiment config without running anything."""
    print(json.dumps(build_experiment(args).effective(), indent=2, sort_keys=True))
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing

def _experiment_flags(p: argparse.ArgumentParser, solver_flags=True):
    p.add_argument("--config", help="JSON experiment config; flags override its fields")
    p.add_argument("--input", help="observed cube (path prefix of the .json/.bin pair)")
    p.add_argument("--mask", help="mask cube")
    p.add_argument("--dictionary", help="dictionary file pair")
    p.add_argument("--truth", help="ground-truth cube for metrics")
    p.add_argument("--network", help="network checkpoint for the dip branch")
    p.add_argument("--network-spec", dest="network_spec", choices=NETWORK_SPECS)
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--preset", choices=sorted(PRESETS), help="named solver overrides")
    if solver_flags:
        p.add_argument("--branch", choices=("svt", "dip"))
        p.add_argument("--gamma", type=float)
        p.add_argument("--w-lr", dest="w_lr", type=float)
        p.add_argument("--w-s", dest="w_s", type=float)
        p.add_argument("--max-iters", dest="max_iters", type=int)
        p.add_argument("--theory-mode", dest="theory_mode", action="store_true",
                       help="freeze the penalties (rho1 = rho2 = 1)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any solver field")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--deterministic", action="store_true", help="single-threaded numerics")
    common.add_argument("-v", "--verbose", action="count", default=0)

    parser = argparse.ArgumentParser(prog="hsinpaint", description="Hyperspectral inpainting with LRS-PnP.")
    parser.add_argument("--version", action="version", version=f"hsinpaint {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="synthesize truth, mask and observation")
    p.add_argument("--rows", type=int, default=8)
    p.add_argument("--cols", type=int, default=8)
    p.add_argument("--bands", type=int, default=16)
    p.add_argument("--rank", type=int, default=2)
    p.add_argument("--mask", choices=MASK_KINDS, default="random_pixels")
    p.add_argument("--fraction", type=float, default=0.1, help="missing fraction in (0, 1)")
    p.add_argument("--sigma", type=float, default=SolverConfig.sigma_y)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("dictlearn", parents=[common], help="learn a patch dictionary from an observation")
    _experiment_flags(p, solver_flags=False)
    p.add_argument("--atoms", type=int, default=None, help="number of atoms (default 2 x patch length)")
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--sparsity", type=float, default=0.1, help="l1 weight used while learning")
    p.set_defaults(func=cmd_dictlearn)

    p = sub.add_parser("inpaint", parents=[common], help="run one solve")
    _experiment_flags(p)
    p.add_argument("--metrics", action="store_true", help="score against --truth")
    p.set_defaults(func=cmd_inpaint)

    p = sub.add_parser("ablate", parents=[common], help="grid over the low-rank and sparsity weights")
    _experiment_flags(p)
    p.add_argument("--ws", default="0,0.5,1", help="comma-separated w_s values")
    p.add_argument("--wlr", default="0,0.5,1", help="comma-separated w_lr values")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("certify", parents=[common], help="certify a denoiser and/or a network")
    p.add_argument("--network", help="network checkpoint")
    p.add_argument("--guide", help="cube used as the NLM guide")
    p.add_argument("--nlm-patch-radius", type=int, default=1)
    p.add_argument("--nlm-search-radius", type=int, default=2)
    p.add_argument("--nlm-h", type=float, default=1.0)
    p.add_argument("--nlm-theta", type=float, default=0.5)
    p.add_argument("--scale", type=float, default=1.0, help="multiply the NLM weights (negative testing)")
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("metrics", parents=[common], help="MPSNR / MSSIM / MSAM of a cube against the truth")
    p.add_argument("--truth", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("config", parents=[common], help="print the effective config")
    _experiment_flags(p)
    p.set_defaults(func=cmd_config)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    log.debug("kernel backend: %s", kernels.BACKEND)
    try:
        with _determinism(args.deterministic):
            return args.func(args)
    except UsageError as exc:
        print(f"hsinpaint {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CubeFormatError, ShapeMismatchError) as exc:
        print(f"hsinpaint {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CertificationError as exc:
        print(f"hsinpaint {args.command}: certification failed: {exc}", file=sys.stderr)
        return EXIT_CERT
    except NumericalAbort as exc:
        print(f"hsinpaint {args.command}: numerical abort at iteration {exc.iteration}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
