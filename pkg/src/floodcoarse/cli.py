"""Command-line entry point.

Every command writes its outputs and a ``manifest.json`` into ``--out``. The
manifest records the parsed arguments, hashes of every input file and of
every output, so ``replay`` can rerun the command and check the outputs are
byte-identical.

Exit codes: 0 ok, 1 usage or config error, 2 numerical instability,
3 failed check (gradcheck tolerance, replay mismatch).
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .adjoint import gradcheck_instance, grad_errors, run_gradcheck
from .bench import run_bench
from .downsample import KINDS as DOWNSAMPLER_KINDS
from .downsample import Downsampler
from .grid import ElevationMap, RasterFormatError, read_raster, write_pgm, write_raster
from .loss import LossSpec, coarsen_water, eval_loss, signed_difference
from .optimize import DivergenceError, Sample, TrainConfig, compute_target, optimize_single_map
from .optimize import sample_loss, train_multi_map
from .scenario import (auto_bc, bcs_from_config, generate, load_config, terrain_from_config)
from .solver import BoundaryConditions, NumericalInstabilityError, SolverParams, simulate

log = logging.getLogger("floodcoarse")

EXIT_OK, EXIT_USAGE, EXIT_UNSTABLE, EXIT_CHECK = 0, 1, 2, 3

# arguments that name input files; their contents are hashed into the manifest
INPUT_ARGS = ("dem", "bc", "params", "model", "bc_set", "holdout", "config", "dataset", "a", "b")


class UsageError(Exception):
    pass


class CheckFailed(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# ---------------------------------------------------------------------------
# shared loaders

def _read_structured(path: str | Path):
    """JSON or YAML (YAML is a superset, so one loader serves both)."""
    try:
        with open(path) as fh:
            return yaml.safe_load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise UsageError(f"{path}: not valid YAML/JSON: {exc}") from exc


def _config(args) -> dict:
    if getattr(args, "config", None):
        cfg = _read_structured(args.config) or {}
        if not isinstance(cfg, dict):
            raise UsageError(f"{args.config}: config must be a mapping")
        return cfg
    return {}


def _solver_params(args, cfg: dict) -> SolverParams:
    d = dict(cfg.get("solver", {}))
    if getattr(args, "params", None):
        d.update(_read_structured(args.params) or {})
    if getattr(args, "hours", None) is not None:
        d["horizon_T"] = float(args.hours) * 3600.0
    try:
        return SolverParams(**d)
    except TypeError as exc:
        raise UsageError(f"bad solver parameters: {exc}") from exc


def _load_dem(args, cfg: dict) -> ElevationMap:
    if getattr(args, "dem", None):
        try:
            return read_raster(args.dem)
        except OSError as exc:
            raise UsageError(f"cannot read {args.dem}: {exc}") from exc
    if "terrain" in cfg:
        return generate(terrain_from_config(cfg))
    raise UsageError("need --dem or a config with a terrain section")


def _bc_list(data) -> list[BoundaryConditions]:
    items = data if isinstance(data, list) else [data]
    return [BoundaryConditions.from_dict(d) for d in items]


def _load_bcs(path) -> list[BoundaryConditions]:
    try:
        return _bc_list(_read_structured(path))
    except (KeyError, TypeError) as exc:
        raise UsageError(f"{path}: malformed boundary conditions ({exc})") from exc


def _single_bc(args, cfg: dict, z: ElevationMap) -> BoundaryConditions:
    if getattr(args, "bc", None):
        bcs = _load_bcs(args.bc)
        if not 0 <= args.bc_index < len(bcs):
            raise UsageError(f"--bc-index {args.bc_index} out of range for {len(bcs)} conditions")
        return bcs[args.bc_index]
    if getattr(args, "auto_bc", False) or not any(k in cfg for k in ("bcs", "bc_grid", "auto_bc")):
        return auto_bc(z, args.width_m, args.discharge)
    return bcs_from_config(cfg, z)[0]


def _loss_spec(text: str) -> LossSpec:
    try:
        return LossSpec.parse(text)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _train_config(args, cfg: dict) -> TrainConfig:
    d = dict(cfg.get("train", {}))
    d["solver"] = _solver_params(args, cfg)
    if getattr(args, "seed", None) is not None:
        d["seed"] = args.seed
    if isinstance(d.get("loss"), str):
        d["loss"] = _loss_spec(d["loss"])
    try:
        return TrainConfig(**d)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad train config: {exc}") from exc


def _dataset_items(path) -> tuple[dict, list[Path]]:
    data = _read_structured(path)
    if not isinstance(data, dict) or not ("train" in data or "samples" in data or "holdout" in data):
        raise UsageError(f"{path}: dataset needs train/holdout (or samples) lists")
    refs = []
    base = Path(path).parent
    for split in ("train", "holdout", "samples"):
        for item in data.get(split, []) or []:
            if "dem" in item:
                p = Path(item["dem"])
                item["dem"] = str(p if p.is_absolute() else base / p)
                refs.append(Path(item["dem"]))
    return data, refs


def _dataset_samples(items: list, params: SolverParams, factor: int, cache) -> list[Sample]:
    out = []
    for item in items or []:
        if "dem" in item:
            z = read_raster(item["dem"])
        elif "terrain" in item:
            z = generate(terrain_from_config(item))
        else:
            raise UsageError("dataset items need a dem path or a terrain spec")
        bc = item.get("bc", "auto")
        if bc == "auto" or bc is None:
            a = item.get("auto_bc", {})
            bc = auto_bc(z, a.get("width_m", 400.0), a.get("discharge", 100.0), a.get("outflux_slope", 1e-3))
        else:
            bc = BoundaryConditions.from_dict(bc)
        out.append(Sample(z, bc, compute_target(z, bc, params, factor, cache)))
    return out


def _write_csv(path: Path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    path.write_text(buf.getvalue())


# ---------------------------------------------------------------------------
# commands; each returns a dict of extra manifest fields

def cmd_generate(args, out: Path) -> dict:
    cfg = _config(args)
    if "terrain" not in cfg:
        raise UsageError("generate needs a config with a terrain section")
    z = generate(terrain_from_config(cfg))
    write_raster(z, out / "dem.asc")
    bcs = bcs_from_config(cfg, z)
    (out / "bcs.json").write_text(json.dumps([b.to_dict() for b in bcs], indent=2) + "\n")
    if "holdout" in cfg:
        hold = bcs_from_config(cfg["holdout"], z)
        (out / "holdout.json").write_text(json.dumps([b.to_dict() for b in hold], indent=2) + "\n")
    if args.pgm:
        write_pgm(z.z, out / "dem.pgm")
    return {}


def cmd_simulate(args, out: Path) -> dict:
    cfg = _config(args)
    z = _load_dem(args, cfg)
    bc = _single_bc(args, cfg, z)
    params = _solver_params(args, cfg)
    state, steplog = simulate(z, bc, params)
    write_raster(ElevationMap(state.h, z.cell_size), out / "h.asc")
    (out / "steplog.csv").write_text(steplog.to_csv())
    if args.pgm:
        write_pgm(state.h, out / "h.pgm", lo=0.0)
    print(f"steps {steplog.steps}  mass balance relative error {steplog.mass_balance_error():.3e}")
    return {"steps": steplog.steps, "bc": bc.to_dict()}


def cmd_downsample(args, out: Path) -> dict:
    z = read_raster(args.dem)
    if args.model:
        d = Downsampler.load(args.model)
    else:
        d = Downsampler(args.kind, args.factor)
        if d.trainable:
            raise UsageError(f"{args.kind} needs --model")
    coarse = d(z)
    write_raster(coarse, out / "coarse.asc")
    if args.pgm:
        write_pgm(coarse.z, out / "coarse.pgm")
    return {"kind": d.kind, "factor": d.factor}


def cmd_gradcheck(args, out: Path) -> dict:
    loss = _loss_spec(args.loss)
    inst = gradcheck_instance(args.seed, args.size, args.steps)
    adj, fd = run_gradcheck(inst, loss, args.eps)
    norm, elem = grad_errors(adj, fd)
    _write_csv(out / "gradcheck.csv", ["row", "col", "adjoint", "finite_difference"],
               [(i, j, repr(float(adj[i, j])), repr(float(fd[i, j]))) for i, j in np.ndindex(adj.shape)])
    print(f"max relative error {norm:.3e} (elementwise {elem:.3e}, tolerance {args.tol:g})")
    if norm > args.tol:
        raise CheckFailed(f"gradient check failed: {norm:.3e} > {args.tol:g}")
    return {"steps": len(inst.dts), "max_relative_error": norm}


def cmd_optimize(args, out: Path) -> dict:
    cfg = _config(args)
    z = _load_dem(args, cfg)
    config = _train_config(args, cfg)
    train_bcs = _load_bcs(args.bc_set) if args.bc_set else bcs_from_config(cfg, z)
    if args.holdout:
        hold_bcs = _load_bcs(args.holdout)
    elif "holdout" in cfg:
        hold_bcs = bcs_from_config(cfg["holdout"], z)
    else:
        hold_bcs = []
    model, history = optimize_single_map(z, train_bcs, hold_bcs, config, args.kind, args.factor,
                                         cache_dir=out / "targets")
    model.save(out / "model")
    (out / "history.csv").write_text(history.to_csv())
    write_raster(model(z), out / "coarse.asc")
    print(f"train loss {history.train[0]:.6g} -> {history.train[-1]:.6g}; "
          f"held-out {history.holdout[0]:.6g} -> {history.holdout[-1]:.6g}")
    return {"epochs": config.epochs, "divergence_events": history.divergence_events}


def cmd_train(args, out: Path) -> dict:
    cfg = _config(args)
    config = _train_config(args, cfg)
    data, _ = _dataset_items(args.dataset)
    factor = int(data.get("factor", 16))
    train = _dataset_samples(data.get("train"), config.solver, factor, out / "targets")
    hold = _dataset_samples(data.get("holdout"), config.solver, factor, out / "targets")
    model, history = train_multi_map(train, hold, config)
    model.save(out / "model")
    (out / "history.csv").write_text(history.to_csv())
    print(f"train loss {history.train[0]:.6g} -> {history.train[-1]:.6g}; "
          f"held-out {history.holdout[0]:.6g} -> {history.holdout[-1]:.6g}")
    return {"epochs": config.epochs, "divergence_events": history.divergence_events}


def cmd_evaluate(args, out: Path) -> dict:
    cfg = _config(args)
    params = _solver_params(args, cfg)
    loss = _loss_spec(args.loss)
    data, _ = _dataset_items(args.dataset)
    factor = int(data.get("factor", 16))
    split = args.split if args.split in data else ("samples" if "samples" in data else "train")
    samples = _dataset_samples(data.get(split), params, factor, out / "targets")
    models = [("AvgPool", Downsampler("AvgPool", factor))]
    for kind in args.kinds.split(","):
        kind = kind.strip()
        if kind and kind != "AvgPool":
            if kind not in DOWNSAMPLER_KINDS or kind in ("DirectMap", "SmallCnn"):
                raise UsageError(f"--kinds takes fixed downsamplers, got {kind!r}")
            models.append((kind, Downsampler(kind, factor)))
    for path in args.model or []:
        models.append((Path(path).stem, Downsampler.load(path)))
    tcfg = TrainConfig(loss=loss, solver=params)
    per = {name: [sample_loss(m, s, tcfg, loss) for s in samples] for name, m in models}
    base = np.array(per["AvgPool"])
    rows = []
    for name, vals in per.items():
        v = np.array(vals)
        ratio = v.mean() / base.mean() if base.mean() > 0 else float("nan")
        rows.append((name, len(v), repr(float(v.mean())), repr(float(np.percentile(v, 50))),
                     repr(float(np.percentile(v, 90))), repr(float(ratio))))
        print(f"{name:>14}  mean {v.mean():.6g}  p50 {np.percentile(v, 50):.6g}  "
              f"p90 {np.percentile(v, 90):.6g}  ratio {ratio:.4f}")
    _write_csv(out / "table.csv", ["model", "n", "mean", "p50", "p90", "ratio_to_avgpool"], rows)
    _write_csv(out / "samples.csv", ["sample"] + list(per),
               [[i] + [repr(float(per[n][i])) for n in per] for i in range(len(samples))])
    return {"split": split, "samples": len(samples)}


def cmd_diffmap(args, out: Path) -> dict:
    a, b = read_raster(args.a), read_raster(args.b)
    ref = b.z
    if a.shape != b.shape:
        k = b.shape[0] // a.shape[0] if a.shape[0] else 0
        if k < 2 or b.shape != (a.shape[0] * k, a.shape[1] * k):
            raise UsageError(f"shapes {a.shape} and {b.shape} are not related by an integer factor")
        ref = coarsen_water(b.z, k)
    loss = _loss_spec(args.loss)
    total, per_pixel = eval_loss(a.z, ref, loss)
    diff = signed_difference(a.z, ref)
    write_raster(ElevationMap(diff, a.cell_size), out / "diff.asc")
    write_raster(ElevationMap(per_pixel, a.cell_size), out / "loss_map.asc")
    _write_csv(out / "summary.csv", ["loss", "sum", "per_pixel_mean"],
               [(loss.kind, repr(float(total)), repr(float(per_pixel.mean())))])
    if args.pgm:
        m = float(np.abs(diff).max()) or 1.0
        write_pgm(diff, out / "diff.pgm", lo=-m, hi=m)
    print(f"{loss.kind} loss {total:.6g} (per-pixel mean {per_pixel.mean():.6g})")
    return {"loss": float(total)}


def cmd_bench(args, out: Path) -> dict:
    cfg = _config(args)
    z = _load_dem(args, cfg)
    bc = _single_bc(args, cfg, z)
    params = _solver_params(args, cfg)
    rep = run_bench(z, bc, params, args.factor)
    _write_csv(out / "bench.csv", ["quantity", "value"], rep.deterministic_rows())
    print(f"per-step work ratio {rep.work_ratio:.1f}, step-count ratio {rep.step_ratio:.2f}, "
          f"predicted {rep.predicted:.0f}x, theoretical {rep.theoretical}x")
    print(f"wall clock: fine {rep.fine_seconds:.4f} s, coarse {rep.coarse_seconds:.6f} s, "
          f"ratio {rep.wall_ratio:.0f}x")
    return {"steps": {"fine": rep.fine_steps, "coarse": rep.coarse_steps},
            "bench_wall_clock": {"fine": rep.fine_seconds, "coarse": rep.coarse_seconds,
                                 "ratio": rep.wall_ratio}}


def _output_hashes(out: Path) -> dict:
    return {str(p.relative_to(out)): sha256_file(p) for p in sorted(out.rglob("*"))
            if p.is_file() and p.name != "manifest.json"}


def cmd_replay(args, out: Path) -> dict:
    manifest = _read_structured(args.manifest)
    if not isinstance(manifest, dict) or "args" not in manifest:
        raise UsageError(f"{args.manifest} is not a run manifest")
    for name, rec in manifest.get("inputs", {}).items():
        for path, digest in rec.items():
            if not Path(path).exists():
                raise UsageError(f"input {path} is missing")
            if sha256_file(path) != digest:
                raise UsageError(f"input {path} changed since the recorded run")
    rerun = dict(manifest["args"])
    if Path(rerun["out"]).resolve() == out.resolve():
        raise UsageError("replay --out must differ from the recorded output directory")
    rerun["out"] = str(out)
    code = main(_argv_from(rerun))
    if code != EXIT_OK:
        raise CheckFailed(f"replayed command exited with {code}")
    fresh = _output_hashes(out)
    expected = manifest.get("outputs", {})
    bad = sorted(k for k in set(fresh) | set(expected) if fresh.get(k) != expected.get(k))
    if bad:
        raise CheckFailed("replay outputs differ: " + ", ".join(bad))
    print(f"replay reproduced {len(fresh)} output files byte-identically")
    return {}


COMMANDS = {
    "generate": cmd_generate, "simulate": cmd_simulate, "downsample": cmd_downsample,
    "gradcheck": cmd_gradcheck, "optimize": cmd_optimize, "train": cmd_train,
    "evaluate": cmd_evaluate, "diffmap": cmd_diffmap, "bench": cmd_bench, "replay": cmd_replay,
}


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="floodcoarse", description="Learned coarse terrain for shallow-water flood simulation.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, out=True):
        if out:
            sp.add_argument("--out", required=True, help="output directory")
        return sp

    def bc_opts(sp):
        sp.add_argument("--bc", help="boundary conditions (JSON/YAML, one or a list)")
        sp.add_argument("--bc-index", type=int, default=0)
        sp.add_argument("--auto-bc", action="store_true", help="outflux at the lowest boundary cell")
        sp.add_argument("--width-m", type=float, default=400.0)
        sp.add_argument("--discharge", type=float, default=100.0)

    sp = common(sub.add_parser("generate", help="materialise a synthetic terrain and its bcs"))
    sp.add_argument("--config", required=True)
    sp.add_argument("--pgm", action="store_true")

    sp = common(sub.add_parser("simulate", help="run the solver"))
    sp.add_argument("--dem")
    sp.add_argument("--config")
    bc_opts(sp)
    sp.add_argument("--hours", type=float)
    sp.add_argument("--params", help="solver parameters (YAML/JSON mapping)")
    sp.add_argument("--pgm", action="store_true")

    sp = common(sub.add_parser("downsample", help="coarsen a DEM"))
    sp.add_argument("--dem", required=True)
    sp.add_argument("--kind", default="AvgPool", choices=DOWNSAMPLER_KINDS)
    sp.add_argument("--factor", type=int, default=16)
    sp.add_argument("--model", help="saved trainable downsampler (.json)")
    sp.add_argument("--pgm", action="store_true")

    sp = common(sub.add_parser("gradcheck", help="adjoint vs central differences"))
    sp.add_argument("--size", type=int, default=16)
    sp.add_argument("--steps", type=int, default=50)
    sp.add_argument("--eps", type=float, default=1e-4)
    sp.add_argument("--loss", default="huber")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--tol", type=float, default=1e-5)

    sp = common(sub.add_parser("optimize", help="fit one map over many bcs"))
    sp.add_argument("--dem")
    sp.add_argument("--config")
    sp.add_argument("--bc-set")
    sp.add_argument("--holdout")
    sp.add_argument("--kind", default="DirectMap", choices=("DirectMap", "SmallCnn"))
    sp.add_argument("--factor", type=int, default=16)
    sp.add_argument("--hours", type=float)
    sp.add_argument("--seed", type=int)

    sp = common(sub.add_parser("train", help="fit a SmallCnn over many maps"))
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--config")
    sp.add_argument("--hours", type=float)
    sp.add_argument("--seed", type=int)

    sp = common(sub.add_parser("evaluate", help="loss table comparing downsamplers"))
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--config")
    sp.add_argument("--model", action="append", help="saved trainable downsampler (repeatable)")
    sp.add_argument("--kinds", default="AvgPool,BilateralAvg,BilateralMax")
    sp.add_argument("--loss", default="huber")
    sp.add_argument("--split", default="holdout")
    sp.add_argument("--hours", type=float)

    sp = common(sub.add_parser("diffmap", help="signed difference raster, positive = A more inundated"))
    sp.add_argument("--a", required=True, help="depth raster (coarse solution)")
    sp.add_argument("--b", required=True, help="reference depth raster (same grid or finer)")
    sp.add_argument("--loss", default="huber")
    sp.add_argument("--pgm", action="store_true")

    sp = common(sub.add_parser("bench", help="fine vs coarse cost"))
    sp.add_argument("--dem")
    sp.add_argument("--config")
    bc_opts(sp)
    sp.add_argument("--factor", type=int, default=16)
    sp.add_argument("--hours", type=float)
    sp.add_argument("--params")

    sp = common(sub.add_parser("replay", help="rerun a command from its manifest and compare outputs"))
    sp.add_argument("--manifest", required=True)
    return p


def _argv_from(d: dict) -> list[str]:
    argv = [d["command"]]
    for k, v in d.items():
        if k in ("command", "verbose") or v is None or v is False:
            continue
        flag = "--" + k.replace("_", "-")
        if v is True:
            argv.append(flag)
        elif isinstance(v, list):
            for item in v:
                argv += [flag, str(item)]
        else:
            argv += [flag, repr(v) if isinstance(v, float) else str(v)]
    return argv


def _absolutise(args) -> None:
    for name in INPUT_ARGS + ("out", "manifest"):
        v = getattr(args, name, None)
        if isinstance(v, str):
            setattr(args, name, str(Path(v).resolve()))
        elif isinstance(v, list):
            setattr(args, name, [str(Path(x).resolve()) for x in v])


def _input_hashes(args) -> dict:
    out = {}
    for name in INPUT_ARGS:
        v = getattr(args, name, None)
        paths = v if isinstance(v, list) else ([v] if v else [])
        for path in paths:
            if not Path(path).is_file():
                raise UsageError(f"--{name.replace('_', '-')}: no such file {path}")
            out.setdefault(name, {})[path] = sha256_file(path)
            if name == "dataset":
                for ref in _dataset_items(path)[1]:
                    out.setdefault("dataset_refs", {})[str(ref)] = sha256_file(ref)
            if name == "model":
                stem = Path(path)
                for suffix in (".bin", ".f64"):
                    if stem.with_suffix(suffix).exists():
                        ref = str(stem.with_suffix(suffix))
                        out.setdefault("model_refs", {})[ref] = sha256_file(ref)
    return out


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    _absolutise(args)
    out = Path(args.out)
    t0 = time.perf_counter()
    try:
        inputs = _input_hashes(args)
        if out.exists() and not out.is_dir():
            raise UsageError(f"--out {out} is not a directory")
        out.mkdir(parents=True, exist_ok=True)
        extra = COMMANDS[args.command](args, out)
    except (UsageError, RasterFormatError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalInstabilityError, DivergenceError, FloatingPointError) as exc:
        print(f"numerical instability: {exc}", file=sys.stderr)
        return EXIT_UNSTABLE
    except CheckFailed as exc:
        print(f"check failed: {exc}", file=sys.stderr)
        return EXIT_CHECK
    manifest = {
        "command": args.command,
        "args": {k: v for k, v in vars(args).items()},
        "config": getattr(args, "config", None),
        "inputs": inputs,
        "seed": getattr(args, "seed", None),
        "version": __version__,
        "wall_clock_s": time.perf_counter() - t0,
        "outputs": _output_hashes(out),
    }
    manifest.update(extra)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
    return EXIT_OK


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
