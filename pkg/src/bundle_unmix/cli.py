"""Command-line driver: ``bundle-unmix <command> [options]``.

Commands share one JSON experiment config (``--config``); command-line
flags override the JSON fields.  All outputs go under ``--out`` and later
commands find earlier outputs there by default, so a full pipeline is::

    bundle-unmix synth   --config exp.json
    bundle-unmix bundles --config exp.json
    bundle-unmix unmix   --config exp.json
    bundle-unmix eval    --config exp.json
    bundle-unmix render  --config exp.json

Exit codes: 0 success, 2 config or validation error, 3 solver or
runtime error, 4 I/O error.
"""
from __future__ import annotations

import argparse
import contextlib
import csv
import io
import json
import logging
import math
import os
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Optional

import numpy as np

from . import __version__
from .bundles import BundleConfig, aeb_extract
from .data import (
    CubeShape,
    MatrixFormatError,
    atomic_write,
    load_cube_shape,
    load_groups,
    load_matrix,
    save_cube_shape,
    save_groups,
    save_matrix,
    validate_groups,
)
from .metrics import EvalReport, align_materials, evaluate, mean_signatures
from .prox import PenaltySpec
from .solvers import SOLVERS, SolverConfig, UnmixResult, endmember_stack, fcls, unmix
from .synth import SceneConfig, make_scene

log = logging.getLogger("bundle_unmix")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_IO = 0, 2, 3, 4
THREADS_ENV = "BUNDLE_UNMIX_THREADS"
DEFAULT_GRID = {"start": 1e-4, "stop": 1.0, "num": 13}


class ConfigError(ValueError):
    pass


class IOFailure(OSError):
    pass


# ------------------------------------------------------------------ config


@dataclass
class ExperimentConfig:
    out: str = "run"
    format: str = "binary"
    seed: Optional[int] = None
    scene: dict = field(default_factory=dict)
    bundles: dict = field(default_factory=dict)
    solver: str = "swag"
    penalty: dict = field(default_factory=lambda: {"kind": "TL1", "b": 1.0, "q": 0.5})
    lam: float = 0.01
    rho: float = 1.0
    iters: int = 1000
    primal_tol: float = 0.0
    sweep: Any = field(default_factory=lambda: dict(DEFAULT_GRID))
    inputs: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**d)

    def validate(self) -> None:
        if self.format not in ("csv", "binary"):
            raise ConfigError(f"format must be csv or binary, got {self.format!r}")
        if self.solver not in SOLVERS:
            raise ConfigError(f"solver must be one of {SOLVERS}, got {self.solver!r}")
        f = self.penalty_spec()
        if self.solver != "fcls" and f.effective_kind == "Lq" and f.q != 0.5:
            raise ConfigError(f"Lq penalty is supported for q = 0.5 or q = 1 only, got q={f.q}")
        self.solver_config()

    @property
    def out_dir(self) -> Path:
        return Path(self.out)

    @property
    def ext(self) -> str:
        return ".csv" if self.format == "csv" else ".bin"

    def path(self, stem: str) -> Path:
        return self.out_dir / (stem + self.ext)

    def input_path(self, key: str, default: Optional[Path]) -> Optional[Path]:
        p = self.inputs.get(key)
        return Path(p) if p else default

    def penalty_spec(self) -> PenaltySpec:
        try:
            return PenaltySpec(**self.penalty)
        except TypeError as exc:
            raise ConfigError(f"bad penalty: {exc}") from None
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def solver_config(self, **over) -> SolverConfig:
        try:
            return SolverConfig(
                lam=float(over.get("lam", self.lam)),
                rho=float(self.rho),
                max_iters=int(self.iters),
                primal_tol=float(self.primal_tol),
                seed=self.seed or 0,
                track_objective=True,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def scene_config(self) -> SceneConfig:
        d = dict(self.scene)
        if self.seed is not None:
            d["seed"] = self.seed
        try:
            return SceneConfig(**d)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad scene config: {exc}") from None

    def bundle_config(self) -> BundleConfig:
        d = dict(self.bundles)
        if self.seed is not None:
            d["seed"] = self.seed
        if "k" not in d:
            d["k"] = int(self.scene.get("k", SceneConfig.k))
        try:
            return BundleConfig(**d)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad bundle config: {exc}") from None

    def lambda_grid(self) -> np.ndarray:
        g = self.sweep
        if isinstance(g, list):
            grid = np.asarray(g, dtype=float)
        elif isinstance(g, dict):
            spec = {**DEFAULT_GRID, **g}
            if spec["start"] <= 0 or spec["stop"] <= 0 or int(spec["num"]) < 1:
                raise ConfigError("sweep grid needs positive start/stop and num >= 1")
            grid = np.logspace(math.log10(spec["start"]), math.log10(spec["stop"]), int(spec["num"]))
        else:
            raise ConfigError("sweep must be a list of lambdas or {start, stop, num}")
        if grid.size == 0 or np.any(~np.isfinite(grid)) or np.any(grid < 0):
            raise ConfigError("sweep grid must hold finite lambdas >= 0")
        return grid


def load_config(args: argparse.Namespace) -> ExperimentConfig:
    raw: dict = {}
    if args.config:
        try:
            raw = json.loads(Path(args.config).read_text())
        except OSError as exc:
            raise IOFailure(f"cannot read config {args.config}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {args.config} is not valid JSON: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
    cfg = ExperimentConfig.from_dict(raw)
    for flag, attr in [("out", "out"), ("format", "format"), ("seed", "seed"), ("solver", "solver"),
                       ("lam", "lam"), ("rho", "rho"), ("iters", "iters"), ("primal_tol", "primal_tol")]:
        value = getattr(args, flag, None)
        if value is not None:
            setattr(cfg, attr, value)
    pen = dict(cfg.penalty)
    for flag, key in [("penalty", "kind"), ("b", "b"), ("q", "q")]:
        value = getattr(args, flag, None)
        if value is not None:
            pen[key] = value
    cfg.penalty = pen
    cfg.validate()
    return cfg


# ----------------------------------------------------------------- helpers


def _read(loader, path: Optional[Path], what: str):
    if path is None:
        raise IOFailure(f"no path given for {what}")
    try:
        return loader(path)
    except FileNotFoundError:
        raise IOFailure(f"{what}: file not found: {path}") from None
    except (OSError, MatrixFormatError, ValueError) as exc:
        raise IOFailure(f"{what}: cannot read {path}: {exc}") from None


def _write_json(path: Path, obj) -> None:
    atomic_write(path, (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode())


def _truth_manifest(cfg: ExperimentConfig) -> Optional[dict]:
    path = cfg.input_path("truth", cfg.out_dir / "truth.json")
    if not path.exists():
        return None
    return _read(lambda p: json.loads(p.read_text()), path, "truth manifest")


def _truth_path(manifest: Optional[dict], key: str) -> Optional[Path]:
    if manifest and manifest.get(key):
        return Path(manifest[key])
    return None


def _load_problem(cfg: ExperimentConfig):
    X = _read(load_matrix, cfg.input_path("X", cfg.path("X")), "X")
    B = _read(load_matrix, cfg.input_path("B", cfg.path("B")), "B")
    G = _read(load_groups, cfg.input_path("G", cfg.out_dir / "G.json"), "G")
    if X.shape[0] != B.shape[0]:
        raise ConfigError(f"X has {X.shape[0]} bands but B has {B.shape[0]}")
    try:
        validate_groups(G, B)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return X, B, G


def _convergence_csv(result: UnmixResult) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["iter", "primal_res_1", "primal_res_2", "objective"])
    obj = result.objective if result.objective is not None else [float("nan")] * len(result.residuals)
    for i, ((r1, r2), o) in enumerate(zip(result.residuals, obj), start=1):
        w.writerow([i, repr(float(r1)), repr(float(r2)), repr(float(o))])
    return buf.getvalue().encode()


def _score(result: UnmixResult, X, M_true, S_ref) -> tuple[EvalReport, Optional[np.ndarray]]:
    """Metrics for one solver output, materials aligned to the truth when given."""
    M_hat = result.M_hat
    S_est = mean_signatures(endmember_stack(result.A_hat, result.B, result.groups), M_hat)
    X_hat = result.reconstruct()
    perm = None
    if S_ref is not None and S_ref.shape == S_est.shape:
        perm = align_materials(S_est, S_ref)
        M_hat, S_est = M_hat[perm], S_est[:, perm]
    if M_true is not None and M_true.shape != M_hat.shape:
        raise ConfigError(f"estimated abundances are {M_hat.shape}, truth is {M_true.shape}")
    rep = evaluate(M_hat, M_true, X_hat, X, S_est if S_ref is not None else None, S_ref)
    return rep, perm


def _save_result(cfg: ExperimentConfig, result: UnmixResult, X, truth) -> EvalReport:
    fmt = cfg.format
    save_matrix(result.A_hat, cfg.path("A_hat"), fmt)
    save_matrix(result.M_hat, cfg.path("M_hat"), fmt)
    S_est = mean_signatures(endmember_stack(result.A_hat, result.B, result.groups), result.M_hat)
    save_matrix(S_est, cfg.path("endmembers"), fmt)
    save_matrix(result.reconstruct(), cfg.path("X_hat"), fmt)
    atomic_write(cfg.out_dir / "convergence.csv", _convergence_csv(result))
    M_true, S_ref = truth
    rep, perm = _score(result, X, M_true, S_ref)
    rep.extra.update(
        solver=cfg.solver,
        penalty=cfg.penalty_spec().describe(),
        rho=cfg.rho,
        iterations=result.iterations_run,
        final_residual=result.final_residual,
    )
    if perm is not None:
        rep.extra["material_order"] = [int(p) for p in perm]
    return rep


def _load_truth(cfg: ExperimentConfig):
    manifest = _truth_manifest(cfg)
    M_path = cfg.input_path("M_true", _truth_path(manifest, "M_true"))
    S_path = cfg.input_path("S_ref", _truth_path(manifest, "S_ref"))
    M_true = _read(load_matrix, M_path, "M_true") if M_path else None
    S_ref = _read(load_matrix, S_path, "S_ref") if S_path else None
    return M_true, S_ref


# ---------------------------------------------------------------- commands


def cmd_synth(cfg: ExperimentConfig) -> dict:
    sc = cfg.scene_config()
    truth = make_scene(sc)
    fmt = cfg.format
    paths = {
        "X": cfg.path("X"),
        "B_true": cfg.path("B_true"),
        "G_true": cfg.out_dir / "G_true.json",
        "M_true": cfg.path("M_true"),
        "S_ref": cfg.path("S_ref"),
        "cube": cfg.out_dir / "cube.json",
    }
    save_matrix(truth.X, paths["X"], fmt)
    save_matrix(truth.B, paths["B_true"], fmt)
    save_groups(truth.groups, paths["G_true"])
    save_matrix(truth.M, paths["M_true"], fmt)
    save_matrix(truth.S_ref, paths["S_ref"], fmt)
    save_cube_shape(CubeShape(sc.height, sc.width, sc.bands), paths["cube"])
    manifest = {key: str(p) for key, p in paths.items()}
    manifest.update(seed=sc.seed, snr_db=sc.snr_db, empirical_snr_db=truth.empirical_snr_db(), scene=sc.to_dict())
    _write_json(cfg.out_dir / "truth.json", manifest)
    log.info("wrote %dx%dx%d scene to %s", sc.height, sc.width, sc.bands, cfg.out_dir)
    return manifest


def cmd_bundles(cfg: ExperimentConfig) -> dict:
    X = _read(load_matrix, cfg.input_path("X", cfg.path("X")), "X")
    bc = cfg.bundle_config()
    B, G = aeb_extract(X, bc)
    save_matrix(B, cfg.path("B"), cfg.format)
    save_groups(G, cfg.out_dir / "G.json")
    log.info("extracted %d signatures in %d groups %s", B.shape[1], G.k, list(G.sizes))
    return {"B": str(cfg.path("B")), "G": str(cfg.out_dir / "G.json"), "group_sizes": list(G.sizes)}


def cmd_unmix(cfg: ExperimentConfig) -> dict:
    X, B, G = _load_problem(cfg)
    truth = _load_truth(cfg)
    result = unmix(cfg.solver, X, B, G, cfg.penalty_spec(), cfg.solver_config())
    rep = _save_result(cfg, result, X, truth)
    rep.extra["lambda"] = 0.0 if cfg.solver == "fcls" else cfg.lam
    report = rep.to_dict()
    _write_json(cfg.out_dir / "report.json", report)
    return report


def cmd_sweep(cfg: ExperimentConfig) -> dict:
    """Run the solver over a lambda grid and keep the best setting.

    With a ground-truth manifest the score is the abundance RMSE, without
    one it is the reconstruction RMSE.  Every grid point starts from the
    same FCLS solution.
    """
    X, B, G = _load_problem(cfg)
    M_true, S_ref = truth = _load_truth(cfg)
    grid = cfg.lambda_grid() if cfg.solver != "fcls" else np.array([0.0])
    f = cfg.penalty_spec()
    init = fcls(X, B, cfg.solver_config(lam=0.0), G).A_hat
    key = "rmse_m" if M_true is not None else "rmse_x"
    rows, best = [], None
    for lam in grid:
        res = unmix(cfg.solver, X, B, G, f, cfg.solver_config(lam=float(lam)), init=init)
        rep, _ = _score(res, X, M_true, S_ref)
        score = getattr(rep, key)
        rows.append({"lambda": float(lam), key: score, "iterations": res.iterations_run,
                     "final_residual": res.final_residual})
        log.info("lambda=%.3g %s=%.6g", lam, key, score)
        if best is None or score < best[0]:
            best = (score, float(lam), res)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    atomic_write(cfg.out_dir / "sweep.csv", buf.getvalue().encode())
    score, lam, res = best
    cfg.lam = lam
    rep = _save_result(cfg, res, X, truth)
    rep.extra.update({"lambda": lam, "best_lambda": lam, "selected_by": key, "sweep": rows})
    report = rep.to_dict()
    _write_json(cfg.out_dir / "report.json", report)
    return report


def cmd_eval(cfg: ExperimentConfig) -> dict:
    manifest = _truth_manifest(cfg)
    M_hat = _read(load_matrix, cfg.input_path("M_hat", cfg.path("M_hat")), "M_hat")
    X = _read(load_matrix, cfg.input_path("X", cfg.path("X")), "X")
    X_hat = _read(load_matrix, cfg.input_path("X_hat", cfg.path("X_hat")), "X_hat")
    M_path = cfg.input_path("M_true", _truth_path(manifest, "M_true"))
    S_path = cfg.input_path("S_ref", _truth_path(manifest, "S_ref"))
    S_hat_path = cfg.input_path("S_hat", cfg.path("endmembers"))
    M_true = _read(load_matrix, M_path, "M_true") if M_path else None
    S_ref = _read(load_matrix, S_path, "S_ref") if S_path else None
    S_hat = _read(load_matrix, S_hat_path, "S_hat") if S_ref is not None and S_hat_path.exists() else None
    if M_true is not None and M_true.shape != M_hat.shape:
        raise ConfigError(f"M_hat is {M_hat.shape[0]}x{M_hat.shape[1]} but M_true is {M_true.shape[0]}x{M_true.shape[1]}")
    if X.shape != X_hat.shape:
        raise ConfigError(f"X is {X.shape} but X_hat is {X_hat.shape}")
    perm = None
    if S_hat is not None:
        if S_hat.shape != S_ref.shape:
            raise ConfigError(f"S_hat is {S_hat.shape} but S_ref is {S_ref.shape}")
        perm = align_materials(S_hat, S_ref)
        M_hat, S_hat = M_hat[perm], S_hat[:, perm]
    rep = evaluate(M_hat, M_true, X_hat, X, S_hat, S_ref)
    if perm is not None:
        rep.extra["material_order"] = [int(p) for p in perm]
    report = rep.to_dict()
    _write_json(cfg.out_dir / "eval.json", report)
    return report


def pgm_bytes(values: np.ndarray, height: int, width: int) -> bytes:
    """8-bit binary PGM of ``values`` (row-major), clamped to [0, 1]."""
    pix = np.floor(np.clip(values, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    return f"P5\n{width} {height}\n255\n".encode("ascii") + pix.reshape(height, width).tobytes()


def cmd_render(cfg: ExperimentConfig) -> dict:
    M_hat = _read(load_matrix, cfg.input_path("M_hat", cfg.path("M_hat")), "M_hat")
    shape = _read(load_cube_shape, cfg.input_path("cube", cfg.out_dir / "cube.json"), "cube metadata")
    if M_hat.shape[1] != shape.n_pixels:
        raise ConfigError(f"M_hat has {M_hat.shape[1]} pixels, cube is {shape.height}x{shape.width}")
    written = []
    for l, row in enumerate(M_hat):
        path = cfg.out_dir / f"abundance_{l}.pgm"
        atomic_write(path, pgm_bytes(row, shape.height, shape.width))
        written.append(str(path))
    return {"images": written}


COMMANDS = {
    "synth": cmd_synth,
    "bundles": cmd_bundles,
    "unmix": cmd_unmix,
    "sweep": cmd_sweep,
    "eval": cmd_eval,
    "render": cmd_render,
}


# -------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment config")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int)
    common.add_argument("--solver", choices=SOLVERS)
    common.add_argument("--penalty", help="L1, Lq or TL1")
    common.add_argument("--b", type=float, help="TL1 shape parameter")
    common.add_argument("--q", type=float, help="Lq exponent")
    common.add_argument("--lambda", dest="lam", type=float, help="regularisation weight")
    common.add_argument("--rho", type=float)
    common.add_argument("--iters", type=int)
    common.add_argument("--primal-tol", dest="primal_tol", type=float)
    common.add_argument("--format", choices=("csv", "binary"))
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="bundle-unmix", description="Sparse unmixing with endmember bundles.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    helps = {
        "synth": "generate a synthetic scene and its ground truth",
        "bundles": "extract endmember bundles from X",
        "unmix": "run one solver at a fixed lambda",
        "sweep": "run a solver over a lambda grid and keep the best",
        "eval": "score saved estimates",
        "render": "write one PGM abundance map per material",
    }
    for name, text in helps.items():
        sub.add_parser(name, parents=[common], help=text)
    return p


def thread_limit() -> Optional[int]:
    raw = os.environ.get(THREADS_ENV, "0").strip() or "0"
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    if n < 0:
        raise ConfigError(f"{THREADS_ENV} must be >= 0, got {n}")
    return n or None


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_CONFIG
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = load_config(args)
        limit = thread_limit()
        if limit:
            from threadpoolctl import threadpool_limits
            ctx = threadpool_limits(limits=limit)
        else:
            ctx = contextlib.nullcontext()
        with ctx:
            result = COMMANDS[args.command](cfg)
    except IOFailure as exc:
        log.error("%s", exc)
        return EXIT_IO
    except (ConfigError, ValueError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except OSError as exc:
        log.error("%s", exc)
        return EXIT_IO
    except (RuntimeError, NotImplementedError, ArithmeticError) as exc:
        log.error("%s", exc)
        return EXIT_RUNTIME
    json.dump(result, sys.stdout, indent=2, sort_keys=True, default=float)
    sys.stdout.write("\n")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
