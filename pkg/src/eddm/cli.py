"""Command-line driver.

Exit codes: 0 success, 2 input error, 3 comparison threshold exceeded.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
import time
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import scenarios
from .deform import (
    FallbackWarning,
    SkinWeights,
    deform_ddm,
    deform_delta_mush,
    deform_eddm,
    deform_lbs,
    precompute_omega,
    read_omega,
    write_omega,
)
from .mesh import SmoothingConfig, cotangent_weights, load_obj, save_obj
from .numerics import polar_rotation_batch, svd_rotation_oracle
from .rig import dump_pose, dump_rig, load_pose, load_rig, skinning_matrices

log = logging.getLogger("eddm")

EXIT_OK, EXIT_INPUT, EXIT_THRESHOLD = 0, 2, 3
BENCH_CHUNK = 16384


class InputError(Exception):
    pass


def _read(path: str, what: str) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise InputError(f"cannot read {what} file {path!r}: {exc.strerror or exc}") from None


def _load(what: str, path: str, parse):
    data = _read(path, what)
    try:
        return parse(data)
    except (ValueError, KeyError, TypeError, IndexError) as exc:
        raise InputError(f"invalid {what} file {path!r}: {exc}") from None


def _write(path: str, data: bytes) -> None:
    try:
        out = Path(path)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_bytes(data)
    except OSError as exc:
        raise InputError(f"cannot write {path!r}: {exc.strerror or exc}") from None


def cmd_precompute(args) -> int:
    mesh = _load("mesh", args.mesh, load_obj)
    weights = _load("weights", args.weights, SkinWeights.from_json)
    if weights.n_vertices != mesh.n_vertices:
        raise InputError(
            f"weights file {args.weights!r} has {weights.n_vertices} rows, mesh has {mesh.n_vertices} vertices"
        )
    try:
        cfg = SmoothingConfig(args.kappa, args.iterations)
        lap = cotangent_weights(mesh, args.precision)
        table = precompute_omega(mesh, weights, lap, cfg, args.prune)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    _write(args.out, write_omega(table))
    print(f"laplacian_row_sum_error={lap.row_sum_error()!r}")
    print(f"omega_sum_error={float(np.max(np.abs(table.omega_sums() - 1.0)))!r}")
    print(f"influences={len(table.joints)} vertices={table.n_vertices}")
    return EXIT_OK


def cmd_deform(args) -> int:
    mesh = _load("mesh", args.mesh, load_obj)
    rig = _load("rig", args.rig, load_rig)
    pose = _load("pose", args.pose, lambda d: load_pose(d, rig))
    needs_omega = args.mode in ("eddm", "ddm")
    if needs_omega and not args.omega:
        raise InputError(f"--mode {args.mode} requires --omega")
    if not needs_omega and not args.weights:
        raise InputError(f"--mode {args.mode} requires --weights")
    try:
        m = skinning_matrices(rig, pose)
    except ValueError as exc:
        raise InputError(str(exc)) from None

    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", FallbackWarning)
        try:
            if needs_omega:
                table = _load("omega", args.omega, read_omega)
                fn = deform_eddm if args.mode == "eddm" else deform_ddm
                out = fn(mesh, table, m)
            else:
                weights = _load("weights", args.weights, lambda d: SkinWeights.from_json(d, len(rig)))
                if args.mode == "lbs":
                    out = deform_lbs(mesh, weights, m)
                else:
                    lap = cotangent_weights(mesh, args.precision)
                    out = deform_delta_mush(mesh, lap, SmoothingConfig(args.kappa, args.iterations), weights, m)
        except InputError:
            raise
        except ValueError as exc:
            raise InputError(str(exc)) from None
    for w in caught:
        if isinstance(w.message, FallbackWarning):
            print(f"warning: {w.message}", file=sys.stderr)
    _write(args.out, save_obj(mesh, out))
    return EXIT_OK


@dataclass(frozen=True)
class CompareReport:
    offsets: np.ndarray
    distances: np.ndarray
    max: float
    mean: float
    rms: float
    pct_over: float
    threshold: float

    @classmethod
    def build(cls, a: np.ndarray, b: np.ndarray, threshold: float) -> CompareReport:
        off = b - a
        d = np.linalg.norm(off, axis=1)
        return cls(
            off,
            d,
            float(d.max()),
            float(d.mean()),
            float(np.sqrt(np.mean(d * d))),
            float(100.0 * np.mean(d > threshold)),
            threshold,
        )

    def summary(self) -> list[tuple[str, float]]:
        return [("max", self.max), ("mean", self.mean), ("rms", self.rms), ("pct_over_threshold", self.pct_over)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["vertex", "dx", "dy", "dz", "distance"])
        for i, (o, d) in enumerate(zip(self.offsets.tolist(), self.distances.tolist())):
            w.writerow([i, repr(o[0]), repr(o[1]), repr(o[2]), repr(d)])
        for name, value in self.summary():
            w.writerow([name, "", "", "", repr(value)])
        return buf.getvalue()


def cmd_compare(args) -> int:
    a = _load("mesh", args.a, load_obj)
    b = _load("mesh", args.b, load_obj)
    if a.n_vertices != b.n_vertices:
        raise InputError(f"vertex count mismatch: {a.n_vertices} vs {b.n_vertices}")
    report = CompareReport.build(a.positions, b.positions, args.threshold)
    if args.report:
        _write(args.report, report.to_csv().encode())
    for name, value in report.summary():
        print(f"{name}={value!r}")
    return EXIT_OK if report.max <= args.threshold else EXIT_THRESHOLD


def cmd_scenario(args) -> int:
    make = scenarios.SCENARIOS.get(args.name)
    if make is None:
        raise InputError(f"unknown scenario {args.name!r}; choose from {sorted(scenarios.SCENARIOS)}")
    sc = make()
    out = Path(args.outdir)
    _write(str(out / "mesh.obj"), save_obj(sc.mesh))
    _write(str(out / "rig.json"), dump_rig(sc.rig).encode())
    _write(str(out / "weights.json"), sc.weights.to_json().encode())
    _write(str(out / "pose.json"), dump_pose(sc.rig, sc.pose).encode())
    for name, pose in sc.extra_poses.items():
        _write(str(out / f"pose_{name}.json"), dump_pose(sc.rig, pose).encode())
    print(f"wrote {sc.name} fixtures to {out}")
    return EXIT_OK


def bench_polar(samples: int, seed: int, chunk: int = BENCH_CHUNK) -> dict[str, float]:
    """Time the closed-form polar kernel against the Jacobi SVD oracle on one random stream."""
    rng = np.random.default_rng(seed)
    mats = rng.uniform(-2.0, 2.0, size=(samples, 3, 3))
    t_polar = t_svd = 0.0
    worst = 0.0
    for start in range(0, samples, chunk):
        block = mats[start:start + chunk]
        t0 = time.perf_counter()
        r_fast, bad = polar_rotation_batch(block)
        t1 = time.perf_counter()
        r_ref, sigma = svd_rotation_oracle(block, return_sigma=True)
        t2 = time.perf_counter()
        t_polar += t1 - t0
        t_svd += t2 - t1
        ok = (sigma[:, 2] > 1e-4 * sigma[:, 0]) & ~bad
        if np.any(ok):
            worst = max(worst, float(np.max(np.abs(r_fast[ok] - r_ref[ok]))))
    return {
        "polar_ns_per_op": 1e9 * t_polar / samples,
        "svd_oracle_ns_per_op": 1e9 * t_svd / samples,
        "max_discrepancy": worst,
    }


def cmd_bench_polar(args) -> int:
    if args.samples < 1:
        raise InputError("--samples must be at least 1")
    res = bench_polar(args.samples, args.seed)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["metric", "value"])
    for k, v in res.items():
        w.writerow([k, repr(v)])
    if args.out:
        _write(args.out, buf.getvalue().encode())
    sys.stdout.write(buf.getvalue())
    speedup = res["svd_oracle_ns_per_op"] / res["polar_ns_per_op"]
    print(f"speedup={speedup:.2f}x", file=sys.stderr)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="eddm", description="Enhanced Direct Delta Mush toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    pc = sub.add_parser("precompute", help="build the omega cache")
    pc.add_argument("--mesh", required=True)
    pc.add_argument("--weights", required=True)
    pc.add_argument("--kappa", type=float, default=0.5)
    pc.add_argument("--iterations", type=int, default=16)
    pc.add_argument("--prune", type=float, default=1e-4)
    pc.add_argument("--precision", choices=("double", "single"), default="double")
    pc.add_argument("--out", required=True)
    pc.set_defaults(func=cmd_precompute)

    pd = sub.add_parser("deform", help="deform a mesh")
    pd.add_argument("--mesh", required=True)
    src = pd.add_mutually_exclusive_group(required=True)
    src.add_argument("--omega")
    src.add_argument("--weights")
    pd.add_argument("--rig", required=True)
    pd.add_argument("--pose", required=True)
    pd.add_argument("--mode", choices=("eddm", "ddm", "lbs", "dm"), default="eddm")
    pd.add_argument("--kappa", type=float, default=0.5, help="dm mode only")
    pd.add_argument("--iterations", type=int, default=16, help="dm mode only")
    pd.add_argument("--precision", choices=("double", "single"), default="double", help="dm mode only")
    pd.add_argument("--out", required=True)
    pd.set_defaults(func=cmd_deform)

    pm = sub.add_parser("compare", help="per-vertex distance report between two OBJ files")
    pm.add_argument("--a", required=True)
    pm.add_argument("--b", required=True)
    pm.add_argument("--report")
    pm.add_argument("--threshold", type=float, default=1e-9)
    pm.set_defaults(func=cmd_compare)

    ps = sub.add_parser("scenario", help="write generated fixture files")
    ps.add_argument("--name", required=True)
    ps.add_argument("--outdir", required=True)
    ps.set_defaults(func=cmd_scenario)

    pb = sub.add_parser("bench-polar", help="closed-form polar vs Jacobi SVD timing")
    pb.add_argument("--samples", type=int, default=1_000_000)
    pb.add_argument("--seed", type=int, default=0)
    pb.add_argument("--out")
    pb.set_defaults(func=cmd_bench_polar)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
