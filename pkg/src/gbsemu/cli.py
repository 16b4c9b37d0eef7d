"""Command-line orchestration: instance generation, preprocessing, sampling,
benchmarking, and the scaling/throughput harnesses.

Every command prints a JSON run manifest to stdout (machine-readable; no
interactive output) listing the echoed configuration, input file hashes,
wall time, a peak-memory estimate, and every output file written.

Exit codes: 0 success, 2 validation error, 3 resource guard, 4 numerical
failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import platform
import resource
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .benchmark import build_report, linear_fit, write_report
from .cumulants import (
    correlator_table,
    cumulants_from_correlators,
    load_table,
    save_table,
)
from .errors import GbsError, ValidationError
from .gaussian import load_instance, random_instance, save_instance
from .sampler import (
    SamplerConfig,
    aux_values_per_sample,
    batch_sample,
    load_samples,
    save_samples_text,
)
from .subsets import partition_patterns


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _manifest(command: str, config: dict, inputs: list, outputs: list, t0: float, extra=None) -> dict:
    man = {
        "command": command,
        "config": config,
        "inputs": {str(p): _sha256(p) for p in inputs},
        "outputs": [str(p) for p in outputs],
        "versions": {
            "gbsemu": __version__,
            "numpy": np.__version__,
            "python": platform.python_version(),
        },
        "wall_time_s": time.perf_counter() - t0,
        "peak_rss_kb": resource.getrusage(resource.RUSAGE_SELF).ru_maxrss,
    }
    if extra:
        man.update(extra)
    return man


def _emit(man: dict) -> None:
    json.dump(man, sys.stdout, indent=1, sort_keys=True)
    sys.stdout.write("\n")


def cmd_gen_instance(args) -> int:
    t0 = time.perf_counter()
    if args.eta <= 0:
        raise ValidationError("eta must be > 0")
    _, spec = random_instance(args.modes, args.squeezers, args.eta, args.rmax, args.seed)
    save_instance(args.out, spec=spec)
    cfg = {
        "modes": args.modes, "squeezers": args.squeezers, "eta": args.eta,
        "rmax": args.rmax, "seed": args.seed, "out": args.out,
    }
    _emit(_manifest("gen-instance", cfg, [], [args.out], t0))
    return 0


def cmd_precompute(args) -> int:
    t0 = time.perf_counter()
    inst = load_instance(args.instance)
    t_phase1 = time.perf_counter()
    for d in range(1, args.order + 1):
        partition_patterns(d)
    t_phase1 = time.perf_counter() - t_phase1
    t_phase2 = time.perf_counter()
    ctab = correlator_table(inst, args.order, workers=args.workers)
    ktab = cumulants_from_correlators(ctab)
    t_phase2 = time.perf_counter() - t_phase2
    out = Path(args.out)
    corr_out = out.with_suffix(".gbsc")
    save_table(ktab, out)
    save_table(ctab, corr_out)
    cfg = {"instance": args.instance, "order": args.order, "workers": args.workers, "out": args.out}
    _emit(
        _manifest(
            "precompute", cfg, [args.instance], [str(out), str(corr_out)], t0,
            extra={"phase1_s": t_phase1, "phase2_s": t_phase2, "entries": int(ktab.values.size)},
        )
    )
    return 0


def cmd_sample(args) -> int:
    t0 = time.perf_counter()
    inst = load_instance(args.instance)
    kappa = None
    if args.method != "exact_reference":
        if not args.table:
            raise ValidationError("chain methods need --table")
        kappa = load_table(args.table)
        if kappa.kind != "cumulant":
            raise ValidationError(f"{args.table} is not a cumulant table")
        if kappa.M != inst.M:
            raise ValidationError(
                f"table M={kappa.M} does not match instance M={inst.M}"
            )
    aux = tuple(int(x) for x in args.aux_orders.split(",")) if args.aux_orders else None
    config = SamplerConfig(
        N=args.samples, K=args.order, method=args.method, aux_orders=aux,
        seed=args.seed, workers=args.workers, clamp_epsilon=args.clamp_epsilon,
    )
    batch = batch_sample(config, kappa=kappa, inst=inst)
    save_samples_text(args.out, batch)
    cfg = {
        "table": args.table, "instance": args.instance, "method": args.method,
        "order": args.order, "samples": args.samples, "seed": args.seed,
        "workers": args.workers, "aux_orders": aux, "clamp_epsilon": args.clamp_epsilon,
        "out": args.out,
    }
    inputs = [args.instance] + ([args.table] if args.table else [])
    _emit(
        _manifest(
            "sample", cfg, inputs, [args.out], t0,
            extra={
                "n_generated": batch.N,
                "n_failed": batch.n_failed,
                "n_flagged": batch.n_flagged,
                "per_sample_s": batch.per_sample_mean,
                "throughput_per_s": (batch.N / batch.wall_time) if batch.wall_time > 0 else 0.0,
                "aux_values_per_sample": (
                    aux_values_per_sample(inst.M, args.method)
                    if args.method != "exact_reference" else 0
                ),
            },
        )
    )
    return 0


def cmd_benchmark(args) -> int:
    t0 = time.perf_counter()
    inst = load_instance(args.instance)
    orders = [int(x) for x in args.orders.split(",")]
    xeb_range = None
    if args.xeb_range:
        lo, hi = (int(x) for x in args.xeb_range.split(","))
        xeb_range = range(lo, hi + 1)
    outputs = []
    summaries = {}
    for sample_path in args.samples:
        batch = load_samples(sample_path)
        if batch.N == 0:
            raise ValidationError(f"samples file {sample_path} is empty")
        if batch.M != inst.M:
            raise ValidationError(
                f"samples M={batch.M} does not match instance M={inst.M}"
            )
        report, scatter = build_report(
            inst, batch.bitstrings, orders=orders, xeb_range=xeb_range,
            bootstrap_B=args.bootstrap, seed=args.seed,
        )
        outdir = Path(args.out) / Path(sample_path).stem
        outputs.extend(write_report(outdir, report, scatter))
        summaries[str(sample_path)] = {
            "pearson": report.pearson, "spearman": report.spearman,
            "slope": report.slope, "tvd": report.tvd, "notes": report.notes,
        }
    cfg = {
        "samples": list(args.samples), "instance": args.instance,
        "orders": orders, "xeb_range": args.xeb_range,
        "bootstrap": args.bootstrap, "out": args.out, "seed": args.seed,
    }
    _emit(
        _manifest(
            "benchmark", cfg, list(args.samples) + [args.instance], outputs, t0,
            extra={"summaries": summaries},
        )
    )
    return 0


def _time_sampling(kappa, config: SamplerConfig, n: int) -> float:
    """Seconds per sample over n samples, after one discarded warmup batch."""
    warm = SamplerConfig(
        N=min(4, n), K=config.K, method=config.method, aux_orders=config.aux_orders,
        seed=config.seed, workers=1,
    )
    batch_sample(warm, kappa=kappa)
    t0 = time.perf_counter()
    batch_sample(config, kappa=kappa)
    return (time.perf_counter() - t0) / max(config.N, 1)


def cmd_scaling(args) -> int:
    t0 = time.perf_counter()
    orders = [int(x) for x in args.orders.split(",")]
    modes = [int(x) for x in args.modes.split(",")]
    worker_counts = [int(x) for x in args.workers.split(",")] if args.workers else []
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    rows = []
    for K in orders:
        method = "single_elision" if K <= 3 else "double_elision"
        for M in modes:
            inst, _ = random_instance(M, max(1, M // 4), 0.5, 1.0, seed=1234 + M)
            t1 = time.perf_counter()
            for d in range(1, K + 1):
                partition_patterns(d)
            t_phase1 = time.perf_counter() - t1
            t1 = time.perf_counter()
            ctab = correlator_table(inst, K, workers=args.precompute_workers)
            ktab = cumulants_from_correlators(ctab)
            t_phase2 = time.perf_counter() - t1
            cfg = SamplerConfig(N=args.samples_per_point, K=K, method=method, seed=7)
            t_sample = _time_sampling(ktab, cfg, args.samples_per_point)
            rows.append(
                {"M": M, "K": K, "t_phase1": t_phase1, "t_phase2": t_phase2,
                 "t_per_sample": t_sample}
            )
    times_csv = outdir / "times.csv"
    with open(times_csv, "w") as fh:
        fh.write("M,K,t_phase1,t_phase2,t_per_sample\n")
        for r in rows:
            fh.write(f"{r['M']},{r['K']},{r['t_phase1']!r},{r['t_phase2']!r},{r['t_per_sample']!r}\n")
    slopes = {}
    for K in orders:
        pts = [r for r in rows if r["K"] == K]
        if len(pts) < 2:
            slopes[str(K)] = {"per_sample": float("nan"), "phase2": float("nan"),
                              "note": "single point: slope undefined"}
            continue
        lx = np.log([r["M"] for r in pts])
        slopes[str(K)] = {
            "per_sample": linear_fit(lx, np.log([r["t_per_sample"] for r in pts]))[0],
            "phase2": linear_fit(lx, np.log([r["t_phase2"] for r in pts]))[0],
        }
    outputs = [str(times_csv)]
    throughput_rows = []
    if worker_counts:
        M = args.throughput_modes
        K = orders[0]
        method = "single_elision" if K <= 3 else "double_elision"
        inst, _ = random_instance(M, max(1, M // 4), 0.5, 1.0, seed=1234 + M)
        ktab = cumulants_from_correlators(correlator_table(inst, K, workers=args.precompute_workers))
        for w in worker_counts:
            cfg = SamplerConfig(N=args.samples_per_point, K=K, method=method, seed=7, workers=w)
            batch_sample(SamplerConfig(N=4, K=K, method=method, seed=7), kappa=ktab)
            t1 = time.perf_counter()
            batch_sample(cfg, kappa=ktab)
            dt = time.perf_counter() - t1
            throughput_rows.append({"workers": w, "throughput": args.samples_per_point / dt})
        tp_csv = outdir / "throughput.csv"
        with open(tp_csv, "w") as fh:
            fh.write("workers,throughput\n")
            for r in throughput_rows:
                fh.write(f"{r['workers']},{r['throughput']!r}\n")
        outputs.append(str(tp_csv))
    cfg = {
        "orders": orders, "modes": modes, "samples_per_point": args.samples_per_point,
        "workers": worker_counts, "throughput_modes": args.throughput_modes, "out": args.out,
    }
    _emit(
        _manifest(
            "scaling", cfg, [], outputs, t0,
            extra={"slopes": slopes, "throughput": throughput_rows},
        )
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gbsemu", description=__doc__)
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("gen-instance", help="write a random instance file")
    p.add_argument("--modes", type=int, required=True)
    p.add_argument("--squeezers", type=int, required=True)
    p.add_argument("--eta", type=float, required=True)
    p.add_argument("--rmax", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_instance)

    p = sub.add_parser("precompute", help="write correlator and cumulant tables")
    p.add_argument("--instance", required=True)
    p.add_argument("--order", type=int, required=True)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_precompute)

    p = sub.add_parser("sample", help="generate samples")
    p.add_argument("--table")
    p.add_argument("--instance", required=True)
    p.add_argument("--method", default="double_elision",
                   choices=["single_elision", "double_elision", "exact_reference"])
    p.add_argument("--order", type=int, default=5)
    p.add_argument("--samples", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--aux-orders", dest="aux_orders", default=None,
                   help="comma-separated expansion orders for (pp, p1, p2)")
    p.add_argument("--clamp-epsilon", dest="clamp_epsilon", type=float, default=0.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("benchmark", help="compare sample files against the ground truth")
    p.add_argument("--samples", nargs="+", required=True)
    p.add_argument("--instance", required=True)
    p.add_argument("--orders", default="2,3")
    p.add_argument("--xeb-range", dest="xeb_range", default=None)
    p.add_argument("--bootstrap", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("scaling", help="timing harness over a mode grid")
    p.add_argument("--orders", default="3")
    p.add_argument("--modes", default="32,48,64")
    p.add_argument("--samples-per-point", dest="samples_per_point", type=int, default=16)
    p.add_argument("--workers", default=None, help="comma-separated worker counts for throughput")
    p.add_argument("--throughput-modes", dest="throughput_modes", type=int, default=64)
    p.add_argument("--precompute-workers", dest="precompute_workers", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_scaling)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except GbsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
