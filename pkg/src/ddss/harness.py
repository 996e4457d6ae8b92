"""Command-line experiment runner, synthetic data generator, speedup report.

``ddss-run`` (or ``python -m ddss``) runs one experiment and prints a JSON
summary as the final stdout line; ``ddss-run gen-synthetic`` writes a sparse
regression instance in LIBSVM text format; ``ddss-run speedup-report``
tabulates time-to-target-gap speedups from a family of trace files.
"""

import argparse
import json
import sys

import numpy as np

from .data import BlockPartition, parse_libsvm
from .distributed import (TcpServerEndpoint, TcpWorkerEndpoint, dist_solve,
                          run_dist_server, run_dist_worker)
from .model import (GroupL2Norm, L1Norm, LogisticLoss, ModelSpec, SquaredLoss,
                    critical_lambda_scaled)
from .screening import equicorrelation_set
from .sequential import (DivergenceError, OracleError, SolverConfig,
                         oracle_solve, solve_sequential)
from .shared_mem import solve_shared
from .trace import RunSummary, validate_trace, write_trace

BACKENDS = ("seq", "seq-naive", "shared", "shared-naive", "dist", "dist-naive")


class UsageError(ValueError):
    pass


def build_parser():
    ap = argparse.ArgumentParser(
        prog="ddss-run", description="sparse solver experiment harness")
    ap.add_argument("--data", required=True, help="LIBSVM text file")
    ap.add_argument("--model", choices=("lasso", "logistic"), default="lasso")
    ap.add_argument("--reg", default="l1",
                    help="l1 | group:B (equal blocks of size B) | group:@file")
    lam = ap.add_mutually_exclusive_group()
    lam.add_argument("--lambda-ratio", type=float, default=None,
                     help="lambda as a fraction of the critical value")
    lam.add_argument("--lambda-abs", type=float, default=None)
    ap.add_argument("--ridge", type=float, default=0.0, metavar="MU")
    ap.add_argument("--backend", choices=BACKENDS, default="seq")
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--transport", choices=("loopback", "tcp"),
                    default="loopback")
    ap.add_argument("--listen", default=None, metavar="HOST:PORT",
                    help="serve a multi-process distributed run")
    ap.add_argument("--connect", default=None, metavar="HOST:PORT",
                    help="join a multi-process distributed run as a worker")
    ap.add_argument("--worker-id", type=int, default=None)
    ap.add_argument("--async", dest="async_mode", action="store_true",
                    help="serve distributed deltas in arrival order")
    ap.add_argument("--epochs", type=int, default=10)
    ap.add_argument("--inner", type=int, default=None, metavar="K")
    ap.add_argument("--step", default="auto", metavar="ETA|auto")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--trace-out", default=None, metavar="PATH")
    ap.add_argument("--oracle-check", action="store_true")
    ap.add_argument("--dims", default=None, metavar="N,P",
                    help="override the inferred dataset dimensions")
    ap.add_argument("--unsafe-screen-ridge", action="store_true",
                    help="keep eliminating blocks even with a ridge term")
    return ap


def parse_reg(spec, p):
    if spec == "l1":
        return L1Norm(), BlockPartition.singletons(p)
    if not spec.startswith("group:"):
        raise UsageError(f"unknown regularizer {spec!r}")
    arg = spec[len("group:"):]
    if arg.startswith("@"):
        blocks = []
        with open(arg[1:]) as fh:
            for line in fh:
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                blocks.append([int(tok) for tok in line.split(",")])
        return GroupL2Norm(), BlockPartition(blocks, p)
    try:
        size = int(arg)
    except ValueError:
        raise UsageError(f"bad group size {arg!r}")
    if size < 1:
        raise UsageError("group size must be >= 1")
    return GroupL2Norm(), BlockPartition.contiguous(p, size)


def load_problem(args):
    dims = None
    if args.dims:
        try:
            n_str, p_str = args.dims.split(",")
            dims = (int(n_str), int(p_str))
        except ValueError:
            raise UsageError(f"bad --dims {args.dims!r}")
    with open(args.data) as fh:
        data = parse_libsvm(fh, n_features=dims[1] if dims else None)
    if dims and data.n != dims[0]:
        raise UsageError(
            f"--dims promised n={dims[0]} but the file has n={data.n}")
    loss = SquaredLoss() if args.model == "lasso" else LogisticLoss()
    reg, partition = parse_reg(args.reg, data.p)

    probe = ModelSpec(loss, reg, partition, lam=1.0, mu_f=args.ridge)
    nlam_max = critical_lambda_scaled(probe, data)
    if args.lambda_abs is not None:
        if args.lambda_abs <= 0:
            raise UsageError("--lambda-abs must be positive")
        model = ModelSpec(loss, reg, partition, lam=args.lambda_abs,
                          mu_f=args.ridge,
                          allow_screen_with_ridge=args.unsafe_screen_ridge)
    else:
        ratio = args.lambda_ratio if args.lambda_ratio is not None else 0.5
        if ratio <= 0:
            raise UsageError("--lambda-ratio must be positive")
        model = ModelSpec(loss, reg, partition, lam_n=ratio * nlam_max,
                          mu_f=args.ridge,
                          allow_screen_with_ridge=args.unsafe_screen_ridge)
    return model, data


def build_config(args):
    if args.step == "auto":
        eta = None
    else:
        try:
            eta = float(args.step)
        except ValueError:
            raise UsageError(f"bad --step {args.step!r}")
    mode = "ddss_naive" if args.backend.endswith("-naive") else "ddss"
    return SolverConfig(eta=eta, inner=args.inner, epochs=args.epochs,
                        seed=args.seed, mode=mode)


def _split_hostport(text):
    host, _, port = text.rpartition(":")
    if not host:
        raise UsageError(f"bad host:port {text!r}")
    return host, int(port)


def run_experiment(argv):
    """Parse flags, run one experiment, print the JSON summary line.

    Returns the process exit code (0 ok, 1 solver error, 2 usage error).
    """
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        model, data = load_problem(args)
        config = build_config(args)
    except (UsageError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    try:
        if args.connect is not None:
            # worker role of a multi-process distributed run
            if args.worker_id is None:
                raise UsageError("--connect requires --worker-id")
            host, port = _split_hostport(args.connect)
            ep = TcpWorkerEndpoint(host, port, args.worker_id)
            run_dist_worker(model, data, config, ep, args.worker_id,
                            args.workers)
            print(json.dumps({"role": "worker",
                              "worker_id": args.worker_id}))
            return 0
        if args.backend in ("seq", "seq-naive"):
            result = solve_sequential(model, data, config)
        elif args.backend in ("shared", "shared-naive"):
            result = solve_shared(model, data, config, threads=args.threads)
        elif args.listen is not None:
            host, port = _split_hostport(args.listen)
            ep = TcpServerEndpoint(host, port, args.workers)
            try:
                ep.accept_workers()
                result = run_dist_server(model, data, config, ep,
                                         args.workers,
                                         sync=not args.async_mode)
            finally:
                ep.close()
        else:
            result = dist_solve(model, data, config, n_workers=args.workers,
                                transport=args.transport,
                                sync=not args.async_mode)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DivergenceError, OracleError, ConnectionError,
            RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    validate_trace(result.trace)
    if args.trace_out:
        write_trace(args.trace_out, result.trace)

    summary = RunSummary(
        final_objective=result.final_objective, final_gap=result.final_gap,
        total_time_s=result.trace[-1].wall_time_s if result.trace else 0.0,
        active_blocks=result.active.q_s, active_features=result.active.p_s,
        nnz_coefficients=int(np.count_nonzero(result.x)),
        coordinate_touches=result.touches, backend=args.backend,
        seed=args.seed)
    if args.oracle_check:
        try:
            x_star = oracle_solve(model, data, tol_gap=1e-12)
        except OracleError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1
        from .model import primal_objective
        summary.oracle_objective = primal_objective(model, data, x_star)
        summary.oracle_objective_diff = abs(
            result.final_objective - summary.oracle_objective)
        eq = set(equicorrelation_set(model, data, x_star).tolist())
        summary.survivors_in_equicorrelation = bool(
            set(result.active.blocks.tolist()) <= eq)
    print(summary.to_json())
    return 0


def gen_synthetic(n, p, density, k_true, noise, seed, out_path,
                  row_norm=None):
    """Write a planted-sparse LIBSVM regression instance plus a JSON sidecar.

    Each entry of A is present independently with probability ``density``;
    targets are y = A x_true + noise * gaussian with a k_true-sparse x_true.
    ``row_norm``, when given, rescales every nonempty row to that 2-norm
    (handy for pinning the smoothness constant of the instance).  Output is
    byte-identical for a fixed argument tuple.
    """
    if not 0 < density <= 1:
        raise ValueError("density must be in (0, 1]")
    if not 0 <= k_true <= p:
        raise ValueError("k_true must be in [0, p]")
    rng = np.random.default_rng(seed)
    support = np.sort(rng.choice(p, size=k_true, replace=False))
    x_true = np.zeros(p)
    x_true[support] = rng.normal(size=k_true)

    lines = []
    targets = np.zeros(n)
    rows = []
    for i in range(n):
        mask = rng.random(p) < density
        idx = np.flatnonzero(mask)
        val = rng.normal(size=len(idx))
        if row_norm is not None and len(idx):
            nrm = np.linalg.norm(val)
            if nrm > 0:
                val = val * (row_norm / nrm)
        rows.append((idx, val))
        targets[i] = val @ x_true[idx]
    targets += noise * rng.normal(size=n)

    for i in range(n):
        idx, val = rows[i]
        toks = [repr(float(targets[i]))]
        toks += [f"{j + 1}:{float(v)!r}" for j, v in zip(idx, val)]
        lines.append(" ".join(toks))
    with open(out_path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    meta = {
        "n": n, "p": p, "density": density, "k_true": k_true,
        "noise": noise, "seed": seed, "row_norm": row_norm,
        "support": support.tolist(),
        "x_true": [float(v) for v in x_true[support]],
    }
    with open(out_path + ".meta.json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return out_path


def time_to_gap(records, target):
    for rec in records:
        if rec.gap <= target:
            return rec.wall_time_s
    return None


def speedup_report(trace_files, target_gap=1e-6, out=sys.stdout):
    """CSV speedup table: run k's time-to-target-gap vs the first run's."""
    from .trace import read_trace
    times = [time_to_gap(read_trace(path), target_gap)
             for path in trace_files]
    base = times[0] if times else None
    out.write("workers,time_to_gap_s,speedup\n")
    rows = []
    for k, t in enumerate(times, start=1):
        if t is None or base is None:
            out.write(f"{k},unreached,unreached\n")
            rows.append((k, None, None))
        else:
            sp = base / t if t > 0 else float("inf")
            out.write(f"{k},{t!r},{sp!r}\n")
            rows.append((k, t, sp))
    return rows


def _gen_main(argv):
    ap = argparse.ArgumentParser(prog="ddss-run gen-synthetic")
    ap.add_argument("--n", type=int, required=True)
    ap.add_argument("--p", type=int, required=True)
    ap.add_argument("--density", type=float, default=1.0)
    ap.add_argument("--k-true", type=int, default=0)
    ap.add_argument("--noise", type=float, default=0.0)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--row-norm", type=float, default=None)
    ap.add_argument("--out", required=True)
    try:
        args = ap.parse_args(argv)
        gen_synthetic(args.n, args.p, args.density, args.k_true, args.noise,
                      args.seed, args.out, row_norm=args.row_norm)
    except SystemExit as exc:
        return int(exc.code or 0)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


def _speedup_main(argv):
    ap = argparse.ArgumentParser(prog="ddss-run speedup-report")
    ap.add_argument("traces", nargs="+")
    ap.add_argument("--gap", type=float, default=1e-6)
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    speedup_report(args.traces, target_gap=args.gap)
    return 0


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    if argv and argv[0] == "gen-synthetic":
        return _gen_main(argv[1:])
    if argv and argv[0] == "speedup-report":
        return _speedup_main(argv[1:])
    if argv and argv[0] == "run":
        argv = argv[1:]
    return run_experiment(argv)


if __name__ == "__main__":
    sys.exit(main())
