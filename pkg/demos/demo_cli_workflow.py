"""End-to-end command-line workflow, driven through the installed entry
point: generate a synthetic dataset, solve it on several backends with trace
files, and tabulate time-to-gap speedups.  Everything here can equally be
typed at a shell prompt as ``ddss-run ...``.
"""

import json
import subprocess
import sys
import tempfile
from pathlib import Path


def run(args):
    cmd = [sys.executable, "-m", "ddss"] + args
    print("$ ddss-run " + " ".join(args))
    proc = subprocess.run(cmd, capture_output=True, text=True)
    if proc.stdout:
        print(proc.stdout, end="")
    if proc.returncode != 0:
        print(proc.stderr, end="")
        raise SystemExit(proc.returncode)
    return proc.stdout


def main():
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        data = str(tmp / "demo.libsvm")

        run(["gen-synthetic", "--n", "2000", "--p", "200",
             "--density", "0.05", "--k-true", "8", "--noise", "0.01",
             "--seed", "42", "--out", data])
        meta = json.load(open(data + ".meta.json"))
        print(f"planted support: {meta['support']}\n")

        traces = []
        for backend, extra in [("seq", []),
                               ("shared", ["--threads", "4"]),
                               ("dist", ["--workers", "4"])]:
            trace = str(tmp / f"{backend}.trace")
            out = run(["run", "--data", data, "--backend", backend,
                       "--lambda-ratio", "0.1", "--epochs", "12",
                       "--seed", "0", "--trace-out", trace,
                       "--oracle-check"] + extra)
            summary = json.loads(out.strip().splitlines()[-1])
            print(f"  -> {backend}: {summary['active_features']} active "
                  f"features, gap {summary['final_gap']:.2e}, "
                  f"oracle diff {summary['oracle_objective_diff']:.2e}\n")
            traces.append(trace)

        print("time-to-gap table (first trace is the baseline):")
        run(["speedup-report", "--gap", "1e-6"] + traces)


if __name__ == "__main__":
    main()
