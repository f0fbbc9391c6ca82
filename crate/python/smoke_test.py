#!/usr/bin/env python3
"""Smoke test for the pytnml extension module.

Builds the cdylib if needed, loads it, and exercises the main types and
operations end to end. Exits nonzero on the first failure.
"""

import math
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent


def ensure_module() -> Path:
    """Build the extension if necessary and stage it as an importable .so."""
    lib = REPO / "target" / "release" / "libpytnml.so"
    if not lib.exists():
        print("building pytnml extension (cargo build -p pytnml --release)...")
        subprocess.run(
            ["cargo", "build", "-p", "pytnml", "--release"], cwd=REPO, check=True
        )
    staged = REPO / "target" / "pymodule" / "pytnml.so"
    staged.parent.mkdir(parents=True, exist_ok=True)
    if not staged.exists() or lib.stat().st_mtime > staged.stat().st_mtime:
        shutil.copy2(lib, staged)
    return staged.parent


sys.path.insert(0, str(ensure_module()))
import pytnml  # noqa: E402


def check(name: str, ok: bool, detail: str = "") -> None:
    print(f"  [{'ok' if ok else 'FAIL'}] {name}" + (f": {detail}" if detail else ""))
    if not ok:
        sys.exit(1)


def main() -> None:
    print("pytnml smoke test")

    gen = pytnml.Generator(
        dim=16, sphere_dim=8, subspace_dim=2, tasks=6, samples_per_task=30,
        noise=0.05, seed=11,
    )
    dataset, truth = gen.generate()
    check("generate", dataset.dim == 16 and dataset.task_count == 6, repr(dataset))
    norms = [
        math.sqrt(sum(x * x for x in row))
        for t in range(dataset.task_count)
        for row in dataset.inputs(t)
    ]
    check("inputs on the unit ball", max(norms) <= 1.0 + 1e-12, f"max norm {max(norms):.12f}")

    dataset2, _ = gen.generate()
    check(
        "determinism",
        dataset2.inputs(0) == dataset.inputs(0) and dataset2.labels(3) == dataset.labels(3),
    )

    cov = pytnml.empirical_covariance_norm(dataset)
    analytic = pytnml.analytic_covariance_norm(gen)
    check(
        "covariance norms",
        abs(analytic - 1.0 / 8) < 1e-12 and 0.5 * analytic < cov < 3.0 * analytic,
        f"empirical {cov:.4f} vs analytic {analytic:.4f}",
    )

    loss = pytnml.Loss.clipped_absolute()
    check("loss eval", loss.eval(5.0, 0.0) == 1.0 and loss.eval(0.3, 0.3) == 0.0)
    check("truth risk", pytnml.empirical_risk(truth, dataset, loss) < 0.1)

    fit = pytnml.solve_trace_ball(
        dataset, loss, b=math.sqrt(2), max_iters=400, step_scale=2.0, seed=0
    )
    zero = pytnml.WeightMatrix.zeros(dataset.dim, dataset.task_count)
    zero_risk = pytnml.empirical_risk(zero, dataset, loss)
    check(
        "solver improves on zero predictor",
        fit.objective < zero_risk,
        f"fit {fit.objective:.4f} < zero {zero_risk:.4f}",
    )
    radius = math.sqrt(2) * math.sqrt(dataset.task_count)
    check("solver feasible", fit.weights.trace_norm() <= radius + 1e-6)

    pop, stderr = pytnml.population_risk(fit.weights, gen, loss, samples=2000, seed=5)
    check("population risk", 0.0 <= pop <= 1.0, f"{pop:.4f} +- {stderr:.4f}")

    report = pytnml.empirical_bound(
        lipschitz=loss.lipschitz, b=math.sqrt(2), nbar=dataset.nbar(),
        tasks=dataset.task_count, delta=0.1, cov_norm=cov,
    )
    total = report.covariance_term + report.log_term + report.confidence_term
    check("bound terms sum", abs(report.total - total) < 1e-12, f"total {report.total:.4f}")
    check(
        "bound json keys",
        all(k in report.to_json() for k in ("covariance_term", "log_term", "confidence_term", "total")),
    )

    limit = pytnml.subspace_limit_bound(1.0, 2, 20.0, 30)
    check("subspace limit", abs(limit - 2 * math.sqrt(2 / 600)) < 1e-12, f"{limit:.6f}")

    p, q, value = pytnml.conjugate_optimum(1.0, 1.0)
    check("conjugate optimum", (p, q, value) == (2.0, 2.0, 2.0))

    gap = pytnml.moment_gap([[1.0, 0.0], [0.0, 1.0]], 2)
    check("moment gap", abs(gap - 6.0) < 1e-9, f"gap {gap:.6f}")

    est, chain_stderr, rhs, identity_ok, bound_ok = pytnml.rademacher_chain(
        dataset, b=1.0, lipschitz=1.0, draws=100, seed=3
    )
    check(
        "rademacher chain",
        identity_ok and bound_ok,
        f"estimate {est:.4f} (stderr {chain_stderr:.4f}) <= rhs {rhs:.4f}",
    )

    small_gen = pytnml.Generator(6, 6, 1, 5, 4, 0.0, 21)
    small_data, _ = small_gen.generate()
    check(
        "subexponential tail",
        pytnml.subexponential_tail_pass(small_data, p=2.0, trials=2000, seed=9),
    )
    check(
        "projection tails",
        pytnml.projection_tails_pass(dim=10, count=12, p=2.0, trials=2000, seed=13),
    )

    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "dataset.csv"
        dataset.write_csv(path)
        back = pytnml.Dataset.read_csv(path)
        check(
            "csv round trip",
            back.sizes() == dataset.sizes() and back.labels(2) == dataset.labels(2),
        )

    print("all smoke checks passed")


if __name__ == "__main__":
    main()
