"""Compare the compiled and numpy likelihood kernels.

    python3 benchmarks/bench_kernels.py [--n 10000] [--repeat 20]
"""
import argparse
import time

import numpy as np

from dceaudit import kernels
from dceaudit.agents import simulate_choices
from dceaudit.design import DesignSpec, generate_design
from dceaudit.inference import build_design_matrix, encode_design, fit_mnl
from dceaudit.reference_estimates import estimates
from dceaudit.schema import load_schema


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=10_000)
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()

    schema = load_schema()
    design = generate_design(schema, DesignSpec(n_sets=args.n, seed=1))
    beta = estimates("gpt-4")
    chosen = simulate_choices(encode_design(design, schema), beta, rng=np.random.default_rng(2))
    dm = build_design_matrix([{"set_id": cs.id, "chosen_index": int(c)}
                              for cs, c in zip(design, chosen)], design, schema)

    backends = kernels.available_backends()
    print(f"{args.n} sets, {dm.n_params} parameters, backends: {', '.join(backends)}")
    print(f"{'backend':<8}{'ll':>10}{'ll+grad':>10}{'ll+g+H':>10}{'fit':>10}   (seconds, best of {args.repeat})")
    for b in backends:
        row = [best_of(lambda: kernels.loglik_grad_hess(dm.X, dm.chosen, beta, g, h, backend=b),
                       args.repeat) for g, h in ((False, False), (True, False), (True, True))]
        row.append(best_of(lambda: fit_mnl(dm, backend=b), max(1, args.repeat // 5)))
        print(f"{b:<8}" + "".join(f"{t:>10.4f}" for t in row))


if __name__ == "__main__":
    main()
