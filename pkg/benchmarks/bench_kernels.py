"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Shapes follow one training iteration at the default config: 100 scenarios x
10 rollouts x 25 rounds x 3 actions, and a 25,000-item loss/gradient pass.
"""
import argparse
import timeit

import numpy as np

from regretlab import kernels
from regretlab.model import ModelParams, history_stats, reparam


def cases(rng):
    d, B, T = 3, 1000, 25
    params = ModelParams.init(d, rng, 0.3)
    rp = reparam(params)
    rewards = rng.uniform(0, 10, size=(B, T, d))
    noise = rng.normal(size=(B, T, d))
    uniforms = rng.uniform(size=(B, T))
    n, S1, M2 = history_stats(rewards)
    targets = rng.dirichlet(np.ones(d), size=n.shape[0])
    arrays = [np.ascontiguousarray(a) for a in params.arrays()]
    return {
        "fol_rollout": lambda k: k.fol_rollout(rp.A, rp.b, rp.C, rp.dvec, rewards, noise, kernels.SOFTMAX, 1.0),
        "mab_rollout": lambda k: k.mab_rollout(rp.A, rp.b, rp.C, rp.dvec, rewards, 0.1 * noise, uniforms),
        "loss_and_grad": lambda k: k.loss_and_grad(*arrays, np.ascontiguousarray(n, dtype=float), S1, M2,
                                                   targets, kernels.SOFTMAX, 1.0),
    }


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args(argv)
    backends = kernels.backends()
    if "compiled" not in backends:
        print("compiled extension not built; timing the fallback only")
    print(f"{'kernel':<15}" + "".join(f"{name:>14}" for name in backends) + ("   speedup" if len(backends) > 1 else ""))
    for name, fn in cases(np.random.default_rng(0)).items():
        times = {}
        for bname, module in backends.items():
            fn(module)  # warm-up
            times[bname] = min(timeit.repeat(lambda: fn(module), number=1, repeat=args.repeat))
        row = f"{name:<15}" + "".join(f"{times[b] * 1e3:>12.2f}ms" for b in backends)
        if len(times) > 1:
            row += f"   {times['python'] / times['compiled']:>6.1f}x"
        print(row)


if __name__ == "__main__":
    main()
