"""Benchmark the compiled sequence kernel against the pure-numpy fallback.

Times one full policy evaluation step (bidirectional forward + BPTT) per
realization at several model sizes, using the reference deployment geometry.

Run:  python benchmarks/bench_backends.py [repeats]
"""

import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from cfmimo._kernels import available_backends, get_backend
from cfmimo.association import select_masters
from cfmimo.config import ExperimentConfig
from cfmimo.model import init_params, model_backward, model_forward, order_chain

SIZES = [
    ("desk  (q=128, K=10)", 128, (128, 64), 10),
    ("full  (q=512, K=10)", 512, (256, 128), 10),
    ("full  (q=512, K=40)", 512, (256, 128), 40),
]


def bench(backend, hidden, fc_hidden, n_ues, repeats):
    cfg = ExperimentConfig(num_ues=n_ues)
    rng = np.random.default_rng(0)
    gains = rng.uniform(1e-12, 1e-8, (n_ues, cfg.num_aps))
    inputs = np.concatenate(
        [(10 * np.log10(gains) + 110) / 40, rng.uniform(0, 1, (n_ues, 2))], axis=1
    )
    chain = order_chain(gains, select_masters(gains))
    params = init_params(hidden, cfg.num_aps + 2, (*fc_hidden, cfg.num_aps), rng)
    coupling = rng.normal(size=(n_ues, cfg.num_aps))

    def step():
        trace = model_forward(params, inputs, chain, backend=backend)
        model_backward(params, trace, coupling, backend=backend)

    for _ in range(3):
        step()
    start = time.perf_counter()
    for _ in range(repeats):
        step()
    return (time.perf_counter() - start) / repeats


def main():
    repeats = int(sys.argv[1]) if len(sys.argv) > 1 else 50
    names = available_backends()
    print(f"backends: {', '.join(names)};  {repeats} repeats per cell")
    header = f"{'model':<22}" + "".join(f"{n:>14}" for n in names)
    if len(names) > 1:
        header += f"{'speedup':>10}"
    print(header)
    print("-" * len(header))
    for label, hidden, fc_hidden, n_ues in SIZES:
        times = [bench(get_backend(n), hidden, fc_hidden, n_ues, repeats) for n in names]
        row = f"{label:<22}" + "".join(f"{t * 1e3:>11.2f} ms" for t in times)
        if len(times) > 1:
            row += f"{times[0] / times[-1]:>9.2f}x"
        print(row)


if __name__ == "__main__":
    main()
