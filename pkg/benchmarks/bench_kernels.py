"""Compare the compiled kernels with the pure-Python fallback.

    python benchmarks/bench_kernels.py [--repeat N]

Also times the differentiable graph route of the CTC loss, which the
fused kernel replaces during training.
"""
import argparse
import timeit

import numpy as np

from accent_mdd import kernels
from accent_mdd.autodiff import Graph, Tensor
from accent_mdd.ctc import ctc_loss
from accent_mdd.kernels import _pykernels


def _ctc_case(rng, S, L, V):
    z = rng.normal(size=(S, V))
    logp = z - np.log(np.exp(z).sum(-1, keepdims=True))
    labels = [int(x) for x in rng.integers(0, V - 1, size=L)]
    return logp, labels, V - 1


def _graph_ctc(logp, labels, blank):
    t = Tensor(logp)
    g = Graph()
    r = ctc_loss(g.leaf(t), labels, blank)
    g.backward(r.loss)


def _time(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    impls = [("python", _pykernels)]
    if kernels.compiled is not None:
        impls.append(("cython", kernels.compiled))
    else:
        print("compiled kernels unavailable; timing the Python fallback only")

    print(f"{'kernel':<28}{'size':<16}" + "".join(f"{n:>12}" for n, _ in impls) + f"{'speedup':>10}")
    for S, L in ((20, 8), (60, 20), (200, 60)):
        logp, labels, blank = _ctc_case(rng, S, L, 14)
        ts = [_time(lambda m=m: m.ctc_nll_grad(logp, labels, blank), args.repeat) for _, m in impls]
        sp = f"{ts[0] / ts[-1]:>9.1f}x" if len(ts) > 1 else ""
        print(f"{'ctc_nll_grad':<28}{f'S={S} L={L}':<16}" + "".join(f"{1e3 * t:>10.3f}ms" for t in ts) + sp)
        if S <= 60:
            tg = _time(lambda: _graph_ctc(logp, labels, blank), max(1, args.repeat // 2))
            print(f"{'ctc graph route (fwd+bwd)':<28}{f'S={S} L={L}':<16}{1e3 * tg:>10.3f}ms")
    for n in (8, 32, 128):
        a = [int(x) for x in rng.integers(12, size=n)]
        b = [int(x) for x in rng.integers(12, size=n)]
        ts = [_time(lambda m=m: m.edit_align(a, b), args.repeat) for _, m in impls]
        sp = f"{ts[0] / ts[-1]:>9.1f}x" if len(ts) > 1 else ""
        print(f"{'edit_align':<28}{f'n={n}':<16}" + "".join(f"{1e3 * t:>10.3f}ms" for t in ts) + sp)


if __name__ == "__main__":
    main()
