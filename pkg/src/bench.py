"""
Wall-clock scaling of the contraction kernels on synthetic inputs. Every phase reports the median of `repeats`
timed calls after one untimed warm-up call, and a least-squares slope of log(time) against log(size).
"""
import typing

import jax
import numpy as np
from jax import numpy as jnp

from . import ptmpo, tdvp, ttm
from .backend import COMPLEX, REAL, log_log_slope, stream_key
from .bath import SpectralDensity, discretize
from .constants import StreamPurpose
from .context import Bench
from .utils.checkpoint import write_csv
from .utils.wandblog import Timer


class BenchRow(typing.NamedTuple):
    phase: str
    size: int
    seconds: float


def _block(out: typing.Any) -> typing.Any:
    return jax.tree_util.tree_map(lambda x: x.block_until_ready() if hasattr(x, "block_until_ready") else x, out)


def median_time(fn: typing.Callable[[], typing.Any], repeats: int = 5) -> float:
    if repeats < 1:
        raise ValueError(f"repeats must be >= 1, got {repeats}")
    _block(fn())
    times = []
    for _ in range(repeats):
        timer = Timer()
        _block(fn())
        times.append(timer())
    return float(np.median(times))


def pt_scaling(chis: typing.Sequence[int], steps: int = 20, system_dim: int = 2, repeats: int = 5, seed: int = 0,
               eps_rel: float = 1e-12) -> typing.List[BenchRow]:
    """forward, backward, gradient and recompress on random process tensors of uniform bond chi."""
    rows = []
    dim = system_dim ** 2
    for chi in chis:
        key = stream_key(seed, StreamPurpose.bench, chi)
        pt = ptmpo.random(steps, system_dim, chi, key)
        props = jnp.broadcast_to(jnp.eye(dim, dtype=COMPLEX), (steps, dim, dim))
        rho0 = jnp.eye(dim, 1, dtype=COMPLEX)[:, 0]
        costate = jnp.ones((dim,), COMPLEX)
        _, states = ptmpo.contract_forward(pt, props, rho0)
        costates = ptmpo.backpropagate(pt, props, costate)
        rows.append(BenchRow("forward", chi, median_time(lambda: ptmpo.contract_forward(pt, props, rho0), repeats)))
        rows.append(BenchRow("backward", chi, median_time(lambda: ptmpo.backpropagate(pt, props, costate), repeats)))
        rows.append(BenchRow("gradient", chi, median_time(lambda: ptmpo.gradient_wrt_propagators(pt, states, costates),
                                                          repeats)))
        rows.append(BenchRow("recompress", chi, median_time(lambda: ptmpo.recompress(pt, eps_rel).nodes, repeats)))
        print(f"chi={chi:5d} | " + " - ".join(f"{row.phase}: {row.seconds * 1e3:9.3f}ms" for row in rows[-4:]),
              flush=True)
    return rows


def ttm_scaling(cutoffs: typing.Sequence[int], system_dim: int = 2, repeats: int = 5, seed: int = 0
                ) -> typing.List[BenchRow]:
    """Propagation over 4 * max(cutoffs) steps so every cutoff runs with a full history."""
    dim = system_dim ** 2
    steps = 4 * max(cutoffs)
    rows = []
    for cutoff in cutoffs:
        real, imag = jax.random.normal(stream_key(seed, StreamPurpose.bench, cutoff), (2, cutoff, dim, dim))
        tensors = (real + 1j * imag).astype(COMPLEX) / (cutoff * dim)
        tts = ttm.TransferTensorSet(tensors, 0.1, jnp.eye(dim, dtype=COMPLEX))
        rho0 = jnp.eye(dim, 1, dtype=COMPLEX)[:, 0]
        seconds = median_time(lambda: ttm.propagate(tts, rho0, steps, tts.propagator), repeats)
        rows.append(BenchRow("ttm_propagate", cutoff, seconds))
        print(f"cutoff={cutoff:5d} | propagate: {rows[-1].seconds * 1e3:9.3f}ms", flush=True)
    return rows


def tdvp_scaling(modes: typing.Sequence[int], steps: int = 100, repeats: int = 5, alpha: float = 0.1,
                 dt: float = 0.05) -> typing.List[BenchRow]:
    spectral = SpectralDensity.ohmic_exp(alpha, 1.)
    schedule = jnp.ones((steps,), REAL)
    rows = []
    for count in modes:
        discretization = discretize(spectral, count, 8.)
        trajectory = tdvp.integrate(discretization, schedule, dt)
        rows.append(BenchRow("tdvp_forward", count,
                             median_time(lambda: tdvp.integrate(discretization, schedule, dt), repeats)))
        rows.append(BenchRow("tdvp_adjoint", count,
                             median_time(lambda: tdvp.adjoint_gradient(trajectory, schedule, lambda m: m,
                                                                       discretization, dt), repeats)))
        print(f"modes={count:5d} | forward: {rows[-2].seconds * 1e3:9.3f}ms - adjoint: {rows[-1].seconds * 1e3:9.3f}ms",
              flush=True)
    return rows


def fit_slopes(rows: typing.Sequence[BenchRow]) -> typing.Dict[str, float]:
    phases = {}
    for row in rows:
        phases.setdefault(row.phase, []).append(row)
    return {phase: log_log_slope([row.size for row in items], [row.seconds for row in items])
            for phase, items in phases.items() if len(items) >= 2}


def run(bench: Bench, seed: int = 0) -> typing.Tuple[typing.List[BenchRow], typing.Dict[str, float]]:
    rows = pt_scaling(bench.chis, bench.steps, bench.system_dim, bench.repeats, seed)
    rows += ttm_scaling(bench.cutoffs, bench.system_dim, bench.repeats, seed)
    rows += tdvp_scaling(bench.modes, bench.tdvp_steps, bench.repeats)
    slopes = fit_slopes(rows)
    for phase, slope in slopes.items():
        print(f"{phase:>16s} slope: {slope:6.3f}", flush=True)
    return rows, slopes


def write(rows: typing.Sequence[BenchRow], slopes: typing.Dict[str, float], timing_path: str, slope_path: str):
    write_csv(timing_path, ["phase", "size", "seconds"], rows)
    write_csv(slope_path, ["phase", "slope"], sorted(slopes.items()))
