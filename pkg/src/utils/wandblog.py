import time
import typing

import numpy as np

from src.constants import OptimizationAbort


def timeit(text: str, fn: typing.Callable, *args, pad=50, **kwargs):
    start_time = time.time()
    print(f'{text}..', end='', flush=True)
    out = fn(*args, **kwargs)
    print(f"{' ' * max(pad - len(text), 1)}Took:{time.time() - start_time:9.2f}s", flush=True)
    return out


class Timer:
    def __init__(self):
        self.start_time = time.perf_counter()

    def __call__(self) -> float:
        return time.perf_counter() - self.start_time


class OptimizationLog:
    """
    Records (iteration, cost, grad_norm, wall_ms) rows, prints every `print_interval` iterations and mirrors
    rows to a wandb run when one is given. Raises OptimizationAbort after `patience` consecutive cost increases.
    """

    def __init__(self, run=None, patience: int = 20, print_interval: int = 10, max_iters: int = 0):
        self.start_time = time.time()
        self.run = run
        self.patience = patience
        self.print_interval = max(print_interval, 1)
        self.max_iters = max_iters
        self.rows: typing.List[typing.Dict[str, float]] = []
        self.increases = 0

    @property
    def costs(self) -> typing.List[float]:
        return [row["cost"] for row in self.rows]

    def __call__(self, iteration: int, cost: float, grad_norm: float, wall_ms: float):
        if self.rows and cost > self.rows[-1]["cost"]:
            self.increases += 1
        else:
            self.increases = 0
        self.rows.append({"iteration": iteration, "cost": cost, "grad_norm": grad_norm, "wall_ms": wall_ms})

        if iteration % self.print_interval == 0:
            width = len(str(self.max_iters)) if self.max_iters else 4
            print(f'[{iteration:{width}d}/{self.max_iters}] Cost: {cost:12.6e} - GradNorm: {grad_norm:10.4e} | '
                  f'StepTime: {wall_ms:10.3f}ms', flush=True)

        if self.run is not None:
            self.run.log({"Cost/Current": cost, "Cost/Best": float(np.min(self.costs)),
                          "Gradient/Norm": grad_norm, "Speed/Milliseconds per Iteration": wall_ms}, step=iteration)

        if self.increases >= self.patience:
            recent = self.costs[-self.patience - 1:]
            print(f"Not Improving | Oldest Cost: {recent[0]:9.6e} - Current Cost: {recent[-1]:9.6e}", flush=True)
            raise OptimizationAbort(f"Cost increased for {self.increases} consecutive iterations "
                                    f"(from {recent[0]:.6e} to {recent[-1]:.6e} at iteration {iteration})")
