import argparse
import sys
import time
import typing

import jsonpickle
import numpy as np
import wandb
import yaml
from jax import numpy as jnp

from . import bench, control, ptmpo, tdvp, ttm
from .augmented import augmented_pt, from_lorentzian
from .backend import REAL
from .bath import BathCorrelation, SpectralDensity, correlation_samples, discretize, fit_from_config
from .constants import ConfigError, ExitCode, Method, PtControlError
from .context import Context
from .heom import build_generator, heom_pt
from .liouville import control_hamiltonian, density_matrix, expectation, operator, system_propagators, \
    trace_functional, vectorize
from .stochastic import batch_statistics, sample_noise, stochastic_pt, trajectory_states
from .utils.checkpoint import load, save, write, write_csv
from .utils.wandblog import OptimizationLog, Timer, timeit

# largest bond recompressed by `compare`; diagonal stochastic nodes are dense during the sweep
RECOMPRESS_LIMIT = 256


class Problem(typing.NamedTuple):
    h_builder: typing.Callable
    schedule: control.ControlSchedule
    rho0: jnp.ndarray
    target: jnp.ndarray
    coupling: jnp.ndarray
    observables: typing.Dict[str, jnp.ndarray]
    spectral: SpectralDensity


def problem(ctx: Context) -> Problem:
    model, dim = ctx.model, ctx.model.system_dim
    drift = ctx.model.omega_q / 2 * operator(model.drift_operator, dim)
    h_builder = control_hamiltonian(drift, [channel.scale * operator(channel.operator, dim)
                                            for channel in model.controls])
    values = jnp.tile(jnp.asarray([channel.initial for channel in model.controls], REAL), (ctx.grid.steps, 1))
    schedule = control.ControlSchedule(values, ctx.grid.dt, tuple(channel.label for channel in model.controls),
                                       jnp.asarray([channel.lower for channel in model.controls], REAL),
                                       jnp.asarray([channel.upper for channel in model.controls], REAL))
    return Problem(h_builder, schedule, vectorize(density_matrix(model.initial_state, dim)),
                   vectorize(density_matrix(model.target_state, dim)),
                   model.coupling_scale * operator(model.coupling_operator, dim),
                   {name: operator(name, dim) for name in model.observables}, SpectralDensity.from_config(ctx.bath))


def bath_correlation(ctx: Context, spectral: SpectralDensity) -> BathCorrelation:
    if spectral.kind == "lorentzian" and ctx.methods.heom.exact_lorentzian and ctx.bath.temperature == 0:
        return BathCorrelation.from_single_exponential(ctx.bath.coupling ** 2,
                                                       complex(-ctx.bath.omega_0, ctx.bath.kappa / 2))
    return fit_from_config(spectral, ctx.bath, ctx.seed)


def build_pt(ctx: Context, method: str, prob: Problem) -> ptmpo.ProcessTensor:
    grid = ctx.grid
    if method == Method.heom:
        gen = build_generator(bath_correlation(ctx, prob.spectral), prob.coupling, ctx.methods.heom.depth,
                              ctx.methods.heom.max_aux)
        return heom_pt(gen, grid.dt, grid.steps)
    if method == Method.stochastic:
        c_grid = correlation_samples(prob.spectral, grid.dt * np.arange(grid.steps), ctx.bath.temperature)
        ensemble = sample_noise(c_grid, ctx.methods.stochastic.trajectories, grid.dt, grid.steps, ctx.seed)
        return stochastic_pt(ensemble, prob.coupling, ctx.methods.stochastic.norm_ceiling)
    if method == Method.augmented:
        return augmented_pt(from_lorentzian(prob.spectral, ctx.methods.augmented.fock), prob.coupling, grid.dt,
                            grid.steps)
    raise ConfigError(f"method {method!r} does not build a process tensor; use one of {Method.pt_builders}")


def load_or_build(ctx: Context, method: str, prob: Problem, path: typing.Optional[str]) -> ptmpo.ProcessTensor:
    if path:
        pt = timeit(f"Loading process tensor from {path}", load, path)
    else:
        pt = timeit(f"Building {method} process tensor", build_pt, ctx, method, prob)
    if pt.system_dim != ctx.model.system_dim or pt.steps != ctx.grid.steps or abs(pt.dt - ctx.grid.dt) > 1e-12:
        raise ConfigError(f"Process tensor (T={pt.steps}, S={pt.system_dim}, dt={pt.dt}) does not match the grid "
                          f"(T={ctx.grid.steps}, S={ctx.model.system_dim}, dt={ctx.grid.dt})")
    return pt


def observable_rows(states: jnp.ndarray, prob: Problem, dt: float, system_dim: int
                    ) -> typing.Tuple[typing.List[str], typing.List[typing.List[typing.Any]]]:
    header = ["t"] + [f"{part}_{name}" for name in prob.observables for part in ("re", "im")] + ["trace_defect"]
    trace = trace_functional(system_dim)
    rows = []
    for idx, state in enumerate(states):
        row = [idx * dt]
        for op in prob.observables.values():
            value = complex(expectation(op, state))
            row.extend([value.real, value.imag])
        rows.append(row + [abs(complex(trace @ state) - 1)])
    return header, rows


def cmd_build_pt(ctx: Context, args: argparse.Namespace):
    prob = problem(ctx)
    pt = timeit(f"Building {ctx.method} process tensor", build_pt, ctx, ctx.method, prob)
    if ctx.compression.save_recompressed and pt.max_bond() > RECOMPRESS_LIMIT:
        raise ConfigError(f"compression.save_recompressed needs a largest bond <= {RECOMPRESS_LIMIT}, got "
                          f"{pt.max_bond()}")
    compressed = pt
    if pt.max_bond() <= RECOMPRESS_LIMIT and (ctx.compression.eps_rel > 0 or ctx.compression.save_recompressed):
        compressed = timeit("Recompressing", ptmpo.recompress, pt, ctx.compression.eps_rel)
    save(compressed if ctx.compression.save_recompressed else pt, ctx.output_path("pt.ptmp"))
    write_csv(ctx.output_path("bond_profile.csv"), ["step", "chi", "chi_recompressed"],
              [[idx, chi, recompressed]
               for idx, (chi, recompressed) in enumerate(zip(pt.bond_profile(), compressed.bond_profile()))])
    print(f"Bond profile: max {pt.max_bond()} -> {compressed.max_bond()} | {ptmpo.complexity(pt)}", flush=True)


def _tdvp_dynamics(ctx: Context):
    modes = discretize(problem(ctx).spectral, ctx.methods.tdvp.modes, ctx.methods.tdvp.omega_max)
    schedule = jnp.full((ctx.grid.steps,), ctx.model.omega_q, REAL)
    trajectory = timeit("Integrating polaron equations", tdvp.integrate, modes, schedule, ctx.grid.dt)
    tdvp.write_trajectory(ctx.output_path("tdvp.csv"), trajectory, ctx.grid.dt)


def cmd_dynamics(ctx: Context, args: argparse.Namespace):
    if ctx.method == Method.tdvp:
        return _tdvp_dynamics(ctx)
    prob = problem(ctx)
    builder = ctx.reference if ctx.method == Method.ttm else ctx.method
    pt = load_or_build(ctx, builder, prob, args.pt)
    props = system_propagators(prob.h_builder, prob.schedule.values, ctx.grid.dt)
    if ctx.method == Method.ttm:
        if not bool(jnp.allclose(props, props[0])):
            raise ConfigError("Transfer tensors need a time-independent system propagator")
        maps = timeit("Extracting dynamical maps", ttm.maps_from_pt, pt, props[0])
        tensors = ttm.extract(maps, min(ctx.methods.ttm.cutoff, ctx.grid.steps))
        write_csv(ctx.output_path("ttm_norms.csv"), ["k", "norm"],
                  [[idx + 1, norm] for idx, norm in enumerate(ttm.norm_profile(tensors))])
        print(f"Memory time: {ttm.memory_time(tensors)} steps", flush=True)
        states = timeit("Propagating transfer tensors", ttm.propagate, tensors, prob.rho0, ctx.grid.steps, props[0])
    else:
        states = timeit("Contracting process tensor", ptmpo.dynamics, pt, props, prob.rho0)
    header, rows = observable_rows(states, prob, ctx.grid.dt, ctx.model.system_dim)
    write_csv(ctx.output_path("observables.csv"), header, rows)


def cmd_optimize(ctx: Context, args: argparse.Namespace):
    prob = problem(ctx)
    pt = load_or_build(ctx, ctx.method, prob, args.pt)
    run = None
    if ctx.wandb.use_wandb:
        run = wandb.init(project=ctx.wandb.project, entity=ctx.wandb.entity, config=ctx.config(),
                         name=ctx.wandb.name)
    opt = ctx.optimize
    log = OptimizationLog(run, opt.patience, opt.print_interval, opt.max_iters)
    schedule, history = control.optimize(pt, prob.h_builder, prob.schedule, prob.target, opt.max_iters, opt,
                                         rho0=prob.rho0, log=log)
    write_csv(ctx.output_path("schedule.csv"), ["t"] + list(schedule.labels),
              [[idx * ctx.grid.dt] + list(np.asarray(row)) for idx, row in enumerate(schedule.values)])
    write_csv(ctx.output_path("history.csv"), ["iteration", "cost", "grad_norm", "wall_ms"],
              [[row["iteration"], row["cost"], row["grad_norm"], row["wall_ms"]] for row in history])
    print(f"Best cost: {min(row['cost'] for row in history):.6e}", flush=True)
    if run is not None:
        run.finish()


def _comparable(ctx: Context) -> typing.Dict[str, typing.Any]:
    cfg = ctx.config()
    return {"model": cfg["model"], "bath": cfg["bath"], "grid": cfg["grid"]}


def compare_methods(contexts: typing.Sequence[Context]) -> typing.Dict[str, typing.Any]:
    """Builds, contracts and differentiates every requested builder; deviations are taken from the reference."""
    base = contexts[0]
    runs = []
    for ctx in contexts:
        if _comparable(ctx) != _comparable(base):
            raise ConfigError("compare needs the same model, bath and grid in every configuration")
        methods = [name for name in ctx.enabled_methods() if name in Method.pt_builders] or [ctx.method]
        runs.extend((ctx, name) for name in methods if (ctx, name) not in runs)
    if len({name for _, name in runs}) < 2:
        raise ConfigError(f"compare needs at least two methods, got {[name for _, name in runs]}")
    if base.reference not in {name for _, name in runs}:
        raise ConfigError(f"reference method {base.reference!r} is not among the compared methods")

    prob = problem(base)
    props = system_propagators(prob.h_builder, prob.schedule.values, base.grid.dt)
    results = {}
    for ctx, name in runs:
        timer = Timer()
        pt = timeit(f"Building {name} process tensor", build_pt, ctx, name, prob)
        build_time = timer()
        entry = {"max_bond": pt.max_bond(), "max_bond_recompressed": None, "build_seconds": build_time}
        if pt.max_bond() <= RECOMPRESS_LIMIT and ctx.compression.eps_rel > 0:
            entry["max_bond_recompressed"] = ptmpo.recompress(pt, ctx.compression.eps_rel).max_bond()
        timer = Timer()
        final, _ = ptmpo.contract_forward(pt, props, prob.rho0)
        entry["propagation_seconds"] = timer()
        timer = Timer()
        control.cost_and_gradient(pt, prob.h_builder, prob.schedule, prob.rho0, prob.target, ctx.optimize.fd_step)
        entry["gradient_seconds"] = timer()
        entry["final_state"] = [[float(value.real), float(value.imag)] for value in np.asarray(final)]
        if name == Method.stochastic:
            states = trajectory_states(sample_noise(correlation_samples(prob.spectral, ctx.grid.dt *
                                                                        np.arange(ctx.grid.steps),
                                                                        ctx.bath.temperature),
                                                    ctx.methods.stochastic.trajectories, ctx.grid.dt,
                                                    ctx.grid.steps, ctx.seed), prob.coupling, props, prob.rho0)
            _, error = batch_statistics(states[:, -1], ctx.methods.stochastic.batches)
            entry["final_state_stderr"] = float(jnp.max(jnp.abs(error)))
        results[name] = (final, entry)

    reference = results[base.reference][0]
    report = {"reference": base.reference, "steps": base.grid.steps, "dt": base.grid.dt, "methods": {}}
    for name, (final, entry) in results.items():
        entry["deviation"] = float(jnp.max(jnp.abs(final - reference)))
        report["methods"][name] = entry
    return report


def cmd_compare(contexts: typing.Sequence[Context], args: argparse.Namespace):
    report = compare_methods(contexts)
    write(contexts[0].output_path("compare.json"), jsonpickle.encode(report, unpicklable=False, indent=2))
    for name, entry in report["methods"].items():
        print(f"{name:>12s} | chi: {entry['max_bond']:5d} -> {entry['max_bond_recompressed']} - "
              f"deviation: {entry['deviation']:.3e} - build: {entry['build_seconds']:8.3f}s", flush=True)


def cmd_bench(ctx: Context, args: argparse.Namespace):
    rows, slopes = bench.run(ctx.bench, ctx.seed)
    bench.write(rows, slopes, ctx.output_path("bench.csv"), ctx.output_path("bench_slopes.csv"))


COMMANDS = {"build-pt": cmd_build_pt, "dynamics": cmd_dynamics, "optimize": cmd_optimize, "compare": cmd_compare,
            "bench": cmd_bench}


def parse_args(argv: typing.Optional[typing.Sequence[str]] = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(description="Process-tensor builders, dynamics and optimal control")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", action="append", default=[], help="YAML run configuration; repeat for compare")
    parser.add_argument("--seed", type=int, default=None, help="overrides the configured seed")
    parser.add_argument("--out", default=None, help="overrides output.directory")
    parser.add_argument("--pt", default=None, help="process tensor file for dynamics and optimize")
    return parser.parse_args(argv)


def load_context(path: typing.Optional[str], args: argparse.Namespace) -> Context:
    try:
        ctx = Context(path=path)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}")
    if args.seed is not None:
        ctx.seed = args.seed
    if args.out is not None:
        ctx.output.directory = args.out
    ctx.validate()
    return ctx


def main(argv: typing.Optional[typing.Sequence[str]] = None) -> int:
    args = parse_args(argv)
    try:
        contexts = [load_context(path, args) for path in args.config or [None]]
        for ctx in contexts:
            print(yaml.dump(ctx.config(), indent=4), flush=True)
        start_time = time.time()
        if args.command == "compare":
            cmd_compare(contexts, args)
        else:
            if len(contexts) > 1:
                raise ConfigError(f"{args.command} takes a single --config")
            COMMANDS[args.command](contexts[0], args)
        print(f"Finished {args.command} in {time.time() - start_time:.2f}s", flush=True)
    except PtControlError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr, flush=True)
        return exc.exit_code
    except OSError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr, flush=True)
        return ExitCode.io
    except ArithmeticError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr, flush=True)
        return ExitCode.numerical
    except (ValueError, TypeError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr, flush=True)
        return ExitCode.config
    return ExitCode.ok


if __name__ == '__main__':
    sys.exit(main())
