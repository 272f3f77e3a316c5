import copy
import math
import os
import typing

import yaml
from smart_open import open

from .constants import ConfigError, Method


def _fields(instance: typing.Any) -> typing.List[str]:
    return [name for name in dir(instance) if not name.startswith("_") and not name.endswith("_")
            and not isinstance(getattr(instance, name), typing.Callable)]


class DataClass:
    """
    Run-configuration section. Class attributes are the defaults; nested sections and lists (control channels,
    bench sizes) are deep-copied per instance so overriding one run never leaks into another.
    """

    def __init__(self):
        for name in _fields(type(self)):
            value = getattr(type(self), name)
            if isinstance(value, (DataClass, list, dict)):
                setattr(self, name, copy.deepcopy(value))

    def serialize(self):
        return serialize(self)


def _nested(value: typing.Any) -> typing.Any:
    return serialize(value) if isinstance(value, (DataClass, list, tuple, dict)) else value


def serialize(instance: typing.Any) -> typing.Any:
    """Plain YAML/JSON tree of a configuration section, as printed at start-up and logged to wandb."""
    if isinstance(instance, DataClass):
        return {name: _nested(getattr(instance, name)) for name in _fields(instance)}
    if isinstance(instance, (list, tuple)):
        return [_nested(itm) for itm in instance]
    if isinstance(instance, dict):
        return {key: _nested(value) for key, value in instance.items()}
    return instance


def init_class(instance: DataClass, config: typing.Dict[str, typing.Any], prefix: str = ""):
    if not isinstance(config, dict):
        raise ConfigError(f"Section '{prefix.rstrip('.') or '<root>'}' must be a mapping, got {type(config).__name__}")
    fields = _fields(instance)
    unknown = sorted(key for key in config if key not in fields)
    if unknown:
        raise ConfigError(f"Unknown configuration key(s): {', '.join(prefix + key for key in unknown)}")

    for name in fields:
        if name not in config:
            continue
        attr = getattr(instance, name)
        is_dataclass = isinstance(attr, DataClass)
        is_list = isinstance(attr, (list, tuple)) and attr and isinstance(attr[0], DataClass)
        if is_dataclass:
            init_class(attr, config[name], f"{prefix}{name}.")
        elif is_list:
            if not isinstance(config[name], (list, tuple)):
                raise ConfigError(f"'{prefix}{name}' must be a list")
            setattr(instance, name, type(attr)(init_class_copy(attr[0], item, f"{prefix}{name}[{idx}].")
                                               for idx, item in enumerate(config[name])))
        else:
            setattr(instance, name, config[name])


def _check_value(annotation: typing.Any, value: typing.Any, path: str):
    if annotation is typing.Any:
        return
    origin, args = typing.get_origin(annotation), typing.get_args(annotation)
    if origin is typing.Union:
        if value is None and type(None) in args:
            return
        annotation = next(arg for arg in args if arg is not type(None))
        origin, args = typing.get_origin(annotation), typing.get_args(annotation)
    if origin in (list, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"'{path}' must be a list, got {value!r}")
        for idx, item in enumerate(value):
            _check_value(args[0], item, f"{path}[{idx}]")
        return
    if isinstance(annotation, type) and issubclass(annotation, DataClass):
        check_types(value, f"{path}.")
        return
    if annotation is bool:
        ok = isinstance(value, bool)
    elif annotation is int:
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif annotation is float:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool) and math.isfinite(value)
    else:
        ok = isinstance(value, annotation)
    if not ok:
        raise ConfigError(f"'{path}' must be a finite {annotation.__name__}, got {value!r}")


def check_types(instance: DataClass, prefix: str = ""):
    """Checks every annotated field against its annotation; floats must also be finite."""
    for name, annotation in typing.get_type_hints(type(instance)).items():
        _check_value(annotation, getattr(instance, name), prefix + name)


def init_class_copy(instance: DataClass, config: typing.Dict[str, typing.Any], prefix: str = "") -> DataClass:
    instance = copy.deepcopy(instance)
    init_class(instance, config, prefix)
    return instance


class ControlChannel(DataClass):
    label: str = "x"
    operator: str = "sx"
    scale: float = 0.5
    lower: float = -10.
    upper: float = 10.
    initial: float = 0.


class ModelContext(DataClass):
    """
    Qubit (or qudit with explicit matrices) system: H(u) = omega_q/2 * drift + sum_m u_m * scale_m * operator_m.
    Operators are given by name ("sx", "sy", "sz", "sp", "sm", "id") or as nested lists of complex numbers/strings.
    """
    system_dim: int = 2
    omega_q: float = 1.
    drift_operator: typing.Any = "sx"
    coupling_operator: typing.Any = "sz"
    coupling_scale: float = 0.5
    initial_state: typing.Any = "minus"
    target_state: typing.Any = "plus"
    observables: typing.List[str] = ["sx", "sy", "sz"]
    controls: typing.List[ControlChannel] = [ControlChannel()]


class BathContext(DataClass):
    kind: str = "ohmic_exp"  # ohmic_exp | lorentzian | tabulated
    alpha: float = 0.1
    omega_c: float = 1.
    coupling: float = 0.5  # lorentzian lambda
    omega_0: float = 1.
    kappa: float = 1.
    table_path: str = ""
    temperature: float = 0.
    fit_terms: int = 3
    fit_horizon: float = 8.
    fit_samples: int = 400
    fit_ceiling: float = 1e-2


class HeomContext(DataClass):
    enabled: bool = True
    depth: int = 4
    max_aux: int = 2000
    exact_lorentzian: bool = True


class StochasticContext(DataClass):
    enabled: bool = False
    trajectories: int = 1000
    norm_ceiling: float = 1e3
    batches: int = 20


class AugmentedContext(DataClass):
    enabled: bool = False
    fock: int = 8


class TdvpContext(DataClass):
    enabled: bool = False
    modes: int = 30
    omega_max: float = 8.


class TtmContext(DataClass):
    enabled: bool = False
    cutoff: int = 20


class Methods(DataClass):
    heom: HeomContext = HeomContext()
    stochastic: StochasticContext = StochasticContext()
    augmented: AugmentedContext = AugmentedContext()
    tdvp: TdvpContext = TdvpContext()
    ttm: TtmContext = TtmContext()


class Grid(DataClass):
    dt: float = 0.05
    steps: int = 60


class Compression(DataClass):
    eps_rel: float = 1e-7
    save_recompressed: bool = False  # build-pt stores the exact process tensor unless set


class Optimizer(DataClass):
    max_iters: int = 200
    learning_rate: float = 0.05
    adam_beta1: float = 0.1  # 1 - beta1
    adam_beta2: float = 0.001  # 1 - beta2
    epsilon: float = 1e-8
    exponential_decay: float = 0.
    cost_tolerance: float = 1e-10
    gradient_tolerance: float = 1e-8
    patience: int = 20
    fd_step: float = 1e-5
    print_interval: int = 10


class Bench(DataClass):
    chis: typing.List[int] = [16, 32, 64, 128, 256]
    repeats: int = 5
    steps: int = 20
    system_dim: int = 2
    cutoffs: typing.List[int] = [8, 16, 32, 64, 128, 256]
    modes: typing.List[int] = [32, 64, 128, 256, 512]
    tdvp_steps: int = 100


class Output(DataClass):
    directory: str = "out"
    prefix: str = ""


class WandB(DataClass):
    name: typing.Optional[str] = None
    use_wandb: bool = False
    project: str = 'ptcontrol'
    entity: typing.Optional[str] = None


class Context(DataClass):
    model: ModelContext = ModelContext()
    bath: BathContext = BathContext()
    methods: Methods = Methods()
    grid: Grid = Grid()
    compression: Compression = Compression()
    optimize: Optimizer = Optimizer()
    bench: Bench = Bench()
    output: Output = Output()
    wandb: WandB = WandB()
    method: str = Method.heom
    reference: str = Method.heom
    seed: int = 0

    def __init__(self, config: typing.Optional[typing.Dict[str, typing.Any]] = None,
                 path: typing.Optional[str] = None):
        super().__init__()
        if path is None and 'CONFIG' in os.environ:
            path = os.environ['CONFIG']
        if path is not None:
            with open(path) as f:
                cfg = yaml.safe_load(f.read())
            init_class(self, cfg or {})
        if config is not None:
            init_class(self, config)

    def config(self) -> dict:
        return serialize(self)

    def enabled_methods(self) -> typing.List[str]:
        return [name for name in Method.all if getattr(self.methods, name).enabled]

    def output_path(self, name: str) -> str:
        return f"{self.output.directory.rstrip('/')}/{self.output.prefix}{name}"

    def validate(self):
        def check(condition: bool, message: str):
            if not condition:
                raise ConfigError(message)

        check_types(self)
        check(isinstance(self.seed, int) and self.seed >= 0, "seed must be a non-negative integer")
        check(self.method in Method.all, f"method must be one of {Method.all}, got {self.method!r}")
        check(self.reference in Method.all, f"reference must be one of {Method.all}, got {self.reference!r}")
        check(self.model.system_dim >= 2, "model.system_dim must be >= 2")
        check(self.bath.kind in ("ohmic_exp", "lorentzian", "tabulated"), f"unknown bath.kind {self.bath.kind!r}")
        check(self.bath.kind != "tabulated" or bool(self.bath.table_path), "bath.table_path required for tabulated")
        check(self.bath.alpha >= 0 and self.bath.omega_c > 0 and self.bath.kappa > 0,
              "bath.alpha >= 0, bath.omega_c > 0 and bath.kappa > 0 required")
        check(self.bath.temperature >= 0, "bath.temperature must be >= 0")
        check(self.bath.fit_terms >= 1 and self.bath.fit_samples >= 4 * self.bath.fit_terms,
              "bath.fit_samples must be at least 4 * bath.fit_terms")
        check(self.grid.dt > 0 and self.grid.steps >= 1, "grid.dt > 0 and grid.steps >= 1 required")
        check(0 <= self.compression.eps_rel < 1, "compression.eps_rel must lie in [0, 1)")
        check(self.methods.heom.depth >= 0, "methods.heom.depth must be >= 0")
        check(self.methods.stochastic.trajectories >= 1, "methods.stochastic.trajectories must be >= 1")
        check(2 <= self.methods.stochastic.batches <= self.methods.stochastic.trajectories,
              "methods.stochastic.batches must lie in [2, methods.stochastic.trajectories]")
        check(self.methods.augmented.fock >= 1, "methods.augmented.fock must be >= 1")
        check(self.methods.tdvp.modes >= 1 and self.methods.tdvp.omega_max > 0, "invalid methods.tdvp section")
        check(self.methods.ttm.cutoff >= 1, "methods.ttm.cutoff must be >= 1")
        check(self.optimize.max_iters >= 1, "optimize.max_iters must be >= 1")
        check(self.optimize.fd_step > 0, "optimize.fd_step must be > 0")
        for channel in self.model.controls:
            check(channel.lower <= channel.upper, f"control {channel.label!r}: lower bound above upper bound")
        check(len({channel.label for channel in self.model.controls}) == len(self.model.controls),
              "control labels must be unique")
