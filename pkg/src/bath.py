import typing

import numpy as np
from jax import random
from scipy import integrate, optimize
from smart_open import open

from .backend import stream_key
from .constants import ConfigError, FitError, NumericalError, StreamPurpose
from .context import BathContext


class SpectralDensity:
    """
    J(omega) >= 0 for omega > 0. Conventions:
      ohmic_exp:  J = 2 alpha omega exp(-omega / omega_c)
      lorentzian: J = (lambda^2 / pi) (kappa / 2) / ((omega - omega_0)^2 + kappa^2 / 4)
      tabulated:  linear interpolation of (omega, J) samples, zero outside the table
    """

    def __init__(self, kind: str, **params):
        self.kind = kind
        self.params = params

    @classmethod
    def ohmic_exp(cls, alpha: float, omega_c: float = 1.) -> 'SpectralDensity':
        if alpha < 0 or omega_c <= 0:
            raise ConfigError(f"ohmic_exp needs alpha >= 0 and omega_c > 0, got alpha={alpha}, omega_c={omega_c}")
        return cls("ohmic_exp", alpha=alpha, omega_c=omega_c)

    @classmethod
    def lorentzian(cls, coupling: float, omega_0: float, kappa: float) -> 'SpectralDensity':
        if kappa <= 0:
            raise ConfigError(f"lorentzian needs kappa > 0, got {kappa}")
        return cls("lorentzian", coupling=coupling, omega_0=omega_0, kappa=kappa)

    @classmethod
    def tabulated(cls, omega: typing.Sequence[float], values: typing.Sequence[float]) -> 'SpectralDensity':
        omega = np.asarray(omega, dtype=np.float64)
        values = np.asarray(values, dtype=np.float64)
        if omega.ndim != 1 or omega.shape != values.shape or omega.size < 2:
            raise ConfigError("Tabulated spectral density needs two equally long columns with at least two rows")
        if np.any(np.diff(omega) <= 0):
            raise ConfigError("Tabulated spectral density needs strictly increasing omega")
        if np.any(values[omega > 0] < 0):
            raise ConfigError("Tabulated spectral density must be non-negative on omega > 0")
        return cls("tabulated", omega=omega, values=values)

    @classmethod
    def from_csv(cls, path: str) -> 'SpectralDensity':
        rows = []
        with open(path) as f:
            for idx, line in enumerate(f.read().splitlines()):
                if not line.strip():
                    continue
                try:
                    rows.append([float(itm) for itm in line.split(",")[:2]])
                except ValueError:
                    if idx == 0:  # header
                        continue
                    raise ConfigError(f"{path}:{idx + 1}: cannot parse {line!r}")
        table = np.asarray(rows, dtype=np.float64).reshape(-1, 2)
        return cls.tabulated(table[:, 0], table[:, 1])

    @classmethod
    def from_config(cls, bath: BathContext) -> 'SpectralDensity':
        if bath.kind == "ohmic_exp":
            return cls.ohmic_exp(bath.alpha, bath.omega_c)
        if bath.kind == "lorentzian":
            return cls.lorentzian(bath.coupling, bath.omega_0, bath.kappa)
        if bath.kind == "tabulated":
            return cls.from_csv(bath.table_path)
        raise ConfigError(f"Unknown bath kind {bath.kind!r}")

    def __call__(self, omega: typing.Union[float, np.ndarray]) -> typing.Union[float, np.ndarray]:
        omega = np.asarray(omega, dtype=np.float64)
        if self.kind == "ohmic_exp":
            out = 2 * self.params["alpha"] * omega * np.exp(-omega / self.params["omega_c"])
            return np.where(omega > 0, out, 0.)
        if self.kind == "lorentzian":
            half = self.params["kappa"] / 2
            return self.params["coupling"] ** 2 / np.pi * half / ((omega - self.params["omega_0"]) ** 2 + half ** 2)
        return np.interp(omega, self.params["omega"], self.params["values"], left=0., right=0.)


class BathCorrelation(typing.NamedTuple):
    """C(t) ~ sum_j amplitudes_j exp(i exponents_j t), C*(t) ~ sum_j conj_amplitudes_j exp(i exponents_j t)."""
    amplitudes: np.ndarray
    conj_amplitudes: np.ndarray
    exponents: np.ndarray
    residual: float = 0.

    @classmethod
    def from_single_exponential(cls, amplitude: complex, exponent: complex) -> 'BathCorrelation':
        if exponent.imag <= 0:
            raise ValueError(f"Exponent must decay (Im > 0), got {exponent}")
        if exponent.real == 0:
            return cls(np.array([amplitude], complex), np.array([np.conj(amplitude)], complex),
                       np.array([exponent], complex))
        return cls(np.array([amplitude, 0], complex), np.array([0, np.conj(amplitude)], complex),
                   np.array([exponent, -np.conj(exponent)], complex))

    @property
    def terms(self) -> int:
        return len(self.exponents)

    def evaluate(self, t: typing.Union[float, np.ndarray]) -> np.ndarray:
        return np.exp(1j * np.multiply.outer(t, self.exponents)) @ self.amplitudes

    def evaluate_conj(self, t: typing.Union[float, np.ndarray]) -> np.ndarray:
        return np.exp(1j * np.multiply.outer(t, self.exponents)) @ self.conj_amplitudes


class ModeDiscretization(typing.NamedTuple):
    couplings: np.ndarray
    frequencies: np.ndarray

    @property
    def size(self) -> int:
        return len(self.frequencies)


def _fourier(fn: typing.Callable, t: float, weight: str, lower: float, upper: float) -> float:
    if t == 0:
        if weight == "sin":
            return 0.
        return integrate.quad(fn, lower, upper, epsrel=1e-9, epsabs=1e-14, limit=400)[0]
    if np.isinf(upper):
        return integrate.quad(fn, lower, upper, weight=weight, wvar=t, epsabs=1e-13, limlst=200)[0]
    return integrate.quad(fn, lower, upper, weight=weight, wvar=t, epsrel=1e-9, epsabs=1e-14, limit=400)[0]


def correlation(spectral: SpectralDensity, t: float, temperature: float = 0.) -> complex:
    """
    C(t) = int_0^inf J(w) [coth(w / 2T) cos(w t) - i sin(w t)] dw.
    A Lorentzian is integrated over the whole real axis at zero temperature, giving lambda^2 exp(-i w0 t - kappa|t|/2).
    """
    if temperature < 0:
        raise ConfigError(f"Temperature must be non-negative, got {temperature}")
    t = float(t)
    sign = np.sign(t)
    if spectral.kind == "lorentzian":
        if temperature > 0:
            raise ConfigError("Lorentzian spectral densities are only supported at zero temperature")
        half = spectral.params["kappa"] / 2
        scale = spectral.params["coupling"] ** 2 / np.pi * half
        envelope = 2 * _fourier(lambda x: scale / (x ** 2 + half ** 2), abs(t), "cos", 0, np.inf)
        return complex(np.exp(-1j * spectral.params["omega_0"] * t) * envelope)

    lower, upper = 0., np.inf
    if spectral.kind == "tabulated":
        values = spectral.params["values"]
        if values[-1] > 1e-6 * max(values.max(), 1e-300):
            raise NumericalError(f"Tabulated spectral density has no cutoff: J(omega_max)={values[-1]:.3e}")
        lower, upper = max(float(spectral.params["omega"][0]), 0.), float(spectral.params["omega"][-1])

    if temperature > 0:
        def thermal(omega: float) -> float:
            if omega <= 0:
                return 0.
            return float(spectral(omega)) / np.tanh(omega / (2 * temperature))
    else:
        def thermal(omega: float) -> float:
            return float(spectral(omega))

    real = _fourier(thermal, abs(t), "cos", lower, upper)
    imag = -sign * _fourier(lambda omega: float(spectral(omega)), abs(t), "sin", lower, upper)
    return complex(real, imag)


def correlation_samples(spectral: SpectralDensity, times: typing.Sequence[float], temperature: float = 0.
                        ) -> np.ndarray:
    return np.array([correlation(spectral, t, temperature) for t in times], dtype=np.complex128)


def _design(times: np.ndarray, exponents: np.ndarray) -> np.ndarray:
    return np.exp(1j * np.multiply.outer(times, exponents))


def _mirror(exponents: np.ndarray, rtol: float = 1e-10) -> np.ndarray:
    out = []
    for gamma in exponents:
        out.append(gamma)
        if abs(gamma.real) > rtol * abs(gamma):
            out.append(-np.conj(gamma))
    return np.array(out, dtype=np.complex128)


def fit_exponentials(samples: typing.Sequence[typing.Tuple[float, complex]], terms: int, mirror: bool = True,
                     ceiling: float = 1e-2, seed: int = 0, starts: int = 8) -> BathCorrelation:
    """
    Variable-projection fit of sum_j a_j exp(i g_j t) with Im g_j > 0. Each g_j is parameterized as
    w_j + i exp(s_j); the amplitudes are solved linearly for every trial set of exponents.
    With mirror=True the exponent set is closed under g -> -conj(g), so the same exponents also represent C*(t)
    exactly; this returns up to 2 * terms exponentials.
    """
    times = np.asarray([itm[0] for itm in samples], dtype=np.float64)
    values = np.asarray([itm[1] for itm in samples], dtype=np.complex128)
    if terms < 1:
        raise ValueError(f"Need at least one term, got {terms}")
    if len(times) < 4 * terms:
        raise ValueError(f"Need at least {4 * terms} samples for {terms} terms, got {len(times)}")
    step = np.diff(times)
    if not np.allclose(step, step[0], rtol=1e-9, atol=0):
        raise ValueError("Samples must lie on a uniform time grid")
    step = step[0]
    span = times[-1] - times[0]

    def exponents(params: np.ndarray) -> np.ndarray:
        gamma = params[:terms] + 1j * np.exp(params[terms:])
        if mirror:
            return np.concatenate([gamma, -np.conj(gamma)])
        return gamma

    def residuals(params: np.ndarray) -> np.ndarray:
        design = _design(times, exponents(params))
        amplitudes = np.linalg.lstsq(design, values, rcond=None)[0]
        out = design @ amplitudes - values
        return np.concatenate([out.real, out.imag])

    frequencies = 2 * np.pi * np.fft.fftfreq(len(times), step)
    peak = frequencies[np.argmax(np.abs(np.fft.fft(values)))]
    width = abs(peak) + 2 / span
    rates = np.geomspace(1 / span, 0.5 / step, terms)

    key = stream_key(seed, StreamPurpose.fit_starts)
    shift = np.asarray(random.uniform(key, (starts, terms), minval=-1, maxval=1))
    log_rates = np.asarray(random.uniform(random.fold_in(key, 1), (starts, terms), minval=np.log(0.5 / span),
                                          maxval=np.log(2 / step)))
    guesses = [np.concatenate([np.zeros(terms), np.log(rates)]),
               np.concatenate([np.full(terms, peak), np.log(rates)]),
               np.concatenate([peak * (-1.) ** np.arange(terms), np.log(rates)])]
    guesses.extend(np.concatenate([peak + 2 * width * shift[i], log_rates[i]]) for i in range(starts))

    best = None
    for guess in guesses:
        try:
            result = optimize.least_squares(residuals, guess, method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15,
                                            max_nfev=400 * (2 * terms + 1))
        except (ValueError, np.linalg.LinAlgError):
            continue
        if np.isfinite(result.cost) and (best is None or result.cost < best.cost):
            best = result
    if best is None:
        raise FitError("Exponential fit did not converge from any starting point", float("inf"))

    gamma = best.x[:terms] + 1j * np.exp(best.x[terms:])
    gamma = _mirror(gamma) if mirror else gamma
    design = _design(times, gamma)
    amplitudes = np.linalg.lstsq(design, values, rcond=None)[0]
    conj_amplitudes = np.linalg.lstsq(design, np.conj(values), rcond=None)[0]
    residual = float(np.sqrt(np.mean(np.abs(design @ amplitudes - values) ** 2)))
    scale = float(np.max(np.abs(values)))
    if residual > ceiling * max(scale, 1e-300):
        raise FitError(f"Exponential fit with {terms} terms above ceiling {ceiling:.1e} x {scale:.3e}", residual)
    if np.any(gamma.imag <= 0):
        raise FitError("Fitted exponent violates decay (Im <= 0)", residual)
    return BathCorrelation(amplitudes, conj_amplitudes, gamma, residual)


def fit_from_config(spectral: SpectralDensity, bath: BathContext, seed: int = 0) -> BathCorrelation:
    times = np.linspace(0, bath.fit_horizon / bath.omega_c, bath.fit_samples)
    samples = list(zip(times, correlation_samples(spectral, times, bath.temperature)))
    return fit_exponentials(samples, bath.fit_terms, ceiling=bath.fit_ceiling, seed=seed)


def discretize(spectral: SpectralDensity, modes: int, omega_max: float) -> ModeDiscretization:
    if modes < 1 or omega_max <= 0:
        raise ValueError(f"Need modes >= 1 and omega_max > 0, got {modes}, {omega_max}")
    width = omega_max / modes
    frequencies = (np.arange(1, modes + 1) - 0.5) * width
    couplings = np.sqrt(np.maximum(spectral(frequencies), 0) * width)
    return ModeDiscretization(couplings, frequencies)
