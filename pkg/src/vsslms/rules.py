"""Step-size update rules.

Each rule is a small state machine ``mu(i+1) = f{mu(i), e(i), ...}``:

====  ===========================================================
KJ    mu' = alpha mu + gamma |e|^2
AM    p = beta p_prev + (1 - beta) Re(e conj(e_prev)); mu' = alpha mu + gamma p^2
NC    theta' = (1 - alpha) theta + alpha/2 (|e|^2 - sigma_v^2); mu' = mu0 (1 + gamma theta')
VSQ   A' = a A + |e|^2; B' = b B + |e|^2; mu' = alpha mu + gamma A'/B'
Sp    mu' = alpha mu + gamma |e|
====  ===========================================================

plus ``Fixed`` (constant step, plain LMS). The functions here are the
readable reference; the compiled simulation kernel in :mod:`vsslms._kernel`
implements the same arithmetic and is tested against them.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace
from typing import ClassVar, Optional, Tuple, Union

import numpy as np

from .errors import ConfigError

# guards only an exact zero denominator in the VSQ quotient
EPS_DIV = 1e-300


def _open_unit(name, value):
    if not 0.0 < value < 1.0:
        raise ConfigError(f"{name} must lie in (0, 1), got {value}")


def _nonneg(name, value):
    # zero is accepted so that rules can be frozen into plain LMS for testing
    if not value >= 0.0 or not math.isfinite(value):
        raise ConfigError(f"{name} must be a finite nonnegative number, got {value}")


def _positive(name, value):
    if not value > 0.0 or not math.isfinite(value):
        raise ConfigError(f"{name} must be positive, got {value}")


@dataclass(frozen=True)
class KJ:
    alpha: float
    gamma: float
    code: ClassVar[int] = 0

    def __post_init__(self):
        _open_unit("alpha", self.alpha)
        _nonneg("gamma", self.gamma)


@dataclass(frozen=True)
class AM:
    alpha: float
    gamma: float
    beta: float
    code: ClassVar[int] = 1

    def __post_init__(self):
        _open_unit("alpha", self.alpha)
        _nonneg("gamma", self.gamma)
        _open_unit("beta", self.beta)


@dataclass(frozen=True)
class NC:
    mu0: float
    gamma: float
    alpha: float
    code: ClassVar[int] = 2

    def __post_init__(self):
        _positive("mu0", self.mu0)
        _nonneg("gamma", self.gamma)
        _open_unit("alpha", self.alpha)


@dataclass(frozen=True)
class VSQ:
    alpha: float
    gamma: float
    a: float
    b: float
    code: ClassVar[int] = 3

    def __post_init__(self):
        _open_unit("alpha", self.alpha)
        _nonneg("gamma", self.gamma)
        _open_unit("a", self.a)
        _open_unit("b", self.b)


@dataclass(frozen=True)
class Sp:
    alpha: float
    gamma: float
    code: ClassVar[int] = 4

    def __post_init__(self):
        _open_unit("alpha", self.alpha)
        _nonneg("gamma", self.gamma)


@dataclass(frozen=True)
class Fixed:
    mu: float
    code: ClassVar[int] = 5

    def __post_init__(self):
        _positive("mu", self.mu)


RuleParams = Union[KJ, AM, NC, VSQ, Sp, Fixed]

RULE_TYPES = {cls.__name__: cls for cls in (KJ, AM, NC, VSQ, Sp, Fixed)}


def rule_from_dict(kind: str, params: dict) -> RuleParams:
    """Build rule parameters from a type name and a parameter mapping."""
    lookup = {k.lower(): v for k, v in RULE_TYPES.items()}
    cls = lookup.get(str(kind).lower())
    if cls is None:
        raise ConfigError(f"unknown step-size rule {kind!r}; expected one of {sorted(RULE_TYPES)}")
    names = {f.name for f in fields(cls)}
    extra = set(params) - names
    missing = names - set(params)
    if extra:
        raise ConfigError(f"rule {cls.__name__}: unexpected parameter(s) {sorted(extra)}")
    if missing:
        raise ConfigError(f"rule {cls.__name__}: missing parameter(s) {sorted(missing)}")
    try:
        return cls(**{k: float(v) for k, v in params.items()})
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"rule {cls.__name__}: {exc}") from exc


def rule_to_dict(rule: RuleParams) -> dict:
    return {"type": type(rule).__name__, "params": {f.name: getattr(rule, f.name) for f in fields(rule)}}


def param_vector(rule: RuleParams) -> np.ndarray:
    """Parameters packed in a fixed order for the compiled kernel."""
    return np.array([getattr(rule, f.name) for f in fields(rule)], dtype=float)


@dataclass(frozen=True)
class RuleState:
    """Per-trial step-size state.

    ``p_prev``/``e_prev`` are used by AM, ``theta`` by NC and
    ``A_acc``/``B_acc`` by VSQ; the others stay at zero.
    """

    mu: float
    p_prev: float = 0.0
    e_prev: complex = 0.0
    theta: float = 0.0
    A_acc: float = 0.0
    B_acc: float = 0.0


def init_rule(params: RuleParams, mu_initial: float) -> RuleState:
    """Initial state. NC ignores ``mu_initial`` and starts at ``mu0``."""
    _positive("mu_initial", mu_initial)
    if isinstance(params, NC):
        return RuleState(mu=params.mu0)
    if isinstance(params, Fixed):
        return RuleState(mu=params.mu)
    return RuleState(mu=float(mu_initial))


def advance(state: RuleState, params: RuleParams, e, sigma_v2: float) -> RuleState:
    """One step-size update driven by the error ``e(i)``.

    ``sigma_v2`` is read only by NC, which needs the noise variance.
    """
    e2 = abs(e) ** 2
    if isinstance(params, KJ):
        return replace(state, mu=params.alpha * state.mu + params.gamma * e2)
    if isinstance(params, AM):
        cross = (e * np.conj(state.e_prev)).real
        p = params.beta * state.p_prev + (1.0 - params.beta) * cross
        mu = params.alpha * state.mu + params.gamma * p * p
        return replace(state, mu=mu, p_prev=p, e_prev=e)
    if isinstance(params, NC):
        theta = (1.0 - params.alpha) * state.theta + 0.5 * params.alpha * (e2 - sigma_v2)
        return replace(state, mu=params.mu0 * (1.0 + params.gamma * theta), theta=theta)
    if isinstance(params, VSQ):
        A = params.a * state.A_acc + e2
        B = params.b * state.B_acc + e2
        mu = params.alpha * state.mu + params.gamma * (A / max(B, EPS_DIV))
        return replace(state, mu=mu, A_acc=A, B_acc=B)
    if isinstance(params, Sp):
        return replace(state, mu=params.alpha * state.mu + params.gamma * abs(e))
    if isinstance(params, Fixed):
        return state
    raise ConfigError(f"unsupported rule {params!r}")


def clamp_policy(state: RuleState, bounds: Optional[Tuple[float, float]] = None) -> RuleState:
    """Project ``mu`` into ``[mu_min, mu_max]``; identity when ``bounds`` is None."""
    if bounds is None:
        return state
    lo, hi = check_bounds(bounds)
    return replace(state, mu=min(max(state.mu, lo), hi))


def check_bounds(bounds):
    lo, hi = (float(b) for b in bounds)
    if lo > hi:
        raise ConfigError(f"step-size bounds invalid: mu_min={lo} > mu_max={hi}")
    return lo, hi
