"""Mean and mean-square analysis of VSS-LMS.

Everything is expressed in the eigenbasis of the input covariance
``R_u = T diag(lam) T^*``. For a weighting vector ``sig`` the transformed
weight error satisfies

    E||wbar(i+1)||^2_sig = E||wbar(i)||^2_{F(i) sig} + sigma_v^2 E[mu^2(i)] lam^T sig
    F(i) = I - 2 E[mu(i)] Lambda + E[mu^2(i)] (Lambda^2 + lam lam^T)

with the step-size moments supplied by each rule's expected update. Two
propagators are provided. The "oracle" tracks the vector ``s(i)`` with
``E||wbar(i)||^2_sig = s(i)^T sig`` directly. The "paper" engine carries the
accumulated product ``A(i)`` and weighted sum ``B(i)`` and advances by
differences. They coincide whenever the ``F(i)`` commute, e.g. for white input.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import NamedTuple, Optional

import numpy as np

from .curves import LearningCurve
from .errors import ConfigError, DivergenceError, InstabilityError
from .model import SpectralModel
from .rules import AM, KJ, NC, VSQ, Fixed, RuleParams, Sp

ENGINES = ("oracle", "paper")
MU2_MODES = ("squared-mean", "exact-kj")
STEADY_MODES = ("closed_form", "fixed_point")
DIVERGENCE_MSD = 1e12


# -- mean behaviour ----------------------------------------------------------

def mean_stability_bound(spectral: SpectralModel) -> float:
    """Upper limit ``2 / beta_max`` on E[mu(i)] for convergence in the mean."""
    if not spectral.beta_max > 0:
        raise ConfigError("input covariance is zero; no stability bound exists")
    return 2.0 / spectral.beta_max


def mean_trajectory(spectral: SpectralModel, e_mu_series, w_o, N: int) -> np.ndarray:
    """Mean transformed weight error ``E[wbar(i)]`` for i = 0..N.

    ``E[wbar(i+1)] = (I - E[mu(i)] Lambda) E[wbar(i)]`` from ``wbar(0) = T^* w_o``.
    Returns an (N + 1, M) array.
    """
    e_mu = np.asarray(e_mu_series, dtype=float)
    if e_mu.shape != (N,):
        raise ConfigError(f"need {N} step-size means, got shape {e_mu.shape}")
    out = np.empty((N + 1, spectral.M), dtype=np.result_type(spectral.T, np.asarray(w_o), float))
    out[0] = spectral.rotate(np.asarray(w_o))
    for i in range(N):
        out[i + 1] = (1.0 - e_mu[i] * spectral.lam) * out[i]
    return out


# -- second-order operator ----------------------------------------------------

def f_matrix(e_mu: float, e_mu2: float, lam) -> np.ndarray:
    lam = np.asarray(lam, dtype=float)
    F = e_mu2 * np.outer(lam, lam)
    F[np.diag_indices_from(F)] += 1.0 - 2.0 * e_mu * lam + e_mu2 * lam * lam
    return F


class StabilityCheck(NamedTuple):
    stable: bool
    radius: float


def ms_stability_check(F) -> StabilityCheck:
    """Mean-square stability of ``s -> F^T s``: spectral radius below one."""
    F = np.asarray(F)
    if F.ndim != 2 or F.shape[0] != F.shape[1]:
        raise ConfigError(f"F must be square, got shape {F.shape}")
    radius = float(np.max(np.abs(np.linalg.eigvals(F))))
    return StabilityCheck(radius < 1.0, radius)


# -- step-size moments -------------------------------------------------------

@dataclass(frozen=True)
class MomentState:
    """Expected step-size quantities at iteration i.

    ``e2_prev`` is E|e(i-1)|^2 for AM (zero before the first sample, matching
    ``e_prev = 0`` in the filter); ``e_A``/``e_B`` hold VSQ's E[A_q(i-1)],
    E[B_q(i-1)].
    """

    e_mu: float
    e_mu2: float
    e_p2: float = 0.0
    e2_prev: float = 0.0
    e_theta: float = 0.0
    e_A: float = 0.0
    e_B: float = 0.0


def init_moments(rule: RuleParams, mu_initial: float) -> MomentState:
    """The initial step is deterministic, so E[mu^2(0)] = mu(0)^2."""
    if isinstance(rule, NC):
        mu = rule.mu0
    elif isinstance(rule, Fixed):
        mu = rule.mu
    else:
        mu = float(mu_initial)
    return MomentState(e_mu=mu, e_mu2=mu * mu)


def _check_mu2_mode(mode):
    if mode not in MU2_MODES:
        raise ConfigError(f"unknown E[mu^2] mode {mode!r}; expected one of {MU2_MODES}")


def moment_advance(rule: RuleParams, m: MomentState, zeta: float, sigma_v2: float,
                   mu2_mode: str = "squared-mean") -> MomentState:
    """Advance the step-size moments using E|e(i)|^2 = zeta(i) + sigma_v^2.

    ``mu2_mode="squared-mean"`` sets E[mu^2] = E[mu]^2. ``"exact-kj"`` carries
    the Gaussian fourth-moment recursion for KJ; other rules ignore it.
    """
    _check_mu2_mode(mu2_mode)
    ee = zeta + sigma_v2
    if isinstance(rule, KJ):
        mu = rule.alpha * m.e_mu + rule.gamma * ee
        if mu2_mode == "exact-kj":
            a, g = rule.alpha, rule.gamma
            mu2 = a * a * m.e_mu2 + 2.0 * a * g * m.e_mu * ee + 3.0 * g * g * ee * ee
            return replace(m, e_mu=mu, e_mu2=mu2)
        return replace(m, e_mu=mu, e_mu2=mu * mu)
    if isinstance(rule, AM):
        b = rule.beta
        p2 = b * b * m.e_p2 + (1.0 - b) ** 2 * ee * m.e2_prev
        mu = rule.alpha * m.e_mu + rule.gamma * p2
        return replace(m, e_mu=mu, e_mu2=mu * mu, e_p2=p2, e2_prev=ee)
    if isinstance(rule, NC):
        theta = (1.0 - rule.alpha) * m.e_theta + 0.5 * rule.alpha * zeta
        mu = rule.mu0 * (1.0 + rule.gamma * theta)
        return replace(m, e_mu=mu, e_mu2=mu * mu, e_theta=theta)
    if isinstance(rule, VSQ):
        A = rule.a * m.e_A + ee
        B = rule.b * m.e_B + ee
        mu = rule.alpha * m.e_mu + rule.gamma * A / B
        return replace(m, e_mu=mu, e_mu2=mu * mu, e_A=A, e_B=B)
    if isinstance(rule, Sp):
        # E|e| for a zero-mean real Gaussian error of variance zeta + sigma_v^2
        mu = rule.alpha * m.e_mu + rule.gamma * math.sqrt(2.0 * ee / math.pi)
        return replace(m, e_mu=mu, e_mu2=mu * mu)
    if isinstance(rule, Fixed):
        return m
    raise ConfigError(f"unsupported rule {rule!r}")


# -- transient propagators ----------------------------------------------------

def covariance_advance(s, F, e_mu2: float, sigma_v2: float, lam) -> np.ndarray:
    """``s(i+1) = F(i)^T s(i) + sigma_v^2 E[mu^2(i)] lam``."""
    s = np.asarray(s, dtype=float)
    return np.asarray(F).T @ s + sigma_v2 * e_mu2 * np.asarray(lam, dtype=float)


@dataclass(frozen=True, eq=False)
class TheoryState:
    """Transient-analysis state at iteration i.

    ``s`` is the diagonal of the transformed weight-error covariance, ``F``
    the operator for the current step, ``A`` = F(i-1)...F(0) and ``B`` the
    noise accumulator of the product-form recursion.
    """

    s: np.ndarray
    F: np.ndarray
    A: np.ndarray
    B: np.ndarray
    lam: np.ndarray

    @property
    def zeta(self) -> float:
        return float(self.lam @ self.s)

    @property
    def msd(self) -> float:
        return float(np.sum(self.s))


def init_theory_state(spectral: SpectralModel, w_o) -> TheoryState:
    M = spectral.M
    s0 = np.abs(spectral.rotate(np.asarray(w_o))) ** 2
    lam = np.asarray(spectral.lam, dtype=float)
    return TheoryState(s=s0, F=np.eye(M), A=np.eye(M), B=np.zeros((M, M)), lam=lam)


def paper_transient_advance(t: TheoryState, e_mu2_i: float, sigma_v2: float, lam, w_bar_o,
                            as_printed: bool = False) -> TheoryState:
    """Advance by the difference form of the unrolled recursion.

    For every weighting ``sig``::

        E||wbar(i+1)||^2_sig = E||wbar(i)||^2_sig + ||wbar_o||^2_{(F-I) A sig}
                               + sigma_v^2 E[mu^2(i)] lam^T sig
                               + sigma_v^2 lam^T (F-I) B sig

    then ``A <- F A`` and ``B <- E[mu^2(i)] I + F B``. ``as_printed=True``
    uses ``F A`` instead of ``(F - I) A`` in the second term, which does not
    reproduce the unrolled form and is kept for comparison only.
    """
    lam = np.asarray(lam, dtype=float)
    F, A, B = t.F, t.A, t.B
    FmI = F - np.eye(F.shape[0])
    G = F @ A if as_printed else FmI @ A
    wo2 = np.abs(np.asarray(w_bar_o)) ** 2
    s = t.s + G.T @ wo2 + sigma_v2 * e_mu2_i * lam + sigma_v2 * (FmI @ B).T @ lam
    return replace(t, s=s, A=F @ A, B=e_mu2_i * np.eye(F.shape[0]) + F @ B)


@dataclass(frozen=True, eq=False)
class TheoryRun:
    """Linear-scale output of the transient engine, one entry per iteration."""

    msd: np.ndarray
    emse: np.ndarray
    e_mu: np.ndarray
    e_mu2: np.ndarray
    s_final: Optional[np.ndarray] = None

    def curve(self, rule: str) -> LearningCurve:
        return LearningCurve.from_linear(np.arange(len(self.msd)), self.msd, self.emse,
                                         self.e_mu, "theory", rule)


def theory_run(spectral: SpectralModel, w_o, rule: RuleParams, mu_initial: float, sigma_v2: float,
               N: int, engine: str = "oracle", mu2_mode: str = "squared-mean",
               as_printed: bool = False, stop_tol: Optional[float] = None) -> TheoryRun:
    """Couple the moment recursion with a propagator for ``N`` iterations.

    With ``stop_tol`` set, stops early once the relative per-step change of
    the MSD falls below it.

    Raises
    ------
    DivergenceError
        When the MSD exceeds 1e12 or stops being finite; ``partial`` carries
        the run up to the offending iteration.
    """
    if N < 1:
        raise ConfigError(f"iteration count must be >= 1, got {N}")
    if engine not in ENGINES:
        raise ConfigError(f"unknown theory engine {engine!r}; expected one of {ENGINES}")
    _check_mu2_mode(mu2_mode)
    lam = np.asarray(spectral.lam, dtype=float)
    w_bar_o = spectral.rotate(np.asarray(w_o))
    t = init_theory_state(spectral, w_o)
    m = init_moments(rule, mu_initial)
    out = np.empty((4, N))
    n = N
    for i in range(N):
        msd, zeta = t.msd, t.zeta
        out[:, i] = msd, zeta, m.e_mu, m.e_mu2
        if not msd <= DIVERGENCE_MSD:
            partial = TheoryRun(*out[:, :i + 1])
            raise DivergenceError(f"theory MSD diverged at iteration {i}", iteration=i,
                                  partial=partial)
        F = f_matrix(m.e_mu, m.e_mu2, lam)
        if engine == "oracle":
            t = replace(t, s=covariance_advance(t.s, F, m.e_mu2, sigma_v2, lam), F=F)
        else:
            t = paper_transient_advance(replace(t, F=F), m.e_mu2, sigma_v2, lam, w_bar_o,
                                        as_printed=as_printed)
        m = moment_advance(rule, m, zeta, sigma_v2, mu2_mode)
        if stop_tol is not None and abs(t.msd - msd) <= stop_tol * msd:
            n = i + 1
            break
    return TheoryRun(*out[:, :n], s_final=t.s)


def transient_curve(spectral: SpectralModel, w_o, rule: RuleParams, mu_initial: float,
                    sigma_v2: float, N: int, engine: str = "oracle",
                    mu2_mode: str = "squared-mean", name: Optional[str] = None,
                    as_printed: bool = False) -> LearningCurve:
    run = theory_run(spectral, w_o, rule, mu_initial, sigma_v2, N, engine=engine,
                     mu2_mode=mu2_mode, as_printed=as_printed)
    return run.curve(name or type(rule).__name__)


# -- steady state --------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SteadyState:
    mu_ss: float
    F_ss: np.ndarray
    msd_ss: float
    emse_ss: float
    radius: float


def closed_form_mu(rule: RuleParams, sigma_v2: float) -> float:
    """Steady-state step with the steady-state EMSE neglected."""
    if isinstance(rule, KJ):
        return rule.gamma * sigma_v2 / (1.0 - rule.alpha)
    if isinstance(rule, AM):
        return rule.gamma * (1.0 - rule.beta) * sigma_v2 / (1.0 - rule.alpha)
    if isinstance(rule, NC):
        return rule.mu0
    if isinstance(rule, VSQ):
        return rule.gamma * (1.0 - rule.b) / (1.0 - rule.alpha * (1.0 - rule.a))
    if isinstance(rule, Sp):
        return rule.gamma / (1.0 - rule.alpha) * math.sqrt(2.0 * sigma_v2 / math.pi)
    if isinstance(rule, Fixed):
        return rule.mu
    raise ConfigError(f"unsupported rule {rule!r}")


def default_steady_mode(rule: RuleParams) -> str:
    # the AM and VSQ closed forms disagree with their own moment recursions
    return "fixed_point" if isinstance(rule, (AM, VSQ)) else "closed_form"


def fixed_point_mu(rule: RuleParams, sigma_v2: float, tol: float = 1e-14,
                   max_iter: int = 1_000_000) -> float:
    """Iterate the moment recursion with zero EMSE until every moment settles.

    Convergence is judged per step on the relative change, so tiny steps
    (AM settles near 1e-6) are resolved as accurately as large ones.
    """
    m = replace(init_moments(rule, 1.0), e_mu=0.0, e_mu2=0.0)
    if isinstance(rule, (NC, Fixed)):
        m = init_moments(rule, 1.0)
    for _ in range(max_iter):
        nxt = moment_advance(rule, m, 0.0, sigma_v2)
        # every auxiliary moment must have settled, not only E[mu]
        if all(abs(getattr(nxt, f) - getattr(m, f)) <= tol * abs(getattr(nxt, f))
               for f in MomentState.__dataclass_fields__):
            return nxt.e_mu
        m = nxt
    raise InstabilityError(f"step-size fixed point did not converge in {max_iter} iterations")


def steady_state_mu(rule: RuleParams, sigma_v2: float, mode: Optional[str] = None) -> float:
    mode = mode or default_steady_mode(rule)
    if mode == "closed_form":
        return closed_form_mu(rule, sigma_v2)
    if mode == "fixed_point":
        return fixed_point_mu(rule, sigma_v2)
    raise ConfigError(f"unknown steady-state mode {mode!r}; expected one of {STEADY_MODES}")


def steady_state_msd_emse(mu_ss: float, lam, sigma_v2: float) -> SteadyState:
    """``sigma_v^2 mu_ss^2 lam^T (I - F_ss)^{-1} sig`` for sig = 1 (MSD) and lam (EMSE).

    Raises
    ------
    InstabilityError
        If ``F_ss`` has spectral radius >= 1.
    """
    lam = np.asarray(lam, dtype=float)
    F = f_matrix(mu_ss, mu_ss * mu_ss, lam)
    if mu_ss == 0.0:
        return SteadyState(0.0, F, 0.0, 0.0, 1.0)
    stable, radius = ms_stability_check(F)
    if not stable:
        raise InstabilityError(
            f"mu_ss={mu_ss:.6g} is not mean-square stable (spectral radius {radius:.6g})",
            radius=radius)
    x = np.linalg.solve((np.eye(lam.size) - F).T, lam)
    scale = sigma_v2 * mu_ss * mu_ss
    return SteadyState(mu_ss, F, scale * float(np.sum(x)), scale * float(x @ lam), radius)
