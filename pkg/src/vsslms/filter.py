"""VSS-LMS adaptive filter: single steps and single-trial trajectories."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from . import _kernel
from .errors import ConfigError, DivergenceError
from .model import Sample, SystemModel, iter_stream
from .rules import RuleParams, check_bounds, init_rule, param_vector

DIVERGENCE_NORM = 1e12


@dataclass(frozen=True, eq=False)
class FilterState:
    w: np.ndarray
    i: int = 0


def lms_step(state: FilterState, sample: Sample, mu: float):
    """One LMS iteration ``w(i+1) = w(i) + mu e(i) u^*(i)``.

    Returns the new state and the a-priori error ``e(i) = d(i) - u(i) w(i)``.
    """
    u = np.asarray(sample.u)
    if u.shape != state.w.shape:
        raise ConfigError(f"regressor length {u.shape} does not match weights {state.w.shape}")
    e = sample.d - u @ state.w
    w = state.w + mu * e * u.conj()
    return FilterState(w=w, i=state.i + 1), e


@dataclass(frozen=True, eq=False)
class TrialTrajectory:
    """Per-iteration records of one trial, all of length N.

    ``msd[i]`` is ``||w_o - w(i)||^2`` taken before the i-th update and
    ``emse_proxy[i]`` is ``|u(i)(w_o - w(i))|^2``.
    """

    msd: np.ndarray
    emse_proxy: np.ndarray
    mu_trace: np.ndarray
    e_trace: np.ndarray

    def __len__(self):
        return self.msd.shape[0]


def _simulate(model: SystemModel, rule: RuleParams, mu_initial: float, N: int, seed: int,
              bounds=None, stride: int = 1, keep_errors: bool = True, chunk: int = 1 << 16):
    """Shared driver for single trials and ensembles.

    Returns ``(msd, emse, mu, e, diverged_at)`` with the first three
    subsampled every ``stride`` iterations; ``diverged_at`` is -1 for a clean
    run, otherwise the arrays are valid only before that index.
    """
    if N < 1:
        raise ConfigError(f"iteration count must be >= 1, got {N}")
    if stride < 1:
        raise ConfigError(f"record stride must be >= 1, got {stride}")
    lo, hi = (-np.inf, np.inf) if bounds is None else check_bounds(bounds)
    chunk = max(stride, chunk - chunk % stride)
    dtype = complex if model.is_complex else float
    n_rec = -(-N // stride)
    msd = np.full(n_rec, np.nan)
    emse = np.full(n_rec, np.nan)
    mu = np.full(n_rec, np.nan)
    e_all = np.full(N, np.nan, dtype=dtype) if keep_errors else None

    code = type(rule).code
    p = param_vector(rule)
    st = _kernel.packed_state(rule, init_rule(rule, mu_initial))
    w = np.zeros(model.M, dtype=dtype)
    w_o = np.ascontiguousarray(model.w_o, dtype=dtype)
    buf = [np.empty(chunk), np.empty(chunk), np.empty(chunk), np.empty(chunk, dtype=dtype)]

    start = 0
    for block in iter_stream(model, seed, N, chunk=chunk):
        n = len(block)
        m_b, z_b, mu_b, e_b = (b[:n] for b in buf)
        hit = _kernel.run_block(np.ascontiguousarray(block.U, dtype=dtype),
                                np.ascontiguousarray(block.d, dtype=dtype), w_o, w,
                                code, p, st, float(model.sigma_v2), lo, hi, m_b, z_b, mu_b, e_b)
        stop = n if hit < 0 else hit + 1
        sl = slice(start // stride, -(-(start + stop) // stride))
        msd[sl] = m_b[:stop:stride]
        emse[sl] = z_b[:stop:stride]
        mu[sl] = mu_b[:stop:stride]
        if keep_errors:
            e_all[start:start + stop] = e_b[:stop]
        if hit >= 0:
            return msd, emse, mu, e_all, start + hit
        start += n
    return msd, emse, mu, e_all, -1


def run_trial(model: SystemModel, rule: RuleParams, mu_initial: float, N: int, seed: int,
              bounds: Optional[Tuple[float, float]] = None) -> TrialTrajectory:
    """Run one VSS-LMS trial from ``w(0) = 0``.

    Raises
    ------
    DivergenceError
        If ``||w||`` exceeds 1e12; ``iteration`` is the step whose update blew
        up and ``partial`` holds the trajectory recorded up to and including it.
    """
    msd, emse, mu, e, hit = _simulate(model, rule, mu_initial, N, seed, bounds=bounds)
    if hit >= 0:
        partial = TrialTrajectory(msd[:hit + 1], emse[:hit + 1], mu[:hit + 1], e[:hit + 1])
        raise DivergenceError(
            f"trial (seed={seed}) diverged at iteration {hit}: ||w|| > {DIVERGENCE_NORM:g}",
            iteration=hit, partial=partial)
    return TrialTrajectory(msd=msd, emse_proxy=emse, mu_trace=mu, e_trace=e)
