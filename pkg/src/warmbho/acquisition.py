"""Acquisition functions (EI, GP-UCB) and their maximization over the unit cube.

Both acquisitions are maximized. Errors are minimized, so EI measures the
expected amount by which a point falls *below* the incumbent error and UCB
rewards low predicted error plus ``kappa`` standard deviations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erfc

from . import rng as _rng
from .gp import GpModel, posterior_batch
from .hyperspace import HyperparameterSpace, denormalize, snap_unit
from .sampling import halton

KINDS = ("ei", "ucb")
_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class AcquisitionConfig:
    kind: str = "ei"
    kappa: float = 2.0
    maximizer_budget: int = 2048
    restarts: int = 4
    seed: int = 0
    jitter_candidates: int = 64
    jitter_std: float = 0.05

    def __post_init__(self):
        kind = self.kind.lower()
        if kind not in KINDS:
            raise ValueError(f"unknown acquisition {self.kind!r}; expected one of {KINDS}")
        object.__setattr__(self, "kind", kind)
        if kind == "ucb" and self.kappa < 0:
            raise ValueError("kappa must be non-negative")
        if self.maximizer_budget < 1 or self.restarts < 1:
            raise ValueError("maximizer budget and restarts must be >= 1")


def norm_cdf(z):
    return 0.5 * erfc(-np.asarray(z, dtype=float) * _INV_SQRT2)


def norm_pdf(z):
    z = np.asarray(z, dtype=float)
    return _INV_SQRT2PI * np.exp(-0.5 * z * z)


def expected_improvement(mu, sigma, best):
    """E[max(0, best - f)] for f ~ N(mu, sigma^2); vectorized over mu and sigma."""
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    gap = best - mu
    safe = np.where(sigma > 0, sigma, 1.0)
    with np.errstate(over="ignore"):
        z = gap / safe
        ei = gap * norm_cdf(z) + sigma * norm_pdf(z)
    out = np.where(sigma > 0, ei, np.maximum(gap, 0.0))
    out = np.maximum(out, 0.0)
    return float(out) if out.ndim == 0 else out


def gp_ucb(mu, sigma, kappa):
    out = -np.asarray(mu, dtype=float) + kappa * np.asarray(sigma, dtype=float)
    return float(out) if out.ndim == 0 else out


def acquisition_values(m: GpModel, U: np.ndarray, cfg: AcquisitionConfig, best: float | None = None):
    mu, var = posterior_batch(m, U)
    sigma = np.sqrt(var)
    if cfg.kind == "ei":
        if best is None:
            best = float(np.min(m.targets))
        return expected_improvement(mu, sigma, best)
    return gp_ucb(mu, sigma, cfg.kappa)


@dataclass(frozen=True)
class Proposal:
    """Outcome of one acquisition maximization, all in unit-cube coordinates."""

    u: np.ndarray
    value: float
    candidates: np.ndarray
    candidate_values: np.ndarray
    halton_count: int


def candidate_batch(m: GpModel, space: HyperparameterSpace, cfg: AcquisitionConfig) -> tuple[np.ndarray, int]:
    """Halton candidates plus Gaussian jitter around the incumbent, snapped to the space."""
    d = space.d
    start = 1 + cfg.seed % 10007
    qmc = halton(d, cfg.maximizer_budget, start).points
    gen = _rng.stream(cfg.seed, "acquisition", "jitter")
    incumbent = m.inputs[int(np.argmin(m.targets))]
    jitter = incumbent + cfg.jitter_std * gen.standard_normal((cfg.jitter_candidates, d))
    cands = np.vstack([qmc, np.clip(jitter, 0.0, 1.0)])
    return snap_unit(space, cands), qmc.shape[0]


def _pattern_search(f, u0, f0, space, step=0.1, min_step=1e-4, max_moves=200):
    u, fu = u0.copy(), f0
    d = u.shape[0]
    moves = 0
    while step >= min_step and moves < max_moves:
        probes = np.repeat(u[None, :], 2 * d, axis=0)
        for i in range(d):
            probes[2 * i, i] += step
            probes[2 * i + 1, i] -= step
        probes = snap_unit(space, np.clip(probes, 0.0, 1.0))
        vals = f(probes)
        j = int(np.argmax(vals))
        if vals[j] > fu:
            u, fu = probes[j], float(vals[j])
            moves += 1
        else:
            step *= 0.5
    return u, fu


def propose(m: GpModel, space: HyperparameterSpace, cfg: AcquisitionConfig, best: float | None = None) -> Proposal:
    """Maximize the acquisition: candidate scan, then pattern search from the best few."""
    if best is None:
        best = float(np.min(m.targets))

    def f(U):
        return acquisition_values(m, U, cfg, best)

    cands, n_halton = candidate_batch(m, space, cfg)
    vals = f(cands)
    order = np.argsort(-vals, kind="stable")
    best_u, best_val = cands[order[0]], float(vals[order[0]])
    for idx in order[: cfg.restarts]:
        u, val = _pattern_search(f, cands[idx], float(vals[idx]), space)
        if val > best_val:
            best_u, best_val = u, val
    return Proposal(best_u, best_val, cands, vals, n_halton)


def maximize_acquisition(m: GpModel, space: HyperparameterSpace, cfg: AcquisitionConfig):
    """Return the raw hyperparameter vector that maximizes the acquisition."""
    p = propose(m, space, cfg)
    return denormalize(space, p.u)
