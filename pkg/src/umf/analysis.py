"""Numerical checks behind the engine's two design arguments.

First: a per-step switch to whichever kernel is locally best never
accumulates more error than the best single kernel (sum of minimums vs
minimum of sums). Second: value estimates of stochastic branches need
rollout counts proportional to the reward variance, while deterministic
branches need exactly one.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .core import Action, MaskedState, NfeLedger, masked_count_at, stable_seed
from .denoiser import Denoiser, ExactPosteriorDenoiser, softmax
from .remask import RatioSchedule
from .transition import full_decode


@dataclass(frozen=True)
class KernelErrorProfile:
    """Expected per-step divergence of each candidate kernel.

    ``errors[t, a]`` is the mean KL divergence of action (column) ``a`` at
    step (row) ``t``; rows are labelled by the mask ratio they were sampled
    at.
    """

    actions: tuple[str, ...]
    ratios: tuple[float, ...]
    errors: np.ndarray

    def __post_init__(self) -> None:
        errors = np.asarray(self.errors, dtype=np.float64)
        object.__setattr__(self, "errors", errors)
        if errors.shape != (len(self.ratios), len(self.actions)):
            raise ValueError(
                f"errors shape {errors.shape} != (steps={len(self.ratios)}, "
                f"actions={len(self.actions)})"
            )
        if not np.all(np.isfinite(errors)) or np.any(errors < 0):
            raise ValueError("errors must be finite and non-negative")

    def switching_policy(self) -> tuple[str, ...]:
        """Per-step argmin action id (ties to the first listed action)."""
        return tuple(self.actions[int(j)] for j in np.argmin(self.errors, axis=1))


def switching_bound_check(profile: KernelErrorProfile) -> tuple[float, float, bool]:
    """Sum of per-step minima vs the best single kernel's total error.

    Returns (lhs, rhs, holds); the inequality lhs <= rhs is an identity, so
    a False is an implementation bug, not a data property.
    """
    lhs = float(np.sum(np.min(profile.errors, axis=1)))
    rhs = float(np.min(np.sum(profile.errors, axis=0)))
    return lhs, rhs, lhs <= rhs


def kl_divergence(q: np.ndarray, p: np.ndarray) -> float:
    """KL(q || p) with the 0 * log 0 = 0 convention."""
    q = np.asarray(q, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    live = q > 0
    return float(np.sum(q[live] * (np.log(q[live]) - np.log(p[live]))))


def measure_kl_profile(
    candidates: Mapping[str, Denoiser],
    exact: ExactPosteriorDenoiser,
    initial_state: MaskedState,
    ratios: Sequence[float],
    states_per_ratio: int = 8,
    temperature: float = 1.0,
    seed: int = 0,
) -> KernelErrorProfile:
    """Mean per-position KL from the exact posterior to each candidate.

    States are sampled from the exact forward masking process: draw a full
    sequence from the support, then mask a uniformly random subset of the
    generation segment sized for the step's ratio. Candidate rows are
    compared as tempered distributions (default temperature 1, the raw model
    distribution); a temperature of zero would make the divergence infinite
    off the support, so it is rejected.
    """
    if temperature <= 0:
        raise ValueError("KL profiles need a positive comparison temperature")
    rng = np.random.default_rng(stable_seed(seed, "kl-profile"))
    names = tuple(candidates)
    n_g = initial_state.n_g
    support_seqs = exact.support_sequences
    support_probs = exact.support_probs
    errors = np.zeros((len(ratios), len(names)))
    for t, ratio in enumerate(ratios):
        n_masked = max(1, masked_count_at(n_g, ratio))
        totals = np.zeros(len(names))
        for _ in range(states_per_ratio):
            seq = support_seqs[rng.choice(len(support_seqs), p=support_probs)]
            masked = rng.choice(n_g, size=n_masked, replace=False)
            gen = list(seq)
            for j in masked:
                gen[j] = initial_state.vocab.mask_id
            state = MaskedState(initial_state.vocab, initial_state.prompt, tuple(gen))
            q_rows = softmax(exact.logits(state), axis=1)
            for a, name in enumerate(names):
                p_rows = softmax(
                    np.asarray(candidates[name].logits(state)) / temperature, axis=1
                )
                kls = [kl_divergence(q_rows[k], p_rows[k]) for k in range(len(q_rows))]
                totals[a] += float(np.mean(kls))
        errors[t] = totals / states_per_ratio
    return KernelErrorProfile(actions=names, ratios=tuple(ratios), errors=errors)


def rollout_variance_study(
    initial_state: MaskedState,
    action: Action,
    m_values: Sequence[int],
    schedule: RatioSchedule,
    registry,
    reward_provider,
    trials: int = 200,
    seed: int = 0,
) -> list[tuple[int, float]]:
    """Standard error of the m-rollout mean reward, estimated empirically.

    Each trial draws m fresh-seeded rollouts and records their mean; the
    standard deviation across trials is the reported standard error. A
    deterministic action yields identical rewards, so its standard error is
    exactly zero at every m.
    """
    if trials < 2:
        raise ValueError("need at least two trials to estimate a standard error")
    rows = []
    for m in m_values:
        if m < 1:
            raise ValueError("rollout counts must be positive")
        means = np.empty(trials)
        for trial in range(trials):
            rewards = np.empty(m)
            for i in range(m):
                rng = None
                if not action.is_deterministic:
                    rng = np.random.default_rng(
                        stable_seed(seed, action.id, action.rng_seed, m, trial, i)
                    )
                ledger = NfeLedger(budget=10**9)
                terminal, _ = full_decode(
                    initial_state, action, schedule, registry, ledger, rng=rng
                )
                rewards[i] = reward_provider.score(terminal)
            means[trial] = rewards.mean()
        rows.append((int(m), float(np.std(means, ddof=1))))
    return rows


def profile_to_csv(profile: KernelErrorProfile, path: str | Path) -> None:
    """Write (step, ratio, action, epsilon) rows."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "ratio", "action", "epsilon"])
        for t, ratio in enumerate(profile.ratios):
            for a, name in enumerate(profile.actions):
                writer.writerow([t, f"{ratio:.10g}", name, f"{profile.errors[t, a]:.10g}"])


def sem_table_to_csv(rows: Sequence[tuple[int, float]], path: str | Path) -> None:
    """Write (m, sem) rows."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["m", "sem"])
        for m, sem in rows:
            writer.writerow([m, f"{sem:.10g}"])
