"""Equi-energy tempering primitives: ladder, merge proposal, acceptance.

Higher-temperature chains are run to completion and stored; chains at the
next temperature periodically propose jumping to a stored state of nearly
equal unnormalized posterior density, accepted by a Metropolis ratio.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import chainstore
from .errors import ConfigError


@dataclass
class TemperatureLadder:
    temps: tuple = (1.0,)
    merge_period: int = 10
    anneal_period: int = 50
    epsilon: float = 0.5

    def __post_init__(self):
        temps = tuple(float(t) for t in self.temps)
        if not temps or temps[-1] != 1.0:
            raise ConfigError("temperature ladder must end at 1.0")
        if any(a <= b for a, b in zip(temps, temps[1:])):
            raise ConfigError("temperatures must be strictly descending")
        if self.merge_period < 1:
            raise ConfigError("merge period must be >= 1")
        self.temps = temps

    def __len__(self):
        return len(self.temps)


def tempered_log_posterior(log_p, temperature):
    """Log density raised to 1/T; all accept/reject logic at T uses this."""
    if temperature <= 0:
        raise ConfigError("temperature must be positive")
    return log_p / temperature


@dataclass
class MergeSource:
    """Sorted energies of completed chains at the preceding temperature."""

    sorted_values: np.ndarray
    positions: np.ndarray       # (chain id, local record position)

    @classmethod
    def from_energies(cls, energies_per_chain):
        vals, pos = [], []
        for cid, v in enumerate(energies_per_chain):
            vals.append(v)
            pos.append(np.stack([np.full(len(v), cid, dtype=np.int64),
                                 np.arange(len(v), dtype=np.int64)], axis=1))
        vals = np.concatenate(vals) if vals else np.zeros(0)
        pos = np.concatenate(pos) if pos else np.zeros((0, 2), dtype=np.int64)
        order = np.argsort(vals, kind="stable")
        return cls(sorted_values=vals[order], positions=pos[order])

    @classmethod
    def from_files(cls, energy_paths):
        energies = []
        for path in energy_paths:
            _, vals = chainstore.read_energy(path)
            energies.append(vals)
        return cls.from_energies(energies)

    def window(self, target, eps):
        lo = np.searchsorted(self.sorted_values, target - eps, side="left")
        hi = np.searchsorted(self.sorted_values, target + eps, side="right")
        sel = np.abs(self.sorted_values[lo:hi] - target) < eps
        return self.positions[lo:hi][sel], self.sorted_values[lo:hi][sel]


class EpsilonLadder:
    """Energy window that doubles whenever it comes up empty, capped."""

    def __init__(self, epsilon0, cap_factor=64):
        self.epsilon0 = float(epsilon0)
        self.epsilon = float(epsilon0)
        self.cap = cap_factor * float(epsilon0)

    def widen(self):
        self.epsilon = min(2.0 * self.epsilon, self.cap)


def propose_merge(current_log_p, source, eps_ladder, rng):
    """Uniform pick among stored states in the energy window, or None.

    An empty window returns None and doubles the window for the next
    attempt (capped at 64 x epsilon0).
    """
    candidates, values = source.window(current_log_p, eps_ladder.epsilon)
    if len(candidates) == 0:
        eps_ladder.widen()
        return None
    k = int(rng.integers(len(candidates)))
    return tuple(candidates[k]), float(values[k])


def accept_merge(candidate_log_p, current_log_p, rng, temperature=1.0):
    """Metropolis merge decision on the (tempered) density ratio."""
    if math.isinf(candidate_log_p) and candidate_log_p < 0:
        return False
    diff = tempered_log_posterior(candidate_log_p, temperature) \
        - tempered_log_posterior(current_log_p, temperature)
    if diff >= 0:
        return True
    return math.log(rng.random()) <= diff
