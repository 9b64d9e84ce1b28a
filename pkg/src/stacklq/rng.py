"""Reproducible Brownian increments from counter-based Philox streams.

Each (component, path) pair gets its own stream: component seeds are spawned
from the master seed with SeedSequence, and path index i uses the stream
jumped i times.  Draws therefore depend only on (seed, component, path_index,
step), never on how paths are batched across chunks or threads, and the three
Brownian components can be re-seeded independently (the filter measurability
checks rely on this).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def component_seeds(seed: int) -> tuple:
    """Three independent child seeds, one per Brownian component."""
    children = np.random.SeedSequence(seed).spawn(3)
    return tuple(int(c.generate_state(1, np.uint64)[0]) for c in children)


def _component_normals(comp_seed: int, path_indices, n_steps: int) -> np.ndarray:
    out = np.empty((len(path_indices), n_steps))
    base = np.random.Philox(key=comp_seed)
    for row, idx in enumerate(path_indices):
        gen = np.random.Generator(base.jumped(int(idx)))
        out[row] = gen.standard_normal(n_steps)
    return out


@dataclass(frozen=True)
class NoisePlan:
    """Recipe for the increment array of a batch of paths.

    seeds: per-component Philox keys; dts: step sizes on the solver grid.
    """

    seeds: tuple
    dts: np.ndarray

    @staticmethod
    def from_seed(seed: int, dts) -> "NoisePlan":
        return NoisePlan(component_seeds(seed), np.asarray(dts, dtype=float))

    def increments(self, path_indices) -> np.ndarray:
        """Gaussian N(0, h_k) increments, shape (paths, steps, 3)."""
        idx = np.asarray(path_indices, dtype=int)
        k = self.dts.shape[0]
        out = np.empty((idx.shape[0], k, 3))
        scale = np.sqrt(self.dts)
        for comp in range(3):
            out[:, :, comp] = _component_normals(self.seeds[comp], idx, k) * scale
        return out

    def with_component_seed(self, comp: int, new_seed: int) -> "NoisePlan":
        """Same plan with one Brownian component re-seeded."""
        seeds = list(self.seeds)
        seeds[comp] = component_seeds(new_seed)[comp]
        return NoisePlan(tuple(seeds), self.dts)


@dataclass(frozen=True)
class NoisePath:
    """One path's increments plus the provenance needed to regenerate them."""

    seed: int
    path_index: int
    increments: np.ndarray  # (steps, 3)


def noise_paths(seed: int, n_paths: int, dts) -> list:
    plan = NoisePlan.from_seed(seed, dts)
    block = plan.increments(np.arange(n_paths))
    return [NoisePath(seed, i, block[i]) for i in range(n_paths)]
