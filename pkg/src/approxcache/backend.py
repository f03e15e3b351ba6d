"""Closed-form synthetic denoising model.

Every denoising step pulls the latent toward a conditioning target ``g`` by a
constant factor: ``x <- g + decay * (x - g)``. After ``K`` steps from initial
noise ``z`` the state is ``g + decay**K * (z - g)``, so every quantity the
cache cares about (reconditioning residual, quality, the similarity needed to
keep quality above a tolerance) has an exact expression.

The initial noise is drawn as a seeded unit vector orthogonal to the target of
the prompt being generated. That makes scratch quality independent of the
seed and lets :func:`SyntheticBackend.analytic_min_similarity` bound the
reconditioning residual over every possible noise direction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from .domain import DEFAULT_DIM, DEFAULT_KS, LatentState, normalize

# Sentinel similarity threshold for step counts that can never be reused.
UNREACHABLE = 1.0 + 1e-9


@dataclass(frozen=True)
class BackendConfig:
    n_steps: int = 50
    decay: float = 0.975
    freeze_step: int = 51
    noise_seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.decay < 1.0:
            raise ValueError(f"decay must lie in (0, 1), got {self.decay}")
        if self.n_steps < 1:
            raise ValueError(f"n_steps must be >= 1, got {self.n_steps}")
        if self.freeze_step < 1:
            raise ValueError(f"freeze_step must be >= 1, got {self.freeze_step}")


@dataclass(frozen=True)
class GenerationResult:
    final: LatentState
    intermediates: dict[int, LatentState] = field(default_factory=dict)
    steps_executed: int = 0


class SyntheticBackend:
    def __init__(
        self,
        config: Optional[BackendConfig] = None,
        ks: tuple[int, ...] = DEFAULT_KS,
        embed_dim: int = DEFAULT_DIM,
        latent_dim: Optional[int] = None,
    ):
        self.config = config or BackendConfig()
        self.ks = tuple(sorted(ks))
        if any(k <= 0 or k > self.config.n_steps for k in self.ks):
            raise ValueError(f"step set {self.ks} must lie within 1..{self.config.n_steps}")
        self.embed_dim = embed_dim
        self.latent_dim = latent_dim or embed_dim
        self._projection = None
        if self.latent_dim != self.embed_dim:
            rng = np.random.default_rng([self.config.noise_seed, 0x5EED])
            self._projection = rng.standard_normal((self.latent_dim, self.embed_dim))

    @property
    def n_steps(self) -> int:
        return self.config.n_steps

    def target(self, e) -> np.ndarray:
        e = np.asarray(e, dtype=np.float64)
        if e.shape != (self.embed_dim,):
            raise ValueError(f"expected embedding of dim {self.embed_dim}, got {e.shape}")
        if self._projection is None:
            return normalize(e)
        return normalize(self._projection @ e)

    def initial_noise(self, g, seed: int) -> np.ndarray:
        rng = np.random.default_rng(seed)
        while True:
            v = rng.standard_normal(self.latent_dim)
            v = v - np.dot(v, g) * g
            # a draw parallel to the target has no orthogonal part; draw again
            if np.linalg.norm(v) > 1e-6:
                return normalize(v)

    def _run(self, x, g, steps, capture=(), offset=0):
        beta = self.config.decay
        captured = {}
        for j in range(steps):
            x = g + beta * (x - g)
            if offset + j + 1 in capture:
                captured[offset + j + 1] = x
        return x, captured

    def generate(self, e, seed: Optional[int] = None, source: str = "") -> GenerationResult:
        seed = self.config.noise_seed if seed is None else seed
        g = self.target(e)
        z = self.initial_noise(g, seed)
        final, captured = self._run(z, g, self.n_steps, capture=set(self.ks))
        intermediates = {
            k: LatentState(v, k, source, condition=g) for k, v in sorted(captured.items())
        }
        return GenerationResult(
            final=LatentState(final, 0, source, condition=g),
            intermediates=intermediates,
            steps_executed=self.n_steps,
        )

    def recondition(self, e_new, state: LatentState, k: int) -> GenerationResult:
        if k not in self.ks:
            raise ValueError(f"K={k} is not one of the cached step counts {self.ks}")
        if k > self.n_steps:
            raise ValueError(f"K={k} exceeds n_steps={self.n_steps}")
        if state.k != k:
            raise ValueError(f"state was captured at K={state.k}, not K={k}")
        if k >= self.config.freeze_step:
            # concepts are frozen: the remaining steps keep following the source condition
            if state.condition is None:
                raise ValueError("frozen reconditioning needs the state's source condition")
            g = state.condition
        else:
            g = self.target(e_new)
        final, _ = self._run(np.asarray(state.values), g, self.n_steps - k)
        return GenerationResult(
            final=LatentState(final, 0, state.source_prompt, condition=g),
            steps_executed=self.n_steps - k,
        )

    @staticmethod
    def quality(final, g) -> float:
        final = np.asarray(getattr(final, "values", final), dtype=np.float64)
        g = np.asarray(g, dtype=np.float64)
        if final.shape != g.shape:
            raise ValueError(f"dimension mismatch: {final.shape} vs {g.shape}")
        return 1.0 - float(np.linalg.norm(final - g)) / 2.0

    # -- analytics ---------------------------------------------------------

    def scratch_quality(self) -> float:
        """Quality of any scratch generation: the noise residual has norm decay**N * sqrt(2)."""
        return 1.0 - self.config.decay**self.n_steps * math.sqrt(2.0) / 2.0

    def worst_case_quality(self, s: float, k: int) -> float:
        """Lowest reconditioning quality over all noise directions at cosine similarity ``s``.

        The residual is ``B (g_c - g_p) + a (z_c - g_c)`` with ``a = decay**N`` and
        ``B = decay**(N-K)``; its squared norm is
        ``2(1-s)(B^2 - aB) + 2a^2 - 2aB <z_c, g_p>`` and ``<z_c, g_p>`` ranges
        over ``[-sqrt(1-s^2), sqrt(1-s^2)]``.
        """
        s = min(1.0, max(-1.0, s))
        a = self.config.decay**self.n_steps
        b = self.config.decay ** (self.n_steps - k)
        r2 = 2 * (1 - s) * (b * b - a * b) + 2 * a * a + 2 * a * b * math.sqrt(1 - s * s)
        return 1.0 - math.sqrt(max(r2, 0.0)) / 2.0

    def analytic_min_similarity(self, k: int, alpha: float) -> float:
        """Similarity above which reconditioning at ``k`` always beats ``alpha`` x scratch quality.

        Returns -1.0 when every similarity qualifies and :data:`UNREACHABLE` when
        the state is frozen. The deficit ``alpha*Q0 - Q(s)`` is concave-like in
        ``s`` with a single peak, so the threshold is the last crossing above it.
        """
        if not 0.0 <= k <= self.n_steps:
            raise ValueError(f"K={k} outside 0..{self.n_steps}")
        if k >= self.config.freeze_step:
            return UNREACHABLE
        floor = alpha * self.scratch_quality()

        def deficit(s):
            return floor - self.worst_case_quality(s, k)

        peak = minimize_scalar(lambda s: -deficit(s), bounds=(-1.0, 1.0), method="bounded",
                               options={"xatol": 1e-12})
        s_peak = float(peak.x)
        if deficit(-1.0) >= deficit(s_peak):
            s_peak = -1.0
        if deficit(s_peak) < 0.0:
            return -1.0
        if deficit(1.0) >= 0.0:
            return UNREACHABLE
        return float(brentq(deficit, s_peak, 1.0, xtol=1e-14))
