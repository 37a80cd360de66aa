"""Deterministic diffusion bookkeeping at desk scale.

A linear variance schedule drives closed-form forward noising and the
deterministic (sigma = 0) sampler update, which is invertible: walking the
update upward recovers the latent trajectory of a clean input, and walking
back down reproduces it. No model is trained; an oracle denoiser that
returns the stored true noise stands in for a learned noise predictor, which
makes every identity here exactly testable.

Timesteps are 1-based: t runs over [1, T], and alpha_bar[0] = 1 is the
clean-image boundary.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, ScheduleError, ShapeError, SigmaError, TimestepError
from .numeric import Matrix
from .tensorio import save_tensor

__all__ = [
    "NoiseSchedule",
    "LatentState",
    "OracleDenoiser",
    "make_schedule",
    "forward_noise",
    "predict_x0",
    "ddim_step",
    "ddim_invert",
    "ddim_generate",
    "dump_trajectory",
]


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step noise rates: beta[t-1] and alpha[t-1] for t in [1, T];
    alpha_bar[t] is the cumulative retention product with alpha_bar[0] = 1."""

    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray

    @property
    def steps(self) -> int:
        return len(self.beta)

    def bar(self, t: int) -> float:
        """alpha_bar at timestep t, with range checking."""
        if not 0 <= t <= self.steps:
            raise TimestepError(f"timestep {t} outside [0, {self.steps}]")
        return float(self.alpha_bar[t])


def make_schedule(T: int, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    """Linear beta schedule over T steps with cumulative-product alpha_bar."""
    if T < 1:
        raise ConfigError(f"schedule needs T >= 1, got {T}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ConfigError(
            f"betas must satisfy 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
        )
    beta = np.linspace(beta_start, beta_end, T)
    alpha = 1.0 - beta
    alpha_bar = np.concatenate(([1.0], np.cumprod(alpha)))
    return NoiseSchedule(beta=beta, alpha=alpha, alpha_bar=alpha_bar)


@dataclass(frozen=True)
class LatentState:
    """A latent matrix tagged with its timestep."""

    t: int
    x: Matrix


@dataclass(frozen=True)
class OracleDenoiser:
    """Closed-form stand-in for a trained noise predictor.

    Always returns the stored true noise, so the sampler identities hold
    exactly without any training.
    """

    true_noise: Matrix
    true_x0: Matrix

    def __post_init__(self) -> None:
        if (self.true_noise.rows, self.true_noise.cols) != (self.true_x0.rows, self.true_x0.cols):
            raise ShapeError(
                f"oracle noise is {self.true_noise.rows}x{self.true_noise.cols} but "
                f"x0 is {self.true_x0.rows}x{self.true_x0.cols}"
            )

    def predict(self, x_t: Matrix, t: int) -> Matrix:
        if (x_t.rows, x_t.cols) != (self.true_noise.rows, self.true_noise.cols):
            raise ShapeError(
                f"latent is {x_t.rows}x{x_t.cols}, oracle expects "
                f"{self.true_noise.rows}x{self.true_noise.cols}"
            )
        return self.true_noise


def _check_shapes(a: Matrix, b: Matrix, what: str) -> None:
    if (a.rows, a.cols) != (b.rows, b.cols):
        raise ShapeError(f"{what}: shapes differ, {a.rows}x{a.cols} vs {b.rows}x{b.cols}")


def forward_noise(x0: Matrix, t: int, eps: Matrix, sched: NoiseSchedule) -> Matrix:
    """Closed-form jump to timestep t: x_t = sqrt(ab_t) x0 + sqrt(1 - ab_t) eps."""
    _check_shapes(x0, eps, "forward_noise")
    ab = sched.bar(t)
    return Matrix(np.sqrt(ab) * x0.a + np.sqrt(1.0 - ab) * eps.a)


def predict_x0(x_t: Matrix, eps_pred: Matrix, t: int, sched: NoiseSchedule) -> Matrix:
    """Recover the clean estimate: (x_t - sqrt(1 - ab_t) eps) / sqrt(ab_t)."""
    _check_shapes(x_t, eps_pred, "predict_x0")
    ab = sched.bar(t)
    if ab == 0.0:
        raise ScheduleError(f"alpha_bar vanishes at t={t}; clean estimate undefined")
    return Matrix((x_t.a - np.sqrt(1.0 - ab) * eps_pred.a) / np.sqrt(ab))


def ddim_step(
    x_t: Matrix,
    eps_pred: Matrix,
    t: int,
    t_prev: int,
    sigma: float,
    z: Matrix | None,
    sched: NoiseSchedule,
) -> Matrix:
    """One sampler update from t down to t_prev.

    x_prev = sqrt(ab_prev) * x0_hat + sqrt(1 - ab_prev - sigma**2) * eps + sigma * z

    With sigma = 0 the update is deterministic (z must be None) and exactly
    invertible; larger sigma re-injects fresh noise z.
    """
    if not 0 <= t_prev < t <= sched.steps:
        raise TimestepError(f"need 0 <= t_prev < t <= {sched.steps}, got t={t}, t_prev={t_prev}")
    if sigma < 0:
        raise SigmaError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0 and z is not None:
        raise SigmaError("sigma = 0 is deterministic; no noise term z is accepted")
    if sigma > 0 and z is None:
        raise SigmaError(f"sigma = {sigma} requires a noise matrix z")
    ab_prev = sched.bar(t_prev)
    radicand = 1.0 - ab_prev - sigma * sigma
    if radicand < 0:
        raise SigmaError(
            f"sigma = {sigma} too large at t_prev = {t_prev}: 1 - alpha_bar - sigma^2 < 0"
        )
    x0_hat = predict_x0(x_t, eps_pred, t, sched)
    out = np.sqrt(ab_prev) * x0_hat.a + np.sqrt(radicand) * eps_pred.a
    if sigma > 0:
        _check_shapes(x_t, z, "ddim_step noise")
        out = out + sigma * z.a
    return Matrix(out)


def _ladder(T: int, steps: int) -> list[int]:
    # Evenly spaced, strictly increasing timesteps from 0 to T inclusive.
    return [round(i * T / steps) for i in range(steps + 1)]


def ddim_invert(
    x0: Matrix, denoiser: OracleDenoiser, sched: NoiseSchedule, steps: int
) -> list[LatentState]:
    """Walk the deterministic update upward, producing the latent trajectory.

    Returns steps + 1 states from (t=0, x0) to the final latent. Each upward
    jump re-estimates the clean input from the current state and the
    denoiser's noise prediction, then renoises to the next rung.
    """
    if not 0 <= steps <= sched.steps:
        raise ConfigError(f"steps must lie in [0, {sched.steps}], got {steps}")
    trajectory = [LatentState(0, x0)]
    if steps == 0:
        return trajectory
    rungs = _ladder(sched.steps, steps)
    x = x0
    for t_from, t_to in zip(rungs[:-1], rungs[1:]):
        eps = denoiser.predict(x, t_from)
        ab_from = sched.bar(t_from)
        x0_hat = Matrix((x.a - np.sqrt(1.0 - ab_from) * eps.a) / np.sqrt(ab_from))
        ab_to = sched.bar(t_to)
        x = Matrix(np.sqrt(ab_to) * x0_hat.a + np.sqrt(1.0 - ab_to) * eps.a)
        trajectory.append(LatentState(t_to, x))
    return trajectory


def ddim_generate(
    x_start: Matrix, denoiser: OracleDenoiser, sched: NoiseSchedule, steps: int
) -> list[LatentState]:
    """Walk the deterministic update downward from the topmost ladder rung.

    The exact functional inverse of :func:`ddim_invert` over the same rungs;
    returns steps + 1 states ending at t = 0.
    """
    if not 0 <= steps <= sched.steps:
        raise ConfigError(f"steps must lie in [0, {sched.steps}], got {steps}")
    if steps == 0:
        return [LatentState(0, x_start)]
    rungs = _ladder(sched.steps, steps)
    x = x_start
    trajectory = [LatentState(rungs[-1], x)]
    for t_from, t_to in zip(rungs[:0:-1], rungs[-2::-1]):
        eps = denoiser.predict(x, t_from)
        x = ddim_step(x, eps, t_from, t_to, 0.0, None, sched)
        trajectory.append(LatentState(t_to, x))
    return trajectory


def dump_trajectory(
    trajectory: list[LatentState], sched: NoiseSchedule, out_dir: str | Path
) -> Path:
    """Write one tensor dump per state plus a manifest CSV (t, alpha_bar, file)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = out_dir / "trajectory.csv"
    with manifest.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "alpha_bar", "file"])
        for state in trajectory:
            name = f"step_{state.t}.asit"
            save_tensor(out_dir / name, state.x.a)
            writer.writerow([state.t, repr(sched.bar(state.t)), name])
    return manifest
