"""Monte-Carlo checks of the identities behind the training objective.

Two checks ground the method numerically:

1. The bias identity for training on paired observations whose clean
   contents differ by a mean shift eps:

       E||f(y) - x||^2 = E||f(y) - z||^2 - sigma_z^2
                         + 2 eps . E(f(y) - x)

   where sigma_z^2 is read as the second moment of z about x,
   E||z - x||^2 (NOT the variance about the shifted mean x + eps; the
   literal "variance" reading fails the identity by exactly eps^2).

2. The ideal-denoiser constraint: with the oracle f*(y) = x and
   f*(g_l(y)) = g_l(x), the expectation of
   f*(g1(y)) - g2(y) - (g1(f*(y)) - g2(f*(y))) is exactly zero.

Every check reports both sides, the Monte-Carlo standard error of
their difference, and passes at the 3-standard-error level. All
accumulation is float64.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imaging import as_image
from .noise import NoiseModel, apply_noise
from .subsampler import SubSampler, apply_subsampler, generate_neighbor_subsampler

__all__ = [
    "Denoiser",
    "identity_denoiser",
    "constant_denoiser",
    "oracle_denoiser",
    "blur_denoiser",
    "TheoremScenario",
    "IdentityReport",
    "verify_theorem1",
    "Eq4Report",
    "verify_constraint",
    "ideal_objective_decomposition",
]


# -- simple analytic denoisers for scenario checks --------------------------


@dataclass(frozen=True)
class Denoiser:
    """Named map from a noisy image to an estimate of the clean one."""

    name: str
    fn: object

    def __call__(self, y: np.ndarray) -> np.ndarray:
        return self.fn(y)


def identity_denoiser() -> Denoiser:
    return Denoiser("identity", lambda y: y)


def constant_denoiser(c: float) -> Denoiser:
    return Denoiser(f"constant({c})", lambda y: np.full_like(y, c))


def oracle_denoiser(x: np.ndarray) -> Denoiser:
    x = np.asarray(x, dtype=np.float64)
    return Denoiser("oracle", lambda y: np.broadcast_to(x, y.shape).copy())


def blur_denoiser(kernel_size: int = 3) -> Denoiser:
    """Box blur with reflect padding; a crude but nontrivial denoiser."""

    def blur(y: np.ndarray) -> np.ndarray:
        # y is (h, w, c) or batched (..., h, w, c)
        k = kernel_size
        p = k // 2
        pad = [(0, 0)] * y.ndim
        pad[-3] = pad[-2] = (p, p)
        yp = np.pad(y, pad, mode="reflect")
        out = np.zeros_like(y, dtype=np.float64)
        h, w = y.shape[-3:-1]
        for dy in range(k):
            for dx in range(k):
                out += yp[..., dy : dy + h, dx : dx + w, :]
        return out / (k * k)

    return Denoiser(f"blur{kernel_size}", blur)


# -- bias identity ----------------------------------------------------------


@dataclass(frozen=True)
class TheoremScenario:
    """Ground truth x, noise models for the two observations, the mean
    shift eps applied to the second one, and the denoiser under test."""

    x: np.ndarray
    noise_y: NoiseModel
    noise_z: NoiseModel
    epsilon: float | np.ndarray
    denoiser: Denoiser
    name: str = ""

    def label(self) -> str:
        return self.name or f"{self.denoiser.name}/{self.noise_y.kind}"


@dataclass
class IdentityReport:
    lhs: float
    rhs: float
    standard_error: float
    trials: int

    @property
    def diff(self) -> float:
        return abs(self.lhs - self.rhs)

    @property
    def passed(self) -> bool:
        return self.diff <= 3.0 * self.standard_error


def _batched_noise(
    x: np.ndarray, model: NoiseModel, rng: np.random.Generator, n: int
) -> np.ndarray:
    """n i.i.d. noisy copies of x, shape (n,) + x.shape, float64.

    Matches apply_noise per copy (one freshly drawn level each), with
    the draws vectorized over the batch.
    """
    shape = (n,) + x.shape
    if model.ranged:
        levels = rng.uniform(model.param1, model.param2, size=n)
    else:
        levels = np.full(n, model.param1)
    levels = levels.reshape((n,) + (1,) * x.ndim)
    if model.gaussian:
        sigma = levels / 255.0
        if np.all(sigma == 0.0):
            return np.broadcast_to(x, shape).astype(np.float64)
        return x + rng.standard_normal(shape) * sigma
    counts = rng.poisson(np.clip(x, 0.0, None) * levels)
    return counts / levels


def verify_theorem1(
    s: TheoremScenario, trials: int, rng: np.random.Generator
) -> IdentityReport:
    """Monte-Carlo estimate of both sides of the bias identity.

    Per trial t: lhs_t = mean((f(y)-x)^2) and
    rhs_t = mean((f(y)-z)^2) - mean((z-x)^2) + 2 mean(eps*(f(y)-x)),
    using the same draws for all terms. The standard error is that of
    the per-trial difference, so the test is exact under the identity.
    Trials are evaluated in vectorized batches.
    """
    if trials < 1:
        raise ValueError("trials must be positive")
    x = as_image(np.atleast_2d(np.asarray(s.x, dtype=np.float64)))
    eps = np.asarray(s.epsilon, dtype=np.float64)
    axes = (-3, -2, -1)
    diffs = np.empty(trials)
    lhs_sum = rhs_sum = 0.0
    chunk = max(1, min(trials, 1 << 20) // x.size)
    done = 0
    while done < trials:
        n = min(chunk, trials - done)
        y = _batched_noise(x, s.noise_y, rng, n)
        z = _batched_noise(x, s.noise_z, rng, n) + eps
        fy = np.asarray(s.denoiser(y), dtype=np.float64)
        lhs_t = np.mean((fy - x) ** 2, axis=axes)
        rhs_t = (
            np.mean((fy - z) ** 2, axis=axes)
            - np.mean((z - x) ** 2, axis=axes)
            + 2.0 * np.mean(eps * (fy - x), axis=axes)
        )
        lhs_sum += lhs_t.sum()
        rhs_sum += rhs_t.sum()
        diffs[done : done + n] = lhs_t - rhs_t
        done += n
    se = float(diffs.std(ddof=1) / np.sqrt(trials)) if trials > 1 else float("inf")
    return IdentityReport(lhs_sum / trials, rhs_sum / trials, se, trials)


# -- ideal-denoiser constraint ---------------------------------------------


@dataclass
class Eq4Report:
    """Per-pixel Monte-Carlo means of the constraint expression and
    their standard errors."""

    mean: np.ndarray
    standard_error: np.ndarray
    trials: int
    max_sigma: float  # worst per-pixel |mean| / se

    @property
    def passed(self) -> bool:
        return self.max_sigma <= 3.0


def verify_constraint(
    x: np.ndarray,
    noise: NoiseModel,
    trials: int,
    rng: np.random.Generator,
    denoiser: Denoiser | None = None,
    k: int = 2,
    sampler: SubSampler | None = None,
) -> Eq4Report:
    """Check that the constraint expression is zero-mean per pixel.

    The default denoiser is the oracle (which satisfies the constraint
    exactly in expectation); pass another denoiser as a negative
    control. The sub-sampler is fixed across trials; the expectation is
    over noise only.
    """
    x = as_image(np.asarray(x, dtype=np.float64))
    h, w = x.shape[:2]
    g = sampler or generate_neighbor_subsampler(h, w, k, rng)
    g1x, g2x = apply_subsampler(g, x)
    oracle = denoiser is None
    if oracle:
        denoiser = oracle_denoiser(x)

    acc = None
    acc2 = None
    for _ in range(trials):
        y = apply_noise(x, noise, rng).astype(np.float64)
        g1y, g2y = apply_subsampler(g, y)
        if oracle:
            f_g1y = g1x  # f*(g_l(y)) = g_l(x) by definition of the oracle
            fy = x
        else:
            f_g1y = np.asarray(denoiser(g1y), dtype=np.float64)
            fy = np.asarray(denoiser(y), dtype=np.float64)
        d1, d2 = apply_subsampler(g, fy)
        expr = f_g1y - g2y - (d1 - d2)
        if acc is None:
            acc = np.zeros_like(expr)
            acc2 = np.zeros_like(expr)
        acc += expr
        acc2 += expr * expr
    mean = acc / trials
    var = np.maximum(acc2 / trials - mean * mean, 0.0) * trials / max(trials - 1, 1)
    se = np.sqrt(var / trials)
    with np.errstate(divide="ignore", invalid="ignore"):
        sigmas = np.where(se > 0, np.abs(mean) / se, np.where(mean == 0, 0.0, np.inf))
    return Eq4Report(mean, se, trials, float(np.max(sigmas)))


def ideal_objective_decomposition(
    x: np.ndarray,
    noise: NoiseModel,
    trials: int,
    rng: np.random.Generator,
    k: int = 2,
) -> dict:
    """Split the unregularized objective, evaluated at the oracle, into
    its noise floor and ground-truth-gap components.

    E||g1(x) - g2(y)||^2 = E||g2(y) - g2(x)||^2 + ||g1(x) - g2(x)||^2
    (means per element). The nonzero gap term is the pressure that
    makes the plain sub-sampled objective over-smooth.
    """
    x = as_image(np.asarray(x, dtype=np.float64))
    h, w = x.shape[:2]
    g = generate_neighbor_subsampler(h, w, k, rng)
    g1x, g2x = apply_subsampler(g, x)
    gap = float(np.mean((g1x - g2x) ** 2))
    obj_sum = floor_sum = 0.0
    for _ in range(trials):
        y = apply_noise(x, noise, rng).astype(np.float64)
        _g1y, g2y = apply_subsampler(g, y)
        obj_sum += np.mean((g1x - g2y) ** 2)
        floor_sum += np.mean((g2y - g2x) ** 2)
    return {
        "objective": obj_sum / trials,
        "noise_floor": floor_sum / trials,
        "gap": gap,
        "mean_abs_gap": float(np.mean(np.abs(g1x - g2x))),
        "trials": trials,
    }
