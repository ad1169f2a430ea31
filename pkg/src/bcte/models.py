"""Single-parameter exponential-family reward models in mean parameterization.

Every public function takes arm *means*; natural parameters only appear inside
the closed-form divergences and the posterior samplers.

Jeffreys posteriors
-------------------
The Jeffreys prior is ``pi(theta) ~ sqrt(I(theta))``.  For the families below it
is conjugate, so the posterior after ``n`` observations with sufficient
statistic ``s`` has a standard form:

* Bernoulli(p): ``I(p) = 1/(p(1-p))`` gives the Beta(1/2, 1/2) prior, hence the
  posterior ``Beta(s + 1/2, n - s + 1/2)`` on the mean itself.
* Gaussian with known variance: ``I`` is constant, so the prior is flat and the
  posterior on the mean is ``Normal(s/n, sigma2/n)``.
* Poisson(lambda): ``I = 1/lambda`` gives ``lambda^(-1/2)``; the posterior is
  ``Gamma(shape=s + 1/2, rate=n)`` on the mean.
* Exponential with rate ``lambda`` (mean ``1/lambda``): ``I = 1/lambda^2`` gives
  ``1/lambda``; the posterior on the rate is ``Gamma(shape=n, rate=s)`` and the
  sampled mean is its reciprocal.
* Pareto with known scale ``c`` and shape ``theta``: ``log(x/c)`` is exponential
  with rate ``theta``, so as above the posterior on the shape is
  ``Gamma(shape=n, rate=sum(log x) - n log c)``.  The implied mean is
  ``c*theta/(theta-1)``; a draw with ``theta <= 1`` has no finite mean and is
  reported as ``math.inf`` (it wins every argmax and is never fed to a
  divergence).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import ClassVar, Sequence

import numpy as np


class DomainError(ValueError):
    """A mean or statistic lies outside the model's domain."""


def _xlogy_ratio(x: float, y: float) -> float:
    """``x * log(x / y)`` with the convention ``0 log 0 = 0``."""
    if x == 0.0:
        return 0.0
    if y == 0.0:
        return math.inf
    return x * math.log(x / y)


@dataclass(frozen=True)
class ModelKind:
    """Base class; subclasses fix the divergence, sampler and posterior."""

    name: ClassVar[str] = ""
    lower: ClassVar[float] = -math.inf
    upper: ClassVar[float] = math.inf

    def domain(self) -> tuple[float, float]:
        return (self.lower, self.upper)

    def in_domain(self, mu: float) -> bool:
        lo, hi = self.domain()
        return lo < mu < hi

    def in_closure(self, mu: float) -> bool:
        lo, hi = self.domain()
        return lo <= mu <= hi and math.isfinite(mu)

    def kl(self, x: float, y: float) -> float:
        """Divergence ``d(x, y)`` without argument checks (hot path)."""
        raise NotImplementedError

    def sample(self, mu: float, rng: np.random.Generator) -> float:
        raise NotImplementedError

    def posterior(self, count: int, total: float, total_log: float,
                  rng: np.random.Generator) -> float:
        raise NotImplementedError

    def params(self) -> dict:
        return {}


@dataclass(frozen=True)
class Bernoulli(ModelKind):
    name: ClassVar[str] = "bernoulli"
    lower: ClassVar[float] = 0.0
    upper: ClassVar[float] = 1.0

    def kl(self, x: float, y: float) -> float:
        if x == y:
            return 0.0
        return _xlogy_ratio(x, y) + _xlogy_ratio(1.0 - x, 1.0 - y)

    def sample(self, mu, rng):
        return 1.0 if rng.random() < mu else 0.0

    def posterior(self, count, total, total_log, rng):
        return float(rng.beta(total + 0.5, count - total + 0.5))


@dataclass(frozen=True)
class Gaussian(ModelKind):
    sigma2: float = 1.0
    name: ClassVar[str] = "gaussian"

    def __post_init__(self):
        if not self.sigma2 > 0:
            raise ValueError(f"sigma2 must be positive, got {self.sigma2}")

    def kl(self, x, y):
        return (x - y) ** 2 / (2.0 * self.sigma2)

    def sample(self, mu, rng):
        return mu + math.sqrt(self.sigma2) * float(rng.standard_normal())

    def posterior(self, count, total, total_log, rng):
        return total / count + math.sqrt(self.sigma2 / count) * float(rng.standard_normal())

    def params(self):
        return {"sigma2": self.sigma2}


@dataclass(frozen=True)
class Poisson(ModelKind):
    name: ClassVar[str] = "poisson"
    lower: ClassVar[float] = 0.0

    def kl(self, x, y):
        if x == y:
            return 0.0
        return _xlogy_ratio(x, y) + y - x

    def sample(self, mu, rng):
        return float(rng.poisson(mu))

    def posterior(self, count, total, total_log, rng):
        return float(rng.gamma(total + 0.5)) / count


@dataclass(frozen=True)
class Exponential(ModelKind):
    name: ClassVar[str] = "exponential"
    lower: ClassVar[float] = 0.0

    def kl(self, x, y):
        if x == y:
            return 0.0
        if x == 0.0 or y == 0.0:
            return math.inf
        r = x / y
        return r - 1.0 - math.log(r)

    def sample(self, mu, rng):
        return mu * float(rng.standard_exponential())

    def posterior(self, count, total, total_log, rng):
        # rate ~ Gamma(count, rate=total); mean = 1/rate
        return total / float(rng.gamma(count))


@dataclass(frozen=True)
class Pareto(ModelKind):
    """Pareto with known scale; the mean ``c*theta/(theta-1)`` indexes the arm."""

    scale: float = 1.0
    name: ClassVar[str] = "pareto"

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError(f"scale must be positive, got {self.scale}")

    def domain(self):
        return (self.scale, math.inf)

    def shape_of(self, mu: float) -> float:
        return mu / (mu - self.scale)

    def kl(self, x, y):
        if x == y:
            return 0.0
        a = x / (x - self.scale)
        b = y / (y - self.scale)
        r = b / a
        return r - 1.0 - math.log(r)

    def sample(self, mu, rng):
        theta = self.shape_of(mu)
        return self.scale * math.exp(float(rng.standard_exponential()) / theta)

    def posterior(self, count, total, total_log, rng):
        rate = total_log - count * math.log(self.scale)
        theta = float(rng.gamma(count)) / rate
        if theta <= 1.0:
            return math.inf
        return self.scale * theta / (theta - 1.0)

    def params(self):
        return {"scale": self.scale}


MODELS = {cls.name: cls for cls in (Bernoulli, Gaussian, Poisson, Exponential, Pareto)}


def make_model(name: str, sigma2: float | None = None, scale: float | None = None) -> ModelKind:
    """Build a model from its lowercase name and optional parameter."""
    try:
        cls = MODELS[name.lower()]
    except KeyError:
        raise ValueError(f"unknown model {name!r}; expected one of {sorted(MODELS)}") from None
    if cls is Gaussian:
        return Gaussian(1.0 if sigma2 is None else float(sigma2))
    if cls is Pareto:
        return Pareto(1.0 if scale is None else float(scale))
    return cls()


@dataclass(frozen=True, init=False)
class Instance:
    """A bandit problem: reward model plus the vector of arm means."""

    model: ModelKind
    means: tuple[float, ...]
    best: int = field(init=False)

    def __init__(self, model: ModelKind, means: Sequence[float]):
        means = tuple(float(m) for m in means)
        if len(means) < 2:
            raise ValueError("an instance needs at least two arms")
        for i, m in enumerate(means):
            if not model.in_domain(m):
                raise DomainError(f"mean {m} of arm {i} outside {model.name} domain {model.domain()}")
        top = max(means)
        if means.count(top) > 1:
            raise ValueError(f"best arm is not unique: {means}")
        object.__setattr__(self, "model", model)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "best", means.index(top))

    @property
    def K(self) -> int:
        return len(self.means)

    @property
    def second(self) -> int:
        """Lowest-index arm attaining the largest suboptimal mean."""
        rest = [m if i != self.best else -math.inf for i, m in enumerate(self.means)]
        return rest.index(max(rest))


@dataclass
class ArmObservations:
    count: int = 0
    sum: float = 0.0
    sum_log: float = 0.0

    def __post_init__(self):
        if self.count < 0:
            raise ValueError("count must be nonnegative")
        if self.count == 0 and (self.sum != 0.0 or self.sum_log != 0.0):
            raise ValueError("empty observations must have zero sums")

    def add(self, x: float) -> None:
        self.count += 1
        self.sum += x
        if x > 0:
            self.sum_log += math.log(x)

    @property
    def mean(self) -> float:
        return self.sum / self.count


def _check(model: ModelKind, mu: float, closure: bool = False) -> None:
    ok = model.in_closure(mu) if closure else model.in_domain(mu)
    if not ok:
        raise DomainError(f"{mu} outside {model.name} mean domain {model.domain()}")


def kl_div(model: ModelKind, mu: float, mu_prime: float) -> float:
    """KL divergence between the arms with means ``mu`` and ``mu_prime``.

    Boundary values of the closure are accepted and evaluated through their
    limits (``0 log 0 = 0``), which may be ``inf``.
    """
    _check(model, mu, closure=True)
    _check(model, mu_prime, closure=True)
    return model.kl(float(mu), float(mu_prime))


def weighted_mean(model: ModelKind | None, mu_a: float, mu_b: float, w_a: float, w_b: float) -> float:
    """Weighted average of two means; the minimiser of the two-arm transport cost."""
    if w_a < 0 or w_b < 0:
        raise ValueError("weights must be nonnegative")
    tot = w_a + w_b
    if tot <= 0:
        raise ValueError("weights sum to zero")
    return (w_a * mu_a + w_b * mu_b) / tot


def sample_reward(model: ModelKind, mu: float, rng: np.random.Generator) -> float:
    _check(model, mu)
    return model.sample(mu, rng)


def posterior_sample(model: ModelKind, obs: ArmObservations, rng: np.random.Generator) -> float:
    """One draw of the arm mean from its Jeffreys posterior."""
    if obs.count < 2:
        raise ValueError(f"posterior needs at least two observations, got {obs.count}")
    if isinstance(model, Bernoulli) and not 0 <= obs.sum <= obs.count:
        raise DomainError("Bernoulli sum must lie in [0, count]")
    return model.posterior(obs.count, obs.sum, obs.sum_log, rng)
