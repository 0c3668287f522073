"""SDE catalogue: dX = f(X) dt + g(X) dW.

Every coefficient function is vectorized over leading axes: ``drift`` maps
(..., m) -> (..., m), ``volatility`` maps (..., m) -> (..., m, d) and the
optional ``drift_jacobian`` maps (..., m) -> (..., m, m).

Each catalogue constructor declares growth constants for the sampling
validators, with a one-line derivation next to them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .stepcontrol import (
    GrowthParams,
    Mode,
    RatioVariant,
    TimestepPolicy,
    constant_policy,
    norm,
    ratio_policy,
    scalar_power_policy,
    sumsq,
)

Array = np.ndarray


class ModelError(ValueError):
    """Invalid model parameters or unknown model name."""


class DriftDomainError(ValueError):
    """Drift evaluated outside the model's domain (e.g. FENE at |x| >= 1)."""


@dataclass(frozen=True)
class SdeModel:
    name: str
    state_dim: int
    noise_dim: int
    drift: Callable[[Array], Array]
    volatility: Callable[[Array], Array]
    initial_state: Array
    policy: TimestepPolicy
    horizon: float = 1.0
    growth: Optional[GrowthParams] = None
    clamp_radius: Optional[float] = None
    domain_radius: Optional[float] = None
    drift_jacobian: Optional[Callable[[Array], Array]] = None
    exact_solution: Optional[Callable[[Array, Array], Array]] = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        x0 = np.atleast_1d(np.asarray(self.initial_state, dtype=np.float64))
        object.__setattr__(self, "initial_state", x0)
        if x0.shape != (self.state_dim,):
            raise ModelError(f"{self.name}: initial state has shape {x0.shape}, expected ({self.state_dim},)")
        g = np.asarray(self.volatility(x0))
        if g.shape != (self.state_dim, self.noise_dim):
            raise ModelError(f"{self.name}: volatility shape {g.shape} != ({self.state_dim}, {self.noise_dim})")

    def recommended_policy(self, delta: float = 1.0) -> TimestepPolicy:
        return self.policy.with_delta(delta)

    def jacobian(self, x: Array, eps: float = 1e-7) -> Array:
        """Drift Jacobian; central differences when no analytic form is given."""
        x = np.asarray(x, dtype=np.float64)
        if self.drift_jacobian is not None:
            return self.drift_jacobian(x)
        m = self.state_dim
        jac = np.empty(x.shape + (m,))
        for j in range(m):
            step = eps * np.maximum(1.0, np.abs(x[..., j]))
            e = np.zeros(m)
            e[j] = 1.0
            xp = x + step[..., None] * e
            xm = x - step[..., None] * e
            jac[..., :, j] = (self.drift(xp) - self.drift(xm)) / (2.0 * step[..., None])
        return jac


def _scalar(fn):
    """Lift an elementwise scalar function to (..., 1) -> (..., 1)."""
    return lambda x: fn(np.asarray(x, dtype=np.float64))


def _diag_vol(fn):
    return lambda x: fn(np.asarray(x, dtype=np.float64))[..., None]


def _identity_vol(m: int):
    eye = np.eye(m)
    return lambda x: np.broadcast_to(eye, np.shape(x)[:-1] + (m, m))


def _check_positive(name, **vals):
    for k, v in vals.items():
        if not (v > 0 and math.isfinite(v)):
            raise ModelError(f"{name}: {k} must be positive, got {v}")


def _check_non_negative(name, **vals):
    # sigma = 0 is the deterministic limit and stays allowed
    for k, v in vals.items():
        if not (v >= 0 and math.isfinite(v)):
            raise ModelError(f"{name}: {k} must be >= 0, got {v}")


def _check_horizon(name, T):
    _check_positive(name, T=T)
    return float(T)


def ginzburg_landau(eta: float = 0.0, lam: float = 1.0, sigma: float = 1.0, T: float = 1.0,
                    x0: float = 1.0) -> SdeModel:
    if not (eta >= 0 and math.isfinite(eta)):
        raise ModelError(f"ginzburg_landau: eta must be >= 0, got {eta}")
    _check_positive("ginzburg_landau", lam=lam)
    _check_non_negative("ginzburg_landau", sigma=sigma)
    T = _check_horizon("ginzburg_landau", T)
    a = eta + 0.5 * sigma**2
    # h = T region: <x,f> + T f^2/2 <= (a + T a^2 + 1/T) x^2 since lam x^2 < 1/T;
    # h = 1/(lam x^2) region: LHS = -lam x^4/2 + a^2/(2 lam); |g|^2 = sigma^2 x^2.
    growth = GrowthParams(alpha=a + T * a * a + 1.0 / T + sigma**2, beta=a * a / (2 * lam),
                          xi=lam, zeta=1.0 / T, q=2.0)
    return SdeModel(
        "ginzburg_landau", 1, 1,
        drift=_scalar(lambda x: a * x - lam * x**3),
        volatility=_diag_vol(lambda x: sigma * x),
        initial_state=[x0], policy=scalar_power_policy(lam, 3.0, T), horizon=T, growth=growth,
        drift_jacobian=_diag_vol(lambda x: a - 3.0 * lam * x**2),
        params=dict(eta=eta, lam=lam, sigma=sigma),
    )


def verhulst(eta: float = 1.0, lam: float = 1.0, sigma: float = 1.0, T: float = 1.0,
             x0: float = 1.0) -> SdeModel:
    _check_positive("verhulst", eta=eta, lam=lam)
    _check_non_negative("verhulst", sigma=sigma)
    T = _check_horizon("verhulst", T)
    a = eta + 0.5 * sigma**2
    # h = T region as Ginzburg-Landau; h = 1/(lam|x|) region:
    # LHS = -lam|x|^3/2 + a^2|x|/(2 lam) <= a^2 (x^2 + 1)/(4 lam).
    growth = GrowthParams(alpha=a + T * a * a + 1.0 / T + a * a / (4 * lam) + sigma**2,
                          beta=a * a / (4 * lam), xi=lam, zeta=1.0 / T, q=1.0)
    return SdeModel(
        "verhulst", 1, 1,
        drift=_scalar(lambda x: a * x - lam * np.abs(x) * x),
        volatility=_diag_vol(lambda x: sigma * x),
        initial_state=[x0], policy=scalar_power_policy(lam, 2.0, T), horizon=T, growth=growth,
        drift_jacobian=_diag_vol(lambda x: a - 2.0 * lam * np.abs(x)),
        params=dict(eta=eta, lam=lam, sigma=sigma),
    )


def _max_ratio_policy(drift, T: float, name: str) -> TimestepPolicy:
    # max(1,|x|) / max(1,|f(x)|)
    def base_h(x):
        return np.maximum(1.0, norm(x)) / np.maximum(1.0, norm(drift(x)))

    return TimestepPolicy(base_h, 1.0, T, Mode.SCALE_ALL, name=name)


def testcase1(T: float = 1.0) -> SdeModel:
    """dX = -X^5 dt + X dW, X0 = 1."""
    T = _check_horizon("testcase1", T)
    drift = _scalar(lambda x: -x**5)
    # |x|>=1: -x^6 + x^6/2 <= 0; |x|<1: -x^6 + x^10/2 <= 0; |g|^2 = x^2.
    growth = GrowthParams(alpha=1.0, beta=0.0, xi=1.0, zeta=1.0, q=4.0)
    return SdeModel(
        "testcase1", 1, 1, drift=drift, volatility=_diag_vol(lambda x: x),
        initial_state=[1.0], policy=_max_ratio_policy(drift, T, "max_ratio"), horizon=T, growth=growth,
        drift_jacobian=_diag_vol(lambda x: -5.0 * x**4),
    )


def testcase2(T: float = 1.0) -> SdeModel:
    """dX = (X - X^3) dt + X dW, X0 = 1."""
    T = _check_horizon("testcase2", T)
    drift = _scalar(lambda x: x - x**3)
    # |x|,|f|>=1: LHS = (x^2 - x^4)/2 <= 0; |x|<1: LHS <= 3x^2/2;
    # |x|>=1,|f|<1 (|x|<1.53): LHS <= |x| f^2/2 < 0.77 <= 3x^2/2.
    growth = GrowthParams(alpha=1.5, beta=0.0, xi=1.0, zeta=1.0, q=2.0)
    return SdeModel(
        "testcase2", 1, 1, drift=drift, volatility=_diag_vol(lambda x: x),
        initial_state=[1.0], policy=_max_ratio_policy(drift, T, "max_ratio"), horizon=T, growth=growth,
        drift_jacobian=_diag_vol(lambda x: 1.0 - 3.0 * x**2),
    )


def _double_well_field(x):
    x = np.asarray(x, dtype=np.float64)
    return (sumsq(x)[..., None] - 1.0) * x


def _double_well_hessian(x):
    x = np.asarray(x, dtype=np.float64)
    m = x.shape[-1]
    r2 = sumsq(x)[..., None, None]
    return (r2 - 1.0) * np.eye(m) + 2.0 * x[..., :, None] * x[..., None, :]


def langevin(grad_V: Callable[[Array], Array], m: int, T: float = 1.0, hess_V=None,
             x0=None, growth: Optional[GrowthParams] = None, policy: Optional[TimestepPolicy] = None,
             name: str = "langevin") -> SdeModel:
    """dX = -grad V(X) dt + dW with m = d and identity volatility.

    Without an explicit ``policy`` the NORM ratio timestep is used.
    """
    if int(m) < 1:
        raise ModelError("langevin: m must be a positive integer")
    m = int(m)
    T = _check_horizon(name, T)

    def drift(x):
        return -np.asarray(grad_V(np.asarray(x, dtype=np.float64)), dtype=np.float64)

    jac = (lambda x: -np.asarray(hess_V(np.asarray(x, dtype=np.float64)))) if hess_V is not None else None
    return SdeModel(
        name, m, m, drift=drift, volatility=_identity_vol(m),
        initial_state=np.zeros(m) if x0 is None else x0,
        policy=policy if policy is not None else ratio_policy(drift, 1.0, T, RatioVariant.NORM),
        horizon=T, growth=growth, drift_jacobian=jac,
    )


def double_well(m: int = 1, T: float = 1.0, x0=None, name: str = "langevin") -> SdeModel:
    """Langevin with V(x) = |x|^4/4 - |x|^2/2, i.e. drift (1 - |x|^2) x."""
    # NORM policy: r>1 gives -r^2 (r^2-1)/2 <= 0; r<1 gives h = T, LHS <= (1 + T/2) r^2;
    # |g|^2_F = m.
    growth = GrowthParams(alpha=1.0 + 0.5 * T, beta=float(m), xi=1.0, zeta=1.0 / T, q=2.0)
    return langevin(_double_well_field, m, T, hess_V=_double_well_hessian, x0=x0,
                    growth=growth, name=name)


def testcase3(T: float = 1.0) -> SdeModel:
    """10-d dX = (X - |X|^2 X) dt + dW, X0 = 0 (Langevin double well)."""
    return double_well(10, T, name="testcase3")


def fene(T: float = 1.0, clamp_radius: float = 1.0 - 1e-10) -> SdeModel:
    """3-d FENE dumbbell dX = -X/(1 - |X|^2) dt + dW on the open unit ball."""
    T = _check_horizon("fene", T)

    def _denominator(x):
        x = np.asarray(x, dtype=np.float64)
        r2 = sumsq(x)[..., None]
        if np.any(r2 >= 1.0):
            raise DriftDomainError("FENE drift evaluated at |x| >= 1")
        return x, 1.0 - r2

    def drift(x):
        x, den = _denominator(x)
        return -x / den

    def jacobian(x):
        x, den = _denominator(x)
        d = den[..., None]
        return -np.eye(3) / d - 2.0 * x[..., :, None] * x[..., None, :] / (d * d)

    def base_h(x):
        return 0.25 * (1.0 - sumsq(x))

    # <x,f> = -r^2/(1-r^2), h|f|^2/2 = r^2 / (8 (1-r^2)): LHS <= 0; |g|^2_F = 3.
    # Clamped states have h >= (1 - r_max^2)/4, which zeta encodes. Near r_max, 1 - |x|^2
    # cancels to ~1e-10 with ~1e-16 absolute rounding, hence the 1e-5 relative slack.
    r_max = float(clamp_radius)
    growth = GrowthParams(alpha=0.0, beta=3.0, xi=1.0,
                          zeta=4.0 * (1.0 + 1e-5) / ((1.0 - r_max) * (1.0 + r_max)))
    return SdeModel(
        "fene", 3, 3, drift=drift, volatility=_identity_vol(3), initial_state=np.zeros(3),
        policy=TimestepPolicy(base_h, 1.0, T, Mode.SCALE_ALL, name="fene_quarter"),
        horizon=T, growth=growth, clamp_radius=float(clamp_radius), domain_radius=1.0,
        drift_jacobian=jacobian,
    )


def van_der_pol(alpha: float = 1.0, mu: float = 1.0, damping: float = 1.0, beta: float = 1.0,
                T: float = 1.0, gamma: float = 1.0, x0=(1.0, 0.0)) -> SdeModel:
    """Stochastic van der Pol oscillator; ``damping`` is the restoring coefficient."""
    _check_positive("van_der_pol", alpha=alpha, mu=mu, damping=damping, beta=beta)
    T = _check_horizon("van_der_pol", T)

    def drift(x):
        x = np.asarray(x, dtype=np.float64)
        x1, x2 = x[..., 0], x[..., 1]
        return np.stack([x2, alpha * (mu - x1 * x1) * x2 - damping * x1], axis=-1)

    def volatility(x):
        g = np.zeros(np.shape(x)[:-1] + (2, 1))
        g[..., 1, 0] = beta
        return g

    def jacobian(x):
        x = np.asarray(x, dtype=np.float64)
        x1, x2 = x[..., 0], x[..., 1]
        j = np.zeros(x.shape + (2,))
        j[..., 0, 1] = 1.0
        j[..., 1, 0] = -2.0 * alpha * x1 * x2 - damping
        j[..., 1, 1] = alpha * (mu - x1 * x1)
        return j

    # <x,f> <= (alpha mu + |1-damping|/2) |x|^2; SQUARED policy adds gamma |x|^2/2; |g|^2 = beta^2.
    # |f|^2 <= (1 + 2(alpha mu + damping)^2) r^2 + 2 alpha^2 r^6 gives the lower bound.
    growth = GrowthParams(alpha=alpha * mu + 0.5 * abs(1.0 - damping) + 0.5 * gamma, beta=beta**2,
                          xi=2 * alpha**2 / gamma, q=4.0,
                          zeta=(1 + 2 * (alpha * mu + damping) ** 2) / gamma + 1.0 / T)
    return SdeModel(
        "van_der_pol", 2, 1, drift=drift, volatility=volatility, initial_state=x0,
        policy=ratio_policy(drift, gamma, T, RatioVariant.SQUARED), horizon=T, growth=growth,
        drift_jacobian=jacobian,
        params=dict(alpha=alpha, mu=mu, damping=damping, beta=beta, gamma=gamma),
    )


def lorenz(alpha1: float = 10.0, alpha2: float = 28.0, alpha3: float = 8.0 / 3.0,
           beta1: float = 0.3, beta2: float = 0.3, beta3: float = 0.3,
           T: float = 1.0, gamma: float = 1.0, x0=(1.0, 1.0, 1.0)) -> SdeModel:
    _check_positive("lorenz", alpha1=alpha1, alpha2=alpha2, alpha3=alpha3,
                    beta1=beta1, beta2=beta2, beta3=beta3)
    T = _check_horizon("lorenz", T)
    betas = np.array([beta1, beta2, beta3])

    def drift(x):
        x = np.asarray(x, dtype=np.float64)
        x1, x2, x3 = x[..., 0], x[..., 1], x[..., 2]
        return np.stack([alpha1 * (x2 - x1), alpha2 * x1 - x2 - x1 * x3, x1 * x2 - alpha3 * x3], axis=-1)

    def volatility(x):
        x = np.asarray(x, dtype=np.float64)
        return (betas * x)[..., :, None] * np.eye(3)

    def jacobian(x):
        x = np.asarray(x, dtype=np.float64)
        x1, x2, x3 = x[..., 0], x[..., 1], x[..., 2]
        j = np.zeros(x.shape + (3,))
        j[..., 0, 0], j[..., 0, 1] = -alpha1, alpha1
        j[..., 1, 0], j[..., 1, 1], j[..., 1, 2] = alpha2 - x3, -1.0, -x1
        j[..., 2, 0], j[..., 2, 1], j[..., 2, 2] = x2, x1, -alpha3
        return j

    # <x,f> = -a1 x1^2 + (a1+a2) x1 x2 - x2^2 - a3 x3^2 <= (a1+a2)|x|^2/2; SQUARED adds gamma|x|^2/2.
    # |f|^2 <= A r^2 + r^4/2 with A = 2 a1^2 + 2 (a2+1)^2 + 2 a3^2.
    big_a = 2 * alpha1**2 + 2 * (alpha2 + 1) ** 2 + 2 * alpha3**2
    growth = GrowthParams(alpha=0.5 * (alpha1 + alpha2) + 0.5 * gamma + float(np.max(betas**2)), beta=0.0,
                          xi=1.0 / (2 * gamma), q=2.0, zeta=big_a / gamma + 1.0 / T)
    return SdeModel(
        "lorenz", 3, 3, drift=drift, volatility=volatility, initial_state=x0,
        policy=ratio_policy(drift, gamma, T, RatioVariant.SQUARED), horizon=T, growth=growth,
        drift_jacobian=jacobian,
        params=dict(alpha1=alpha1, alpha2=alpha2, alpha3=alpha3, beta1=beta1, beta2=beta2,
                    beta3=beta3, gamma=gamma),
    )


def cubic_drift(x0: float = 2.0, T: float = 1.0) -> SdeModel:
    """dX = -X^3 dt + dW, the classic case where uniform EM moments blow up."""
    T = _check_horizon("cubic", T)
    # h = min(T, x^-2): x^-2 <= T gives -x^4/2; otherwise T x^2 < 1 and -x^4 + T x^6/2 <= 0; |g|^2 = 1.
    growth = GrowthParams(alpha=0.0, beta=1.0, xi=1.0, zeta=1.0 / T, q=2.0)
    return SdeModel(
        "cubic", 1, 1, drift=_scalar(lambda x: -x**3), volatility=lambda x: np.ones(np.shape(x) + (1,)),
        initial_state=[x0], policy=scalar_power_policy(1.0, 3.0, T), horizon=T, growth=growth,
        drift_jacobian=_diag_vol(lambda x: -3.0 * x**2),
    )


def geometric_brownian(mu: float = 0.05, sigma: float = 0.2, x0: float = 1.0, T: float = 1.0) -> SdeModel:
    """dX = mu X dt + sigma X dW with closed form x0 exp((mu - sigma^2/2) t + sigma W_t)."""
    if not (math.isfinite(mu) and sigma >= 0 and math.isfinite(sigma)):
        raise ModelError("geometric_brownian: need finite mu and sigma >= 0")
    T = _check_horizon("gbm", T)

    def exact(t, w):
        t = np.asarray(t, dtype=np.float64)
        return x0 * np.exp((mu - 0.5 * sigma**2) * t[..., None] + sigma * np.asarray(w))

    # <x,f> + T f^2/2 = (mu + T mu^2/2) x^2; |g|^2 = sigma^2 x^2.
    growth = GrowthParams(alpha=abs(mu) + 0.5 * T * mu**2 + sigma**2, beta=0.0, xi=1.0, zeta=1.0 / T, q=2.0)
    return SdeModel(
        "gbm", 1, 1, drift=_scalar(lambda x: mu * x), volatility=_diag_vol(lambda x: sigma * x),
        initial_state=[x0], policy=constant_policy(T), horizon=T, growth=growth,
        drift_jacobian=_diag_vol(lambda x: mu + 0.0 * x), exact_solution=exact,
        params=dict(mu=mu, sigma=sigma, x0=x0),
    )


def zero_model(m: int = 1, x0=None, T: float = 1.0) -> SdeModel:
    """f = 0, g = 0: a frozen state, useful for checking harness plumbing."""
    return SdeModel(
        "zero", m, m, drift=lambda x: np.zeros(np.shape(x)),
        volatility=lambda x: np.zeros(np.shape(x) + (m,)),
        initial_state=np.ones(m) if x0 is None else x0, policy=constant_policy(T), horizon=T,
        growth=GrowthParams(), drift_jacobian=lambda x: np.zeros(np.shape(x) + (m,)),
    )


CATALOGUE: dict[str, Callable[..., SdeModel]] = {
    "ginzburg_landau": ginzburg_landau,
    "verhulst": verhulst,
    "testcase1": testcase1,
    "testcase2": testcase2,
    "testcase3": testcase3,
    "fene": fene,
    "testcase4": fene,
    "van_der_pol": van_der_pol,
    "lorenz": lorenz,
    "langevin": double_well,
    "cubic": cubic_drift,
    "gbm": geometric_brownian,
    "zero": zero_model,
}


def make_model(name: str, **params) -> SdeModel:
    """Build a catalogue model by name; ``params`` go to its constructor."""
    try:
        ctor = CATALOGUE[name]
    except KeyError:
        raise ModelError(f"unknown model {name!r}; choose from {sorted(CATALOGUE)}") from None
    try:
        return ctor(**params)
    except TypeError as exc:
        raise ModelError(f"bad parameters for model {name!r}: {exc}") from None
