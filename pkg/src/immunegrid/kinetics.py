"""Reaction-kinetics baseline: the 3-species infection ODE system.

The model couples infected agents I, responder agents K and target agents C
through mass-action terms:

    dI/dt = p_infect*I*C - p_kill*I*K - d_I*I
    dK/dt = p_resp*I*K - d_K*K
    dC/dt = s - p_infect*I*C - d_C*C

Also provides the analytic interior fixed point, fixed-step integrators,
and a mean-field translation of restricted agent-interaction networks into
mass-action ODE systems for comparison against the lattice engine.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence


@dataclass(frozen=True)
class KineticsParams:
    p_infect: float
    p_kill: float
    p_resp: float
    s: float
    d_I: float
    d_K: float
    d_C: float

    def __post_init__(self):
        for name in ("p_infect", "p_kill", "p_resp", "s", "d_I", "d_K", "d_C"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


@dataclass(frozen=True)
class KineticsState:
    I: float
    K: float
    C: float

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.I, self.K, self.C)


@dataclass
class Trajectory:
    times: list[float]
    states: list[KineticsState]
    method: str
    dt: float
    clamped_steps: int = 0

    def final(self) -> KineticsState:
        return self.states[-1]

    def series(self, name: str) -> list[float]:
        return [getattr(s, name) for s in self.states]


def derivatives(state: KineticsState, params: KineticsParams) -> tuple[float, float, float]:
    I, K, C = state.I, state.K, state.C
    dI = params.p_infect * I * C - params.p_kill * I * K - params.d_I * I
    dK = params.p_resp * I * K - params.d_K * K
    dC = params.s - params.p_infect * I * C - params.d_C * C
    return (dI, dK, dC)


def fixed_point(params: KineticsParams) -> tuple[KineticsState, bool]:
    """Interior steady state of the system.

    Returns ``(state, interior)`` where ``interior`` is False when the
    computed K* is negative, i.e. the infection-free regime applies and the
    interior point is not biologically admissible.
    """
    if params.p_resp == 0:
        raise ZeroDivisionError("p_resp is zero: no interior fixed point")
    if params.p_kill == 0:
        raise ZeroDivisionError("p_kill is zero: no interior fixed point")
    i_star = params.d_K / params.p_resp
    denom = params.p_infect * i_star + params.d_C
    if denom == 0:
        raise ZeroDivisionError("p_infect*I* + d_C is zero: C* undefined")
    c_star = params.s / denom
    k_star = (params.p_infect * c_star - params.d_I) / params.p_kill
    return KineticsState(i_star, k_star, c_star), k_star >= 0


def _rk4_step(y: tuple[float, float, float], dt: float,
              deriv: Callable[[tuple[float, float, float]], tuple[float, float, float]]):
    k1 = deriv(y)
    k2 = deriv(tuple(y[i] + 0.5 * dt * k1[i] for i in range(len(y))))
    k3 = deriv(tuple(y[i] + 0.5 * dt * k2[i] for i in range(len(y))))
    k4 = deriv(tuple(y[i] + dt * k3[i] for i in range(len(y))))
    return tuple(
        y[i] + dt / 6.0 * (k1[i] + 2 * k2[i] + 2 * k3[i] + k4[i])
        for i in range(len(y))
    )


def _euler_step(y, dt, deriv):
    d = deriv(y)
    return tuple(y[i] + dt * d[i] for i in range(len(y)))


def integrate(params: KineticsParams, init: KineticsState, t_end: float,
              dt: float = 0.01, method: str = "rk4",
              sample_every: int = 1) -> Trajectory:
    """Fixed-step integration; negative excursions are clamped to 0 and counted."""
    if dt <= 0:
        raise ValueError("dt must be > 0")
    if t_end <= 0:
        raise ValueError("t_end must be > 0")
    if method not in ("euler", "rk4"):
        raise ValueError("method must be 'euler' or 'rk4'")

    # unrolled on purpose: the CLI integrates a few hundred thousand steps
    pi, pk, pr = params.p_infect, params.p_kill, params.p_resp
    s, dI_, dK_, dC_ = params.s, params.d_I, params.d_K, params.d_C
    rk4 = method == "rk4"
    n_steps = int(round(t_end / dt))
    I, K, C = init.as_tuple()
    times = [0.0]
    states = [init]
    clamped = 0
    h = dt
    for n in range(1, n_steps + 1):
        aI = pi * I * C - pk * I * K - dI_ * I
        aK = pr * I * K - dK_ * K
        aC = s - pi * I * C - dC_ * C
        if rk4:
            i2, k2, c2 = I + 0.5 * h * aI, K + 0.5 * h * aK, C + 0.5 * h * aC
            bI = pi * i2 * c2 - pk * i2 * k2 - dI_ * i2
            bK = pr * i2 * k2 - dK_ * k2
            bC = s - pi * i2 * c2 - dC_ * c2
            i3, k3, c3 = I + 0.5 * h * bI, K + 0.5 * h * bK, C + 0.5 * h * bC
            cI = pi * i3 * c3 - pk * i3 * k3 - dI_ * i3
            cK = pr * i3 * k3 - dK_ * k3
            cC = s - pi * i3 * c3 - dC_ * c3
            i4, k4, c4 = I + h * cI, K + h * cK, C + h * cC
            eI = pi * i4 * c4 - pk * i4 * k4 - dI_ * i4
            eK = pr * i4 * k4 - dK_ * k4
            eC = s - pi * i4 * c4 - dC_ * c4
            I += h / 6.0 * (aI + 2 * bI + 2 * cI + eI)
            K += h / 6.0 * (aK + 2 * bK + 2 * cK + eK)
            C += h / 6.0 * (aC + 2 * bC + 2 * cC + eC)
        else:
            I += h * aI
            K += h * aK
            C += h * aC
        if I < 0 or K < 0 or C < 0:
            clamped += 1
            I, K, C = max(I, 0.0), max(K, 0.0), max(C, 0.0)
        if n % sample_every == 0 or n == n_steps:
            if not (math.isfinite(I) and math.isfinite(K) and math.isfinite(C)):
                raise ArithmeticError(
                    f"non-finite state at t={n * dt:.6g}: {(I, K, C)}; reduce dt"
                )
            times.append(n * dt)
            states.append(KineticsState(I, K, C))
    return Trajectory(times, states, method, dt, clamped)


# -- mean-field translation of restricted agent networks --------------------

RULE_KINDS = (
    "contact_proliferation",   # a + b -> 2a + b
    "contact_kill",            # killer + victim -> killer
    "induced_differentiation", # a + signal -> b + signal
    "secretion",               # producer -> producer + molecule (producer None = constant source)
    "decay",                   # x -> nothing
)


class MeanFieldTranslationError(ValueError):
    """The network contains a rule with no mass-action form."""


@dataclass(frozen=True)
class NetworkRule:
    kind: str
    rate: float
    subject: Optional[str] = None   # proliferator / victim / differentiating type / decaying species
    partner: Optional[str] = None   # contact partner / inducing signal / killer
    product: Optional[str] = None   # differentiation target / secreted molecule
    order: int = 1                  # molecules of the inducing signal required per event

    def __post_init__(self):
        if self.rate < 0:
            raise ValueError("rule rate must be non-negative")
        if self.order < 1:
            raise ValueError("rule order must be >= 1")


@dataclass
class MeanFieldNetwork:
    species: tuple[str, ...]
    rules: tuple[NetworkRule, ...]


@dataclass
class OdeSystem:
    species: tuple[str, ...]
    deriv: Callable[[Sequence[float]], list[float]]

    def index(self, name: str) -> int:
        return self.species.index(name)


def meanfield_translate(network: MeanFieldNetwork) -> OdeSystem:
    """Translate a restricted interaction network into mass-action ODEs.

    Each contact rule becomes a product-of-concentrations term; secretion
    and decay become linear (or constant) terms.  Anything outside the
    supported rule vocabulary raises ``MeanFieldTranslationError``.
    """
    idx = {name: i for i, name in enumerate(network.species)}

    def need(name: Optional[str], rule: NetworkRule) -> int:
        if name is None or name not in idx:
            raise MeanFieldTranslationError(
                f"rule {rule.kind} references unknown species {name!r}"
            )
        return idx[name]

    # (coefficient, factor indices) terms per species
    terms: list[list[tuple[float, tuple[int, ...]]]] = [[] for _ in network.species]
    for rule in network.rules:
        if rule.kind not in RULE_KINDS:
            raise MeanFieldTranslationError(
                f"rule kind {rule.kind!r} is not mean-field translatable"
            )
        k = rule.rate
        if rule.kind == "contact_proliferation":
            a, b = need(rule.subject, rule), need(rule.partner, rule)
            terms[a].append((k, (a, b)))
        elif rule.kind == "contact_kill":
            victim, killer = need(rule.subject, rule), need(rule.partner, rule)
            terms[victim].append((-k, (victim, killer)))
        elif rule.kind == "induced_differentiation":
            a = need(rule.subject, rule)
            sig = need(rule.partner, rule)
            b = need(rule.product, rule)
            # a contact event needing `order` signal molecules is a
            # (1 + order)-body mass-action term; the signal is catalytic
            factors = (a,) + (sig,) * rule.order
            terms[a].append((-k, factors))
            terms[b].append((k, factors))
        elif rule.kind == "secretion":
            m = need(rule.product, rule)
            if rule.subject is None:
                terms[m].append((k, ()))  # constant source
            else:
                p = need(rule.subject, rule)
                terms[m].append((k, (p,)))
        elif rule.kind == "decay":
            x = need(rule.subject, rule)
            terms[x].append((-k, (x,)))

    def deriv(conc: Sequence[float]) -> list[float]:
        out = []
        for species_terms in terms:
            total = 0.0
            for coeff, factors in species_terms:
                v = coeff
                for f in factors:
                    v *= conc[f]
                total += v
            out.append(total)
        return out

    return OdeSystem(tuple(network.species), deriv)


def integrate_system(system: OdeSystem, init: Sequence[float], t_end: float,
                     dt: float = 0.01, sample_every: int = 10):
    """RK4 integration of a translated system; returns (times, columns-per-species)."""
    if dt <= 0 or t_end <= 0:
        raise ValueError("dt and t_end must be > 0")
    y = list(init)
    n_steps = int(round(t_end / dt))
    times = [0.0]
    rows = [list(y)]
    for n in range(1, n_steps + 1):
        k1 = system.deriv(y)
        y2 = [y[i] + 0.5 * dt * k1[i] for i in range(len(y))]
        k2 = system.deriv(y2)
        y3 = [y[i] + 0.5 * dt * k2[i] for i in range(len(y))]
        k3 = system.deriv(y3)
        y4 = [y[i] + dt * k3[i] for i in range(len(y))]
        k4 = system.deriv(y4)
        y = [
            max(0.0, y[i] + dt / 6.0 * (k1[i] + 2 * k2[i] + 2 * k3[i] + k4[i]))
            for i in range(len(y))
        ]
        if n % sample_every == 0 or n == n_steps:
            times.append(n * dt)
            rows.append(list(y))
    return times, rows


def infection_network(params: KineticsParams) -> MeanFieldNetwork:
    """The 3-species infection model expressed in the rule vocabulary."""
    return MeanFieldNetwork(
        species=("I", "K", "C"),
        rules=(
            NetworkRule("induced_differentiation", params.p_infect,
                        subject="C", partner="I", product="I"),
            NetworkRule("contact_kill", params.p_kill, subject="I", partner="K"),
            NetworkRule("contact_proliferation", params.p_resp, subject="K", partner="I"),
            NetworkRule("secretion", params.s, subject=None, product="C"),
            NetworkRule("decay", params.d_I, subject="I"),
            NetworkRule("decay", params.d_K, subject="K"),
            NetworkRule("decay", params.d_C, subject="C"),
        ),
    )


def feedback_network(prolif: float = 0.4, differentiate: float = 8.0,
                     secrete: float = 1.0, cytokine_decay: float = 0.01,
                     kill: float = 1.0, registration_order: int = 2) -> MeanFieldNetwork:
    """Two-competitor differentiation network with a shared precursor pool.

    ID0 proliferates on contact with OC; cytokines C1/C2 secreted by ID1/ID2
    convert ID0 into the matching type; AID kills all ID types on contact.
    OC and AID appear in no production/consumption term, so their
    concentrations stay fixed: they are the environment.

    Registering a cytokine signal takes ``registration_order`` molecules
    (one molecule is sub-threshold noise), matching the lattice scenario's
    contact condition.  At order 2 the conversion term is quadratic in the
    cytokine, which makes the equal-concentration equilibrium unstable: the
    type with the denser cytokine field recruits ID0 super-linearly.
    """
    rules = [
        NetworkRule("contact_proliferation", prolif, subject="ID0", partner="OC"),
        NetworkRule("induced_differentiation", differentiate, subject="ID0",
                    partner="C1", product="ID1", order=registration_order),
        NetworkRule("induced_differentiation", differentiate, subject="ID0",
                    partner="C2", product="ID2", order=registration_order),
        NetworkRule("secretion", secrete, subject="ID1", product="C1"),
        NetworkRule("secretion", secrete, subject="ID2", product="C2"),
        NetworkRule("decay", cytokine_decay, subject="C1"),
        NetworkRule("decay", cytokine_decay, subject="C2"),
    ]
    for target in ("ID0", "ID1", "ID2"):
        rules.append(NetworkRule("contact_kill", kill, subject=target, partner="AID"))
    return MeanFieldNetwork(
        species=("OC", "ID0", "ID1", "ID2", "AID", "C1", "C2"),
        rules=tuple(rules),
    )


def feedback_equilibrium(oc: float = 0.05, aid: float = 0.01, prolif: float = 0.4,
                         differentiate: float = 8.0, secrete: float = 1.0,
                         cytokine_decay: float = 0.01, kill: float = 1.0
                         ) -> list[float]:
    """Symmetric interior equilibrium of ``feedback_network`` at order 2.

    Solves dID0 = dID1 = dID2 = dC1 = dC2 = 0 with ID1 = ID2; requires the
    ID0 growth surplus prolif*OC - kill*AID to be positive.
    """
    kappa = kill * aid
    surplus = prolif * oc - kappa
    if surplus <= 0:
        raise ValueError("no interior equilibrium: proliferation below kill rate")
    c_star = math.sqrt(surplus / (2.0 * differentiate))
    id_star = cytokine_decay * c_star / secrete
    id0_star = kappa * cytokine_decay ** 2 / (differentiate * secrete ** 2 * id_star)
    return [oc, id0_star, id_star, id_star, aid, c_star, c_star]
