"""Closed compartmental delay models: vector field, total mass, and
certification of the monotonicity hypotheses.

A model is a set of compartments connected by pipes.  Pipe ``(i, j)`` carries
material from compartment ``j`` into ``i`` with a transit-time distribution
(a positive unit-mass delay measure) and a transport function giving the flux
leaving ``j`` as a function of the donor content; each compartment may also
regenerate material through a neutral term.  Time dependence enters through a
torus driver multiplying the transport rates.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .cones import ConeParams, cone_contains, random_cone_element
from .histories import History
from .measures import DelayMeasure
from .neutral import NeutralOperator

__all__ = ["Transport", "Driver", "CompartmentModel", "CertReport", "F4Report"]

_FAMILIES = ("linear", "saturating_arctan", "logistic_slope")
_LN2 = math.log(2.0)


def _safe_exp(x: float) -> float:
    # overflow-proof exp; the certifier scans only need the correct sign
    return math.inf if x > 700.0 else math.exp(x)


@dataclass(frozen=True)
class Transport:
    """Transport flux ``g(t, v) = p(t) * phi(v)`` with increasing ``phi``,
    ``phi(0) = 0``, and a closed-form slope range.

    ``p(t) = offset + amp * cos(2 pi theta_h(t))`` couples the flux to one
    driver harmonic and must stay positive (``offset > |amp|``).
    """

    family: str
    coef: float
    harmonic: int = 0
    amp: float = 0.0
    offset: float = 1.0

    def __post_init__(self):
        if self.family not in _FAMILIES:
            raise ValueError(f"unknown transport family {self.family!r}")
        if self.coef < 0:
            raise ValueError("coef must be >= 0")
        if self.offset - abs(self.amp) <= 0:
            raise ValueError("time factor must stay positive (offset > |amp|)")

    @property
    def p_min(self) -> float:
        return self.offset - abs(self.amp)

    @property
    def p_max(self) -> float:
        return self.offset + abs(self.amp)

    def phi(self, v):
        v = np.asarray(v, dtype=float)
        if self.family == "linear":
            out = self.coef * v
        elif self.family == "saturating_arctan":
            out = self.coef * np.arctan(v)
        else:  # logistic_slope: shifted softplus, slope = logistic function
            out = self.coef * (np.logaddexp(0.0, v) - _LN2)
        return out

    @property
    def l_plus(self) -> float:
        """sup of d g / d v over all times and states."""
        return self.coef * self.p_max

    @property
    def l_minus(self) -> float:
        """inf of d g / d v over all times and states."""
        return self.coef * self.p_min if self.family == "linear" else 0.0

    def to_config(self) -> dict:
        return {"family": self.family, "coef": self.coef,
                "harmonic": self.harmonic, "amp": self.amp,
                "offset": self.offset}

    @classmethod
    def from_config(cls, cfg: dict) -> "Transport":
        return cls(family=cfg["family"], coef=float(cfg["coef"]),
                   harmonic=int(cfg.get("harmonic", 0)),
                   amp=float(cfg.get("amp", 0.0)),
                   offset=float(cfg.get("offset", 1.0)))


@dataclass(frozen=True)
class Driver:
    """Explicit torus flow standing in for the hull of the coefficients.

    ``theta(t) = theta0 + freqs * t (mod 1)``; a single rational frequency
    gives the periodic case, rationally independent frequencies the
    quasi-periodic one.
    """

    freqs: tuple = ()
    theta0: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "freqs", tuple(float(f) for f in self.freqs))
        object.__setattr__(self, "theta0", tuple(float(t) for t in self.theta0))
        if len(self.freqs) != len(self.theta0):
            raise ValueError("freqs and theta0 must have the same length")

    @property
    def k(self) -> int:
        return len(self.freqs)

    def phase(self, t):
        t = np.asarray(t, dtype=float)
        th = np.asarray(self.theta0) + np.multiply.outer(t, np.asarray(self.freqs))
        return np.mod(th, 1.0)

    def factor(self, t, tr: Transport):
        """Time factor ``p(t)`` of a transport function."""
        if tr.amp == 0.0 or self.k == 0:
            return tr.offset if np.isscalar(t) else np.full(np.shape(t), tr.offset)
        th = self.theta0[tr.harmonic] + self.freqs[tr.harmonic] * np.asarray(t, dtype=float)
        return tr.offset + tr.amp * np.cos(2.0 * np.pi * np.mod(th, 1.0))

    @property
    def period(self) -> float | None:
        """Exact period for a single-frequency driver, else None."""
        if self.k == 1 and self.freqs[0] != 0.0:
            return 1.0 / abs(self.freqs[0])
        if self.k == 0:
            return 0.0  # autonomous
        return None

    def recurrence_distance(self, t) -> np.ndarray:
        """Torus distance of ``theta(t)`` to the initial phase."""
        d = np.abs(self.phase(t) - np.asarray(self.theta0))
        d = np.minimum(d, 1.0 - d)
        return np.max(d, axis=-1) if np.ndim(d) else float(d)

    def to_config(self) -> dict:
        return {"freqs": list(self.freqs), "theta0": list(self.theta0)}

    @classmethod
    def from_config(cls, cfg: dict | None) -> "Driver":
        if not cfg:
            return cls()
        return cls(freqs=cfg.get("freqs", ()), theta0=cfg.get("theta0", ()))


@dataclass
class CertReport:
    """Outcome of a hypothesis certification run."""

    family: str
    sat: bool
    components: list = field(default_factory=list)
    checks: dict = field(default_factory=dict)
    k0_hat: float | None = None
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"family": self.family, "sat": self.sat,
                "components": self.components, "checks": self.checks,
                "k0_hat": self.k0_hat, "notes": self.notes}


@dataclass
class F4Report:
    samples: int
    worst_margin: float
    violations: int
    witness: dict | None = None

    @property
    def passed(self) -> bool:
        return self.violations == 0

    def to_dict(self) -> dict:
        return {"samples": self.samples, "worst_margin": self.worst_margin,
                "violations": self.violations, "witness": self.witness,
                "passed": self.passed}


def _scan_max(phi, lo: float, hi: float, n_grid: int = 4000):
    """Maximize a scalar function on a log-spaced grid with golden-section
    refinement around the best grid point."""
    with np.errstate(over="ignore", invalid="ignore"):
        grid = np.geomspace(lo, hi, n_grid)
        vals = np.array([phi(b) for b in grid])
    k = int(np.argmax(vals))
    a = grid[max(0, k - 1)]
    b = grid[min(n_grid - 1, k + 1)]
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    c, d = b - invphi * (b - a), a + invphi * (b - a)
    fc, fd = phi(c), phi(d)
    for _ in range(80):
        if b - a < 1e-14 * max(1.0, b):
            break
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = phi(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = phi(d)
    beta = 0.5 * (a + b)
    best = phi(beta)
    if vals[k] > best:
        beta, best = grid[k], vals[k]
    return float(beta), float(best)


class CompartmentModel:
    """Compartmental NFDE family (infinite- or finite-delay variant)."""

    def __init__(self, m, transports, pipes, neutral, beta, driver=None,
                 sinks=None, family="infinite", name="model"):
        self.m = int(m)
        self.transports = dict(transports)
        self.pipes = dict(pipes)
        self.sinks = dict(sinks or {})
        self.neutral = list(neutral)
        self.beta = np.asarray(beta, dtype=float)
        self.driver = driver or Driver()
        self.family = family
        self.name = name

        if set(self.transports) != set(self.pipes):
            raise ValueError("transports and pipes must share the same keys")
        if len(self.neutral) != self.m or self.beta.shape != (self.m,):
            raise ValueError("neutral and beta must have one entry per compartment")
        if np.any(self.beta <= 0):
            raise ValueError("beta entries must be positive")
        for key, mu in self.pipes.items():
            if not mu.is_positive():
                raise ValueError(f"pipe measure {key} must be positive")
            if abs(mu.total_mass() - 1.0) > 1e-9:
                raise ValueError(f"pipe measure {key} must have total mass 1")
        for nu in self.neutral:
            if not nu.is_positive():
                raise ValueError("neutral measures must be positive")

    # -- derived objects --------------------------------------------------

    @property
    def A(self) -> np.ndarray:
        return np.diag(-self.beta)

    def cone(self, tol: float = 1e-9) -> ConeParams:
        return ConeParams(A=self.A, window=None, tol=tol)

    def neutral_operator(self) -> NeutralOperator:
        return NeutralOperator.diagonal(self.neutral)

    @property
    def gamma_sum(self) -> float:
        """Sum of neutral masses; the stability contraction of (H4)/(G4)."""
        return sum(nu.total_mass() for nu in self.neutral)

    @property
    def closed(self) -> bool:
        return not self.sinks

    def max_delay(self) -> float:
        h = 0.0
        for mu in self.pipes.values():
            h = max(h, mu.support_horizon())
        for nu in self.neutral:
            h = max(h, nu.support_horizon())
        return h

    def l_plus_out(self, i: int) -> float:
        """``L+_i``: summed slope sups of all fluxes leaving compartment i."""
        total = sum(tr.l_plus for (a, b), tr in self.transports.items() if b == i)
        if i in self.sinks:
            total += self.sinks[i].l_plus
        return total

    # -- vector field and mass --------------------------------------------

    def eval_F(self, t: float, x: History) -> np.ndarray:
        if x.dim != self.m:
            raise ValueError("dimension mismatch")
        f = np.zeros(self.m)
        x0 = x.samples[-1]
        for (i, j), tr in self.transports.items():
            f[j] -= self.driver.factor(t, tr) * float(tr.phi(x0[j]))
            locs, weights = self.pipes[(i, j)].eval_points()
            if locs.size:
                pvals = np.asarray(self.driver.factor(t + locs, tr), dtype=float)
                xvals = x.eval(locs)[:, j]
                f[i] += float(weights @ (pvals * tr.phi(xvals)))
        for i, tr in self.sinks.items():
            f[i] -= self.driver.factor(t, tr) * float(tr.phi(x0[i]))
        return f

    def total_mass(self, t: float, x: History) -> float:
        """Material in the compartments plus material in transit.

        ``M = sum_i D_i x + sum over pipes of the double integral of the flux
        over the transit window``; constant along exact trajectories of a
        closed model.
        """
        if not self.closed:
            raise ValueError("total mass is defined for closed models only")
        mass = float(np.sum(self.neutral_operator().apply(x)))
        dt = x.step
        for (i, j), tr in self.transports.items():
            mu = self.pipes[(i, j)]
            horizon = max(x.horizon, mu.support_horizon())
            n = int(math.ceil(horizon / dt - 1e-9))
            s_grid = -dt * np.arange(n, -1, -1)
            v = np.asarray(self.driver.factor(t + s_grid, tr), dtype=float) \
                * np.asarray(tr.phi(x.eval(s_grid)[:, j]), dtype=float)
            # C[k] = int from s_grid[k] to 0 of v, by trapezoid
            seg = 0.5 * dt * (v[1:] + v[:-1])
            C = np.concatenate([np.cumsum(seg[::-1])[::-1], [0.0]])
            locs, weights = mu.eval_points()
            if locs.size:
                Cvals = np.interp(locs, s_grid, C)
                mass += float(weights @ Cvals)
        return mass

    def mass_of_constant(self, c: float, t: float = 0.0,
                         horizon: float | None = None,
                         step: float = 1e-2) -> float:
        h = horizon if horizon is not None else max(1.0, self.max_delay())
        return self.total_mass(t, History.constant(np.full(self.m, c), step, h))

    # -- hypothesis certification -----------------------------------------

    def check_H(self, k0: float = 1.0, beta_lo: float = 1e-3,
                beta_hi: float = 1e3) -> CertReport:
        """Certify the infinite-delay hypotheses.

        The existential slope condition is decided by maximizing
        ``phi_i(beta) = beta * (1 - int e^{-beta s} d nu_i)`` over a log grid
        with golden-section refinement; a reported witness is an exact
        inequality evaluation, so scan incompleteness can only produce a
        false "no witness found", never a false SAT.
        """
        if self.family != "infinite":
            raise ValueError("check_H applies to the infinite-delay family")
        report = CertReport(family="infinite", sat=True)
        report.checks["H2_monotone_transports"] = True  # by construction
        report.checks["H3_minimal_hull"] = True          # explicit torus driver
        gamma = self.gamma_sum
        h4 = gamma < 1.0
        moments = {f"{i}<-{j}": self.pipes[(i, j)].first_moment()
                   for (i, j) in self.pipes}
        report.checks["H4"] = {"neutral_mass_sum": gamma, "ok": h4,
                               "pipe_first_moments": moments}
        if not h4:
            report.sat = False
        for i in range(self.m):
            nu = self.neutral[i]
            L = self.l_plus_out(i)

            def phi(b, nu=nu):
                return b * (1.0 - nu.exp_integral(b))

            if nu.is_zero:
                beta_w, best = L + 1.0, L + 1.0
                note = "no neutral term: phi unbounded, witness L+ + 1"
            else:
                beta_w, best = _scan_max(phi, beta_lo, beta_hi)
                note = None
            sat_i = best > L
            entry = {"component": i, "L_plus": L, "witness_beta": beta_w,
                     "phi_at_witness": best, "margin": best - L, "sat": sat_i,
                     "phi_at_config_beta": phi(self.beta[i]),
                     "sat_at_config_beta": phi(self.beta[i]) > L}
            if note:
                entry["note"] = note
            if not sat_i:
                entry["note"] = "no witness found in scan range"
                report.sat = False
            report.components.append(entry)
        report.k0_hat = self._k0_hat(k0)
        report.notes.append("stability certified by the sufficient "
                            "total-variation contraction, not the general "
                            "decay condition")
        return report

    def _finite_neutral(self, i: int):
        """(gamma_i, alpha_i) of a finite-delay neutral entry."""
        nu = self.neutral[i]
        if nu.is_zero:
            return 0.0, 1.0
        if nu.has_density or nu.atom_locs.size != 1:
            raise ValueError("finite-delay family requires single-atom "
                             "neutral measures")
        return float(nu.atom_weights[0]), float(-nu.atom_locs[0])

    def check_G(self, k0: float = 1.0, beta_lo: float = 1e-3,
                beta_hi: float = 1e3) -> CertReport:
        """Certify the finite-delay hypotheses (first branch, then the
        self-pipe refinement)."""
        if self.family != "finite":
            raise ValueError("check_G applies to the finite-delay family")
        report = CertReport(family="finite", sat=True)
        report.checks["G2_monotone_transports"] = True
        report.checks["G3_minimal_hull"] = True
        gammas, alphas = zip(*(self._finite_neutral(i) for i in range(self.m)))
        g4 = sum(gammas) < 1.0 and all(a > 0 for a in alphas)
        report.checks["G4"] = {"gamma_sum": float(sum(gammas)), "ok": g4}
        if not g4:
            report.sat = False
        for i in range(self.m):
            gam, alpha = gammas[i], alphas[i]
            L = self.l_plus_out(i)
            self_pipe = self.pipes.get((i, i))
            if self_pipe is not None:
                if self_pipe.has_density or self_pipe.atom_locs.size != 1:
                    raise ValueError("finite-delay family requires atomic pipes")
                rho = float(-self_pipe.atom_locs[0])
                l_minus = self.transports[(i, i)].l_minus
            else:
                rho, l_minus = 0.0, 0.0

            def phi1(b, gam=gam, alpha=alpha):
                return b * (1.0 - gam * _safe_exp(b * alpha))

            def phi2(b, gam=gam, alpha=alpha, rho=rho, lm=l_minus):
                return phi1(b) + _safe_exp(b * rho) * lm

            entry = {"component": i, "L_plus": L, "gamma": gam, "alpha": alpha,
                     "rho_ii": rho, "l_minus_ii": l_minus}
            if gam == 0.0:
                beta_w, best = L + 1.0, L + 1.0
                branch, sat_i = "G5.1", True
            else:
                beta_w, best = _scan_max(phi1, beta_lo, beta_hi)
                branch, sat_i = "G5.1", best > L
                if not sat_i and alpha >= rho:
                    b2, v2 = _scan_max(phi2, max(L, beta_lo), beta_hi)
                    if v2 > L:
                        beta_w, best, branch, sat_i = b2, v2, "G5.2", True
                    else:
                        entry["G5.2_scan_max"] = v2
                elif not sat_i:
                    entry["G5.2_precondition"] = f"alpha={alpha} < rho_ii={rho}"
            entry.update({"branch": branch, "witness_beta": beta_w,
                          "best_value": best, "margin": best - L, "sat": sat_i})
            if not sat_i:
                entry["note"] = "no witness found"
                report.sat = False
            report.components.append(entry)
        report.k0_hat = self._k0_hat(k0)
        return report

    def certify(self, **kw) -> CertReport:
        return self.check_H(**kw) if self.family == "infinite" else self.check_G(**kw)

    def _k0_hat(self, k0: float) -> float:
        gamma = self.gamma_sum
        bound_f = 0.0
        for i in range(self.m):
            inflow = sum(tr.l_plus * self.pipes[(a, b)].total_variation()
                         for (a, b), tr in self.transports.items() if a == i)
            bound_f = max(bound_f, self.l_plus_out(i) + inflow)
        return (bound_f * k0 / (1.0 - gamma)) / float(np.max(self.beta)) + k0

    # -- quasimonotonicity sampling ---------------------------------------

    def f4_margin(self, t: float, x: History, y: History) -> np.ndarray:
        """Componentwise ``F(t,y) - F(t,x) - A (Dy - Dx)``; nonnegative for
        ordered pairs when the slope hypotheses hold."""
        D = self.neutral_operator()
        dF = self.eval_F(t, y) - self.eval_F(t, x)
        dD = D.apply(y) - D.apply(x)
        return dF - self.A @ dD

    def _extremal_directions(self, step: float, horizon: float):
        """Cone-boundary directions from the slope-hypothesis proof: pure
        exponential growth near 0, cut to zero before the self-pipe delay."""
        out = []
        n = int(round(horizon / step))
        grid = -step * np.arange(n, -1, -1)
        for i in range(self.m):
            beta = self.beta[i]
            d = self.neutral[i].support_horizon()
            if d == 0.0:
                d = min(1.0, horizon / 2)
            self_pipe = self.pipes.get((i, i))
            if self_pipe is not None:
                locs, weights = self_pipe.eval_points()
                nz = weights != 0.0
                cut = float(-locs[nz].max()) if np.any(nz) else d + 1.0
            else:
                cut = d + 1.0
            cut = min(cut, horizon)
            if cut <= d + step:
                continue
            w = np.zeros((n + 1, self.m))
            core = grid >= -d
            ramp = (grid < -d) & (grid > -cut)
            w[core, i] = np.exp(-beta * grid[core])
            w[ramp, i] = math.exp(beta * d) * (grid[ramp] + cut) / (cut - d)
            out.append(History(step, w))
        return out

    def check_F4_F6(self, samples: int = 1000, seed: int = 0,
                    step: float = 0.02, tol: float = 1e-9,
                    scale: float = 1.0) -> F4Report:
        """Randomized quasimonotonicity validation on ordered pairs.

        Structured cone-boundary directions are tried first (they witness
        hypothesis failures), then random cone elements and constant shifts.
        Evidence, not proof: a pass is consistency with the certificate.
        """
        rng = np.random.default_rng(seed)
        horizon = max(1.0, self.max_delay())
        n = int(round(horizon / step))
        cone = self.cone(tol=tol)
        directions = self._extremal_directions(step, horizon)
        worst = math.inf
        violations = 0
        witness = None
        for k in range(samples):
            t = float(rng.uniform(0.0, 100.0))
            base = History(step, scale * _random_lipschitz(rng, n, self.m))
            if k < len(directions):
                w = directions[k]
            elif k % 3 == 0:
                w = History.constant(np.full(self.m, rng.uniform(0.1, 1.0) * scale),
                                     step, horizon)
            else:
                w = random_cone_element(cone, step, horizon, rng, scale=scale)
            pair_y = base + w
            if not cone_contains(pair_y - base, cone):
                continue
            margin = float(np.min(self.f4_margin(t, base, pair_y)))
            if margin < worst:
                worst = margin
                if margin < -tol:
                    witness = {"sample": k, "t": t, "margin": margin,
                               "direction": "structured" if k < len(directions)
                               else "random"}
            if margin < -tol:
                violations += 1
        return F4Report(samples=samples, worst_margin=worst,
                        violations=violations, witness=witness)

    # -- serialization ----------------------------------------------------

    def to_config(self) -> dict:
        cfg = {
            "schema": 1,
            "name": self.name,
            "family": self.family,
            "m": self.m,
            "beta": [float(b) for b in self.beta],
            "driver": self.driver.to_config(),
            "neutral": [nu.to_config() for nu in self.neutral],
            "pipes": [{"to": i, "from": j,
                       "transport": self.transports[(i, j)].to_config(),
                       "measure": self.pipes[(i, j)].to_config()}
                      for (i, j) in sorted(self.pipes)],
        }
        if self.sinks:
            cfg["sinks"] = [{"compartment": i, "transport": tr.to_config()}
                            for i, tr in sorted(self.sinks.items())]
        return cfg

    @classmethod
    def from_config(cls, cfg: dict) -> "CompartmentModel":
        if cfg.get("schema") != 1:
            raise ValueError("config must declare 'schema: 1'")
        for key in ("m", "beta", "neutral", "pipes"):
            if key not in cfg:
                raise ValueError(f"config missing required key {key!r}")
        m = int(cfg["m"])
        neutral = []
        for entry in cfg["neutral"]:
            if "gamma" in entry:  # finite-delay shorthand
                gam, alpha = float(entry["gamma"]), float(entry["alpha"])
                neutral.append(DelayMeasure.atom(-alpha, gam) if gam != 0.0
                               else DelayMeasure.zero())
            else:
                neutral.append(DelayMeasure.from_config(entry))
        transports, pipes = {}, {}
        for p in cfg["pipes"]:
            key = (int(p["to"]), int(p["from"]))
            transports[key] = Transport.from_config(p["transport"])
            meas = p["measure"]
            if "rho" in meas:  # finite-delay shorthand
                pipes[key] = DelayMeasure.atom(-float(meas["rho"]), 1.0)
            else:
                pipes[key] = DelayMeasure.from_config(meas)
        sinks = {int(s["compartment"]): Transport.from_config(s["transport"])
                 for s in cfg.get("sinks", [])}
        return cls(m=m, transports=transports, pipes=pipes, neutral=neutral,
                   beta=cfg["beta"], driver=Driver.from_config(cfg.get("driver")),
                   sinks=sinks, family=cfg.get("family", "infinite"),
                   name=cfg.get("name", "model"))

    def config_hash(self) -> str:
        blob = json.dumps(self.to_config(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _random_lipschitz(rng, n: int, m: int) -> np.ndarray:
    """Smooth random history samples: a few low-frequency sine modes."""
    s = np.linspace(-1.0, 0.0, n + 1)
    out = np.zeros((n + 1, m))
    for j in range(m):
        out[:, j] = rng.normal(0.0, 0.3)
        for k in range(1, 4):
            out[:, j] += rng.normal(0.0, 0.2 / k) * np.sin(
                2.0 * np.pi * k * s + rng.uniform(0.0, 2.0 * np.pi))
    return out
