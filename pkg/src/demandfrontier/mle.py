"""Maximum-likelihood driver: starts, optimisation, certification, covariance.

Each start goes through L-BFGS-B with the analytic gradient and a short Newton
polish on the finite-difference Hessian of that gradient; jittered restarts
first take a bounded Nelder-Mead pass to get off the flat lambda ~ 0 ridge.
A fit is accepted when the gradient norm is at most ``1e-5 * (1 + |loglik|)``
and the last relative change in loglik is at most ``1e-10``. A TN fit that
collapses to the sigma_u floor is kinked in its location coefficients; there
one-sided slopes replace their gradient entries in that norm.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.optimize
from scipy.stats import norm

from .model import DesignMatrices, Family, ModelSpec
from .ols import THETA_U_FLOOR, WrongSkewWarning, cols_start, fit_ols
from .sfa import (
    ParameterVector,
    grad_loglik,
    het_sigma_u,
    loglik,
    n_params,
    param_labels,
)

GRAD_TOL = 1e-5
REL_LL_TOL = 1e-10
MAX_RESTARTS = 5
HESS_STEP = 1e-4
NEWTON_MAX_ITER = 60
MAX_STEP = 2.0  # largest Newton move in any coordinate
ROUNDING_SLACK = 1e-13  # relative loglik noise from summation order
# below this lambda the floor fit wins ties within a 1e-9 relative slack
BOUNDARY_LAMBDA = 1e-3
FLOOR_CHECK_LAMBDA = 0.25  # interior fits above this are not re-polished at the floor
KINK_STEP = 1e-6  # relative step of the one-sided slopes at a collapsed TN fit
NO_INEFFICIENCY = "no detectable inefficiency"


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, best: "FitResult | None" = None):
        super().__init__(message)
        self.best = best


class CertificationError(AssertionError):
    def __init__(self, invariant: str, detail: str):
        self.invariant = invariant
        super().__init__(f"{invariant}: {detail}")


@dataclass(frozen=True)
class Convergence:
    iterations: int
    grad_norm: float
    restarts: int
    wrong_skew_warning: bool
    boundary: bool
    converged: bool
    rel_ll_change: float


@dataclass(frozen=True, eq=False)
class FitResult:
    spec: ModelSpec
    pv_hat: ParameterVector
    loglik: float
    cov: np.ndarray | None
    labels: tuple[str, ...]
    sigma_v: float
    sigma_u: float
    lam: float
    sigma2: float
    convergence: Convergence
    warnings: tuple[str, ...] = ()
    design_hash: str = ""

    @property
    def family(self) -> Family:
        return self.spec.family

    @property
    def theta(self) -> np.ndarray:
        return self.pv_hat.pack()

    @property
    def se(self) -> np.ndarray:
        if self.cov is None:
            return np.full(len(self.labels), np.nan)
        with np.errstate(invalid="ignore"):
            return np.sqrt(np.diag(self.cov))

    @property
    def z(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.theta / self.se

    @property
    def pvalues(self) -> np.ndarray:
        return 2.0 * norm.sf(np.abs(self.z))

    def derived(self) -> dict[str, float]:
        return {"sigma_v": self.sigma_v, "sigma_u": self.sigma_u,
                "sigma2": self.sigma2, "lambda": self.lam}


def derived_quantities(family: Family, pv: ParameterVector, dm: DesignMatrices) -> tuple[float, float, float, float]:
    """(sigma_v, sigma_u, lambda, sigma^2) from raw parameters.

    For the heteroskedastic model sigma_u is the sample mean of sigma_u_i.
    """
    sigma_v = pv.sigma_v
    if family is Family.OLS:
        sigma_u = 0.0
    elif family is Family.NHN_HET:
        sigma_u = float(np.mean(het_sigma_u(dm, pv.delta)))
    else:
        sigma_u = pv.sigma_u
    return sigma_v, sigma_u, sigma_u / sigma_v, sigma_u**2 + sigma_v**2


def _grad_tol(ll: float) -> float:
    return GRAD_TOL * (1.0 + abs(ll))


def numerical_hessian(grad, theta: np.ndarray, step: float = HESS_STEP) -> np.ndarray:
    """Central differences of an analytic gradient, symmetrised."""
    k = theta.size
    H = np.empty((k, k))
    for j in range(k):
        h = step * (1.0 + abs(theta[j]))
        e = np.zeros(k)
        e[j] = h
        H[:, j] = (grad(theta + e) - grad(theta - e)) / (2.0 * h)
    return 0.5 * (H + H.T)


class _Problem:
    def __init__(self, family: Family, dm: DesignMatrices):
        self.family, self.dm = family, dm
        self.p, self.q = dm.p, dm.q
        self.k = n_params(family, dm.p, dm.q)
        # index of the floored ln sigma_u^2, if any
        self.iu = self.k - 1 if family in (Family.NHN, Family.TN) else None

    def pv(self, theta):
        return ParameterVector.unpack(self.family, theta, self.p, self.q)

    def ll(self, theta) -> float:
        try:
            v = loglik(self.family, self.dm, self.pv(theta))
        except (ZeroDivisionError, OverflowError, FloatingPointError):
            return -np.inf
        return v if np.isfinite(v) else -np.inf

    def grad(self, theta) -> np.ndarray:
        return grad_loglik(self.family, self.dm, self.pv(theta))

    def bounds(self):
        b = [(None, None)] * self.k
        if self.iu is not None:
            b[self.iu] = (THETA_U_FLOOR, None)
        return b

    def free(self, theta, g, pin_u: bool = False, fixed=None) -> np.ndarray:
        """Coordinates not pinned at the sigma_u floor (nor held in ``fixed``)."""
        mask = np.ones(self.k, dtype=bool) if fixed is None else ~fixed
        if self.iu is not None and theta[self.iu] <= THETA_U_FLOOR + 1e-12 and (pin_u or g[self.iu] <= 0):
            mask[self.iu] = False
        return mask

    def kinked(self) -> np.ndarray:
        """Mask of the TN location coefficients.

        With sigma_u at its floor the TN inefficiency is max(Z delta, 0), so
        the loglik has kinks in delta and a gradient is not a valid test there.
        """
        mask = np.zeros(self.k, dtype=bool)
        if self.family is Family.TN:
            mask[self.p + 1:self.p + 1 + self.q] = True
        return mask

    def stationarity(self, theta, ll: float, g) -> float:
        """Gradient norm over smooth free coordinates, one-sided slopes over kinked ones.

        A kinked coordinate contributes max(0, slope forward, slope backward),
        which equals |g_j| where the loglik is smooth and zero at a kinked peak.
        """
        free = self.free(theta, g, pin_u=True)
        kink = free & self.kinked()
        parts = list(g[free & ~kink])
        for j in np.flatnonzero(kink):
            h = KINK_STEP * (1.0 + abs(theta[j]))
            up = 0.0
            for sgn in (1.0, -1.0):
                th = theta.copy()
                th[j] += sgn * h
                up = max(up, (self.ll(th) - ll) / h)
            parts.append(up)
        return float(np.linalg.norm(parts))


@dataclass
class _Run:
    theta: np.ndarray
    ll: float
    grad_norm: float
    rel_change: float
    iterations: int

    @property
    def certified(self) -> bool:
        return (
            np.isfinite(self.ll)
            and self.grad_norm <= _grad_tol(self.ll)
            and self.rel_change <= REL_LL_TOL
        )


def _simplex(prob: _Problem, theta0: np.ndarray) -> np.ndarray:
    n = prob.dm.n

    def f(th):
        v = prob.ll(th)
        return -v / n if np.isfinite(v) else 1e300

    x0 = theta0.copy()
    if prob.iu is not None:
        x0[prob.iu] = max(x0[prob.iu], THETA_U_FLOOR)
    res = scipy.optimize.minimize(
        f, x0, method="Nelder-Mead", bounds=prob.bounds(),
        options={"maxfev": 150 * prob.k, "xatol": 1e-3, "fatol": 1e-8, "adaptive": prob.k > 4},
    )
    return res.x if f(res.x) <= f(x0) else x0


def _quasi_newton(prob: _Problem, theta0: np.ndarray) -> tuple[np.ndarray, int]:
    n = prob.dm.n

    def fg(th):
        v = prob.ll(th)
        if not np.isfinite(v):
            return 1e300, np.zeros_like(th)
        return -v / n, -prob.grad(th) / n

    res = scipy.optimize.minimize(
        fg, theta0, jac=True, method="L-BFGS-B", bounds=prob.bounds(),
        options={"maxiter": 2000, "ftol": 1e-15, "gtol": 1e-11, "maxcor": 20},
    )
    return res.x, int(res.nit)


def _newton(prob: _Problem, theta: np.ndarray, pin_u: bool = False, fixed=None) -> _Run:
    ll = prob.ll(theta)
    rel = math.inf
    it = 0
    g = prob.grad(theta)
    for it in range(1, NEWTON_MAX_ITER + 1):
        free = prob.free(theta, g, pin_u, fixed)
        gf = g[free]
        if np.linalg.norm(gf) <= 1e-4 * _grad_tol(ll) and rel <= REL_LL_TOL:
            break
        H = numerical_hessian(prob.grad, theta)[np.ix_(free, free)]
        try:
            w = np.linalg.eigvalsh(H)
            step = np.linalg.solve(H, -gf) if w.max() < 0 else None
        except np.linalg.LinAlgError:
            step = None
        if step is None or not np.all(np.isfinite(step)) or step @ gf <= 0:
            # not locally concave: scaled gradient ascent
            step = gf / max(np.linalg.norm(gf), 1.0)
        # far from the optimum the quadratic model can overshoot wildly
        step *= min(1.0, MAX_STEP / max(np.abs(step).max(), 1e-300))
        # near the optimum the loglik is flat to rounding: a step inside the
        # noise band is taken only if it shrinks the gradient
        slack = ROUNDING_SLACK * (1.0 + abs(ll))
        gnorm = np.linalg.norm(gf)
        t, g_c = 1.0, None
        for _ in range(40):
            cand = theta.copy()
            cand[free] += t * step
            if prob.iu is not None:
                cand[prob.iu] = max(cand[prob.iu], THETA_U_FLOOR)
            ll_c = prob.ll(cand)
            if np.isfinite(ll_c) and ll_c > ll + slack:
                break
            if np.isfinite(ll_c) and ll_c >= ll - slack:
                g_c = prob.grad(cand)
                if np.linalg.norm(g_c[prob.free(cand, g_c, pin_u, fixed)]) < gnorm:
                    break
                g_c = None
            t *= 0.5
        else:
            rel = 0.0
            break
        rel = abs(ll_c - ll) / max(1.0, abs(ll_c))
        theta, ll = cand, ll_c
        g = prob.grad(theta) if g_c is None else g_c
    free = prob.free(theta, g, pin_u, fixed)
    return _Run(theta, ll, float(np.linalg.norm(g[free])), rel, it)


def _optimize(prob: _Problem, theta0: np.ndarray, simplex: bool = False) -> _Run:
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        th = _simplex(prob, theta0) if simplex else theta0
        th, nit = _quasi_newton(prob, th)
        run = _newton(prob, th)
    run.iterations += nit
    return run


def _lam(prob: _Problem, theta: np.ndarray) -> float:
    return math.exp(0.5 * (theta[prob.iu] - theta[prob.p]))


def _kink_polish(prob: _Problem, run: _Run) -> _Run:
    """Collapsed TN: search delta directly, profiling the smooth coordinates by Newton."""
    kink = prob.kinked()
    idx = np.flatnonzero(kink)
    state = {"run": run}

    def profile(d):
        th = state["run"].theta.copy()
        th[idx] = d
        r = _newton(prob, th, pin_u=True, fixed=kink)
        if r.ll > state["run"].ll:
            state["run"] = r
        return -r.ll / prob.dm.n

    d0 = run.theta[idx]
    simplex = np.vstack([d0] + [d0 + 1e-3 * (1.0 + abs(d0[j])) * np.eye(idx.size)[j]
                                for j in range(idx.size)])
    scipy.optimize.minimize(profile, d0, method="Nelder-Mead",
                            options={"initial_simplex": simplex, "xatol": 1e-11,
                                     "fatol": 1e-15, "maxfev": 400 * idx.size})
    best = state["run"]
    best.iterations += run.iterations
    return best


def _at_floor(prob: _Problem, run: _Run) -> _Run:
    """Re-polish with ln sigma_u^2 pinned at its floor; return the better run."""
    th = run.theta.copy()
    th[prob.iu] = THETA_U_FLOOR
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        floored = _newton(prob, th, pin_u=True)
        if prob.family is Family.TN:
            if floored.ll >= run.ll - 1e-9 * (1.0 + abs(run.ll)):
                floored = _kink_polish(prob, floored)
            floored.grad_norm = prob.stationarity(floored.theta, floored.ll, prob.grad(floored.theta))
    if not floored.certified:
        return run
    slack = 1e-9 * (1.0 + abs(run.ll)) if _lam(prob, run.theta) < BOUNDARY_LAMBDA else 0.0
    return floored if floored.ll >= run.ll - slack else run


def _covariance(prob: _Problem, theta: np.ndarray, boundary: bool) -> tuple[np.ndarray | None, list[str]]:
    notes = []
    H = numerical_hessian(prob.grad, theta)
    keep = np.ones(prob.k, dtype=bool)
    if boundary and prob.iu is not None:
        keep[prob.iu] = False
        keep[prob.kinked()] = False
    Hk = H[np.ix_(keep, keep)]
    try:
        w = np.linalg.eigvalsh(Hk)
        if not np.all(np.isfinite(w)) or w.max() >= -1e-10 * max(1.0, abs(w).max()):
            raise np.linalg.LinAlgError("information matrix not positive definite")
        Ck = np.linalg.inv(-Hk)
    except np.linalg.LinAlgError as exc:
        notes.append(f"covariance unavailable: {exc}")
        return None, notes
    cov = np.full((prob.k, prob.k), np.nan)
    cov[np.ix_(keep, keep)] = 0.5 * (Ck + Ck.T)
    if not keep.all():
        notes.append("standard error of ln sigma_u^2 unavailable at the boundary")
        if prob.kinked().any():
            notes.append("standard errors of the inefficiency location unavailable at the boundary")
    return cov, notes


def _nested_start(family: Family, dm: DesignMatrices, nhn: FitResult) -> np.ndarray | None:
    """Embed an NHN optimum into the HET / TN parameter space."""
    pv = nhn.pv_hat
    q = dm.q
    if family is Family.NHN_HET:
        if not dm.spec.include_ineff_intercept or q == 0:
            return None
        delta = np.zeros(q)
        delta[0] = pv.theta_u
        return ParameterVector(family, pv.beta, pv.theta_v, delta=delta).pack()
    if family is Family.TN:
        return ParameterVector(family, pv.beta, pv.theta_v, theta_u=pv.theta_u, delta=np.zeros(q)).pack()
    return None


def _jitter(theta: np.ndarray, restart: int) -> np.ndarray:
    rng = np.random.default_rng([0x5FA, restart])
    return theta + rng.normal(scale=0.1 * restart, size=theta.size) * (1.0 + 0.1 * np.abs(theta))


def _fit_ols_result(spec: ModelSpec, dm: DesignMatrices) -> FitResult:
    ofit = fit_ols(dm)
    notes = []
    if ofit.degenerate:
        notes.append("degenerate: exact fit, residual variance is zero")
        theta_v = -np.inf
        cov = None
    else:
        theta_v = math.log(ofit.sigma2_hat)
        k = dm.p + 1
        cov = np.zeros((k, k))
        cov[: dm.p, : dm.p] = ofit.cov_beta
        cov[dm.p, dm.p] = 2.0 / dm.n
    pv = ParameterVector(Family.OLS, ofit.beta_hat, theta_v)
    sv = math.sqrt(ofit.sigma2_hat)
    g = grad_loglik(Family.OLS, dm, pv) if not ofit.degenerate else np.zeros(dm.p + 1)
    conv = Convergence(0, float(np.linalg.norm(g)), 0, False, False, True, 0.0)
    return FitResult(spec, pv, ofit.loglik, cov, tuple(param_labels(dm, Family.OLS)),
                     sv, 0.0, 0.0, ofit.sigma2_hat, conv, tuple(notes), dm.column_hash())


def fit(spec: ModelSpec, dm: DesignMatrices, *, max_restarts: int = MAX_RESTARTS,
        starts: list[np.ndarray] | None = None) -> FitResult:
    """Fit ``spec`` to ``dm`` by maximum likelihood (one-step, joint).

    HET and TN fits are additionally started from the NHN optimum embedded in
    their parameter space, so their loglik can never fall below NHN's.
    Raises :class:`ConvergenceError` (carrying the best point) when no start
    is certified after ``max_restarts`` jittered restarts.
    """
    family = spec.family
    if family is Family.OLS:
        return _fit_ols_result(spec, dm)
    if dm.n <= n_params(family, dm.p, dm.q):
        raise ValueError(f"n={dm.n} is not larger than the number of parameters")
    prob = _Problem(family, dm)
    ofit = fit_ols(dm)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", WrongSkewWarning)
        start = cols_start(ofit, family, dm.q, spec.include_frontier_intercept,
                           spec.include_ineff_intercept)
    candidates = [start.pv.pack()]
    if family.uses_z:
        nhn = fit(spec.with_family(Family.NHN), dm, max_restarts=max_restarts)
        nested = _nested_start(family, dm, nhn)
        if nested is not None:
            candidates.append(nested)
    candidates += [np.asarray(s, dtype=float) for s in starts or []]

    runs = [_optimize(prob, th0) for th0 in candidates]
    best = max(runs, key=lambda r: r.ll)
    restarts = 0
    while not best.certified and restarts < max_restarts:
        restarts += 1
        run = _optimize(prob, _jitter(candidates[0], restarts), simplex=True)
        if run.ll > best.ll or (run.certified and run.ll >= best.ll - 1e-9):
            best = run

    pv = prob.pv(best.theta)
    boundary = False
    if prob.iu is not None and _lam(prob, best.theta) < FLOOR_CHECK_LAMBDA:
        # The likelihood is nearly flat in lambda around zero, so an interior
        # stopping point can sit marginally below the boundary value.
        best = _at_floor(prob, best)
        boundary = best.theta[prob.iu] <= THETA_U_FLOOR + 1e-9
        pv = prob.pv(best.theta)

    notes = list(start.warnings)
    if boundary:
        notes.append(NO_INEFFICIENCY)
    cov, cov_notes = _covariance(prob, best.theta, boundary)
    notes += cov_notes
    sv, su, lam, s2 = derived_quantities(family, pv, dm)
    conv = Convergence(best.iterations, best.grad_norm, restarts, start.wrong_skew,
                       boundary, best.certified, best.rel_change)
    result = FitResult(spec, pv, best.ll, cov, tuple(param_labels(dm, family)),
                       sv, su, lam, s2, conv, tuple(notes), dm.column_hash())
    if not best.certified:
        raise ConvergenceError(
            f"{family.value} fit not certified after {restarts} restarts "
            f"(gradient norm {best.grad_norm:.3g}, loglik {best.ll:.6f})",
            best=result,
        )
    return result


@dataclass(frozen=True)
class Certification:
    ok: bool
    loglik: float
    grad_norm: float
    checks: dict = field(default_factory=dict)


def certify(fr: FitResult, dm: DesignMatrices) -> Certification:
    """Re-evaluate a fit and assert its invariants; raise on the first failure."""
    family = fr.family
    checks = {}
    ll = loglik(family, dm, fr.pv_hat)
    if not np.isfinite(ll):
        raise CertificationError("finite loglik", f"loglik is {ll}")
    if abs(ll - fr.loglik) > 1e-9 * (1.0 + abs(ll)):
        raise CertificationError("stored loglik", f"recomputed {ll!r} vs stored {fr.loglik!r}")
    checks["loglik"] = True
    g = grad_loglik(family, dm, fr.pv_hat)
    if fr.convergence.boundary and family is Family.TN:
        gn = _Problem(family, dm).stationarity(fr.pv_hat.pack(), ll, g)
    else:
        if fr.convergence.boundary and family is Family.NHN:
            g = g[:-1]
        gn = float(np.linalg.norm(g))
    if not gn <= _grad_tol(ll):
        raise CertificationError(
            "gradient norm", f"|g| = {gn:.3g} exceeds {_grad_tol(ll):.3g} at the estimate"
        )
    checks["gradient"] = True
    sv, su, lam, s2 = derived_quantities(family, fr.pv_hat, dm)
    for name, stored, fresh in (("sigma_v", fr.sigma_v, sv), ("sigma_u", fr.sigma_u, su),
                                ("lambda", fr.lam, lam), ("sigma2", fr.sigma2, s2)):
        if abs(stored - fresh) > 1e-12 * max(1.0, abs(fresh)):
            raise CertificationError(f"derived {name}", f"stored {stored!r} vs {fresh!r}")
    if not (fr.lam >= 0):
        raise CertificationError("lambda >= 0", f"lambda = {fr.lam}")
    if abs(fr.sigma2 - (fr.sigma_u**2 + fr.sigma_v**2)) > 1e-12 * max(1.0, fr.sigma2):
        raise CertificationError("sigma2 identity", "sigma2 != sigma_u^2 + sigma_v^2")
    checks["derived"] = True
    if fr.cov is not None:
        keep = np.isfinite(np.diag(fr.cov))
        C = fr.cov[np.ix_(keep, keep)]
        if not np.allclose(C, C.T, rtol=0, atol=1e-12 * max(1.0, np.abs(C).max())):
            raise CertificationError("covariance symmetric", "cov is not symmetric")
        w = np.linalg.eigvalsh(C)
        if w.min() < -1e-10 * max(1.0, w.max()):
            raise CertificationError("covariance PSD", f"smallest eigenvalue {w.min():.3g}")
        checks["covariance"] = True
    return Certification(True, ll, gn, checks)
