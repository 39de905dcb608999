"""Independent reference computations: quadrature over u and mpmath special functions.

Nothing here imports the package; the composed-error density is rebuilt by
integrating the noise density against the inefficiency density.
"""

import math

import mpmath as mp
from scipy import integrate

mp.mp.dps = 40


def phi(x):
    return math.exp(-0.5 * x * x) / math.sqrt(2 * math.pi)


def mp_log_ndtr(x):
    return float(mp.log(mp.ncdf(x)))


def _quad(f, lo, hi, peak):
    pts = [p for p in peak if lo < p < hi]
    if math.isinf(hi):
        edge = max([lo] + pts) + 40.0
        a, _ = integrate.quad(f, lo, edge, points=pts or None, epsabs=0, epsrel=1e-13, limit=400)
        b, _ = integrate.quad(f, edge, hi, epsabs=0, epsrel=1e-13, limit=400)
        return a + b
    val, _ = integrate.quad(f, lo, hi, points=pts or None, epsabs=0, epsrel=1e-13, limit=400)
    return val


def tn_u_density(mu, s_u):
    """Density of N(mu, s_u^2) truncated to [0, inf)."""
    norm = float(mp.ncdf(mu / s_u))
    return lambda u: phi((u - mu) / s_u) / (s_u * norm)


def composed_density(eps, s_v, s_u, mu=0.0):
    """f(eps) = int_0^inf phi_v(eps - u) g(u) du for eps = v + u."""
    g = tn_u_density(mu, s_u)
    f = lambda u: phi((eps - u) / s_v) / s_v * g(u)
    return _quad(f, 0.0, math.inf, [eps, max(mu, 0.0)])


def posterior_moment(eps, s_v, s_u, h, mu=0.0):
    """E[h(u) | eps] by quadrature of the joint density."""
    g = tn_u_density(mu, s_u)
    joint = lambda u: phi((eps - u) / s_v) / s_v * g(u)
    den = _quad(joint, 0.0, math.inf, [eps, max(mu, 0.0)])
    num = _quad(lambda u: h(u) * joint(u), 0.0, math.inf, [eps, max(mu, 0.0)])
    return num / den


def mp_truncated_moments(mu_star, sig_star):
    """E[u] and E[exp(-u)] for N+(mu_star, sig_star^2), evaluated in mpmath.

    Adaptive quadrature carried out at 40 digits; used where double
    precision quadrature would underflow (mu_star / sig_star = -25).
    """
    m, s = mp.mpf(mu_star), mp.mpf(sig_star)
    z = m / s
    Z = mp.ncdf(z)
    f = lambda u: mp.npdf(u, m, s) / Z
    pts = [0, m, m + 8 * s, mp.inf] if m > 0 else [0, s / max(1, -z), s, mp.inf]
    eu = mp.quad(lambda u: u * f(u), pts)
    ee = mp.quad(lambda u: mp.exp(-u) * f(u), pts)
    return float(eu), float(ee)


def mp_tn_logpdf(eps, mu, s_v, s_u, dps=80):
    """Closed-form normal/truncated-normal log-density at high working precision."""
    with mp.workdps(dps):
        eps, mu, s_v, s_u = (mp.mpf(x) for x in (eps, mu, s_v, s_u))
        s2 = s_u**2 + s_v**2
        sig = mp.sqrt(s2)
        m = (s_v**2 * mu + s_u**2 * eps) / s2
        s = s_u * s_v / sig
        return float(-mp.log(sig) + mp.log(mp.npdf((eps - mu) / sig))
                     + mp.log(mp.ncdf(m / s)) - mp.log(mp.ncdf(mu / s_u)))
