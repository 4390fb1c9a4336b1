"""Reduced fundamental-solution profiles for subdiffusion.

The free-space fundamental solution of the subdiffusion operator with
constant conductivity gamma0 separates into a time scale factor and a
radial profile ("reduced" profile) of the similarity variable
x / sqrt(gamma0 t^alpha).  The profile in d dimensions is the radial
inverse Fourier transform of xi -> E_alpha(-|xi|^2):

    psi_d(r) = (2 pi)^(-d) int_{R^d} E_alpha(-|xi|^2) e^(i xi.x) dxi,  r = |x|.

This module provides:

* ``reduced_green_oracle``: a slow, high-accuracy evaluation of psi_d by
  complex-contour quadrature of the Fourier integral (the oracle against
  which everything else is validated),
* ``fit_green_coeffs`` / ``GreenCoeffs``: the decay rate a0 and the
  coefficients of the large-argument asymptotic expansion, recovered
  numerically by regression against the oracle,
* ``reduced_green_series``: the truncated asymptotic expansion,
* ``s_kernel``: the scalar profile S_{d,N} of the expansion's gradient,
  grad psi_{d,N}(x) = x S_{d,N}(|x|^2),
* ``approx_fundamental`` / ``grad_approx_fundamental``: space-time
  kernels built from the truncated expansion by the similarity scaling.

Numerical notes on the oracle.  The transforms are oscillatory and their
values decay like exp(-a0 r^(2/(2-alpha))), far below float64 resolution
of the integrand mass, so a naive real-axis quadrature loses all relative
accuracy at large r.  Instead the integration contour is shifted to the
saddle height s = (alpha r / 2)^(alpha/(2-alpha)): the factor e^(-s r)
then carries the exponential smallness explicitly and the remaining
integral is O(1) relative to the answer, so a fixed working precision of
a few dozen digits suffices at every r.  The Mittag-Leffler function is
evaluated on the contour from its Taylor series (with guard digits
proportional to the cancellation), or from the exponentially-improved
algebraic expansion away from the origin.  Everything runs in mpmath and
only the final value is rounded to float.

For alpha below ~0.3 the Taylor guard-digit budget grows steeply, so
large-r oracle calls get slow there; the shipped workflows use alpha in
[0.3, 1].
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import mpmath as mp
import numpy as np

from .errors import ConfigError, QuadratureError

__all__ = [
    "GreenCoeffs",
    "DEFAULT_SERIES_TERMS",
    "MAX_SERIES_TERMS",
    "reduced_green_oracle",
    "fit_green_coeffs",
    "reduced_green_series",
    "s_kernel",
    "approx_fundamental",
    "grad_approx_fundamental",
]

DEFAULT_SERIES_TERMS = 3
MAX_SERIES_TERMS = 5

_DPS = 33  # flat working precision; see module docstring
_R_DIRECT = 3.0  # below this radius the unshifted contour is used


# ---------------------------------------------------------------------------
# Mittag-Leffler on complex contours (mpmath)
# ---------------------------------------------------------------------------


@lru_cache(maxsize=32)
def _rgamma_neg_table(alpha_key: float, dps: int, count: int):
    """rgamma(1 - alpha k), k = 1..count, computed in mp arithmetic.

    alpha enters as an exact mpf: float products alpha*k would inject
    per-term rounding jitter that the large cancelling terms amplify.
    Arguments landing within float-rounding distance of a Gamma pole are
    treated as exact poles (rgamma = 0): otherwise the tiny spurious
    values break the terms-grow truncation test of the asymptotic series.
    """
    out = []
    with mp.workdps(dps + 10):
        a = mp.mpf(alpha_key)
        for k in range(1, count + 1):
            t = 1 - a * k
            n = mp.nint(t)
            if n <= 0 and abs(t - n) < mp.mpf(1e-9):
                out.append(mp.mpf(0))
            else:
                out.append(mp.rgamma(t))
    return tuple(out)


@lru_cache(maxsize=32)
def _rgamma_pos_table(alpha_key: float, dps: int, count: int):
    """rgamma(alpha k + 1), k = 0..count-1, in mp arithmetic."""
    with mp.workdps(dps + 10):
        a = mp.mpf(alpha_key)
        return tuple(mp.rgamma(a * k + 1) for k in range(count))


def _ml_taylor_mp(alpha: float, z, dps: int):
    """Power series with cancellation-aware guard digits."""
    az = abs(z)
    guard = int(0.45 * float(az) ** (1.0 / alpha)) + 15
    if guard > 6000:
        raise QuadratureError(
            f"Taylor guard digits {guard} unaffordable at |z|={float(az):.3g}, alpha={alpha}"
        )
    # term budget: turnover near |z|^(1/alpha)/alpha, plus the tail needed
    # to push terms below the (guarded) tolerance
    kmax = int(3 * float(az) ** (1.0 / alpha) / alpha + 6 * (dps + guard) / alpha) + 80
    # round the precision and length up to coarse buckets so the cached
    # rgamma tables are reused across quadrature nodes
    work = 40 * ((dps + guard) // 40 + 1)
    kmax = 500 * (kmax // 500 + 1)
    table = _rgamma_pos_table(alpha, work, kmax)
    with mp.workdps(work):
        # mag() is an O(1) exponent lookup; abs() of an mpc costs a sqrt
        stop_mag = int(-3.33 * (dps + 10))
        s = mp.mpf(0)
        zk = mp.mpc(1)
        for k in range(kmax):
            t = zk * table[k]
            s += t
            if k > 4 and mp.mag(t) < stop_mag + max(mp.mag(s), 0):
                break
            zk = zk * z
        else:
            raise QuadratureError("Mittag-Leffler Taylor series did not converge")
    return +s


def _ml_asymptotic_mp(alpha: float, z, dps: int):
    """Exponentially-improved algebraic expansion for large |z|.

    Returns None if the optimal truncation cannot reach ~1e-20 relative
    (caller falls back to Taylor).  The exponential term (1/alpha)
    exp(z^(1/alpha)) is present on the principal sheet exactly for
    |arg z| < alpha pi; including it throughout that sector is safe
    because it is exponentially small wherever it is subdominant.
    """
    table = _rgamma_neg_table(alpha, dps, 300)
    zinv = 1 / z
    tot = mp.mpc(0)
    min_mag = mp.inf
    zk = zinv
    floor_hit = False
    for k in range(1, 300):
        term = -zk * table[k - 1]
        if term:
            tm = mp.mag(term)
            # term sizes jitter by a few bits (the sin factor of the
            # reflection formula oscillates), so demand sustained growth
            # above the running minimum before declaring divergence
            if tm > min_mag + 5:
                break
            tot += term
            if tm < min_mag:
                min_mag = tm
        zk = zk * zinv
        if min_mag < max(mp.mag(tot), -int(3.33 * dps)) - int(3.33 * (dps + 5)):
            floor_hit = True
            break
    if not floor_hit and min_mag > mp.mag(tot) - 72:  # ~1e-20 relative
        return None
    if abs(mp.arg(z)) < mp.pi * alpha:
        tot += mp.e ** (z ** (1 / mp.mpf(alpha))) / alpha
    return tot


def _asym_radius(alpha: float) -> float:
    """Switch radius for the algebraic expansion.

    Inside |z| = 39^alpha the exponential term near the sector boundary
    |arg z| = alpha pi is only ~exp(-|z|^(1/alpha)) > 1e-15 relative, so
    the Taylor series is used instead (its guard digits stay modest
    because 0.45 |z|^(1/alpha) <= 0.45*39 there).  The optimal-truncation
    acceptance test still rejects radii where the algebraic series is too
    shallow, falling back to Taylor.
    """
    return max(2.2, 39.2**alpha)


def _ml_complex_mp(alpha: float, z, dps: int):
    """E_alpha(z) for the complex arguments arising on the oracle contours."""
    if alpha == 1.0:
        return mp.e**z
    if abs(z) >= _asym_radius(alpha):
        v = _ml_asymptotic_mp(alpha, z, dps)
        if v is not None:
            return v
    return _ml_taylor_mp(alpha, z, dps)


# ---------------------------------------------------------------------------
# Oracle: contour quadrature of the radial inverse Fourier transform
# ---------------------------------------------------------------------------


def _k0_mp(w, dps: int):
    """K_0(w) for Re w > 0, |arg w| < pi/4 or so.

    mp.besselk runs generic hypergeometric code (~10 ms per call), far
    too slow inside the contour quadratures.  For large |w| the
    asymptotic expansion sqrt(pi/2w) e^-w sum c_k w^-k is summed to its
    optimal truncation (error ~exp(-2|w|) <= 5e-32 at the switch radius);
    below it the standard log-form power series with guard digits against
    the e^|w| cancellation.
    """
    aw = abs(w)
    if aw >= 36:
        s = mp.mpc(1)
        term = mp.mpc(1)
        winv = 1 / (8 * w)
        stop = -int(3.33 * (dps + 5))
        prev = mp.inf
        for k in range(1, 400):
            term = term * (-((2 * k - 1) ** 2)) * winv / k
            tm = mp.mag(term)
            if tm > prev:
                break
            s += term
            prev = tm
            if tm < stop:
                break
        return mp.sqrt(mp.pi / (2 * w)) * mp.e ** (-w) * s
    # series terms reach ~e^|w| while K0 ~ e^-|w|: e^(2|w|) cancellation
    guard = int(0.9 * float(aw)) + 8
    with mp.workdps(dps + guard):
        q = w * w / 4
        t = mp.mpc(1)  # (w^2/4)^k / (k!)^2
        s0 = mp.mpc(1)
        s1 = mp.mpc(0)
        h = mp.mpf(0)
        # truncation must be absolute at the scale of K0 ~ e^-|w|, not
        # relative to the e^+|w| partial sums
        stop = -int(1.45 * float(aw)) - int(3.33 * (dps + 8))
        for k in range(1, 1000):
            t = t * q / (k * k)
            h += mp.mpf(1) / k
            s0 += t
            s1 += t * h
            if mp.mag(t) < stop:
                break
        v = -(mp.log(w / 2) + mp.euler) * s0 + s1
    return +v


def _hankel1_0(w, dps: int = _DPS):
    """H_0^(1)(w) for Im w >= 0 via the MacDonald function.

    mp.hankel1 forms J0 + i Y0, which cancels catastrophically high in
    the upper half plane; K0 of the rotated argument is stable there.
    """
    return 2 / (1j * mp.pi) * _k0_mp(-1j * w, dps)


def _psi_direct_mp(d: int, alpha: float, r, dps: int):
    """Unshifted contour for small r: real-axis start plus rotated tail."""
    E = lambda z: _ml_complex_mp(alpha, z, dps)
    theta = mp.pi / 5 if alpha >= 0.5 else mp.pi * alpha * 2 / 5
    eit = mp.e ** (1j * theta)
    sin_t = mp.sin(theta)
    L = (dps * mp.log(10) + 12) / (r * sin_t)
    if d == 2:
        A = mp.mpf(6)
        p_real = mp.quad(
            lambda x: mp.re(E(-x * x)) * mp.besselj(0, x * r) * x,
            [0, 2, A],
            method="gauss-legendre",
        )

        def f_tail(p):
            xi = A + p * eit
            return E(-xi * xi) * _hankel1_0(xi * r) * xi * eit

        p_tail = mp.quad(f_tail, [0, L / 16, L / 4, L], method="gauss-legendre")
        return (p_real + mp.re(p_tail)) / (2 * mp.pi)
    if d == 1:

        def f_ray(p):
            xi = p * eit
            return E(-xi * xi) * mp.e ** (1j * xi * r) * eit

        v = mp.quad(f_ray, [0, L / 16, L / 4, L], method="gauss-legendre")
        return mp.re(v) / mp.pi
    # d == 3

    def f_ray3(p):
        xi = p * eit
        return E(-xi * xi) * xi * mp.e ** (1j * xi * r) * eit

    v = mp.quad(f_ray3, [0, L / 16, L / 4, L], method="gauss-legendre")
    return mp.im(v) / (2 * mp.pi**2 * r)


def _psi_shifted_mp(d: int, alpha: float, r, dps: int):
    """Saddle-height shifted contour for large r (no catastrophic cancellation)."""
    E = lambda z: _ml_complex_mp(alpha, z, dps)
    a = mp.mpf(alpha)
    s = (a * r / 2) ** (a / (2 - a))
    H = mp.mpf(2.2) * s
    theta = mp.pi / 6
    eit = mp.e ** (1j * theta)
    L = (dps * mp.log(10) + 12) / (r * mp.sin(theta))

    if d == 2:

        def f_hor(e):
            xi = e + 1j * s
            return E(-xi * xi) * _hankel1_0(xi * r) * xi

        def f_tail(p):
            xi = H + p * eit + 1j * s
            return E(-xi * xi) * _hankel1_0(xi * r) * xi * eit

        # mp.quad's stopping test is absolute at scale 10^-dps, so an
        # integral whose value is exponentially small exits early with no
        # relative accuracy; rescale to O(1) by the peak integrand value.
        peak = abs(f_hor(mp.mpf(0)))
        v = mp.quad(
            lambda e: f_hor(e) / peak, [0, float(s), float(H)], method="gauss-legendre"
        ) + mp.quad(lambda p: f_tail(p) / peak, [0, L / 8, L], method="gauss-legendre")
        return peak * mp.re(v) / (2 * mp.pi)

    if d == 1:

        def f_hor1(e):
            xi = e + 1j * s
            return E(-xi * xi) * mp.e ** (1j * e * r)

        def f_tail1(p):
            w = H + p * eit
            xi = w + 1j * s
            return E(-xi * xi) * mp.e ** (1j * w * r) * eit

        v = mp.quad(f_hor1, [0, float(s), float(H)], method="gauss-legendre") + mp.quad(
            f_tail1, [0, L / 8, L], method="gauss-legendre"
        )
        return mp.e ** (-s * r) * mp.re(v) / mp.pi

    def f_hor3(e):
        xi = e + 1j * s
        return E(-xi * xi) * xi * mp.e ** (1j * e * r)

    def f_tail3(p):
        w = H + p * eit
        xi = w + 1j * s
        return E(-xi * xi) * xi * mp.e ** (1j * w * r) * eit

    v = mp.quad(f_hor3, [0, float(s), float(H)], method="gauss-legendre") + mp.quad(
        f_tail3, [0, L / 8, L], method="gauss-legendre"
    )
    return mp.e ** (-s * r) * mp.im(v) / (2 * mp.pi**2 * r)


def _psi_mp(d: int, alpha: float, r_val: float, dps: int = _DPS):
    if d not in (1, 2, 3):
        raise ConfigError(f"dimension must be 1, 2 or 3, got {d}")
    if not (0.0 < alpha <= 1.0):
        raise ConfigError(f"alpha must lie in (0, 1], got {alpha}")
    if not (r_val > 0.0):
        raise ConfigError(f"radius must be positive, got {r_val}")
    with mp.workdps(dps):
        r = mp.mpf(r_val)
        if r_val <= _R_DIRECT:
            return _psi_direct_mp(d, alpha, r, dps)
        return _psi_shifted_mp(d, alpha, r, dps)


@lru_cache(maxsize=4096)
def _psi_cached(d: int, alpha: float, r_val: float) -> float:
    return float(_psi_mp(d, alpha, r_val))


def reduced_green_oracle(d: int, alpha: float, r) -> float | np.ndarray:
    """High-accuracy reduced profile psi_d(r) by contour quadrature.

    Scalar or array ``r``.  Intended as a reference: costs ~0.1-1 s per
    new (d, alpha, r) triple, values are cached per process.
    """
    r_arr = np.asarray(r, dtype=float)
    if r_arr.ndim == 0:
        return _psi_cached(d, alpha, float(r_arr))
    return np.array([_psi_cached(d, alpha, float(v)) for v in r_arr.ravel()]).reshape(r_arr.shape)


# ---------------------------------------------------------------------------
# Fitted asymptotic expansion
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GreenCoeffs:
    """Decay rate and asymptotic-expansion coefficients of the profiles.

    The large-r expansions share one exponential rate a0:

        psi_1(r) ~ exp(-a0 r^q) r^(-(1-alpha)/(2-alpha)) sum_k a1[k] r^(-k q)
        psi_2(r) ~ exp(-a0 r^q) r^(-(2-2 alpha)/(2-alpha)) sum_k a2[k] r^(-k q)
        psi_3(r)  = -(2 pi r)^(-1) d/dr psi_1(r)   (termwise)

    with q = 2/(2-alpha).  a1/a2 hold up to MAX_SERIES_TERMS coefficients;
    a truncation order N uses the first N of them.
    """

    alpha: float
    a0: float
    a1: tuple
    a2: tuple

    def __post_init__(self) -> None:
        # normalize to builtin floats so repr-based serialization is clean
        object.__setattr__(self, "alpha", float(self.alpha))
        object.__setattr__(self, "a0", float(self.a0))
        object.__setattr__(self, "a1", tuple(float(c) for c in self.a1))
        object.__setattr__(self, "a2", tuple(float(c) for c in self.a2))
        if not (0.0 < self.alpha <= 1.0):
            raise ConfigError(f"alpha must lie in (0, 1], got {self.alpha}")
        if not (0.0 < self.a0 < 1.0):
            raise ConfigError(f"fitted decay rate a0 must lie in (0, 1), got {self.a0}")
        if len(self.a1) == 0 or len(self.a2) == 0:
            raise ConfigError("coefficient lists must be non-empty")
        if self.a1[0] <= 0 or self.a2[0] <= 0:
            raise ConfigError("leading expansion coefficients must be positive")

    # -- plain-text (de)serialization so fits can be cached between runs --

    def to_text(self) -> str:
        lines = [
            "# reduced-profile expansion coefficients",
            f"alpha = {self.alpha!r}",
            f"a0 = {self.a0!r}",
            "a1 = " + " ".join(repr(c) for c in self.a1),
            "a2 = " + " ".join(repr(c) for c in self.a2),
        ]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "GreenCoeffs":
        fields: dict = {}
        for raw in text.splitlines():
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"malformed coefficient line: {line!r}")
            key, _, val = line.partition("=")
            fields[key.strip()] = val.strip()
        try:
            return cls(
                alpha=float(fields["alpha"]),
                a0=float(fields["a0"]),
                a1=tuple(float(v) for v in fields["a1"].split()),
                a2=tuple(float(v) for v in fields["a2"].split()),
            )
        except KeyError as exc:
            raise ConfigError(f"missing coefficient field: {exc}") from exc

    def save(self, path) -> None:
        with open(path, "w", encoding="ascii") as fh:
            fh.write(self.to_text())

    @classmethod
    def load(cls, path) -> "GreenCoeffs":
        with open(path, "r", encoding="ascii") as fh:
            return cls.from_text(fh.read())


def _prefactor_exponent(d: int, alpha: float) -> float:
    if d == 1:
        return (1.0 - alpha) / (2.0 - alpha)
    if d == 2:
        return (2.0 - 2.0 * alpha) / (2.0 - alpha)
    raise ConfigError(f"no direct expansion for d={d}")


_FIT_R_LO = 5.0
_FIT_R_HI = 80.0


def _fit_exponential_rate(alpha: float, rho, g) -> float:
    """Least squares for a0 in g = -a0 rho + log-correction(1/rho)."""
    basis = np.stack([rho, np.ones_like(rho), 1 / rho, 1 / rho**2, 1 / rho**3], axis=1)
    coef, *_ = np.linalg.lstsq(basis, g, rcond=None)
    return -coef[0]


@lru_cache(maxsize=8)
def fit_green_coeffs(alpha: float, n_terms: int = MAX_SERIES_TERMS) -> GreenCoeffs:
    """Recover a0 and the expansion coefficients by regression on the oracle.

    a0 comes from a log-linear fit of the d=1 profile over r in
    [5, 80] (the d=2 estimate is required to agree and is only used as a
    consistency check, since the rate is shared).  Given a0, the
    coefficient lists are ordinary weighted least squares on the
    exponential-free remainder, with two internal extra terms so the
    reported coefficients are not polluted by the first neglected order.
    """
    if not (1 <= n_terms <= MAX_SERIES_TERMS):
        raise ConfigError(f"n_terms must be in 1..{MAX_SERIES_TERMS}, got {n_terms}")
    if not (0.0 < alpha <= 1.0):
        raise ConfigError(f"alpha must lie in (0, 1], got {alpha}")
    q = 2.0 / (2.0 - alpha)
    r1 = np.geomspace(_FIT_R_LO, _FIT_R_HI, 26)
    r2 = np.geomspace(_FIT_R_LO, _FIT_R_HI, 18)

    vals = {}
    for d, rs in ((1, r1), (2, r2)):
        with mp.workdps(_DPS):
            vals[d] = [_psi_mp(d, alpha, float(r)) for r in rs]
        for r, v in zip(rs, vals[d]):
            if not v > 0:
                raise QuadratureError(f"oracle returned non-positive value at d={d}, r={r}")

    a0_est = {}
    for d, rs in ((1, r1), (2, r2)):
        p = _prefactor_exponent(d, alpha)
        rho = rs**q
        g = np.array([float(mp.log(v)) for v in vals[d]]) + p * np.log(rs)
        a0_est[d] = _fit_exponential_rate(alpha, rho, g)
    if abs(a0_est[1] - a0_est[2]) > 1e-4:
        raise QuadratureError(
            f"decay-rate fits disagree between d=1 ({a0_est[1]:.8f}) and d=2 ({a0_est[2]:.8f})"
        )
    a0 = a0_est[1]
    if not (0.0 < a0 < 1.0):
        raise QuadratureError(f"fitted decay rate a0={a0} outside (0, 1)")

    n_fit = min(n_terms + 2, 7)
    coeffs = {}
    for d, rs in ((1, r1), (2, r2)):
        p = _prefactor_exponent(d, alpha)
        with mp.workdps(_DPS):
            h = np.array(
                [
                    float(v * mp.e ** (mp.mpf(a0) * mp.mpf(float(r)) ** q) * mp.mpf(float(r)) ** p)
                    for r, v in zip(rs, vals[d])
                ]
            )
        svar = rs ** (-q)
        scale = svar.max()
        basis = np.stack([(svar / scale) ** k for k in range(n_fit)], axis=1)
        w = 1.0 / h
        sol, *_ = np.linalg.lstsq(basis * w[:, None], h * w, rcond=None)
        coeffs[d] = tuple(float(sol[k] / scale**k) for k in range(n_terms))
    return GreenCoeffs(alpha=alpha, a0=a0, a1=coeffs[1], a2=coeffs[2])


# ---------------------------------------------------------------------------
# Truncated series, gradient kernels, space-time kernels
# ---------------------------------------------------------------------------


def _check_terms(coeffs: GreenCoeffs, d: int, n_terms: int) -> None:
    stored = len(coeffs.a1) if d in (1, 3) else len(coeffs.a2)
    if not (1 <= n_terms <= stored):
        raise ConfigError(f"series order {n_terms} outside 1..{stored}")


def reduced_green_series(coeffs: GreenCoeffs, d: int, n_terms: int, r):
    """Truncated large-argument expansion of psi_d at radius r (vectorized)."""
    _check_terms(coeffs, d, n_terms)
    r_arr = np.asarray(r, dtype=float)
    if np.any(r_arr <= 0.0):
        raise ConfigError("series radius must be positive")
    alpha = coeffs.alpha
    q = 2.0 / (2.0 - alpha)
    expfac = np.exp(-coeffs.a0 * r_arr**q)
    if d in (1, 2):
        p = _prefactor_exponent(d, alpha)
        a = coeffs.a1 if d == 1 else coeffs.a2
        acc = np.zeros_like(r_arr)
        for k in range(n_terms - 1, -1, -1):
            acc = acc * r_arr ** (-q) + a[k]
        return expfac * r_arr ** (-p) * acc
    if d != 3:
        raise ConfigError(f"dimension must be 1, 2 or 3, got {d}")
    # termwise -(2 pi r)^(-1) d/dr of the d=1 expansion
    acc = np.zeros_like(r_arr)
    a0q = coeffs.a0 * q
    for k in range(n_terms):
        m_k = (1.0 - alpha + 2.0 * k) / (2.0 - alpha)
        acc = acc + coeffs.a1[k] * (a0q * r_arr ** (q - 1.0 - m_k) + m_k * r_arr ** (-m_k - 1.0))
    return expfac * acc / (2.0 * math.pi * r_arr)


def s_kernel(coeffs: GreenCoeffs, d: int, n_terms: int, y):
    """Gradient profile S_{d,N}: grad psi_{d,N}(x) = x S_{d,N}(|x|^2).

    Only the dimensions used by the locators are provided (d = 2, 3).
    S is negative for n_terms = 1 and, for higher orders, negative
    outside a bounded set; the locators rely on that sign.
    """
    r_arr = np.asarray(y, dtype=float)
    if np.any(r_arr <= 0.0):
        raise ConfigError("s_kernel argument must be positive")
    alpha = coeffs.alpha
    ia = 1.0 / (2.0 - alpha)
    expfac = np.exp(-coeffs.a0 * r_arr**ia)
    if d == 2:
        _check_terms(coeffs, 2, n_terms)
        acc = np.zeros_like(r_arr)
        for k in range(n_terms):
            inner = (
                -(coeffs.a0 * ia) * r_arr ** ((alpha - 1.0) * ia)
                + ((alpha - 1.0 - k) * ia) / r_arr
            )
            acc = acc + coeffs.a2[k] * inner * r_arr ** ((alpha - 1.0 - k) * ia)
        return 2.0 * expfac * acc
    if d == 3:
        _check_terms(coeffs, 3, n_terms)
        acc = np.zeros_like(r_arr)
        g = 2.0 * ia  # 2/(2-alpha)
        for k in range(n_terms):
            t1 = (coeffs.a0 * g) ** 2 * r_arr ** ((5.0 * alpha - 5.0 - 2.0 * k) * ia / 2.0)
            t2 = (
                8.0 * coeffs.a0 * (k + 1.0 - alpha) * ia**2
            ) * r_arr ** ((5.0 * alpha - 7.0 - 2.0 * k) * ia / 2.0)
            t3 = (
                (2.0 * k + 1.0 - alpha) * (2.0 * k + 5.0 - 3.0 * alpha) * ia**2
            ) * r_arr ** ((5.0 * alpha - 9.0 - 2.0 * k) * ia / 2.0)
            acc = acc + coeffs.a1[k] * (t1 + t2 + t3)
        return -expfac * acc / (2.0 * math.pi)
    raise ConfigError(f"s_kernel defined for d in {{2, 3}}, got {d}")


def approx_fundamental(
    coeffs: GreenCoeffs,
    d: int,
    n_terms: int,
    x,
    t: float,
    src,
    t0: float = 0.0,
    gamma0: float = 1.0,
):
    """Truncated fundamental-solution kernel with pole (src, t0).

    x: point array of shape (d,) or batch (m, d); requires t > t0.
    """
    if not t > t0:
        raise ConfigError(f"kernel requires t > t0, got t={t}, t0={t0}")
    x_arr = np.atleast_2d(np.asarray(x, dtype=float))
    src_arr = np.asarray(src, dtype=float)
    lam = gamma0 * (t - t0) ** coeffs.alpha
    scaled = (x_arr - src_arr) / math.sqrt(lam)
    rr = np.sqrt((scaled**2).sum(axis=1))
    vals = reduced_green_series(coeffs, d, n_terms, rr) * lam ** (-d / 2.0)
    return vals[0] if np.asarray(x).ndim == 1 else vals


def grad_approx_fundamental(
    coeffs: GreenCoeffs,
    d: int,
    n_terms: int,
    x,
    t: float,
    src,
    t0: float = 0.0,
    gamma0: float = 1.0,
):
    """Spatial gradient of the truncated kernel at (x, t).

    Equals lam^(-(d+1)/2) xi S_{d,N}(|xi|^2) with xi = (x-src)/sqrt(lam),
    lam = gamma0 (t-t0)^alpha.  Shape follows x: (d,) -> (d,), (m,d) -> (m,d).
    """
    if not t > t0:
        raise ConfigError(f"kernel requires t > t0, got t={t}, t0={t0}")
    x_in = np.asarray(x, dtype=float)
    x_arr = np.atleast_2d(x_in)
    src_arr = np.asarray(src, dtype=float)
    lam = gamma0 * (t - t0) ** coeffs.alpha
    scaled = (x_arr - src_arr) / math.sqrt(lam)
    y = (scaled**2).sum(axis=1)
    grads = lam ** (-(d + 1) / 2.0) * scaled * s_kernel(coeffs, d, n_terms, y)[:, None]
    return grads[0] if x_in.ndim == 1 else grads
