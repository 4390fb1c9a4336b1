"""Multi-inclusion location from a matrix of probe measurements.

The data matrix B collects boundary measurements for every pairing of a
moving-source background with a moving-source probe.  Its numerical
column space encodes the inclusion centers: scanning the indicator

    W(z) = ||G(z)||_F / ||Q_k G(z)||_F,   Q_k = I - V_k V_k^T,

over interior points z lights up near the centers, where G(z) is the
kernel matrix a point inclusion at z would produce and V_k holds the
leading k left singular vectors of B.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, QuadratureError, ReconstructionError, SolverError
from .forward import add_noise, boundary_restrict, solve_background, solve_subdiffusion
from .fracmath import TimeGrid
from .greenfn import approx_fundamental, grad_approx_fundamental, s_kernel
from .measure import KernelProbe, measurement_boundary

GAUSS_POINTS_PER_PANEL = 8
REFINEMENT_LEVELS = 6
SENTINEL_RATIO = 1e-14
SENTINEL_VALUE = 1e14


@dataclass(frozen=True)
class SourceSet:
    """Probe/background source points on an arc outside the domain.

    The arc has radius ``radius``, angular width ``aperture`` and is
    centered at ``center_angle``.  It is split into ``n`` cells of equal
    arc measure and the sources sit at the cell midpoints.
    """

    n: int
    radius: float = 2.0
    aperture: float = 2.0 * np.pi
    center_angle: float = 0.0

    def __post_init__(self):
        if self.n < 2:
            raise ConfigError(f"need at least 2 sources, got {self.n}")
        if self.radius <= 1.0:
            raise ConfigError(
                f"source radius {self.radius} must exceed the domain radius 1"
            )
        if not 0.0 < self.aperture <= 2.0 * np.pi + 1e-12:
            raise ConfigError(f"aperture {self.aperture} outside (0, 2*pi]")

    @property
    def angles(self):
        """Midpoint angles of the n arc cells."""
        start = self.center_angle - 0.5 * self.aperture
        step = self.aperture / self.n
        return start + step * (np.arange(self.n) + 0.5)

    @property
    def points(self):
        th = self.angles
        return self.radius * np.column_stack([np.cos(th), np.sin(th)])

    @property
    def cell_measure(self):
        return self.radius * self.aperture / self.n


def source_configuration(kind, n=None, radius=2.0):
    """Named arc layouts: full circle, half aperture, quarter aperture.

    The limited apertures default to denser source counts (15 on the
    half arc, 20 on the quarter arc) to compensate for the narrower
    observation window.
    """
    layouts = {
        "full": (2.0 * np.pi, 10),
        "half": (np.pi, 15),
        "quarter": (0.5 * np.pi, 20),
    }
    if kind not in layouts:
        raise ConfigError(f"unknown source configuration {kind!r}")
    aperture, default_n = layouts[kind]
    return SourceSet(n=default_n if n is None else n, radius=radius, aperture=aperture)


@dataclass(frozen=True)
class DataMatrix:
    """Measurement matrix with its singular value decomposition.

    B[i, j] holds the measurement of the background solution launched
    from source j against the probe anchored at source i.
    """

    B: np.ndarray
    singular_values: np.ndarray = field(default=None)
    left_vectors: np.ndarray = field(default=None)

    def __post_init__(self):
        B = np.asarray(self.B, dtype=float)
        if B.ndim != 2 or B.shape[0] != B.shape[1]:
            raise ConfigError(f"data matrix must be square, got shape {B.shape}")
        if not np.all(np.isfinite(B)):
            raise SolverError("data matrix contains non-finite entries")
        object.__setattr__(self, "B", B)
        if self.singular_values is None:
            u, s, _ = np.linalg.svd(B)
            object.__setattr__(self, "singular_values", s)
            object.__setattr__(self, "left_vectors", u)
        else:
            s = np.asarray(self.singular_values, dtype=float)
            if np.any(s < 0.0) or np.any(np.diff(s) > 0.0):
                raise ConfigError("singular values must be nonnegative and sorted")
            object.__setattr__(self, "singular_values", s)
            object.__setattr__(
                self, "left_vectors", np.asarray(self.left_vectors, dtype=float)
            )

    @property
    def n(self):
        return self.B.shape[0]


def build_data_matrix(
    sources,
    inclusions,
    alpha,
    coeffs,
    mesh,
    grid,
    n_terms=3,
    gamma0=1.0,
    sigma=0.0,
    seed=None,
    t_init=None,
):
    """Solve the forward pairs for every source and fill the matrix.

    For source j the background is the order-``n_terms`` approximate
    fundamental solution launched at that source; both the perturbed and
    the unperturbed problem are marched from its value at a small
    positive offset ``t_init`` (default T/2^7) so the initial datum is
    smooth on the closed domain.  Noise, if any, is applied to the
    perturbed trace only, independently per source.
    """
    if t_init is None:
        t_init = grid.t_final / 2.0**7
    if t_init <= 0.0:
        raise ConfigError(f"t_init must be positive, got {t_init}")
    pts = sources.points
    d = pts.shape[1]
    children = (
        [None] * sources.n
        if sigma == 0.0
        else np.random.SeedSequence(seed).spawn(sources.n)
    )
    diffs = []
    for j in range(sources.n):
        src = tuple(pts[j])

        def u0(p, src=src):
            return approx_fundamental(
                coeffs, d, n_terms, p, 0.0, src, t0=-t_init, gamma0=gamma0
            )

        def g(p, t, nrm, src=src):
            gr = grad_approx_fundamental(
                coeffs, d, n_terms, p, t, src, t0=-t_init, gamma0=gamma0
            )
            return gamma0 * np.sum(gr * nrm, axis=1)

        u = solve_subdiffusion(mesh, alpha, inclusions, None, u0, g, grid)
        U = solve_background(mesh, alpha, None, u0, g, grid)
        tr = boundary_restrict(u)
        if sigma > 0.0:
            tr = add_noise(tr, sigma, children[j])
        diffs.append(tr.diff(boundary_restrict(U)))

    B = np.empty((sources.n, sources.n))
    for i in range(sources.n):
        probe = KernelProbe(
            coeffs=coeffs,
            d=d,
            n_terms=n_terms,
            source=tuple(pts[i]),
            t_final=grid.t_final,
            gamma0=gamma0,
        )
        for j in range(sources.n):
            B[i, j] = measurement_boundary(
                diffs[j], probe.normal_derivative, gamma0
            ).value
    return DataMatrix(B)


def _gauss_panels(t_final):
    """Composite Gauss nodes on a partition refined toward both endpoints.

    Panels halve geometrically toward t=0 and t=T (ratio 2, six levels)
    because the integrand dies super-polynomially there while its scale
    varies over orders of magnitude across the interval.
    """
    half = 0.5 * t_final
    breaks = [0.0] + [half * 2.0 ** (k - REFINEMENT_LEVELS) for k in range(REFINEMENT_LEVELS + 1)]
    breaks += [t_final - b for b in reversed(breaks[:-1])]
    breaks = np.array(breaks)
    xg, wg = np.polynomial.legendre.leggauss(GAUSS_POINTS_PER_PANEL)
    a = breaks[:-1, None]
    b = breaks[1:, None]
    nodes = 0.5 * (b - a) * xg[None, :] + 0.5 * (b + a)
    weights = 0.5 * (b - a) * np.tile(wg, (breaks.size - 1, 1))
    return nodes.ravel(), weights.ravel()


def _half_factors(rho2, alpha, coeffs, d, n_terms, gamma0, s_vals):
    """S-kernel factor of the time integrand for each source radius.

    Returns an (n, q) array: row j is
    S(rho_j^2 / lam) * lam^{-(d+2)/2} over the quadrature times, with
    lam = gamma0 * s^alpha.
    """
    lam = gamma0 * s_vals**alpha
    y = rho2[:, None] / lam[None, :]
    vals = s_kernel(coeffs, d, n_terms, y.ravel()).reshape(y.shape)
    return vals * lam[None, :] ** (-(d + 2) / 2.0)


def g_matrix(z, sources, alpha, coeffs, n_terms=3, t_final=1.0, gamma0=1.0):
    """Kernel matrix of a point inclusion at z against all source pairs.

    Entry (i, j) is (z - x_i).(z - x_j) times the time integral of the
    two reduced-kernel factors, the j factor running forward in time and
    the i factor backward.  The matrix is symmetric: swapping i and j is
    undone by the substitution t -> T - t.
    """
    z = np.asarray(z, dtype=float)
    pts = sources.points
    if z.shape != (pts.shape[1],):
        raise ConfigError(f"point shape {z.shape} does not match source dimension")
    if z @ z >= 1.0:
        raise ConfigError(f"scan point {z} must be strictly inside the unit disk")
    d = pts.shape[1]
    rel = z[None, :] - pts
    rho2 = np.sum(rel * rel, axis=1)
    t_nodes, t_weights = _gauss_panels(t_final)
    fwd = _half_factors(rho2, alpha, coeffs, d, n_terms, gamma0, t_nodes)
    bwd = _half_factors(rho2, alpha, coeffs, d, n_terms, gamma0, t_final - t_nodes)
    C = (bwd * t_weights[None, :]) @ fwd.T
    if not np.all(np.isfinite(C)):
        raise QuadratureError(f"kernel integrand not finite at z={z}")
    return (rel @ rel.T) * C


def kernel_C(z, j_fwd, j_bwd, sources, alpha, coeffs, n_terms=3, t_final=1.0, gamma0=1.0):
    """Scalar time-integral kernel for one (background, probe) source pair.

    ``j_fwd`` indexes the forward-in-time factor (background source) and
    ``j_bwd`` the backward one (probe source).
    """
    z = np.asarray(z, dtype=float)
    pts = sources.points
    if not (0 <= j_fwd < sources.n and 0 <= j_bwd < sources.n):
        raise ConfigError(f"source indices ({j_fwd}, {j_bwd}) out of range")
    if z @ z >= 1.0:
        raise ConfigError(f"scan point {z} must be strictly inside the unit disk")
    d = pts.shape[1]
    rho2 = np.array(
        [np.sum((z - pts[j_fwd]) ** 2), np.sum((z - pts[j_bwd]) ** 2)]
    )
    t_nodes, t_weights = _gauss_panels(t_final)
    fwd = _half_factors(rho2[:1], alpha, coeffs, d, n_terms, gamma0, t_nodes)
    bwd = _half_factors(rho2[1:], alpha, coeffs, d, n_terms, gamma0, t_final - t_nodes)
    val = float(np.sum(fwd[0] * bwd[0] * t_weights))
    if not np.isfinite(val):
        raise QuadratureError(f"kernel integrand not finite at z={z}")
    return val


def select_truncation(singular_values, tau=1e-6):
    """Largest k with s_k / s_1 >= tau; never less than 1.

    Under noise of relative level sigma, pass tau around 10*sigma so the
    noise floor of the spectrum is excluded.
    """
    s = np.asarray(singular_values, dtype=float)
    if s.size == 0 or s[0] <= 0.0:
        raise ConfigError("spectrum is identically zero, nothing to truncate")
    if not 0.0 < tau < 1.0:
        raise ConfigError(f"threshold {tau} outside (0, 1)")
    k = int(np.sum(s / s[0] >= tau))
    return max(k, 1)


def _indicator_value(data, k, g):
    g = np.asarray(g, dtype=float)
    if not 0 <= k <= data.n:
        raise ConfigError(f"truncation level {k} outside [0, {data.n}]")
    num = float(np.linalg.norm(g))
    if num == 0.0:
        return 1.0, False
    if k == 0:
        return 1.0, False
    Vk = data.left_vectors[:, :k]
    qg = g - Vk @ (Vk.T @ g)
    den = float(np.linalg.norm(qg))
    if den < SENTINEL_RATIO * num:
        return SENTINEL_VALUE, True
    return num / den, False


def indicator(z, data, k, g):
    """Frobenius-norm ratio ||G|| / ||Q_k G|| at scan point z.

    A denominator below 1e-14 times the numerator means G(z) lies in the
    span of the leading singular vectors; the value is capped at a large
    finite sentinel so downstream CSV stays finite.
    """
    value, _ = _indicator_value(data, k, g)
    return value


@dataclass(frozen=True)
class IndicatorGrid:
    """Indicator values W on a rectangular scan grid."""

    xs: np.ndarray
    ys: np.ndarray
    values: np.ndarray
    k: int
    flags: np.ndarray = None

    def __post_init__(self):
        xs = np.asarray(self.xs, dtype=float)
        ys = np.asarray(self.ys, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if values.shape != (ys.size, xs.size):
            raise ConfigError(
                f"values shape {values.shape} does not match grid "
                f"({ys.size}, {xs.size})"
            )
        if not np.all(np.isfinite(values)):
            raise SolverError("indicator grid contains non-finite values")
        flags = self.flags
        flags = (
            np.zeros(values.shape, dtype=bool)
            if flags is None
            else np.asarray(flags, dtype=bool)
        )
        if flags.shape != values.shape:
            raise ConfigError("flags shape does not match values")
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "ys", ys)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "flags", flags)

    def to_csv(self, path):
        rows = [
            (x, y, self.values[i, j])
            for i, y in enumerate(self.ys)
            for j, x in enumerate(self.xs)
        ]
        arr = np.array(rows)
        np.savetxt(path, arr, delimiter=",", header="x,y,W", comments="")


def _scan_row(payload):
    data, sources, alpha, coeffs, k, n_terms, t_final, gamma0, xs, y = payload
    values = np.empty(xs.size)
    flags = np.zeros(xs.size, dtype=bool)
    for j, x in enumerate(xs):
        g = g_matrix(
            np.array([x, y]), sources, alpha, coeffs,
            n_terms=n_terms, t_final=t_final, gamma0=gamma0,
        )
        values[j], flags[j] = _indicator_value(data, k, g)
    return values, flags


def scan_indicator(
    data,
    sources,
    alpha,
    coeffs,
    region=(-0.7, 0.7, -0.7, 0.7),
    resolution=101,
    k=None,
    n_terms=3,
    t_final=1.0,
    gamma0=1.0,
    tau=1e-6,
    jobs=1,
):
    """Evaluate the indicator on a resolution x resolution interior grid.

    Rows are independent; ``jobs`` > 1 spreads them over a process pool.
    The assembled grid is identical regardless of the worker count.
    """
    xmin, xmax, ymin, ymax = region
    if not (xmin < xmax and ymin < ymax):
        raise ConfigError(f"degenerate scan region {region}")
    corner = max(abs(xmin), abs(xmax)) ** 2 + max(abs(ymin), abs(ymax)) ** 2
    if corner >= 1.0:
        raise ConfigError(f"scan region {region} reaches outside the unit disk")
    if resolution < 2:
        raise ConfigError(f"resolution {resolution} too small")
    if k is None:
        k = select_truncation(data.singular_values, tau)
    xs = np.linspace(xmin, xmax, resolution)
    ys = np.linspace(ymin, ymax, resolution)
    payloads = [
        (data, sources, alpha, coeffs, k, n_terms, t_final, gamma0, xs, y)
        for y in ys
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_scan_row, payloads))
    else:
        rows = [_scan_row(p) for p in payloads]
    values = np.stack([r[0] for r in rows])
    flags = np.stack([r[1] for r in rows])
    return IndicatorGrid(xs=xs, ys=ys, values=values, k=k, flags=flags)


def peak_extract(grid, m, min_separation=0.0):
    """Top m local maxima of the indicator field, strongest first.

    A node counts as a peak when it strictly exceeds all 8 neighbors;
    border nodes are excluded.  Peaks closer than ``min_separation`` to
    an already accepted stronger peak are suppressed.
    """
    if m < 1:
        raise ConfigError(f"peak count {m} must be positive")
    v = grid.values
    if v.shape[0] < 3 or v.shape[1] < 3:
        raise ConfigError("grid too small for peak extraction")
    core = v[1:-1, 1:-1]
    mask = np.ones(core.shape, dtype=bool)
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if di == 0 and dj == 0:
                continue
            shifted = v[1 + di : v.shape[0] - 1 + di, 1 + dj : v.shape[1] - 1 + dj]
            mask &= core > shifted
    ii, jj = np.nonzero(mask)
    if ii.size == 0:
        raise ReconstructionError("indicator field has no interior local maxima")
    order = np.argsort(core[ii, jj])[::-1]
    accepted = []
    for idx in order:
        p = np.array([grid.xs[jj[idx] + 1], grid.ys[ii[idx] + 1]])
        if any(np.linalg.norm(p - q) < min_separation for q in accepted):
            continue
        accepted.append(p)
        if len(accepted) == m:
            return accepted
    raise ReconstructionError(
        f"found only {len(accepted)} separated peaks, {m} requested"
    )
