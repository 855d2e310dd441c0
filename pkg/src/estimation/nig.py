"""Normal-inverse-gamma conjugate statistics for the Gaussian regression model.

Two equivalent representations are kept:

* ``NigVForm`` - the extended information matrix ``V`` (size n+1) and the
  degrees of freedom ``nu``, updated by outer products of ``[y; psi]``.
* ``NigCForm`` - the reparameterized statistics ``C = V_psi^{-1}``, the point
  estimate ``theta_hat``, the residual scalar ``lambda_`` and ``nu``, updated
  by inversion-free rank-one (Sherman-Morrison) steps. This is the recursive
  least squares view.

Both are plain values: every operation returns a new instance.
"""

import logging
from dataclasses import dataclass

import numpy as np

from estimation.errors import (
    DegenerateUpdateError,
    InvalidObservationError,
    InvalidParameterError,
    InvalidStatisticsError,
    SingularStatisticsError,
)

logger = logging.getLogger(__name__)

CONDITION_LIMIT = 1e12
SYMMETRY_TOL = 1e-12
SHERMAN_MORRISON_TOL = 1e-14


def _symmetrize(matrix):
    return (matrix + matrix.T) / 2.0


@dataclass(frozen=True, eq=False)
class Observation:
    """One node's datum at one step: ``y = psi^T theta + noise``."""

    y: float
    psi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "psi", np.asarray(self.psi, dtype=float).reshape(-1))

    @property
    def extended(self):
        """The stacked data vector ``[y; psi]``."""
        return np.concatenate(([self.y], self.psi))


@dataclass(frozen=True, eq=False)
class NigVForm:
    V: np.ndarray
    nu: float

    def __post_init__(self):
        V = np.array(self.V, dtype=float)
        if V.ndim != 2 or V.shape[0] != V.shape[1] or V.shape[0] < 2:
            raise InvalidStatisticsError(f"V must be square of size >= 2, got shape {V.shape}")
        scale = max(1.0, float(np.max(np.abs(V))))
        if not np.allclose(V, V.T, rtol=0.0, atol=SYMMETRY_TOL * scale):
            raise InvalidStatisticsError("V must be symmetric")
        object.__setattr__(self, "V", V)
        object.__setattr__(self, "nu", float(self.nu))

    @classmethod
    def from_symmetric(cls, V, nu):
        """Wrap a float matrix already symmetrized by the caller, without validation."""
        s = object.__new__(cls)
        object.__setattr__(s, "V", V)
        object.__setattr__(s, "nu", float(nu))
        return s

    @property
    def order(self):
        """Model order n (regressor dimension)."""
        return self.V.shape[0] - 1

    @property
    def V_y(self):
        return self.V[0, 0]

    @property
    def V_ypsi(self):
        return self.V[1:, 0]

    @property
    def V_psi(self):
        return self.V[1:, 1:]


@dataclass(frozen=True, eq=False)
class NigCForm:
    C: np.ndarray
    theta_hat: np.ndarray
    lambda_: float
    nu: float

    def __post_init__(self):
        object.__setattr__(self, "C", np.array(self.C, dtype=float))
        object.__setattr__(
            self, "theta_hat", np.array(self.theta_hat, dtype=float).reshape(-1)
        )
        object.__setattr__(self, "lambda_", float(self.lambda_))
        object.__setattr__(self, "nu", float(self.nu))
        n = self.theta_hat.shape[0]
        if self.C.shape != (n, n):
            raise InvalidStatisticsError(
                f"C must be {n}x{n} to match theta_hat, got shape {self.C.shape}"
            )

    @property
    def order(self):
        return self.theta_hat.shape[0]


def _check_observation(obs, n):
    if obs.psi.shape != (n,):
        raise InvalidObservationError(
            f"regression vector has dimension {obs.psi.shape[0]}, model order is {n}"
        )


def nig_init(n, eps=1e-3, nu0=None):
    """Regularized flat prior ``V = eps * I_{n+1}``, ``nu = nu0`` (default ``n + 2``)."""
    if n < 1:
        raise InvalidParameterError(f"model order must be >= 1, got {n}")
    if eps <= 0:
        raise InvalidParameterError(f"eps must be > 0, got {eps}")
    if nu0 is None:
        nu0 = n + 2
    if nu0 <= 0:
        raise InvalidParameterError(f"nu0 must be > 0, got {nu0}")
    return NigVForm(eps * np.eye(n + 1), nu0)


def weighted_update(s, obs, c=1.0):
    """``V <- V + c [y; psi][y; psi]^T``, ``nu <- nu + c``."""
    _check_observation(obs, s.order)
    z = obs.extended
    return NigVForm.from_symmetric(_symmetrize(s.V + c * np.outer(z, z)), s.nu + c)


def bayes_update(s, obs):
    """One full Bayes data update by a single observation."""
    return weighted_update(s, obs, 1.0)


def batch_update(s, rows):
    """Absorb every row ``[y; psi]`` of ``rows`` at once: ``V + sum z z^T``, ``nu + len(rows)``."""
    rows = np.asarray(rows, dtype=float)
    if rows.ndim != 2 or rows.shape[1] != s.order + 1:
        raise InvalidObservationError(
            f"expected rows [y; psi] of length {s.order + 1}, got shape {rows.shape}"
        )
    outer = (rows[:, :, None] * rows[:, None, :]).sum(axis=0)
    return NigVForm.from_symmetric(_symmetrize(s.V + outer), s.nu + rows.shape[0])


def estimate_stack(V):
    """Point estimates and residuals of a stack of extended matrices ``V`` (B x N x N).

    One condition check and one solve per matrix. Returns ``(theta_hat, lambda_)``
    of shapes (B, n) and (B,). A failing matrix raises
    ``SingularStatisticsError`` carrying its position in the stack.
    """
    V_psi = V[:, 1:, 1:]
    eigenvalues = np.linalg.eigvalsh(V_psi)
    smallest, largest = eigenvalues[:, 0], eigenvalues[:, -1]
    condition = np.divide(largest, smallest, out=np.full_like(largest, np.inf), where=smallest > 0)
    bad = np.flatnonzero(condition > CONDITION_LIMIT)
    if bad.size:
        index = int(bad[0])
        raise SingularStatisticsError(
            f"V_psi is numerically singular (condition estimate {condition[index]:.3g}, "
            f"limit {CONDITION_LIMIT:.0e})",
            condition=float(condition[index]),
            index=index,
        )
    theta_hat = np.linalg.solve(V_psi, V[:, 1:, :1])[:, :, 0]
    lambda_ = np.maximum(0.0, V[:, 0, 0] - np.sum(V[:, 1:, 0] * theta_hat, axis=1))
    return theta_hat, lambda_


def reparameterize_stack(V):
    """Batched V-form -> C-form pieces ``(C, theta_hat, lambda_)``."""
    theta_hat, lambda_ = estimate_stack(V)
    C = np.linalg.inv(V[:, 1:, 1:])
    return (C + C.transpose(0, 2, 1)) / 2.0, theta_hat, lambda_


def _single(s):
    try:
        return estimate_stack(s.V[None])
    except SingularStatisticsError as exc:
        raise SingularStatisticsError(str(exc), condition=exc.condition) from None


def point_estimate_theta(s):
    return _single(s)[0][0]


def residual_lambda(s):
    """Schur complement ``V_y - V_ypsi^T V_psi^{-1} V_ypsi``, clipped at zero."""
    return float(_single(s)[1][0])


def _checked_nu(s):
    if s.nu <= 0:
        raise InvalidStatisticsError(f"nu must be > 0 to estimate the noise variance, got {s.nu}")
    return s.nu


def estimate_noise_variance(s):
    """Point estimate of the noise variance, ``Lambda / nu``."""
    return residual_lambda(s) / _checked_nu(s)


def point_estimates(s):
    """``(theta_hat, sigma2_hat)`` from a single guarded solve."""
    nu = _checked_nu(s)
    theta_hat, lambda_ = _single(s)
    return theta_hat[0], float(lambda_[0]) / nu


def reparameterize(s):
    """V-form -> C-form."""
    theta_hat, lambda_ = _single(s)
    C = _symmetrize(np.linalg.inv(s.V_psi))
    return NigCForm(C, theta_hat[0], lambda_[0], s.nu)


def compose(cf):
    """C-form -> V-form, the inverse of :func:`reparameterize`."""
    try:
        np.linalg.cholesky(cf.C)
    except np.linalg.LinAlgError:
        raise InvalidStatisticsError("C must be positive definite")
    V_psi = _symmetrize(np.linalg.inv(cf.C))
    V_ypsi = V_psi @ cf.theta_hat
    V_y = cf.lambda_ + cf.theta_hat @ V_ypsi
    n = cf.order
    V = np.empty((n + 1, n + 1))
    V[0, 0] = V_y
    V[1:, 0] = V_ypsi
    V[0, 1:] = V_ypsi
    V[1:, 1:] = V_psi
    return NigVForm(V, cf.nu)


def sherman_morrison(Ainv, u, v):
    """Inverse of ``A + u v^T`` given ``Ainv = A^{-1}``."""
    Ainv = np.asarray(Ainv, dtype=float)
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    Ainv_u = Ainv @ u
    denominator = 1.0 + v @ Ainv_u
    if abs(denominator) <= SHERMAN_MORRISON_TOL:
        raise DegenerateUpdateError(
            f"rank-one update is singular: 1 + v^T A^-1 u = {denominator:.3g}"
        )
    return Ainv - np.outer(Ainv_u, v @ Ainv) / denominator


def cform_rank_one_update(cf, obs, c=1.0):
    """Recursive least squares step by one observation weighted by ``c``.

    The residual update uses the exact increment ``c e^2 / (1 + c psi^T C psi)``
    with the prior error ``e = y - psi^T theta_hat``; it matches the V-form
    Schur complement to rounding.
    """
    _check_observation(obs, cf.order)
    if c < 0:
        raise InvalidParameterError(f"data weight must be >= 0, got {c}")
    C, theta_hat, lambda_, nu = rank_one_stack(
        cf.C[None], cf.theta_hat[None], np.array([cf.lambda_]), np.array([cf.nu]),
        np.array([obs.y]), obs.psi[None], np.array([float(c)]),
    )
    return NigCForm(C[0], theta_hat[0], lambda_[0], nu[0])


def rank_one_stack(C, theta_hat, lambda_, nu, y, psi, c):
    """Batched :func:`cform_rank_one_update`: row ``b`` absorbs ``(y[b], psi[b])`` with weight ``c[b]``.

    A zero weight leaves its row unchanged.
    """
    C_psi = np.matmul(C, psi[:, :, None])[:, :, 0]
    denominator = 1.0 + c * np.sum(psi * C_psi, axis=1)
    error = y - np.sum(psi * theta_hat, axis=1)
    gain = c[:, None] * C_psi / denominator[:, None]
    C = C - gain[:, :, None] * C_psi[:, None, :]
    C = (C + C.transpose(0, 2, 1)) / 2.0
    theta_hat = theta_hat + gain * error[:, None]
    lambda_ = lambda_ + c * error**2 / denominator
    return C, theta_hat, lambda_, nu + c


def parameter_covariance(cf):
    """Covariance of theta consistent with the ``Lambda / nu`` noise estimate."""
    if cf.nu <= 0:
        raise InvalidStatisticsError(f"nu must be > 0, got {cf.nu}")
    return (cf.lambda_ / cf.nu) * cf.C


def dump_statistics(s):
    """Text form: header ``n nu`` then the rows of ``V``, 17 significant digits."""
    lines = [f"{s.order} {s.nu:.17g}"]
    lines.extend(" ".join(f"{value:.17g}" for value in row) for row in s.V)
    return "\n".join(lines) + "\n"


def load_statistics(text):
    lines = [line for line in text.splitlines() if line.strip()]
    try:
        header = lines[0].split()
        n, nu = int(header[0]), float(header[1])
        V = np.array([[float(x) for x in line.split()] for line in lines[1:]])
    except (IndexError, ValueError) as exc:
        raise InvalidStatisticsError(f"malformed statistics text: {exc}")
    if V.shape != (n + 1, n + 1):
        raise InvalidStatisticsError(
            f"header announces n={n} but matrix has shape {V.shape}"
        )
    return NigVForm(V, nu)
