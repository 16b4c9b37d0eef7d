"""Gaussian ground truths and exact threshold-detection probabilities.

Conventions used throughout the package:

* Quadratures are ordered xxpp: the first M rows/columns of a covariance
  matrix are x-quadratures, the last M are p-quadratures.
* hbar defaults to 2.0 and is carried explicitly on every instance.
* Modes are numbered 0..M-1.
* A detection outcome is a length-M sequence of 0/1 ("click") values.

The exact probability of an outcome is an alternating sum over subsets of
the clicked modes of inverse square roots of determinants; it is tractable
only at desk scale and serves as the oracle for everything else.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path

import numpy as np

from .errors import NumericalError, ResourceGuardError, ValidationError

DEFAULT_HBAR = 2.0

SYMMETRY_RTOL = 1e-10
UNCERTAINTY_TOL = 1e-8
OVERLAP_EXCESS_TOL = 1e-9
PROBABILITY_WINDOW = 1e-9
BRUTE_FORCE_MAX_MODES = 20


def symplectic_form(M: int) -> np.ndarray:
    """Standard symplectic form in xxpp ordering: [[0, I], [-I, 0]]."""
    omega = np.zeros((2 * M, 2 * M))
    omega[:M, M:] = np.eye(M)
    omega[M:, :M] = -np.eye(M)
    return omega


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class GaussianInstance:
    """A zero-mean-or-displaced Gaussian state of M modes.

    sigma is the real symmetric 2M x 2M quadrature covariance matrix in
    xxpp ordering; mu the quadrature mean vector.  Validity (symmetry and
    the uncertainty relation sigma + i(hbar/2)*Omega >= 0) is checked once
    at construction; instances are immutable and safe to share between
    workers.
    """

    sigma: np.ndarray
    mu: np.ndarray = None
    hbar: float = DEFAULT_HBAR

    def __post_init__(self):
        sigma = np.asarray(self.sigma, dtype=float)
        if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1] or sigma.shape[0] % 2:
            raise ValidationError(f"covariance must be 2M x 2M, got {sigma.shape}")
        if self.hbar <= 0:
            raise ValidationError("hbar must be positive")
        scale = max(1.0, float(np.abs(sigma).max()))
        if np.abs(sigma - sigma.T).max() > SYMMETRY_RTOL * scale:
            raise ValidationError("covariance is not symmetric")
        sigma = 0.5 * (sigma + sigma.T)
        M = sigma.shape[0] // 2
        mu = self.mu
        mu = np.zeros(2 * M) if mu is None else np.asarray(mu, dtype=float)
        if mu.shape != (2 * M,):
            raise ValidationError(f"mean vector must have length {2 * M}, got {mu.shape}")
        herm = sigma + 1j * (self.hbar / 2.0) * symplectic_form(M)
        lo = float(np.linalg.eigvalsh(herm).min())
        if lo < -UNCERTAINTY_TOL:
            raise ValidationError(f"uncertainty relation violated: min eigenvalue {lo:.3e}")
        object.__setattr__(self, "sigma", _freeze(sigma))
        object.__setattr__(self, "mu", _freeze(mu))

    @property
    def M(self) -> int:
        return self.sigma.shape[0] // 2

    @property
    def is_displaced(self) -> bool:
        return bool(np.any(self.mu != 0.0))


@dataclass(frozen=True)
class JiuzhangSpec:
    """Squeezer magnitudes and transmission matrix defining an instance.

    T is the complex 2k x M transmission matrix of the (lossy)
    interferometer; its largest singular value may not exceed 1.
    """

    r: np.ndarray
    T: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.r, dtype=float)
        T = np.asarray(self.T, dtype=complex)
        if r.ndim != 1 or np.any(r < 0):
            raise ValidationError("squeezing parameters must be nonnegative")
        if T.ndim != 2 or T.shape[0] != 2 * r.size:
            raise ValidationError(f"transmission matrix must be 2k x M with k={r.size}")
        top = float(np.linalg.svd(T, compute_uv=False).max()) if T.size else 0.0
        if top > 1.0 + 1e-9:
            raise ValidationError(f"transmission exceeds unity: max singular value {top}")
        object.__setattr__(self, "r", _freeze(r))
        object.__setattr__(self, "T", _freeze(T))

    @property
    def k(self) -> int:
        return self.r.size

    @property
    def M(self) -> int:
        return self.T.shape[1]


@dataclass(frozen=True)
class HusimiForm:
    """Husimi-ordered covariance data used by the probability formula."""

    Sigma: np.ndarray
    O: np.ndarray
    det_sigma: complex
    sqrt_det: float = field(default=0.0)


def vacuum_instance(M: int, hbar: float = DEFAULT_HBAR) -> GaussianInstance:
    """The M-mode vacuum: sigma = (hbar/2) * identity."""
    return GaussianInstance(sigma=(hbar / 2.0) * np.eye(2 * M), hbar=hbar)


def clicks(bits) -> int:
    """Number of clicks in an outcome."""
    return int(np.sum(np.asarray(bits)))


def parity(bits, subset) -> int:
    """(-1)^(sum of bits over subset); +1 for the empty subset."""
    bits = np.asarray(bits)
    return 1 - 2 * (int(sum(int(bits[k]) for k in subset)) & 1)


def build_input_covariance(r, hbar: float = DEFAULT_HBAR) -> GaussianInstance:
    """Covariance of k two-mode squeezers feeding modes (2j, 2j+1).

    The x-block of pair j is (hbar/2) * [[cosh r_j, sinh r_j], [sinh r_j,
    cosh r_j]]; the p-block flips the sign of the off-diagonal.  Note the
    hyperbolic functions take r_j directly: a two-mode squeezed vacuum
    with conventional squeezing parameter s corresponds to r_j = 2s.
    """
    r = np.asarray(r, dtype=float)
    if r.ndim != 1:
        raise ValidationError("squeezing vector must be one-dimensional")
    if np.any(r < 0):
        raise ValidationError("squeezing parameters must be nonnegative")
    k = r.size
    n = 2 * k
    sigma = np.zeros((2 * n, 2 * n))
    for j, rj in enumerate(r):
        c, s = np.cosh(rj), np.sinh(rj)
        a, b = 2 * j, 2 * j + 1
        sigma[a, a] = sigma[b, b] = c
        sigma[a, b] = sigma[b, a] = s
        sigma[n + a, n + a] = sigma[n + b, n + b] = c
        sigma[n + a, n + b] = sigma[n + b, n + a] = -s
    return GaussianInstance(sigma=(hbar / 2.0) * sigma, hbar=hbar)


def embed_transmission(T) -> np.ndarray:
    """Real quadrature map of a complex transmission matrix.

    T has shape (n_in, M) acting on input modes; the returned V has shape
    (2M, 2*n_in) and maps input xxpp quadratures to output ones:
    V = [[Re W, -Im W], [Im W, Re W]] with W = T^T.  For unitary T this
    realification is orthogonal.
    """
    T = np.asarray(T, dtype=complex)
    if T.ndim != 2:
        raise ValidationError("transmission matrix must be two-dimensional")
    W = T.T
    re, im = W.real, W.imag
    return np.block([[re, -im], [im, re]])


def ground_truth_covariance(sigma_in: GaussianInstance, V: np.ndarray) -> GaussianInstance:
    """Push a Gaussian input through a (possibly lossy) linear network.

    sigma_out = V sigma_in V^T + (hbar/2)(I - V V^T); the second term is
    the vacuum noise entering through the loss ports.
    """
    V = np.asarray(V, dtype=float)
    n_in = sigma_in.sigma.shape[0]
    if V.ndim != 2 or V.shape[1] != n_in or V.shape[0] % 2:
        raise ValidationError(f"network matrix shape {V.shape} incompatible with {n_in} input quadratures")
    M2 = V.shape[0]
    hbar = sigma_in.hbar
    sigma = V @ sigma_in.sigma @ V.T + (hbar / 2.0) * (np.eye(M2) - V @ V.T)
    return GaussianInstance(sigma=sigma, hbar=hbar)


def reduce_modes(inst: GaussianInstance, subset) -> GaussianInstance:
    """Restrict an instance to a subset of modes (partial trace).

    Keeps rows/columns k and k+M for k in the subset, preserving relative
    order.
    """
    subset = sorted(int(k) for k in subset)
    if not subset:
        raise ValidationError("mode subset must be nonempty")
    M = inst.M
    if subset[0] < 0 or subset[-1] >= M or len(set(subset)) != len(subset):
        raise ValidationError(f"mode subset {subset} invalid for M={M}")
    idx = np.array(subset + [k + M for k in subset])
    return GaussianInstance(
        sigma=inst.sigma[np.ix_(idx, idx)], mu=inst.mu[idx], hbar=inst.hbar
    )


def vacuum_overlap(sigma: np.ndarray, mu=None, hbar: float = DEFAULT_HBAR) -> float:
    """Probability that no mode of the reduced state registers a photon.

    exp(-mu^T (sigma + hbar/2 I)^(-1) mu / 2) / sqrt(det((sigma + hbar/2 I)/hbar)).
    The empty state gives 1.  Raises if the value exceeds 1 beyond
    tolerance; otherwise the result is clamped to [0, 1].
    """
    sigma = np.asarray(sigma, dtype=float)
    if sigma.size == 0:
        return 1.0
    n2 = sigma.shape[0]
    A = (sigma + (hbar / 2.0) * np.eye(n2)) / hbar
    sign, logdet = np.linalg.slogdet(A)
    if sign <= 0 or not np.isfinite(logdet):
        raise NumericalError("singular shifted covariance: input state is invalid")
    val = np.exp(-0.5 * logdet)
    if mu is not None and np.any(np.asarray(mu) != 0.0):
        mu = np.asarray(mu, dtype=float)
        quad = float(mu @ np.linalg.solve(sigma + (hbar / 2.0) * np.eye(n2), mu))
        val *= np.exp(-0.5 * quad)
    if val > 1.0 + OVERLAP_EXCESS_TOL:
        raise NumericalError(f"vacuum overlap {val} exceeds 1")
    return float(min(max(val, 0.0), 1.0))


def husimi_form(inst: GaussianInstance) -> HusimiForm:
    """Husimi-ordered matrix Sigma = I/2 + R sigma R^H / hbar and O = I - Sigma^(-1)."""
    M = inst.M
    eye = np.eye(M)
    R = np.block([[eye, 1j * eye], [eye, -1j * eye]]) / np.sqrt(2.0)
    Sigma = 0.5 * np.eye(2 * M) + (R @ inst.sigma @ R.conj().T) / inst.hbar
    sign, logdet = np.linalg.slogdet(Sigma)
    if sign == 0 or not np.isfinite(logdet):
        raise NumericalError("singular Husimi covariance: invalid state")
    det = sign * np.exp(logdet)
    if abs(det.imag) > 1e-9 * abs(det) or det.real <= 0:
        raise NumericalError(f"Husimi determinant {det} not real-positive")
    O = np.eye(2 * M) - np.linalg.inv(Sigma)
    residual = float(np.abs(Sigma @ (np.eye(2 * M) - O) - np.eye(2 * M)).max())
    if residual > 1e-9:
        raise NumericalError(f"Husimi inversion residual {residual:.3e}")
    return HusimiForm(Sigma=Sigma, O=O, det_sigma=complex(det), sqrt_det=float(np.exp(0.5 * logdet)))


def _inv_sqrt_det(A: np.ndarray) -> complex:
    """1/sqrt(det(A)) on the principal branch, in log-magnitude form.

    Raises when det(A) has nonpositive real part (outside the certified
    branch for physical inputs) or vanishes.
    """
    if A.shape[0] == 0:
        return 1.0 + 0.0j
    sign, logdet = np.linalg.slogdet(A)
    if sign == 0 or not np.isfinite(logdet):
        raise NumericalError("singular matrix in subset-determinant sum")
    ang = np.angle(sign)
    if abs(ang) >= np.pi / 2:
        raise NumericalError(f"determinant real part nonpositive (arg {ang:.3f})")
    return np.exp(-0.5 * logdet) * np.exp(-0.5j * ang)


def torontonian(A: np.ndarray) -> complex:
    """Alternating subset sum of inverse sqrt determinants of I - A_R.

    A is 2n x 2n; A_R keeps rows/columns k and k+n for k in R, over all
    R subset of {0..n-1}, weighted by (-1)^|R|.  The empty subset
    contributes +1.  Square roots use the principal branch.
    """
    A = np.asarray(A, dtype=complex)
    if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] % 2:
        raise ValidationError(f"torontonian input must be 2n x 2n, got {A.shape}")
    n = A.shape[0] // 2
    total = 0.0 + 0.0j
    for size in range(n + 1):
        for R in combinations(range(n), size):
            idx = np.array(R + tuple(k + n for k in R), dtype=int)
            sub = A[np.ix_(idx, idx)]
            total += (-1) ** size * _inv_sqrt_det(np.eye(2 * size) - sub)
    return complex(total)


def exact_probability(inst: GaussianInstance, bits, form: HusimiForm | None = None) -> float:
    """Exact probability of a threshold-detection outcome.

    The subset sum implemented by :func:`torontonian` assigns +1 to the
    empty subset, which carries a global factor (-1)^n relative to the
    inclusion-exclusion expansion of the click projectors; the probability
    therefore includes a compensating (-1)^C for C clicked modes.
    """
    if inst.is_displaced:
        raise ValidationError("displaced instances are not supported by exact_probability")
    bits = np.asarray(bits, dtype=int)
    M = inst.M
    if bits.shape != (M,) or np.any((bits != 0) & (bits != 1)):
        raise ValidationError(f"outcome must be {M} binary values")
    if form is None:
        form = husimi_form(inst)
    clicked = np.flatnonzero(bits == 1)
    C = clicked.size
    idx = np.concatenate([clicked, clicked + M])
    sub = form.O[np.ix_(idx, idx)]
    val = (-1) ** C * torontonian(sub) / form.sqrt_det
    if abs(val.imag) > PROBABILITY_WINDOW:
        raise NumericalError(f"probability has imaginary residue {val.imag:.3e}")
    p = val.real
    if p < -PROBABILITY_WINDOW or p > 1.0 + PROBABILITY_WINDOW:
        raise NumericalError(f"probability {p} outside [0, 1] window")
    return float(min(max(p, 0.0), 1.0))


def brute_force_distribution(inst: GaussianInstance) -> np.ndarray:
    """Exact probabilities of all 2^M outcomes in lexicographic bit order.

    Outcome index i has bit k = (i >> (M-1-k)) & 1, i.e. mode 0 is the
    most significant bit.  Guarded at M <= 20.
    """
    M = inst.M
    if M > BRUTE_FORCE_MAX_MODES:
        raise ResourceGuardError(f"brute force refused for M={M} > {BRUTE_FORCE_MAX_MODES}")
    form = husimi_form(inst)
    out = np.empty(2**M)
    for i in range(2**M):
        bits = [(i >> (M - 1 - k)) & 1 for k in range(M)]
        out[i] = exact_probability(inst, bits, form=form)
    return out


def outcome_index(bits) -> int:
    """Lexicographic index of an outcome (mode 0 most significant)."""
    idx = 0
    for b in np.asarray(bits, dtype=int):
        idx = (idx << 1) | int(b)
    return idx


def random_instance(
    M: int,
    k: int,
    eta: float,
    r_max: float,
    seed: int,
    hbar: float = DEFAULT_HBAR,
) -> tuple[GaussianInstance, JiuzhangSpec]:
    """Seeded random instance: Haar interferometer rows scaled by sqrt(eta).

    Draws a Haar-random M x M unitary (QR of a complex Gaussian matrix
    with the diagonal phase fix), takes its first 2k rows as the
    transmission matrix T = sqrt(eta) U[:2k], and draws squeezing
    parameters uniformly in [0, r_max].  Deterministic for a fixed seed.
    """
    if not 0 < eta <= 1:
        raise ValidationError("eta must lie in (0, 1]")
    if 2 * k > M:
        raise ValidationError(f"need 2k <= M, got k={k}, M={M}")
    if r_max < 0:
        raise ValidationError("r_max must be nonnegative")
    rng = np.random.default_rng(seed)
    Z = (rng.standard_normal((M, M)) + 1j * rng.standard_normal((M, M))) / np.sqrt(2.0)
    Q, R = np.linalg.qr(Z)
    d = np.diagonal(R)
    U = Q * (d / np.abs(d))
    T = np.sqrt(eta) * U[: 2 * k, :]
    r = rng.uniform(0.0, r_max, size=k)
    spec = JiuzhangSpec(r=r, T=T)
    inst = instance_from_jiuzhang(spec, hbar=hbar)
    return inst, spec


def instance_from_jiuzhang(spec: JiuzhangSpec, hbar: float = DEFAULT_HBAR) -> GaussianInstance:
    """Ground-truth covariance of a squeezer bank behind a transmission matrix."""
    sigma_in = build_input_covariance(spec.r, hbar=hbar)
    V = embed_transmission(spec.T)
    return ground_truth_covariance(sigma_in, V)


def save_instance(path, inst: GaussianInstance = None, spec: JiuzhangSpec = None,
                  hbar: float = DEFAULT_HBAR) -> None:
    """Write an instance file (exactly one of the two JSON forms).

    Passing spec writes the squeezer/transmission form; passing inst
    writes the raw covariance form.
    """
    if (inst is None) == (spec is None):
        raise ValidationError("provide exactly one of inst or spec")
    if spec is not None:
        payload = {
            "hbar": hbar,
            "M": spec.M,
            "r": spec.r.tolist(),
            "T_re": spec.T.real.tolist(),
            "T_im": spec.T.imag.tolist(),
        }
    else:
        payload = {"hbar": inst.hbar, "M": inst.M, "sigma": inst.sigma.tolist()}
        if inst.is_displaced:
            payload["mu"] = inst.mu.tolist()
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=1) + "\n")


def load_instance(path) -> GaussianInstance:
    """Read an instance file; the squeezer form is converted to a covariance."""
    try:
        payload = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read instance file {path}: {exc}") from exc
    if not isinstance(payload, dict) or "M" not in payload or "hbar" not in payload:
        raise ValidationError(f"instance file {path} missing M/hbar")
    M = int(payload["M"])
    hbar = float(payload["hbar"])
    has_cov = "sigma" in payload
    has_jz = "r" in payload or "T_re" in payload or "T_im" in payload
    if has_cov == has_jz:
        raise ValidationError("instance file must contain exactly one of the two forms")
    if has_cov:
        sigma = np.asarray(payload["sigma"], dtype=float)
        mu = np.asarray(payload["mu"], dtype=float) if "mu" in payload else None
        inst = GaussianInstance(sigma=sigma, mu=mu, hbar=hbar)
    else:
        T = np.asarray(payload["T_re"], dtype=float) + 1j * np.asarray(payload["T_im"], dtype=float)
        spec = JiuzhangSpec(r=np.asarray(payload["r"], dtype=float), T=T)
        inst = instance_from_jiuzhang(spec, hbar=hbar)
    if inst.M != M:
        raise ValidationError(f"instance file declares M={M} but data has M={inst.M}")
    return inst
