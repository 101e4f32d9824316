"""Threshold detection: entangled field pairs, beam-splitter channels, clicks.

Field pair construction
-----------------------
A bipartite state Psi on C^n x C^n is reshaped into the n x n matrix
Psihat with Psihat[j, k] = Psi[j*n + k].  The joint field (phi1, phi2) is
the zero-mean Gaussian fixed by

    E[phi1 phi1^+] = Psihat Psihat^+ + eps I   (reduced state of party 1)
    E[phi2 phi2^+] = (Psihat^+ Psihat)^T + eps I
    E[phi1 phi2^T] = Psihat                    (cross coupling)
    E[phi1 phi1^T] = E[phi2 phi2^T] = E[phi1 phi2^+] = 0

i.e. each party's field is circular on its own, and the parties couple
through the conjugate channel.  Equivalently: (phi1, conj(phi2)) is a
jointly circular Gaussian whose ordinary block covariance is

    K = [[Psihat Psihat^+ + eps I,  Psihat         ],
         [Psihat^+,                 Psihat^+ Psihat + eps I]].

With this convention the classical covariance of two quadratic forms
reproduces the composite-state average identically, for every eps:

    cov(f_A(phi1), f_B(phi2)) = Tr(A Psihat B^T Psihat^+) = <Psi| A x B |Psi>.

Coupling the ordinary cross block E[phi1 phi2^+] instead can only match
observables with B^T = B; the conjugate-channel convention is the one that
survives the tensor-product oracle for arbitrary Hermitian A, B.

K is positive semi-definite iff eps >= eps* = max_i (s_i - s_i^2) over the
singular values s_i of Psihat.  Product states have a single singular
value 1, so eps* = 0; entangled states force a genuinely positive
background level (eps* = sqrt(1/2) - 1/2 ~ 0.207 for the singlet).

Clicks
------
A threshold detector fires channel c when the channel power ||P_c phi||^2
exceeds the threshold d.  One trial is one time window; both channels may
fire (a double click) or neither.  The default post-selection policy
keeps trials where each party produced exactly one click, mirroring the
time-window discard of coincidence experiments; raw counts are always
retained so the selection is auditable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .hilbert import FieldVector, HermitianOperator
from .observables import MCEstimate, QuadraticForm
from .random_field import (
    STREAM_CALIBRATION,
    STREAM_PAIRS,
    STREAM_TRIALS,
    BackgroundField,
    RandomSeed,
    sample_with_factor,
    sampling_factor,
)
from .serialize import read_csv, write_csv

PROJECTOR_TOL = 1e-12
STATE_NORM_TOL = 1e-10

CLASS_NONE = 0
CLASS_SINGLE = 1
CLASS_DOUBLE = 2
_CLASS_NAMES = {CLASS_NONE: "none", CLASS_SINGLE: "single", CLASS_DOUBLE: "double"}
_CLASS_CODES = {v: k for k, v in _CLASS_NAMES.items()}

POLICY_KEEP_SINGLES = "keep-singles"
POLICY_KEEP_ALL = "keep-all"
_POLICIES = (POLICY_KEEP_SINGLES, POLICY_KEEP_ALL)


class BackgroundTooSmallError(ValueError):
    """Raised when eps is below the PSD floor of a bipartite construction."""

    def __init__(self, epsilon: float, epsilon_min: float):
        self.epsilon = epsilon
        self.epsilon_min = epsilon_min
        super().__init__(
            f"background level {epsilon:.6g} is below the minimum {epsilon_min:.6g} "
            "required for a positive semi-definite joint covariance"
        )


def pbs_projectors(theta: float) -> tuple[HermitianOperator, HermitianOperator]:
    """Two-channel polarization splitter at angle theta.

    P+ projects onto e(theta) = (cos theta, sin theta), P- onto the
    orthogonal direction; they sum to the identity.
    """
    e = np.array([math.cos(theta), math.sin(theta)])
    ep = np.array([-math.sin(theta), math.cos(theta)])
    return HermitianOperator(np.outer(e, e)), HermitianOperator(np.outer(ep, ep))


@dataclass(frozen=True)
class ThresholdDetector:
    """Power threshold plus a complete set of orthogonal channel projectors."""

    threshold: float
    projectors: tuple[HermitianOperator, ...]

    def __post_init__(self):
        if not np.isfinite(self.threshold) or self.threshold < 0.0:
            raise ValueError(f"threshold must be a finite non-negative real, got {self.threshold}")
        if len(self.projectors) < 1:
            raise ValueError("need at least one channel projector")
        dim = self.projectors[0].dim
        total = np.zeros((dim, dim), dtype=np.complex128)
        for proj in self.projectors:
            if proj.dim != dim:
                raise ValueError("channel projectors must share one dimension")
            total = total + proj.matrix
        if np.abs(total - np.eye(dim)).max() > PROJECTOR_TOL:
            raise ValueError("channel projectors must sum to the identity")
        for i, pi in enumerate(self.projectors):
            for pj in self.projectors[i + 1 :]:
                if np.abs(pi.matrix @ pj.matrix).max() > PROJECTOR_TOL:
                    raise ValueError("channel projectors must be mutually orthogonal")

    @property
    def dim(self) -> int:
        return self.projectors[0].dim

    @property
    def n_channels(self) -> int:
        return len(self.projectors)

    def channel_powers(self, samples: np.ndarray) -> np.ndarray:
        """(N, n_channels) array of ||P_c phi||^2 = <P_c phi, phi>."""
        x = np.asarray(samples, dtype=np.complex128)
        stack = np.stack([p.matrix for p in self.projectors])
        return np.einsum("ni,cij,nj->nc", x.conj(), stack, x).real

    def clicks(self, samples: np.ndarray) -> np.ndarray:
        """Boolean (N, n_channels) click table: channel power above threshold."""
        return self.channel_powers(samples) > self.threshold


class BipartiteEnsemble:
    """Joint Gaussian field pair encoding a bipartite state (see module docs)."""

    __slots__ = ("_psi", "_psihat", "_epsilon", "_epsilon_min", "_block", "_factor")

    def __init__(self, psi: FieldVector, background: BackgroundField):
        n = math.isqrt(psi.dim)
        if n * n != psi.dim:
            raise ValueError(
                f"bipartite state dimension must be a perfect square, got {psi.dim}"
            )
        if abs(psi.norm() - 1.0) > STATE_NORM_TOL:
            raise ValueError(f"state must be unit-normalized, got norm {psi.norm():.12g}")
        psihat = psi.components.reshape(n, n)
        svals = np.linalg.svd(psihat, compute_uv=False)
        eps_min = float(max(0.0, np.max(svals - svals**2)))
        eps = background.epsilon
        if eps < eps_min - 1e-12:
            raise BackgroundTooSmallError(eps, eps_min)
        eye = np.eye(n)
        block = np.block(
            [
                [psihat @ psihat.conj().T + eps * eye, psihat],
                [psihat.conj().T, psihat.conj().T @ psihat + eps * eye],
            ]
        )
        self._psi = psi
        self._psihat = psihat
        self._epsilon = eps
        self._epsilon_min = eps_min
        self._block = HermitianOperator.symmetrized(block)
        self._factor = sampling_factor(self._block)

    @property
    def dim(self) -> int:
        """Per-party dimension n."""
        return self._psihat.shape[0]

    @property
    def state(self) -> FieldVector:
        return self._psi

    @property
    def epsilon(self) -> float:
        return self._epsilon

    @property
    def epsilon_min(self) -> float:
        """Smallest background level keeping the joint covariance PSD."""
        return self._epsilon_min

    @property
    def block_covariance(self) -> HermitianOperator:
        """Ordinary covariance of the stacked coordinates (phi1, conj(phi2))."""
        return self._block

    @property
    def cross_block(self) -> np.ndarray:
        """Pseudo cross-covariance E[phi1 phi2^T] = Psihat."""
        return self._psihat

    @property
    def marginal_covariance_1(self) -> HermitianOperator:
        n = self.dim
        return HermitianOperator.symmetrized(self._block.matrix[:n, :n])

    @property
    def marginal_covariance_2(self) -> HermitianOperator:
        n = self.dim
        return HermitianOperator.symmetrized(self._block.matrix[n:, n:].T)

    def sample_pairs(
        self, n_samples: int, seed: RandomSeed, start_index: int = 0
    ) -> tuple[np.ndarray, np.ndarray]:
        """Paired samples (phi1, phi2), each (n_samples, n)."""
        z = sample_with_factor(self._factor, n_samples, seed, start_index, STREAM_PAIRS)
        n = self.dim
        return z[:, :n], z[:, n:].conj()

    def __repr__(self) -> str:
        return (
            f"BipartiteEnsemble(dim={self.dim}x{self.dim}, eps={self._epsilon:.6g}, "
            f"eps_min={self._epsilon_min:.6g})"
        )


def quadratic_correlation(
    ensemble: BipartiteEnsemble, a: HermitianOperator, b: HermitianOperator
) -> float:
    """Exact raw second moment E[f_A(phi1) f_B(phi2)].

    Gaussian moment factorization gives
    Tr(D1 A) Tr(D2 B) + Tr(A Q B^T Q^+) with Q the cross block.
    """
    if a.dim != ensemble.dim or b.dim != ensemble.dim:
        raise ValueError("observable dimension must match the per-party dimension")
    mean1 = float(np.trace(ensemble.marginal_covariance_1.matrix @ a.matrix).real)
    mean2 = float(np.trace(ensemble.marginal_covariance_2.matrix @ b.matrix).real)
    return mean1 * mean2 + quadratic_correlation_renormalized(ensemble, a, b)


def quadratic_correlation_renormalized(
    ensemble: BipartiteEnsemble, a: HermitianOperator, b: HermitianOperator
) -> float:
    """Classical covariance cov(f_A(phi1), f_B(phi2)) = <Psi| A x B |Psi>.

    Subtracting the product of the (background-laden) channel means removes
    every eps contribution at once; what is left is exactly the composite
    quantum average, independent of eps.
    """
    if a.dim != ensemble.dim or b.dim != ensemble.dim:
        raise ValueError("observable dimension must match the per-party dimension")
    q = ensemble.cross_block
    val = complex(np.trace(a.matrix @ q @ b.matrix.T @ q.conj().T))
    if abs(val.imag) > 1e-10 * max(1.0, abs(val.real)):
        raise ArithmeticError(f"correlation has imaginary residue {val.imag:.3e}")
    return val.real


def quadratic_correlation_mc(
    ensemble: BipartiteEnsemble,
    a: HermitianOperator,
    b: HermitianOperator,
    n_samples: int,
    seed: RandomSeed,
    renormalized: bool = True,
    start_index: int = 0,
) -> MCEstimate:
    """Monte Carlo counterpart of the exact correlation formulas."""
    if n_samples < 2:
        raise ValueError("n_samples must be >= 2")
    phi1, phi2 = ensemble.sample_pairs(n_samples, seed, start_index)
    fa = QuadraticForm(a).evaluate_batch(phi1)
    fb = QuadraticForm(b).evaluate_batch(phi2)
    if renormalized:
        da = fa - fa.mean()
        db = fb - fb.mean()
        prod = da * db
        # bias-corrected sample covariance; SE from the deviation products
        mean = float(prod.sum() / (n_samples - 1))
    else:
        prod = fa * fb
        mean = float(prod.mean())
    se = float(prod.std(ddof=1) / np.sqrt(n_samples))
    return MCEstimate(mean, se, n_samples)


@dataclass(frozen=True)
class TrialRecord:
    """Outcome of one detection window."""

    settings: tuple[float, ...]
    clicks1: tuple[bool, ...]
    clicks2: tuple[bool, ...] | None
    classification1: str
    classification2: str | None
    accepted: bool


class TrialBatch:
    """Column-oriented store of detection trials for one setting pair."""

    __slots__ = ("theta1", "theta2", "clicks1", "clicks2", "policy")

    def __init__(self, theta1, theta2, clicks1, clicks2, policy=POLICY_KEEP_SINGLES):
        if policy not in _POLICIES:
            raise ValueError(f"unknown policy {policy!r}; expected one of {_POLICIES}")
        self.theta1 = float(theta1)
        self.theta2 = None if theta2 is None else float(theta2)
        self.clicks1 = np.asarray(clicks1, dtype=bool)
        self.clicks2 = None if clicks2 is None else np.asarray(clicks2, dtype=bool)
        self.policy = policy
        if self.clicks1.ndim != 2:
            raise ValueError("clicks1 must be (n_trials, n_channels)")
        if (self.clicks2 is None) != (self.theta2 is None):
            raise ValueError("theta2 and clicks2 must be provided together")
        if self.clicks2 is not None and self.clicks2.shape != self.clicks1.shape:
            raise ValueError("clicks1 and clicks2 must have equal shapes")

    @property
    def n_trials(self) -> int:
        return self.clicks1.shape[0]

    @property
    def bipartite(self) -> bool:
        return self.clicks2 is not None

    def classification(self, party: int) -> np.ndarray:
        """Per-trial code: 0 none, 1 single, 2+ double."""
        clicks = self.clicks1 if party == 1 else self.clicks2
        if clicks is None:
            raise ValueError("batch has no second party")
        counts = clicks.sum(axis=1)
        return np.minimum(counts, 2).astype(np.int8)

    @property
    def accepted(self) -> np.ndarray:
        if self.policy == POLICY_KEEP_ALL:
            return np.ones(self.n_trials, dtype=bool)
        acc = self.classification(1) == CLASS_SINGLE
        if self.bipartite:
            acc = acc & (self.classification(2) == CLASS_SINGLE)
        return acc

    def records(self):
        """Iterate TrialRecord views (row-by-row convenience, not the fast path)."""
        cls1 = self.classification(1)
        cls2 = self.classification(2) if self.bipartite else None
        acc = self.accepted
        for i in range(self.n_trials):
            yield TrialRecord(
                settings=(self.theta1,) if not self.bipartite else (self.theta1, self.theta2),
                clicks1=tuple(bool(v) for v in self.clicks1[i]),
                clicks2=None if not self.bipartite else tuple(bool(v) for v in self.clicks2[i]),
                classification1=_CLASS_NAMES[int(cls1[i])],
                classification2=None if cls2 is None else _CLASS_NAMES[int(cls2[i])],
                accepted=bool(acc[i]),
            )

    def to_csv(self, path) -> None:
        """One row per trial: settings, click flags, classifications, accepted."""
        if self.bipartite:
            header = [
                "theta1",
                "theta2",
                "click1_plus",
                "click1_minus",
                "click2_plus",
                "click2_minus",
                "class1",
                "class2",
                "accepted",
            ]
            cls1 = self.classification(1)
            cls2 = self.classification(2)
            acc = self.accepted
            rows = [
                [
                    self.theta1,
                    self.theta2,
                    int(self.clicks1[i, 0]),
                    int(self.clicks1[i, 1]),
                    int(self.clicks2[i, 0]),
                    int(self.clicks2[i, 1]),
                    _CLASS_NAMES[int(cls1[i])],
                    _CLASS_NAMES[int(cls2[i])],
                    int(acc[i]),
                ]
                for i in range(self.n_trials)
            ]
        else:
            header = ["theta", "click_plus", "click_minus", "classification", "accepted"]
            cls1 = self.classification(1)
            acc = self.accepted
            rows = [
                [
                    self.theta1,
                    int(self.clicks1[i, 0]),
                    int(self.clicks1[i, 1]),
                    _CLASS_NAMES[int(cls1[i])],
                    int(acc[i]),
                ]
                for i in range(self.n_trials)
            ]
        write_csv(path, header, rows)

    @classmethod
    def from_csv(cls, path, policy=POLICY_KEEP_SINGLES) -> "TrialBatch":
        header, rows = read_csv(path)
        if header[:2] == ["theta1", "theta2"]:
            theta1 = float(rows[0][0])
            theta2 = float(rows[0][1])
            c1 = np.array([[int(r[2]), int(r[3])] for r in rows], dtype=bool)
            c2 = np.array([[int(r[4]), int(r[5])] for r in rows], dtype=bool)
            return cls(theta1, theta2, c1, c2, policy)
        theta = float(rows[0][0])
        c1 = np.array([[int(r[1]), int(r[2])] for r in rows], dtype=bool)
        return cls(theta, None, c1, None, policy)


def run_trials(
    ensemble: BipartiteEnsemble,
    theta1: float,
    theta2: float,
    detector: ThresholdDetector,
    n_trials: int,
    seed: RandomSeed,
    start_index: int = 0,
    policy: str = POLICY_KEEP_SINGLES,
) -> TrialBatch:
    """Coincidence run: one sampled field pair per time window.

    Party i thresholds the channel powers of its field behind a splitter at
    angle theta_i; the detector supplies the threshold and the channel
    layout in its own frame (its projectors are rotated to each setting).
    """
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    if detector.dim != ensemble.dim:
        raise ValueError("detector dimension must match the per-party dimension")
    if detector.dim != 2:
        raise ValueError("coincidence trials are defined for two-channel polarization fields")
    phi1, phi2 = ensemble.sample_pairs(n_trials, seed, start_index)
    det1 = ThresholdDetector(detector.threshold, pbs_projectors(theta1))
    det2 = ThresholdDetector(detector.threshold, pbs_projectors(theta2))
    return TrialBatch(theta1, theta2, det1.clicks(phi1), det2.clicks(phi2), policy)


def run_single_party_trials(
    ensemble,
    detector: ThresholdDetector,
    n_trials: int,
    seed: RandomSeed,
    start_index: int = 0,
    policy: str = POLICY_KEEP_SINGLES,
) -> TrialBatch:
    """Threshold trials on a single field ensemble with a fixed detector."""
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    if detector.dim != ensemble.dim:
        raise ValueError(f"dimension mismatch: {detector.dim} vs {ensemble.dim}")
    samples = sample_with_factor(ensemble.sampler_factor, n_trials, seed, start_index, STREAM_TRIALS)
    theta = 0.0
    return TrialBatch(theta, None, detector.clicks(samples), None, policy)


@dataclass(frozen=True)
class ClickStatistics:
    """Aggregate click frequencies for one batch."""

    n_trials: int
    n_accepted: int
    raw_click_rates_1: tuple[float, ...]
    raw_click_rates_2: tuple[float, ...] | None
    single_rates_1: tuple[float, ...]
    single_rates_2: tuple[float, ...] | None
    double_rate_1: float
    double_rate_2: float | None
    none_rate_1: float
    none_rate_2: float | None
    accepted_fraction: float
    conditional_1: tuple[float, ...] | None
    conditional_2: tuple[float, ...] | None
    coincidences: dict | None
    degenerate: bool


def _party_stats(clicks: np.ndarray):
    n = clicks.shape[0]
    counts = clicks.sum(axis=1)
    raw = tuple(float(v) for v in clicks.mean(axis=0))
    single_mask = counts == 1
    singles = tuple(float((clicks[:, c] & single_mask).sum() / n) for c in range(clicks.shape[1]))
    return raw, singles, float((counts >= 2).mean()), float((counts == 0).mean()), single_mask


def click_statistics(batch: TrialBatch) -> ClickStatistics:
    """Frequencies conditioned on the acceptance policy; raw counts retained."""
    if batch.n_trials < 1:
        raise ValueError("empty batch")
    raw1, singles1, dbl1, none1, mask1 = _party_stats(batch.clicks1)
    acc = batch.accepted
    n_acc = int(acc.sum())
    degenerate = n_acc == 0
    if batch.bipartite:
        raw2, singles2, dbl2, none2, _ = _party_stats(batch.clicks2)
        if degenerate:
            cond1 = cond2 = None
            coinc = None
        else:
            cond1 = tuple(float(batch.clicks1[acc, c].mean()) for c in range(2))
            cond2 = tuple(float(batch.clicks2[acc, c].mean()) for c in range(2))
            o1 = np.where(batch.clicks1[acc, 0], 1, -1)
            o2 = np.where(batch.clicks2[acc, 0], 1, -1)
            coinc = {
                (1, 1): int(((o1 == 1) & (o2 == 1)).sum()),
                (1, -1): int(((o1 == 1) & (o2 == -1)).sum()),
                (-1, 1): int(((o1 == -1) & (o2 == 1)).sum()),
                (-1, -1): int(((o1 == -1) & (o2 == -1)).sum()),
            }
        return ClickStatistics(
            n_trials=batch.n_trials,
            n_accepted=n_acc,
            raw_click_rates_1=raw1,
            raw_click_rates_2=raw2,
            single_rates_1=singles1,
            single_rates_2=singles2,
            double_rate_1=dbl1,
            double_rate_2=dbl2,
            none_rate_1=none1,
            none_rate_2=none2,
            accepted_fraction=n_acc / batch.n_trials,
            conditional_1=cond1,
            conditional_2=cond2,
            coincidences=coinc,
            degenerate=degenerate,
        )
    cond1 = None
    if not degenerate:
        cond1 = tuple(float(batch.clicks1[acc, c].mean()) for c in range(batch.clicks1.shape[1]))
    return ClickStatistics(
        n_trials=batch.n_trials,
        n_accepted=n_acc,
        raw_click_rates_1=raw1,
        raw_click_rates_2=None,
        single_rates_1=singles1,
        single_rates_2=None,
        double_rate_1=dbl1,
        double_rate_2=None,
        none_rate_1=none1,
        none_rate_2=None,
        accepted_fraction=n_acc / batch.n_trials,
        conditional_1=cond1,
        conditional_2=None,
        coincidences=None,
        degenerate=degenerate,
    )


def correlation_from_clicks(batch: TrialBatch) -> tuple[float, float]:
    """E = (N++ + N-- - N+- - N-+) / N_accepted over single-click coincidences."""
    if not batch.bipartite:
        raise ValueError("correlation needs a bipartite batch")
    acc = (batch.classification(1) == CLASS_SINGLE) & (batch.classification(2) == CLASS_SINGLE)
    n_acc = int(acc.sum())
    if n_acc == 0:
        raise ValueError("no accepted coincidences")
    o1 = np.where(batch.clicks1[acc, 0], 1.0, -1.0)
    o2 = np.where(batch.clicks2[acc, 0], 1.0, -1.0)
    prod = o1 * o2
    e = float(prod.mean())
    se = float(prod.std(ddof=1) / np.sqrt(n_acc)) if n_acc > 1 else 1.0
    return e, se


@dataclass(frozen=True)
class CalibrationResult:
    """Threshold scan on the maximally mixed ensemble."""

    threshold: float
    epsilon: float
    target_single_fraction: float
    grid: tuple[tuple[float, float], ...]
    channel_rates: tuple[float, ...]
    balanced: bool


def calibrate_threshold(
    epsilon: float,
    target_single_fraction: float,
    seed: RandomSeed,
    dim: int = 2,
    d_grid=None,
    n_trials: int = 200_000,
) -> CalibrationResult:
    """Pick the threshold whose singles fraction on the mixed state hits a target.

    Calibration never sees the state under test: it scans d on the
    maximally mixed ensemble (covariance (1/dim + eps) I), checks that the
    per-channel single-click rates are balanced, and returns the grid point
    whose total single-click fraction is closest to the requested target.
    One sample batch is shared across the whole scan.
    """
    from .hilbert import DensityOperator
    from .random_field import ensemble_from_density

    if d_grid is None:
        d_grid = np.geomspace(1e-3, 1.0, 61)
    ens = ensemble_from_density(DensityOperator.maximally_mixed(dim), BackgroundField(epsilon))
    samples = sample_with_factor(ens.sampler_factor, n_trials, seed, 0, STREAM_CALIBRATION)
    det0 = ThresholdDetector(0.0, pbs_projectors(0.0)) if dim == 2 else None
    if det0 is None:
        raise ValueError("calibration is defined for two-channel detectors")
    powers = det0.channel_powers(samples)
    grid = []
    best = None
    for d in d_grid:
        clicks = powers > d
        counts = clicks.sum(axis=1)
        singles_mask = counts == 1
        frac = float(singles_mask.mean())
        grid.append((float(d), frac))
        gap = abs(frac - target_single_fraction)
        if best is None or gap < best[0]:
            best = (gap, float(d), singles_mask, clicks)
    _, d_star, singles_mask, clicks = best
    n_singles = max(1, int(singles_mask.sum()))
    channel_rates = tuple(
        float((clicks[:, c] & singles_mask).sum() / n_singles) for c in range(2)
    )
    # per-channel singles on the mixed state are equal by symmetry; flag if not
    se = math.sqrt(0.25 / n_singles)
    balanced = abs(channel_rates[0] - channel_rates[1]) <= 5.0 * 2.0 * se
    return CalibrationResult(
        threshold=d_star,
        epsilon=float(epsilon),
        target_single_fraction=float(target_single_fraction),
        grid=tuple(grid),
        channel_rates=channel_rates,
        balanced=balanced,
    )
