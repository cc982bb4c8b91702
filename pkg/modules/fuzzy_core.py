"""
Interval type-2 TSK inference for the neuro-fuzzy controller.

Two inputs (e, e_dot), Gaussian lower/upper membership functions per input,
product firing strengths over the I x J rule grid and the q-weighted output.
All K-vectors use row-major rule order (input-1 index outer, input-2 index inner).
"""
import logging
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

logger = logging.getLogger(__name__)

# Raw firing sums below this are treated as underflow.
FIRING_UNDERFLOW = 1e-300


class InvalidParameterError(ValueError):
    """Raised when a membership parameter is outside its valid range."""
    pass


class DegenerateFiringError(RuntimeError):
    """Raised when every rule's firing strength has underflowed."""
    pass


@dataclass(frozen=True)
class Type2MembershipFunction:
    """Paired lower/upper Gaussian for one input dimension."""
    lower_center: float
    upper_center: float
    lower_sigma: float
    upper_sigma: float


@dataclass
class MFSet:
    """
    Membership parameters for one input, stored as parallel arrays.

    Index m of each array belongs to the m-th membership function.
    """
    lower_centers: np.ndarray
    upper_centers: np.ndarray
    lower_sigmas: np.ndarray
    upper_sigmas: np.ndarray

    def __post_init__(self):
        self.lower_centers = np.asarray(self.lower_centers, dtype=float)
        self.upper_centers = np.asarray(self.upper_centers, dtype=float)
        self.lower_sigmas = np.asarray(self.lower_sigmas, dtype=float)
        self.upper_sigmas = np.asarray(self.upper_sigmas, dtype=float)
        sizes = {arr.shape for arr in (self.lower_centers, self.upper_centers, self.lower_sigmas, self.upper_sigmas)}
        if len(sizes) != 1 or self.lower_centers.ndim != 1 or self.lower_centers.size == 0:
            raise InvalidParameterError(f'Membership arrays must be equal-length non-empty vectors, got shapes {sorted(sizes)}')

    @property
    def size(self) -> int:
        return int(self.lower_centers.size)

    def copy(self) -> 'MFSet':
        return MFSet(self.lower_centers.copy(), self.upper_centers.copy(), self.lower_sigmas.copy(), self.upper_sigmas.copy())

    def functions(self) -> List[Type2MembershipFunction]:
        return [Type2MembershipFunction(float(lc), float(uc), float(ls), float(us)) for lc, uc, ls, us in zip(self.lower_centers, self.upper_centers, self.lower_sigmas, self.upper_sigmas)]

    @classmethod
    def from_functions(cls, mfs: List[Type2MembershipFunction]) -> 'MFSet':
        return cls(
            [mf.lower_center for mf in mfs],
            [mf.upper_center for mf in mfs],
            [mf.lower_sigma for mf in mfs],
            [mf.upper_sigma for mf in mfs],
        )


@dataclass
class MFBank:
    """Membership functions of both inputs; K = I * J rules."""
    input1: MFSet
    input2: MFSet

    @property
    def rule_count(self) -> int:
        return self.input1.size * self.input2.size

    def copy(self) -> 'MFBank':
        return MFBank(self.input1.copy(), self.input2.copy())


@dataclass
class FiringStrengths:
    """Raw and normalized rule firing strengths for the lower and upper bounds."""
    lower: np.ndarray
    upper: np.ndarray
    lower_normalized: np.ndarray
    upper_normalized: np.ndarray


@dataclass
class ConsequentSet:
    """Rule consequents f (one per rule) and the lower/upper mixing weight q."""
    f: np.ndarray
    q: float

    def copy(self) -> 'ConsequentSet':
        return ConsequentSet(np.array(self.f, dtype=float), float(self.q))


def eval_gaussian(x, center, sigma):
    """
    Evaluate exp(-((x - center) / sigma)^2).

    Works on scalars or numpy arrays (broadcast).

    Raises:
        InvalidParameterError: If any sigma is not strictly positive
    """
    sigma = np.asarray(sigma, dtype=float)
    if np.any(~(sigma > 0)):
        raise InvalidParameterError(f'Gaussian width must be > 0, got {sigma}')
    value = np.exp(-np.square((np.asarray(x, dtype=float) - center) / sigma))
    if value.ndim == 0:
        return float(value)
    return value


def memberships(x: float, mf_set: MFSet) -> Tuple[np.ndarray, np.ndarray]:
    """Lower and upper membership grades of x for every MF in the set."""
    lower = eval_gaussian(x, mf_set.lower_centers, mf_set.lower_sigmas)
    upper = eval_gaussian(x, mf_set.upper_centers, mf_set.upper_sigmas)
    return np.atleast_1d(lower), np.atleast_1d(upper)


def normalize(raw: np.ndarray) -> np.ndarray:
    """
    Scale a vector of positive firing strengths to sum to one.

    Args:
        raw: K-vector of firing strengths

    Returns:
        K-vector summing to 1

    Raises:
        DegenerateFiringError: If the sum is below the underflow floor
    """
    raw = np.asarray(raw, dtype=float)
    total = float(np.sum(raw))
    if not total >= FIRING_UNDERFLOW:
        raise DegenerateFiringError(f'Firing strength sum {total:.3e} below underflow floor; inputs are far outside the membership support')
    return raw / total


def firing_strengths(e: float, e_dot: float, bank: MFBank) -> FiringStrengths:
    """
    Compute rule firing strengths for inputs (e, e_dot).

    lower[ij] = mu_lower_1i(e) * mu_lower_2j(e_dot), same for upper, row-major.
    Normalized vectors are filled in as well.
    """
    lower1, upper1 = memberships(e, bank.input1)
    lower2, upper2 = memberships(e_dot, bank.input2)
    lower = np.outer(lower1, lower2).ravel()
    upper = np.outer(upper1, upper2).ravel()
    return FiringStrengths(lower=lower, upper=upper, lower_normalized=normalize(lower), upper_normalized=normalize(upper))


def t2_output(fs: FiringStrengths, cons: ConsequentSet) -> float:
    """u_n = q * f . w_lower_norm + (1 - q) * f . w_upper_norm"""
    f = np.asarray(cons.f, dtype=float)
    return float(cons.q * np.dot(f, fs.lower_normalized) + (1.0 - cons.q) * np.dot(f, fs.upper_normalized))


def initial_bank(n_mfs: int, input_range: float) -> MFBank:
    """
    Build the starting bank used by every scenario.

    Centers sit evenly on [-input_range, input_range] (for three MFs that is
    {-1, 0, 1} * input_range) with identical lower/upper centers; lower widths
    are half the spacing and upper widths the full spacing.

    Raises:
        InvalidParameterError: If n_mfs < 1 or input_range <= 0
    """
    if n_mfs < 1:
        raise InvalidParameterError(f'Need at least one membership function per input, got {n_mfs}')
    if not input_range > 0:
        raise InvalidParameterError(f'input_range must be > 0, got {input_range}')
    if n_mfs == 1:
        centers = np.zeros(1)
        spacing = float(input_range)
    else:
        centers = np.linspace(-1.0, 1.0, n_mfs) * input_range
        spacing = 2.0 * input_range / (n_mfs - 1)
    mfs = [Type2MembershipFunction(float(c), float(c), 0.5 * spacing, spacing) for c in centers]
    return MFBank(MFSet.from_functions(mfs), MFSet.from_functions(mfs))


def _nearest_width_distance(x: float, mf_set: MFSet) -> float:
    """Smallest |x - c| / sigma over the lower and upper functions of one input."""
    lower = np.abs(x - mf_set.lower_centers) / mf_set.lower_sigmas
    upper = np.abs(x - mf_set.upper_centers) / mf_set.upper_sigmas
    return float(min(np.min(lower), np.min(upper)))


def _contrast_pattern(x: float, mf_set: MFSet, q: float) -> np.ndarray:
    """
    Per-MF weights d with d . v = 0 for v = q * m_lower + (1 - q) * m_upper,
    where m are the normalized memberships of x. d . (m_lower - m_upper) = |d|^2.
    """
    lower, upper = memberships(x, mf_set)
    m_lower = normalize(lower)
    m_upper = normalize(upper)
    diff = m_lower - m_upper
    mix = q * m_lower + (1.0 - q) * m_upper
    return diff - (np.dot(diff, mix) / np.dot(mix, mix)) * mix


def seeded_consequents(bank: MFBank, e: float, e_dot: float, q0: float, output0: float = 0.0, q_denominator0: float = 1.0) -> ConsequentSet:
    """
    Consequents whose network output at (e, e_dot) is output0 and whose q-law
    denominator f . (w_lower_norm - w_upper_norm) is q_denominator0.

    f = output0 + beta * d, where d depends on the MF index of one input only.
    The input sitting farther from every center (in widths) carries d, e_dot on
    ties, so an MF collapsing on the other input leaves both values unchanged.
    Falls back to constant consequents when no usable pattern exists.

    Args:
        bank: Starting membership functions
        e: Error at the first sample
        e_dot: Error rate at the first sample
        q0: Initial lower/upper mixing weight
        output0: Network output at the first sample
        q_denominator0: Starting value of f . (w_lower_norm - w_upper_norm)

    Returns:
        ConsequentSet in row-major rule order
    """
    constant = np.full(bank.rule_count, float(output0))
    if q_denominator0 == 0.0:
        return ConsequentSet(constant, float(q0))
    use_rate = _nearest_width_distance(e_dot, bank.input2) >= _nearest_width_distance(e, bank.input1)
    x, mf_set = (e_dot, bank.input2) if use_rate else (e, bank.input1)
    try:
        pattern = _contrast_pattern(x, mf_set, q0)
    except DegenerateFiringError:
        logger.warning(f'Input {"2" if use_rate else "1"} has no firing at {x:.6g}; starting from constant consequents')
        return ConsequentSet(constant, float(q0))
    norm_sq = float(np.dot(pattern, pattern))
    if not norm_sq > 1e-12:
        logger.warning('Lower and upper firing strengths coincide; starting from constant consequents')
        return ConsequentSet(constant, float(q0))
    pattern = pattern * (q_denominator0 / norm_sq)
    if use_rate:
        f = constant + np.tile(pattern, bank.input1.size)
    else:
        f = constant + np.repeat(pattern, bank.input2.size)
    logger.debug(f'Seeded consequents on input {"2" if use_rate else "1"}: max |f| = {np.max(np.abs(f)):.4g}')
    return ConsequentSet(f, float(q0))
