"""The learning objective: information index, motion-invariance term, parsimony.

Every evaluation produces an ActionBreakdown holding the individual terms and
the composite value

    A = -I + lam_motion * M + lam_spatial * P + lam_temporal * K
        (+ lam_constraint * C_pen in linear-penalty mode)

where I = S(Y) - S(Y | site) is the information index of the per-pixel symbol
distribution, M integrates the squared motion-transport residual, P penalizes
rough tap grids, K penalizes fast tap change between optimizer iterates, and
C_pen penalizes simplex violations of the raw activations.

The space-time measure is h(t) / (sum_t h(t) * H * W): pixel-uniform with a
per-frame temporal factor, normalized to total mass 1.  All reductions use a
fixed accumulation order, so repeated evaluations are bit-identical.
"""

from dataclasses import dataclass

import numpy as np

from .features import (
    FilterBank,
    as_grid,
    convolution_tap_gradient,
    convolve_features,
    probability_vjp,
    to_probabilities,
)
from .flow import VelocityField, require_matching


@dataclass(frozen=True)
class TemporalWeights:
    """Per-frame weights h(t) >= 0 defining the temporal factor of the measure."""

    weights: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(np.asarray(self.weights, dtype=np.float64))
        if arr.ndim != 1 or arr.size < 2:
            raise ValueError(f"temporal weights must be a 1-D array of length >= 2, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)) or np.any(arr < 0.0):
            raise ValueError("temporal weights must be finite and non-negative")
        if arr.sum() <= 0.0:
            raise ValueError("temporal weights must not be all zero")
        arr.setflags(write=False)
        object.__setattr__(self, "weights", arr)

    @classmethod
    def uniform(cls, frames: int) -> "TemporalWeights":
        return cls(np.ones(frames, dtype=np.float64))

    @classmethod
    def exponential(cls, frames: int, gamma: float) -> "TemporalWeights":
        """Discounted weights h(t) = gamma^(T-1-t): recent frames weigh most."""
        if not 0.0 < gamma <= 1.0:
            raise ValueError(f"discount factor must be in (0, 1], got {gamma}")
        return cls(gamma ** np.arange(frames - 1, -1, -1, dtype=np.float64))

    @property
    def frames(self) -> int:
        return self.weights.size

    def frame_measure(self, height: int, width: int) -> np.ndarray:
        """Per-frame site measure; sums to 1 over all (t, x)."""
        return self.weights / (self.weights.sum() * height * width)

    def residual_measure(self, height: int, width: int) -> np.ndarray:
        """Site measure renormalized over the T-1 frames carrying a residual."""
        head = self.weights[:-1]
        total = head.sum()
        if total <= 0.0:
            raise ValueError("temporal weights put no mass on frames 0..T-2")
        return head / (total * height * width)


@dataclass(frozen=True)
class Multipliers:
    """Non-negative weights of the objective terms."""

    motion: float = 0.0
    spatial: float = 0.0
    temporal: float = 0.0
    constraint: float = 0.0

    def __post_init__(self):
        for name in ("motion", "spatial", "temporal", "constraint"):
            value = float(getattr(self, name))
            if not np.isfinite(value) or value < 0.0:
                raise ValueError(f"multiplier {name} must be finite and >= 0, got {value}")
            object.__setattr__(self, name, value)


BREAKDOWN_CSV_HEADER = "step,S_Y,S_cond,I,M,P,K,C_pen,A"


@dataclass(frozen=True)
class ActionBreakdown:
    """All terms of one objective evaluation, in nats / squared units."""

    marginal_entropy: float
    conditional_entropy: float
    info_index: float
    motion: float
    spatial: float
    temporal: float
    penalty: float
    total: float

    def values(self) -> tuple[float, ...]:
        return (self.marginal_entropy, self.conditional_entropy, self.info_index,
                self.motion, self.spatial, self.temporal, self.penalty, self.total)

    def csv_row(self, step: int) -> str:
        return ",".join([str(step)] + [f"{v:.17g}" for v in self.values()])


# ---------------------------------------------------------------------------
# Entropies of the symbol variable under the site measure.

def _xlogx(probs: np.ndarray) -> np.ndarray:
    """Elementwise p*log(p) with the 0*log(0) = 0 convention."""
    safe = np.where(probs > 0.0, probs, 1.0)
    return safe * np.log(safe)


def _neg_xlogx_sum(probs: np.ndarray, axis=None) -> np.ndarray:
    """-sum p*log(p) with the 0*log(0) = 0 convention."""
    return -_xlogx(probs).sum(axis=axis)


def _check_field_weights(field: np.ndarray, weights: TemporalWeights) -> np.ndarray:
    arr = np.asarray(field, dtype=np.float64)
    if arr.ndim != 4:
        raise ValueError(f"field must be (T, H, W, n), got shape {arr.shape}")
    if arr.shape[0] != weights.frames:
        raise ValueError(
            f"temporal weights cover {weights.frames} frames, field has {arr.shape[0]}"
        )
    return arr


def conditional_entropy(field: np.ndarray, weights: TemporalWeights) -> float:
    """Measure-weighted mean per-site entropy of the symbol distribution, nats."""
    arr = _check_field_weights(field, weights)
    site = _neg_xlogx_sum(arr, axis=3)
    per_frame = site.sum(axis=(1, 2))
    measure = weights.frame_measure(arr.shape[1], arr.shape[2])
    return float(np.dot(measure, per_frame))


def symbol_marginal(field: np.ndarray, weights: TemporalWeights) -> np.ndarray:
    """Marginal symbol distribution q_i = sum_site measure * p_i."""
    arr = _check_field_weights(field, weights)
    measure = weights.frame_measure(arr.shape[1], arr.shape[2])
    q = np.einsum("t,thwi->i", measure, arr)
    if abs(q.sum() - 1.0) > 1e-9:
        raise ValueError(f"symbol marginal sums to {q.sum():.12g}, not 1: field off the simplex")
    return q


def marginal_entropy(field: np.ndarray, weights: TemporalWeights) -> float:
    """Entropy of the marginal symbol distribution, nats."""
    return float(_neg_xlogx_sum(symbol_marginal(field, weights)))


def information_index(field: np.ndarray, weights: TemporalWeights) -> float:
    """Marginal minus conditional entropy: dominant yet diverse features score high."""
    return marginal_entropy(field, weights) - conditional_entropy(field, weights)


# ---------------------------------------------------------------------------
# Motion-invariance term.
#
# The transport condition says a feature's value is carried along pixel
# trajectories.  Discretely: the value at x + v(x, t) in frame t+1 must equal
# the value at x in frame t.  The residual samples frame t+1 at the advected
# position (bilinear, toroidal wrap), which makes integer-velocity transport
# exact for any bank because convolution commutes with translation.  The
# residual is evaluated on raw activations; both probability maps are
# pointwise, so transported activations imply transported probabilities.

class _WarpPlan:
    """Gather indices and bilinear weights for advecting frames 1..T-1."""

    def __init__(self, flow: VelocityField):
        data = flow.data
        t_res, height, width = data.shape[0] - 1, data.shape[1], data.shape[2]
        if t_res < 1:
            raise ValueError("need at least 2 frames for a motion residual")
        rows = np.arange(height, dtype=np.float64)[None, :, None] + data[:-1, :, :, 1]
        cols = np.arange(width, dtype=np.float64)[None, None, :] + data[:-1, :, :, 0]
        r0 = np.floor(rows)
        c0 = np.floor(cols)
        fr = rows - r0
        fc = cols - c0
        r0 = r0.astype(np.int64)
        c0 = c0.astype(np.int64)
        r0m = np.mod(r0, height)
        r1m = np.mod(r0 + 1, height)
        c0m = np.mod(c0, width)
        c1m = np.mod(c0 + 1, width)
        self.site_index = np.stack(
            (r0m * width + c0m, r0m * width + c1m, r1m * width + c0m, r1m * width + c1m)
        )
        self.weight = np.stack(
            ((1.0 - fr) * (1.0 - fc), (1.0 - fr) * fc, fr * (1.0 - fc), fr * fc)
        )
        self.t_res = t_res
        self.height = height
        self.width = width
        self._t_index = np.arange(t_res)[:, None, None]

    def gather(self, tail: np.ndarray) -> np.ndarray:
        """Advected samples of ``tail`` (frames 1..T-1, shape (T-1, H, W, n))."""
        flat = tail.reshape(self.t_res, self.height * self.width, -1)
        out = np.zeros(tail.shape, dtype=np.float64)
        for corner in range(4):
            out += self.weight[corner][..., None] * flat[self._t_index, self.site_index[corner], :]
        return out

    def scatter(self, grad: np.ndarray) -> np.ndarray:
        """Adjoint of ``gather``: spread a residual-shaped gradient onto frames 1..T-1."""
        flat = np.zeros((self.t_res, self.height * self.width, grad.shape[3]), dtype=np.float64)
        for corner in range(4):
            np.add.at(flat, (self._t_index, self.site_index[corner]),
                      self.weight[corner][..., None] * grad)
        return flat.reshape(grad.shape)


def motion_residual(act: np.ndarray, flow: VelocityField) -> np.ndarray:
    """Transport residual r_i(x, t) for t = 0..T-2, shape (T-1, H, W, n)."""
    arr = np.asarray(act, dtype=np.float64)
    if arr.ndim != 4:
        raise ValueError(f"activation field must be (T, H, W, n), got shape {arr.shape}")
    if arr.shape[0] < 2:
        raise ValueError("need at least 2 frames for a motion residual")
    require_matching(flow, arr.shape[0], arr.shape[1], arr.shape[2])
    plan = _WarpPlan(flow)
    return plan.gather(arr[1:]) - arr[:-1]


def motion_term(act: np.ndarray, flow: VelocityField, weights: TemporalWeights) -> float:
    """Integrated squared transport residual under the renormalized measure."""
    arr = np.asarray(act, dtype=np.float64)
    residual = motion_residual(arr, flow)
    if weights.frames != arr.shape[0]:
        raise ValueError(
            f"temporal weights cover {weights.frames} frames, field has {arr.shape[0]}"
        )
    measure = weights.residual_measure(arr.shape[1], arr.shape[2])
    per_frame = (residual * residual).sum(axis=(1, 2, 3))
    return float(np.dot(measure, per_frame))


# ---------------------------------------------------------------------------
# Parsimony terms on the tap grid.

def spatial_parsimony(bank) -> float:
    """Half the summed squared first differences of the taps along both kernel
    axes; neighbor pairs inside the support only (no wrap across the edge)."""
    taps = bank.taps if isinstance(bank, FilterBank) else np.asarray(bank, dtype=np.float64)
    da = np.diff(taps, axis=2)
    db = np.diff(taps, axis=3)
    return 0.5 * (float((da * da).sum()) + float((db * db).sum()))


def spatial_parsimony_gradient(taps: np.ndarray) -> np.ndarray:
    grad = np.zeros_like(taps)
    da = np.diff(taps, axis=2)
    grad[:, :, :-1, :] -= da
    grad[:, :, 1:, :] += da
    db = np.diff(taps, axis=3)
    grad[:, :, :, :-1] -= db
    grad[:, :, :, 1:] += db
    return grad


def temporal_parsimony(bank_now, bank_prev, dtau: float) -> float:
    """Half the squared tap velocity between consecutive optimizer iterates."""
    if dtau <= 0.0:
        raise ValueError(f"temporal-parsimony step must be > 0, got {dtau}")
    now = bank_now.taps if isinstance(bank_now, FilterBank) else np.asarray(bank_now)
    prev = bank_prev.taps if isinstance(bank_prev, FilterBank) else np.asarray(bank_prev)
    if now.shape != prev.shape:
        raise ValueError(f"bank shapes differ: {now.shape} vs {prev.shape}")
    delta = (now - prev) / dtau
    return 0.5 * float((delta * delta).sum())


# ---------------------------------------------------------------------------
# Constraint penalty on raw activations (linear-penalty mode only).

def _constraint_penalty(act: np.ndarray, measure: np.ndarray) -> float:
    sum_dev = act.sum(axis=3) - 1.0
    low = np.maximum(0.0, -act)
    high = np.maximum(0.0, act - 1.0)
    per_site = sum_dev * sum_dev + (low * low + high * high).sum(axis=3)
    return float(np.dot(measure, per_site.sum(axis=(1, 2))))


def _constraint_penalty_act_gradient(act: np.ndarray, measure: np.ndarray) -> np.ndarray:
    sum_dev = act.sum(axis=3) - 1.0
    grad = 2.0 * sum_dev[..., None] - 2.0 * np.maximum(0.0, -act) \
        + 2.0 * np.maximum(0.0, act - 1.0)
    return measure[:, None, None, None] * grad


# ---------------------------------------------------------------------------
# Composite objective and its analytic tap gradient.

def _check_action_inputs(bank: FilterBank, bank_prev: FilterBank, grid: np.ndarray,
                         flow: VelocityField, weights: TemporalWeights, dtau: float) -> None:
    if bank_prev.taps.shape != bank.taps.shape:
        raise ValueError(
            f"previous bank shape {bank_prev.taps.shape} differs from {bank.taps.shape}"
        )
    if grid.shape[3] != bank.m_in:
        raise ValueError(f"bank expects {bank.m_in} input channels, grid has {grid.shape[3]}")
    if grid.shape[0] != weights.frames:
        raise ValueError(
            f"temporal weights cover {weights.frames} frames, grid has {grid.shape[0]}"
        )
    require_matching(flow, grid.shape[0], grid.shape[1], grid.shape[2])
    if dtau <= 0.0:
        raise ValueError(f"temporal-parsimony step must be > 0, got {dtau}")


def cognitive_action(bank: FilterBank, bank_prev: FilterBank, data, flow: VelocityField,
                     weights: TemporalWeights, lam: Multipliers, dtau: float) -> ActionBreakdown:
    """Evaluate every objective term at the given bank."""
    breakdown, _ = _evaluate(bank, bank_prev, data, flow, weights, lam, dtau, want_gradient=False)
    return breakdown


def action_gradient(bank: FilterBank, bank_prev: FilterBank, data, flow: VelocityField,
                    weights: TemporalWeights, lam: Multipliers, dtau: float) -> np.ndarray:
    """Analytic gradient of the composite objective in the taps."""
    _, grad = _evaluate(bank, bank_prev, data, flow, weights, lam, dtau, want_gradient=True)
    return grad


def action_value_and_gradient(bank: FilterBank, bank_prev: FilterBank, data,
                              flow: VelocityField, weights: TemporalWeights,
                              lam: Multipliers, dtau: float):
    """One forward pass serving both the breakdown and the gradient."""
    return _evaluate(bank, bank_prev, data, flow, weights, lam, dtau, want_gradient=True)


def _evaluate(bank: FilterBank, bank_prev: FilterBank, data, flow: VelocityField,
              weights: TemporalWeights, lam: Multipliers, dtau: float, want_gradient: bool):
    grid = as_grid(data)
    _check_action_inputs(bank, bank_prev, grid, flow, weights, dtau)
    height, width = grid.shape[1], grid.shape[2]
    frame_measure = weights.frame_measure(height, width)
    residual_measure = weights.residual_measure(height, width)

    act = convolve_features(bank, grid)
    probs = to_probabilities(act, bank.mode)

    s_cond = conditional_entropy(probs, weights)
    q = symbol_marginal(probs, weights)
    s_marg = float(_neg_xlogx_sum(q))
    info = s_marg - s_cond

    plan = _WarpPlan(flow)
    residual = plan.gather(act[1:]) - act[:-1]
    motion = float(np.dot(residual_measure, (residual * residual).sum(axis=(1, 2, 3))))

    spatial = spatial_parsimony(bank)
    temporal = temporal_parsimony(bank, bank_prev, dtau)
    penalty = _constraint_penalty(act, frame_measure) if bank.mode == "linear-penalty" else 0.0

    total = (-info + lam.motion * motion + lam.spatial * spatial + lam.temporal * temporal
             + lam.constraint * penalty)
    breakdown = ActionBreakdown(s_marg, s_cond, info, motion, spatial, temporal, penalty, total)
    if not want_gradient:
        return breakdown, None

    act_grad = _neg_index_act_gradient(act, probs, q, frame_measure, bank.mode)

    if lam.motion != 0.0:
        residual_grad = (2.0 * lam.motion) * residual_measure[:, None, None, None] * residual
        act_grad[:-1] -= residual_grad
        if np.any(residual_grad):
            act_grad[1:] += plan.scatter(residual_grad)

    if bank.mode == "linear-penalty" and lam.constraint != 0.0:
        act_grad += lam.constraint * _constraint_penalty_act_gradient(act, frame_measure)

    grad = convolution_tap_gradient(grid, act_grad, bank.kernel)
    if lam.spatial != 0.0:
        grad += lam.spatial * spatial_parsimony_gradient(bank.taps)
    if lam.temporal != 0.0:
        grad += lam.temporal * (bank.taps - bank_prev.taps) / (dtau * dtau)
    return breakdown, grad


def _neg_index_act_gradient(act: np.ndarray, probs: np.ndarray, q: np.ndarray,
                            frame_measure: np.ndarray, mode: str) -> np.ndarray:
    """Activation-space gradient of -I.

    In probability space d(-I)/dp = measure * (log q - log p).  For the
    softmax path the product with p is folded in analytically (p*log p with
    the 0*log(0) = 0 convention), so symbols whose probability underflows to
    zero contribute their correct limit instead of NaN.
    """
    log_q = np.log(np.where(q > 0.0, q, 1.0))[None, None, None, :]
    if mode == "softmax":
        weighted = frame_measure[:, None, None, None] * (probs * log_q - _xlogx(probs))
        return weighted - probs * weighted.sum(axis=-1, keepdims=True)
    probs_grad = frame_measure[:, None, None, None] * (log_q - np.log(probs))
    return probability_vjp(act, probs, probs_grad, mode)


def term_gradients(bank: FilterBank, bank_prev: FilterBank, data, flow: VelocityField,
                   weights: TemporalWeights, dtau: float) -> dict[str, np.ndarray]:
    """Tap gradients of the individual term values (not multiplier-weighted).

    Keys: info_index, motion, spatial, temporal, penalty.  Intended for
    oracle comparisons against finite differences of the breakdown fields.
    """
    grid = as_grid(data)
    _check_action_inputs(bank, bank_prev, grid, flow, weights, dtau)
    height, width = grid.shape[1], grid.shape[2]
    frame_measure = weights.frame_measure(height, width)
    residual_measure = weights.residual_measure(height, width)

    act = convolve_features(bank, grid)
    probs = to_probabilities(act, bank.mode)
    q = symbol_marginal(probs, weights)

    info_grad = convolution_tap_gradient(
        grid, -_neg_index_act_gradient(act, probs, q, frame_measure, bank.mode), bank.kernel)

    plan = _WarpPlan(flow)
    residual = plan.gather(act[1:]) - act[:-1]
    residual_grad = 2.0 * residual_measure[:, None, None, None] * residual
    motion_act_grad = np.zeros_like(act)
    motion_act_grad[:-1] -= residual_grad
    motion_act_grad[1:] += plan.scatter(residual_grad)
    motion_grad = convolution_tap_gradient(grid, motion_act_grad, bank.kernel)

    if bank.mode == "linear-penalty":
        penalty_grad = convolution_tap_gradient(
            grid, _constraint_penalty_act_gradient(act, frame_measure), bank.kernel)
    else:
        penalty_grad = np.zeros_like(bank.taps)

    return {
        "info_index": info_grad,
        "motion": motion_grad,
        "spatial": spatial_parsimony_gradient(bank.taps),
        "temporal": (bank.taps - bank_prev.taps) / (dtau * dtau),
        "penalty": penalty_grad,
    }
