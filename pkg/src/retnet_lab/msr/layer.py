"""Gated multi-scale retention: one decay rate per head, GroupNorm over heads, swish gate."""

from typing import List, Mapping, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from numpy.typing import NDArray
from pydantic import field_validator
from pydantic.dataclasses import dataclass

from retnet_lab.helpers.enums import GammaVariant, Paradigm, Precision
from retnet_lab.numerics import ops
from retnet_lab.numerics.tensor import default_eps, Tensor
from retnet_lab.retention.decay import decay_mask, NormalizationConfig
from retnet_lab.retention.paradigms import (
    parallel_final_state,
    retention_chunkwise,
    retention_parallel,
    retention_recurrent_step,
    RetentionState,
)
from retnet_lab.retention.rotation import apply_xpos, rotation_angles

SINGLE_SCALE_GAMMA = 127.0 / 128.0


@dataclass(frozen=True, kw_only=True)
class AblationFlags:
    """Switches that remove one ingredient of the layer at a time."""

    no_gate: bool = False  # output is Y W_O, W_G is never allocated
    no_groupnorm: bool = False  # identity instead of GroupNorm, no affine either
    no_decay: bool = False  # gamma = 1 on every head
    single_scale: bool = False  # gamma = 127/128 on every head
    head_dim_override: Optional[int] = None  # query/key head width, heads = d_model / width

    @field_validator("head_dim_override")
    @classmethod
    def _check_head_dim(cls, value: Optional[int]) -> Optional[int]:
        if value is not None and (value < 2 or value % 2):  # noqa: PLR2004
            raise ValueError(f"head_dim_override must be an even width >= 2, got {value}.")
        return value


class MSRLayerParams(NamedTuple):
    """The weights of one layer, viewed out of a flat parameter mapping."""

    w_q: Tensor  # (d, d)
    w_k: Tensor  # (d, d)
    w_v: Tensor  # (d, 2d)
    w_g: Optional[Tensor]  # (d, 2d), None without the gate
    w_o: Tensor  # (2d, d)
    gammas: NDArray[np.float64]  # (h,)
    norm_weight: Optional[Tensor]  # (2d,)
    norm_bias: Optional[Tensor]  # (2d,)

    ################################################################################################
    # Public Methods
    ################################################################################################

    @classmethod
    def from_mapping(
        cls,
        params: Mapping[str, Tensor],
        prefix: str,
        gammas: NDArray[np.float64],
    ) -> "MSRLayerParams":
        """Pick the layer's tensors out of a flat mapping.

        Args:
            params: Tensors keyed by dotted names.
            prefix: The layer prefix, for example ``blocks.0.msr``.
            gammas: The per-head decay rates.

        Returns:
            The layer view.
        """
        try:
            return cls(
                w_q=params[f"{prefix}.w_q"],
                w_k=params[f"{prefix}.w_k"],
                w_v=params[f"{prefix}.w_v"],
                w_g=params.get(f"{prefix}.w_g"),
                w_o=params[f"{prefix}.w_o"],
                gammas=np.asarray(gammas, dtype=np.float64),
                norm_weight=params.get(f"{prefix}.norm.weight"),
                norm_bias=params.get(f"{prefix}.norm.bias"),
            )
        except KeyError as e:
            raise KeyError(f"Parameter {e} is missing for layer {prefix}.") from e

    ################################################################################################
    # Properties
    ################################################################################################

    @property
    def n_heads(self) -> int:
        """The number of heads h."""
        return len(self.gammas)

    @property
    def d_model(self) -> int:
        """The layer width d."""
        return self.w_q.shape[0]


class MSRState(NamedTuple):
    """One RetentionState per head."""

    heads: Tuple[RetentionState, ...]

    ################################################################################################
    # Public Methods
    ################################################################################################

    @classmethod
    def zeros(
        cls,
        n_heads: int,
        d_model: int,
        precision: Precision = Precision.FP64,
        batch_shape: Sequence[int] = (),
    ) -> "MSRState":
        """The layer state before any position.

        Args:
            n_heads: The number of heads h.
            d_model: The layer width d.
            precision: The element precision.
            batch_shape: Leading batch axes.

        Returns:
            h zero head states of size (d/h) x (2d/h).
        """
        d_k = d_model // n_heads
        return cls(
            tuple(
                RetentionState.zeros(d_k, 2 * d_k, precision, batch_shape) for _ in range(n_heads)
            )
        )

    ################################################################################################
    # Properties
    ################################################################################################

    @property
    def position(self) -> int:
        """How many positions the state has absorbed."""
        return self.heads[0].position if self.heads else 0

    @property
    def element_count(self) -> int:
        """The exact number of floats held by all heads."""
        return sum(head.element_count for head in self.heads)


def gamma_schedule(h: int, variant: GammaVariant = GammaVariant.DEFAULT) -> NDArray[np.float64]:
    """The per-head decay rates, increasing toward one.

    Args:
        h: The number of heads.
        variant: ``default`` gives 1 - 2^(-5 - i). ``paper_experiments`` spaces 1 - gamma
            geometrically from 1/32 to 1/512.

    Returns:
        The h decay rates.
    """
    if h < 1:
        raise ValueError(f"A schedule needs at least one head, got {h}.")
    if GammaVariant(variant) is GammaVariant.DEFAULT:
        exponents = -5.0 - np.arange(h, dtype=np.float64)
    else:
        # 2^linspace keeps both endpoints exact, unlike exp(linspace(log ...))
        exponents = np.linspace(-5.0, -9.0, h)
    return 1.0 - np.power(2.0, exponents)


def layer_gammas(
    h: int,
    flags: AblationFlags,
    variant: GammaVariant = GammaVariant.DEFAULT,
) -> NDArray[np.float64]:
    """The decay rates a layer actually uses once the ablation flags are applied.

    Args:
        h: The number of heads.
        flags: ``no_decay`` wins over ``single_scale``.
        variant: The schedule used when neither flag is set.

    Returns:
        The h decay rates.
    """
    if flags.no_decay:
        return np.ones(h)
    if flags.single_scale:
        return np.full(h, SINGLE_SCALE_GAMMA)
    return gamma_schedule(h, variant)


def msr_heads(d_model: int, n_heads: int, flags: AblationFlags) -> int:
    """Resolve the head count, honoring ``head_dim_override``.

    Args:
        d_model: The layer width d.
        n_heads: The configured head count.
        flags: The ablation flags.

    Returns:
        The head count h with an even query/key width d / h.
    """
    if flags.head_dim_override is not None:
        if d_model % flags.head_dim_override:
            raise ValueError(
                f"head_dim_override {flags.head_dim_override} does not divide d_model {d_model}."
            )
        n_heads = d_model // flags.head_dim_override
    if n_heads < 1 or d_model % n_heads:
        raise ValueError(f"{n_heads} heads do not divide d_model {d_model}.")
    if (d_model // n_heads) % 2:
        raise ValueError(f"The head width {d_model // n_heads} must be even for rotations.")
    return n_heads


def msr_param_count(d: int, h: int) -> int:
    """The trainable weights of one layer without the normalization affine: 8 d^2.

    Args:
        d: The layer width.
        h: The head count, which must divide d.

    Returns:
        d*d (W_Q) + d*d (W_K) + d*2d (W_V) + d*2d (W_G) + 2d*d (W_O).
    """
    if h < 1 or d % h:
        raise ValueError(f"{h} heads do not divide d_model {d}.")
    return d * d + d * d + d * 2 * d + d * 2 * d + 2 * d * d


def retention_heads(  # noqa: PLR0913
    x: Tensor,
    params: MSRLayerParams,
    paradigm: Paradigm,
    chunk_size: int = 64,
    state: Optional[MSRState] = None,
    cfg: Optional[NormalizationConfig] = None,
) -> Tuple[Tensor, MSRState]:
    """Project, rotate and run every head, returning the concatenated pre-norm output.

    Args:
        x: The layer input, (..., length, d).
        params: The layer weights.
        paradigm: How each head walks the sequence.
        chunk_size: The chunk length for the chunkwise paradigm.
        state: The incoming state. Must be None for parallel and is required for recurrent.
        cfg: The stabilizers, all enabled by default.

    Returns:
        The (..., length, 2d) head outputs and the state after the last position.
    """
    cfg = NormalizationConfig() if cfg is None else cfg
    paradigm = Paradigm(paradigm)
    if paradigm is Paradigm.PARALLEL and state is not None:
        raise ValueError("The parallel paradigm starts from scratch and takes no state.")
    if paradigm is Paradigm.RECURRENT and state is None:
        raise ValueError("The recurrent paradigm needs a state, use MSRState.zeros to start.")
    if state is not None and len(state.heads) != params.n_heads:
        raise ValueError(f"State has {len(state.heads)} heads, the layer has {params.n_heads}.")
    if x.shape[-1] != params.d_model:
        raise ValueError(f"Input width {x.shape[-1]} does not match d_model {params.d_model}.")

    h = params.n_heads
    d_k = params.d_model // h
    d_v = 2 * d_k
    length = x.shape[-2]
    offset = 0 if state is None else state.position
    positions = offset + np.arange(length)
    angles = rotation_angles(d_k)

    q = ops.matmul(x, params.w_q)
    k = ops.matmul(x, params.w_k)
    v = ops.matmul(x, params.w_v)
    outputs: List[Tensor] = []
    head_states: List[RetentionState] = []
    for head in range(h):
        gamma = float(params.gammas[head])
        qk_cols = (Ellipsis, slice(head * d_k, (head + 1) * d_k))
        q_head = apply_xpos(q[qk_cols], positions, 1, angles)
        k_head = apply_xpos(k[qk_cols], positions, 1, angles)
        v_head = v[Ellipsis, slice(head * d_v, (head + 1) * d_v)]
        if paradigm is Paradigm.PARALLEL:
            out = retention_parallel(q_head, k_head, v_head, decay_mask(gamma, length, cfg), cfg)
            head_state = parallel_final_state(k_head, v_head, gamma)
        elif paradigm is Paradigm.CHUNKWISE:
            incoming = None if state is None else state.heads[head]
            out, head_state = retention_chunkwise(
                q_head, k_head, v_head, incoming, gamma, chunk_size, cfg
            )
        else:
            head_state = state.heads[head]  # pyright: ignore[reportOptionalMemberAccess]
            rows: List[Tensor] = []
            for t in range(length):
                row = (Ellipsis, t, slice(None))
                out_row, head_state = retention_recurrent_step(
                    q_head[row], k_head[row], v_head[row], head_state, gamma, cfg
                )
                rows.append(out_row)
            out = ops.stack(rows, axis=-2)
        outputs.append(out)
        head_states.append(head_state)
    return ops.concat(outputs, axis=-1), MSRState(tuple(head_states))


def msr_forward(  # noqa: PLR0913
    x: Tensor,
    params: MSRLayerParams,
    flags: AblationFlags,
    paradigm: Paradigm,
    chunk_size: int = 64,
    state: Optional[MSRState] = None,
    cfg: Optional[NormalizationConfig] = None,
    eps: Optional[float] = None,
) -> Tuple[Tensor, MSRState]:
    """MSR(X) = (swish(X W_G) * GroupNorm_h(heads)) W_O.

    Args:
        x: The layer input, (..., length, d).
        params: The layer weights.
        flags: Which ingredients are ablated.
        paradigm: How each head walks the sequence.
        chunk_size: The chunk length for the chunkwise paradigm.
        state: The incoming state, see ``retention_heads``.
        cfg: The stabilizers, all enabled by default.
        eps: The GroupNorm epsilon, defaults to the precision's value.

    Returns:
        The (..., length, d) output and the state after the last position.
    """
    heads, new_state = retention_heads(x, params, paradigm, chunk_size, state, cfg)
    if not flags.no_groupnorm:
        eps = default_eps(x.precision) if eps is None else eps
        heads = ops.group_norm(heads, params.n_heads, eps, params.norm_weight, params.norm_bias)
    if not flags.no_gate:
        if params.w_g is None:
            raise ValueError("The gate is enabled but the layer has no w_g.")
        heads = ops.swish(ops.matmul(x, params.w_g)) * heads
    return ops.matmul(heads, params.w_o), new_state
