"""AdamW with decoupled weight decay, a warmup then linear decay schedule and global-norm
clipping.
"""

from typing import Any, Dict, Mapping, NamedTuple, Tuple

import numpy as np

from numpy.typing import NDArray

from retnet_lab.train.config import TrainConfig

Arrays = Dict[str, NDArray[Any]]


class AdamWState(NamedTuple):
    """The update count and both moment estimates of every parameter."""

    step: int
    m: Arrays
    v: Arrays

    ################################################################################################
    # Public Methods
    ################################################################################################

    def to_arrays(self) -> Arrays:
        """Flatten the moments as ``m.<name>`` and ``v.<name>`` for storage."""
        arrays = {f"m.{name}": value for name, value in self.m.items()}
        arrays.update({f"v.{name}": value for name, value in self.v.items()})
        return arrays

    @classmethod
    def from_arrays(cls, step: int, arrays: Mapping[str, NDArray[Any]]) -> "AdamWState":
        """Rebuild the state written by ``to_arrays``.

        Args:
            step: The update count.
            arrays: The flattened moments.

        Returns:
            The state.
        """
        m = {name[2:]: np.array(value) for name, value in arrays.items() if name.startswith("m.")}
        v = {name[2:]: np.array(value) for name, value in arrays.items() if name.startswith("v.")}
        if set(m) != set(v) or len(m) + len(v) != len(arrays):
            raise KeyError("Optimizer arrays must pair every m.<name> with a v.<name>.")
        return cls(step, m, v)


def adamw_init(params: Mapping[str, NDArray[Any]]) -> AdamWState:
    """Zero moments shaped like the parameters.

    Args:
        params: The parameters.

    Returns:
        The state before the first update.
    """
    return AdamWState(
        0,
        {name: np.zeros_like(value) for name, value in params.items()},
        {name: np.zeros_like(value) for name, value in params.items()},
    )


def lr_at(step: int, cfg: TrainConfig) -> float:
    """The learning rate after ``step`` updates.

    Zero at step 0, rising linearly to ``cfg.lr`` at ``warmup_steps``, then falling linearly to zero
    at ``steps``.

    Args:
        step: The schedule position.
        cfg: The training config.

    Returns:
        The learning rate.
    """
    if step < cfg.warmup_steps:
        return cfg.lr * step / cfg.warmup_steps
    remaining = max(cfg.steps - step, 0)
    return cfg.lr * remaining / max(cfg.steps - cfg.warmup_steps, 1)


def global_norm(grads: Mapping[str, NDArray[Any]]) -> float:
    """The L2 norm of all gradients viewed as one vector."""
    return float(np.sqrt(sum(float(np.sum(np.square(grad))) for grad in grads.values())))


def clip_by_global_norm(
    grads: Mapping[str, NDArray[Any]],
    max_norm: float,
) -> Tuple[Arrays, float]:
    """Scale all gradients down together when their global norm exceeds ``max_norm``.

    Args:
        grads: The gradients.
        max_norm: The norm ceiling.

    Returns:
        The clipped gradients and the norm before clipping.
    """
    norm = global_norm(grads)
    if norm <= max_norm or norm == 0.0:
        return dict(grads), norm
    factor = max_norm / norm
    return {name: grad * factor for name, grad in grads.items()}, norm


def adamw_update(
    params: Mapping[str, NDArray[Any]],
    grads: Mapping[str, NDArray[Any]],
    state: AdamWState,
    cfg: TrainConfig,
) -> Tuple[Arrays, AdamWState, float]:
    """Apply one AdamW update.

    Weight decay multiplies matrices by ``1 - lr * weight_decay`` before the Adam step. Vectors
    (norm gains and biases) are not decayed.

    Args:
        params: The current parameters.
        grads: Their gradients, already clipped.
        state: The optimizer state.
        cfg: The training config.

    Returns:
        The new parameters, the new state and the learning rate used.
    """
    step = state.step + 1
    lr = lr_at(step, cfg)
    beta_1, beta_2 = cfg.betas
    new_params: Arrays = {}
    new_m: Arrays = {}
    new_v: Arrays = {}
    for name, value in params.items():
        grad = grads[name]
        m = beta_1 * state.m[name] + (1.0 - beta_1) * grad
        v = beta_2 * state.v[name] + (1.0 - beta_2) * np.square(grad)
        m_hat = m / (1.0 - beta_1**step)
        v_hat = v / (1.0 - beta_2**step)
        decayed = value * (1.0 - lr * cfg.weight_decay) if value.ndim > 1 else value
        new_params[name] = (decayed - lr * m_hat / (np.sqrt(v_hat) + cfg.eps)).astype(value.dtype)
        new_m[name] = m.astype(value.dtype)
        new_v[name] = v.astype(value.dtype)
    return new_params, AdamWState(step, new_m, new_v), lr
