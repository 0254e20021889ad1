"""The immutable dense tensor and the seeded random stream every op draws from."""

from typing import Any, Callable, Optional, Sequence, Tuple, Union

import numpy as np

from bidict import bidict
from numpy.typing import ArrayLike, NDArray
from scipy.stats import truncnorm

from retnet_lab.helpers.enums import Precision

PRECISION_DTYPES: "bidict[Precision, np.dtype[Any]]" = bidict(
    {
        Precision.FP32: np.dtype(np.float32),
        Precision.FP64: np.dtype(np.float64),
    },
)

# normalization eps per precision
NORM_EPS = {Precision.FP32: 1e-6, Precision.FP64: 1e-12}

BackwardFn = Callable[[NDArray[Any]], Tuple[Optional[NDArray[Any]], ...]]


def precision_dtype(precision: Union[Precision, str]) -> "np.dtype[Any]":
    """Look up the numpy dtype for a precision.

    Args:
        precision: The precision, or its string value.

    Returns:
        The matching floating point dtype.
    """
    return PRECISION_DTYPES[Precision(precision)]


def default_eps(precision: Union[Precision, str]) -> float:
    """The normalization epsilon used at a precision.

    Args:
        precision: The precision, or its string value.

    Returns:
        1e-6 for fp32, 1e-12 for fp64.
    """
    return NORM_EPS[Precision(precision)]


class Tensor:
    """A dense real array that remembers how it was computed.

    The wrapped array is read-only. A tensor built by an op keeps references to its parents and a
    backward function only when one of the parents requires a gradient.
    """

    __slots__ = ("_backward", "_data", "_parents", "name", "requires_grad")

    ################################################################################################
    # Dunder Methods
    ################################################################################################

    def __init__(
        self,
        data: ArrayLike,
        precision: Optional[Union[Precision, str]] = None,
        requires_grad: bool = False,
        name: str = "",
    ) -> None:
        """Copy the data into a new read-only tensor.

        Args:
            data: Anything numpy can turn into an array.
            precision: The element precision, inferred from the data when not provided.
            requires_grad: Whether gradients should be tracked back to this tensor.
            name: An optional label, used by the gradient functions.
        """
        if precision is None:
            array = np.array(data)
            if array.dtype not in PRECISION_DTYPES.inverse:
                array = array.astype(np.float64)
        else:
            array = np.array(data, dtype=precision_dtype(precision))
        array.flags.writeable = False
        self._data: NDArray[Any] = array
        self._parents: Tuple["Tensor", ...] = ()
        self._backward: Optional[BackwardFn] = None
        self.requires_grad = requires_grad
        self.name = name

    def __repr__(self) -> str:
        """Show the shape, precision and whether a gradient is tracked."""
        tracked = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, precision={self.precision.value}{tracked})"

    def __len__(self) -> int:
        """The size of the first dimension."""
        return len(self._data)

    def __add__(self, other: Any) -> "Tensor":
        """Elementwise sum."""
        from retnet_lab.numerics import ops  # pylint: disable=import-outside-toplevel

        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other: Any) -> "Tensor":
        """Elementwise difference."""
        from retnet_lab.numerics import ops  # pylint: disable=import-outside-toplevel

        return ops.subtract(self, other)

    def __rsub__(self, other: Any) -> "Tensor":
        """Elementwise difference with the tensor on the right."""
        from retnet_lab.numerics import ops  # pylint: disable=import-outside-toplevel

        return ops.subtract(ops.as_tensor(other, like=self), self)

    def __mul__(self, other: Any) -> "Tensor":
        """Elementwise product."""
        from retnet_lab.numerics import ops  # pylint: disable=import-outside-toplevel

        return ops.multiply(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other: Any) -> "Tensor":
        """Elementwise quotient."""
        from retnet_lab.numerics import ops  # pylint: disable=import-outside-toplevel

        return ops.divide(self, other)

    def __neg__(self) -> "Tensor":
        """Elementwise negation."""
        from retnet_lab.numerics import ops  # pylint: disable=import-outside-toplevel

        return ops.multiply(self, -1.0)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        """Matrix product over the last two axes."""
        from retnet_lab.numerics import ops  # pylint: disable=import-outside-toplevel

        return ops.matmul(self, other)

    def __getitem__(self, index: Any) -> "Tensor":
        """Slice or index the tensor."""
        from retnet_lab.numerics import ops  # pylint: disable=import-outside-toplevel

        return ops.getitem(self, index)

    ################################################################################################
    # Public Methods
    ################################################################################################

    @classmethod
    def from_op(
        cls,
        data: NDArray[Any],
        parents: Sequence["Tensor"],
        backward: BackwardFn,
    ) -> "Tensor":
        """Wrap the result of an op without copying it.

        Args:
            data: The freshly computed result array, owned by the new tensor.
            parents: The tensors the result was computed from.
            backward: Maps the output gradient to one gradient per parent.

        Returns:
            The result tensor, attached to the graph only if a parent requires a gradient.
        """
        tensor = cls.__new__(cls)
        data.flags.writeable = False
        tensor._data = data
        tensor.name = ""
        tensor.requires_grad = any(parent.requires_grad for parent in parents)
        if tensor.requires_grad:
            tensor._parents = tuple(parents)
            tensor._backward = backward
        else:
            tensor._parents = ()
            tensor._backward = None
        return tensor

    def numpy(self) -> NDArray[Any]:
        """A writable copy of the data."""
        return self._data.copy()

    def item(self) -> float:
        """The single value of a one element tensor."""
        if self._data.size != 1:
            raise ValueError(f"item() needs a single element, the shape is {self.shape}.")
        return float(self._data.reshape(()))

    def detach(self) -> "Tensor":
        """The same values with the graph history dropped."""
        return Tensor.from_op(self._data, (), lambda _: ())

    ################################################################################################
    # Properties
    ################################################################################################

    @property
    def data(self) -> NDArray[Any]:
        """The read-only array held by the tensor."""
        return self._data

    @property
    def shape(self) -> Tuple[int, ...]:
        """The dimension sizes."""
        return self._data.shape

    @property
    def ndim(self) -> int:
        """The number of dimensions."""
        return self._data.ndim

    @property
    def size(self) -> int:
        """The number of elements."""
        return self._data.size

    @property
    def dtype(self) -> "np.dtype[Any]":
        """The numpy element type."""
        return self._data.dtype

    @property
    def precision(self) -> Precision:
        """The element precision."""
        return PRECISION_DTYPES.inverse[self._data.dtype]

    @property
    def parents(self) -> Tuple["Tensor", ...]:
        """The tensors this one was computed from, empty for leaves and constants."""
        return self._parents

    @property
    def backward_fn(self) -> Optional[BackwardFn]:
        """The function mapping the output gradient to parent gradients."""
        return self._backward


class Rng:
    """A seeded stream of random draws.

    Two streams built from the same seed produce bit-identical draws in the same order.
    """

    ################################################################################################
    # Dunder Methods
    ################################################################################################

    def __init__(self, seed: int) -> None:
        """Create the stream.

        Args:
            seed: A 64-bit integer seed.
        """
        if not 0 <= seed < 2**64:
            raise ValueError(f"The seed must be a 64-bit unsigned integer, got {seed}.")
        self.seed = seed
        self.draws = 0
        self._generator = np.random.Generator(np.random.PCG64(seed))

    def __repr__(self) -> str:
        """Show the seed and how many draws were taken."""
        return f"Rng(seed={self.seed}, draws={self.draws})"

    ################################################################################################
    # Public Methods
    ################################################################################################

    def normal(
        self,
        shape: Sequence[int],
        std: float = 1.0,
        precision: Precision = Precision.FP64,
    ) -> NDArray[Any]:
        """Draw from a zero mean normal distribution.

        Args:
            shape: The shape of the draw.
            std: The standard deviation.
            precision: The element precision of the result.

        Returns:
            A new array.
        """
        self.draws += 1
        return (self._generator.standard_normal(tuple(shape)) * std).astype(
            precision_dtype(precision)
        )

    def truncated_normal(
        self,
        shape: Sequence[int],
        std: float,
        precision: Precision = Precision.FP64,
        bound: float = 2.0,
    ) -> NDArray[Any]:
        """Draw from a normal cut at plus or minus ``bound`` deviations, rescaled to ``std``.

        Args:
            shape: The shape of the draw.
            std: The standard deviation of the returned samples.
            precision: The element precision of the result.
            bound: Where the unit normal is truncated.

        Returns:
            A new array.
        """
        self.draws += 1
        samples = truncnorm.rvs(-bound, bound, size=tuple(shape), random_state=self._generator)
        samples = np.asarray(samples) * (std / truncnorm.std(-bound, bound))
        return samples.astype(precision_dtype(precision))

    def uniform(self, shape: Sequence[int]) -> NDArray[np.float64]:
        """Draw uniformly from [0, 1).

        Args:
            shape: The shape of the draw.

        Returns:
            A new float64 array.
        """
        self.draws += 1
        return self._generator.random(tuple(shape))

    def integers(self, low: int, high: int, shape: Sequence[int]) -> NDArray[np.int64]:
        """Draw integers from [low, high).

        Args:
            low: The inclusive lower bound.
            high: The exclusive upper bound.
            shape: The shape of the draw.

        Returns:
            A new int64 array.
        """
        self.draws += 1
        return self._generator.integers(low, high, size=tuple(shape), dtype=np.int64)

    def choice(self, count: int, size: int, replace: bool = False) -> NDArray[np.int64]:
        """Pick indices out of ``range(count)``.

        Args:
            count: The number of candidates.
            size: How many to pick.
            replace: Whether an index may be picked twice.

        Returns:
            The picked indices.
        """
        self.draws += 1
        return self._generator.choice(count, size=size, replace=replace).astype(np.int64)

    def spawn(self, key: int) -> "Rng":
        """A child stream whose draws do not depend on how far this one has advanced.

        Args:
            key: Distinguishes children of the same parent.

        Returns:
            A new stream.
        """
        child_seed = np.random.SeedSequence([self.seed, key]).generate_state(1, np.uint64)[0]
        return Rng(int(child_seed))
