from contextlib import contextmanager
from dataclasses import dataclass
from typing import Any, Iterator

import numpy as np

from scafusion.autograd import Tensor, default_dtype
from scafusion.errors import ShapeError

ADAPTER_SEGMENT = "mona"


class Parameter:
    """Named trainable (or frozen) array backing a graph leaf.

    Args:
        data: Initial value.
        trainable: Whether the optimizer may update the value.
    """

    def __init__(self, data: np.ndarray, trainable: bool = True):
        self.__trainable = trainable
        self.__tensor = Tensor(data, requires_grad=trainable)

    @property
    def tensor(self) -> Tensor:
        """Get the current graph leaf."""
        return self.__tensor

    @property
    def data(self) -> np.ndarray:
        return self.__tensor.data

    @property
    def shape(self) -> tuple[int, ...]:
        return self.__tensor.shape

    @property
    def size(self) -> int:
        return self.__tensor.size

    @property
    def grad(self) -> np.ndarray | None:
        return self.__tensor.grad

    @property
    def trainable(self) -> bool:
        return self.__trainable

    @trainable.setter
    def trainable(self, flag: bool) -> None:
        self.__trainable = flag
        self.__tensor = Tensor(
            self.__tensor.data, requires_grad=flag, dtype=self.__tensor.dtype
        )

    def assign(self, value: np.ndarray) -> None:
        """Replace the value with a fresh leaf of the same shape and dtype.

        Raises:
            ShapeError: If the shape differs.
        """
        value = np.asarray(value)
        if value.shape != self.shape:
            raise ShapeError(
                f"cannot assign shape {value.shape} to parameter of shape {self.shape}"
            )
        self.__tensor = Tensor(
            value, requires_grad=self.__trainable, dtype=self.__tensor.dtype
        )

    def to_dtype(self, dtype: Any) -> None:
        self.__tensor = Tensor(
            self.__tensor.data, requires_grad=self.__trainable, dtype=dtype
        )

    def zero_grad(self) -> None:
        self.__tensor.zero_grad()

    @contextmanager
    def bound(self, tensor: Tensor) -> Iterator[None]:
        """Temporarily route the parameter through an external tensor.

        Gradient checks use this to differentiate with respect to the parameter.
        """
        previous = self.__tensor
        self.__tensor = tensor
        try:
            yield
        finally:
            self.__tensor = previous

    def __repr__(self) -> str:
        return f"Parameter(shape={self.shape}, trainable={self.__trainable})"


class Module:
    """Base class for network components.

    Subclasses register parameters and children in ``__init__`` and implement
    ``forward``. Names compose into dotted paths
    (``backbone.stage1.block0.mona.up.weight``).
    """

    def __init__(self):
        self._parameters: dict[str, Parameter] = {}
        self._modules: dict[str, Module] = {}
        self.training = True

    def register_parameter(
        self, name: str, data: np.ndarray, trainable: bool = True
    ) -> Parameter:
        if name in self._parameters or name in self._modules:
            raise ValueError(f"name {name!r} already registered")
        with_dtype = np.asarray(data, dtype=default_dtype())
        self._parameters[name] = Parameter(with_dtype, trainable)
        return self._parameters[name]

    def register_module(self, name: str, module: "Module") -> Any:
        if name in self._parameters or name in self._modules:
            raise ValueError(f"name {name!r} already registered")
        self._modules[name] = module
        return module

    def children(self) -> Iterator[tuple[str, "Module"]]:
        return iter(self._modules.items())

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, parameter in self._parameters.items():
            yield prefix + name, parameter
        for name, module in self._modules.items():
            yield from module.named_parameters(prefix + name + ".")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for _, module in self._modules.items():
            module.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def to_dtype(self, dtype: Any) -> "Module":
        """Recreate every parameter leaf in another dtype, e.g. for 64-bit checks."""
        for parameter in self.parameters():
            parameter.to_dtype(dtype)
        return self

    def zero_grad(self) -> None:
        for parameter in self.parameters():
            parameter.zero_grad()

    def forward(self, *args: Any, **kwargs: Any) -> Any:
        """Run the component.

        Raises:
            NotImplementedError: Must be implemented by subclasses.
        """
        raise NotImplementedError()

    def __call__(self, *args: Any, **kwargs: Any) -> Any:
        return self.forward(*args, **kwargs)


def is_adapter_name(name: str) -> bool:
    """Adapter parameters and the adapter norm live under a ``mona*`` path segment."""
    return any(segment.startswith(ADAPTER_SEGMENT) for segment in name.split("."))


class ParamStore:
    """Flat, name-addressed view over the parameters of a module tree.

    Args:
        parameters: Mapping from dotted name to parameter.
    """

    def __init__(self, parameters: dict[str, Parameter]):
        self.__parameters = dict(parameters)

    @classmethod
    def from_module(cls, module: Module, prefix: str = "") -> "ParamStore":
        store: dict[str, Parameter] = {}
        for name, parameter in module.named_parameters(prefix):
            if name in store:
                raise ValueError(f"duplicate parameter name {name!r}")
            store[name] = parameter
        return cls(store)

    def __getitem__(self, name: str) -> Parameter:
        return self.__parameters[name]

    def __contains__(self, name: object) -> bool:
        return name in self.__parameters

    def __iter__(self) -> Iterator[str]:
        return iter(self.__parameters)

    def __len__(self) -> int:
        return len(self.__parameters)

    def names(self) -> list[str]:
        return list(self.__parameters)

    def items(self) -> Iterator[tuple[str, Parameter]]:
        return iter(self.__parameters.items())

    def subset(self, prefix: str) -> "ParamStore":
        """Parameters whose name starts with ``prefix.`` (or equals it)."""
        return ParamStore(
            {
                n: p
                for n, p in self.__parameters.items()
                if n == prefix or n.startswith(prefix + ".")
            }
        )

    def count(self, names: set[str] | None = None) -> int:
        return sum(
            p.size
            for n, p in self.__parameters.items()
            if names is None or n in names
        )

    def trainable_names(self) -> set[str]:
        return {n for n, p in self.__parameters.items() if p.trainable}

    def adapter_names(self) -> set[str]:
        return {n for n in self.__parameters if is_adapter_name(n)}

    def report(self) -> dict[str, Any]:
        """Parameter totals grouped by top-level component.

        Returns:
            ``{"total", "trainable", "adapter", "by_component": {component: count}}``.
        """
        by_component: dict[str, int] = {}
        for name, parameter in self.__parameters.items():
            component = name.split(".")[0]
            by_component[component] = by_component.get(component, 0) + parameter.size
        return {
            "total": self.count(),
            "trainable": self.count(self.trainable_names()),
            "adapter": self.count(self.adapter_names()),
            "by_component": by_component,
        }


FREEZE_MODES = ("full", "adapter_only")


@dataclass(frozen=True)
class FreezePartition:
    """Result of partitioning a store into frozen and trainable parameters."""

    frozen: frozenset[str]
    trainable: frozenset[str]
    tunable_fraction: float


def freeze_partition(store: ParamStore, mode: str) -> FreezePartition:
    """Set trainable flags on a store and report the split.

    Args:
        store: Parameters to partition.
        mode: ``"full"`` trains everything; ``"adapter_only"`` trains only
            adapter parameters.

    Returns:
        Disjoint, exhaustive frozen/trainable name sets and the tunable fraction
        ``trainable count / total count``.

    Raises:
        ValueError: If the mode is unknown or the store is empty.
    """
    if mode not in FREEZE_MODES:
        raise ValueError(
            f"freeze mode has to be one of {FREEZE_MODES} - not {mode!r}"
        )
    if not len(store):
        raise ValueError("cannot partition an empty parameter store")
    trainable = set(store.names()) if mode == "full" else store.adapter_names()
    for name, parameter in store.items():
        parameter.trainable = name in trainable
    frozen = set(store.names()) - trainable
    return FreezePartition(
        frozen=frozenset(frozen),
        trainable=frozenset(trainable),
        tunable_fraction=store.count(trainable) / store.count(),
    )
