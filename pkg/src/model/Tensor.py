"""
Минимальный движок обратного дифференцирования на numpy.

Тензор хранит плотный массив float64. Примитивы, вызванные внутри активной ленты
(`with ComputationTape() as tape:`), записываются в неё вместе с функцией
обратного произведения (VJP); `backward(tape, root)` проходит ленту в обратном
порядке ровно один раз. Вне ленты примитивы просто вычисляют значение, что
используется при сборе траекторий.
"""
import contextvars
import os
from typing import Callable, Dict, Iterable, List, NamedTuple, Sequence, Tuple

import numpy as np

from src.utils.Exceptions import NonFiniteError, ShapeError

# Отладочный режим: проверка конечности выхода каждого примитива
_DEBUG_NUMERICS: bool = os.environ.get("BAYESG_DEBUG", "") == "1"

_ACTIVE_TAPE: contextvars.ContextVar['ComputationTape | None'] = contextvars.ContextVar("active_tape", default=None)


def set_debug_numerics(enabled: bool) -> None:
    """Включает или выключает проверку конечности выходов примитивов."""
    global _DEBUG_NUMERICS
    _DEBUG_NUMERICS = bool(enabled)


class Tensor:
    """
    Тензор с формой и плотными значениями float64.

    Attributes:
        data (np.ndarray): Значения.
        requires_grad (bool): True для параметров и всего, что от них зависит.
        name (str | None): Имя параметра (используется в чекпоинтах и диагностике).
    """
    __slots__ = ("data", "requires_grad", "name")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, name: str | None = None) -> None:
        self.data: np.ndarray = np.array(data, dtype=np.float64)
        self.requires_grad: bool = requires_grad
        self.name: str | None = name

    @classmethod
    def _wrap(cls, data: np.ndarray, requires_grad: bool) -> 'Tensor':
        tensor = cls.__new__(cls)
        tensor.data = data
        tensor.requires_grad = requires_grad
        tensor.name = None
        return tensor

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        """Значение скалярного тензора."""
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def numpy(self) -> np.ndarray:
        """Копия значений."""
        return self.data.copy()

    def detach(self) -> 'Tensor':
        """Константа с теми же значениями: градиент через неё не течёт."""
        return Tensor._wrap(self.data, False)

    def __add__(self, other) -> 'Tensor':
        return add(self, other)

    def __radd__(self, other) -> 'Tensor':
        return add(other, self)

    def __sub__(self, other) -> 'Tensor':
        return sub(self, other)

    def __rsub__(self, other) -> 'Tensor':
        return sub(other, self)

    def __mul__(self, other) -> 'Tensor':
        return mul(self, other)

    def __rmul__(self, other) -> 'Tensor':
        return mul(other, self)

    def __neg__(self) -> 'Tensor':
        return neg(self)

    def __matmul__(self, other) -> 'Tensor':
        return matmul(self, other)

    def __pow__(self, exponent: float) -> 'Tensor':
        return power(self, exponent)

    def __getitem__(self, index) -> 'Tensor':
        return slice_(self, index)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"


def parameter(data, name: str | None = None) -> Tensor:
    """Создаёт обучаемый лист (параметр)."""
    return Tensor(data, requires_grad=True, name=name)


def as_tensor(value) -> Tensor:
    """Приводит число, массив или тензор к тензору; не-тензоры становятся константами."""
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


class TapeEntry(NamedTuple):
    """Запись ленты: примитив, его выход, входы и функция обратного произведения."""
    op: str
    output: Tensor
    inputs: Tuple[Tensor, ...]
    vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]]


class ComputationTape:
    """
    Упорядоченная запись применений примитивов.

    Используется как контекстный менеджер; лента активна только в текущем потоке
    (contextvars), поэтому несколько лент могут работать параллельно.
    """

    def __init__(self) -> None:
        self.entries: List[TapeEntry] = []
        self._token: contextvars.Token | None = None

    def record(self, op: str, output: Tensor, inputs: Tuple[Tensor, ...], vjp: Callable) -> None:
        """Добавляет запись о примитиве."""
        self.entries.append(TapeEntry(op, output, inputs, vjp))

    def leaves(self) -> List[Tensor]:
        """Обучаемые листы, встретившиеся на ленте, в порядке первого появления."""
        produced: set[int] = {id(e.output) for e in self.entries}
        seen: set[int] = set()
        result: List[Tensor] = []
        for entry in self.entries:
            for tensor in entry.inputs:
                key = id(tensor)
                if tensor.requires_grad and key not in produced and key not in seen:
                    seen.add(key)
                    result.append(tensor)
        return result

    def __len__(self) -> int:
        return len(self.entries)

    def __enter__(self) -> 'ComputationTape':
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _ACTIVE_TAPE.reset(self._token)
        self._token = None


def _apply(op: str, inputs: Tuple[Tensor, ...], out: np.ndarray, vjp: Callable) -> Tensor:
    if _DEBUG_NUMERICS and not np.all(np.isfinite(out)):
        raise NonFiniteError(f"Примитив {op} дал нечисловое значение (формы входов: {[t.shape for t in inputs]}).")
    requires_grad: bool = any(t.requires_grad for t in inputs)
    result = Tensor._wrap(out, requires_grad)
    tape = _ACTIVE_TAPE.get()
    if requires_grad and tape is not None:
        tape.record(op, result, inputs, vjp)
    return result


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: несовместимые формы {a.shape} и {b.shape}.")


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)
    return _apply("add", (a, b), a.data + b.data,
                  lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)
    return _apply("sub", (a, b), a.data - b.data,
                  lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)
    return _apply("mul", (a, b), a.data * b.data,
                  lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _apply("neg", (a,), -a.data, lambda g: (-g,))


def matmul(a, b) -> Tensor:
    """Матричное произведение по двум последним осям с broadcasting по ведущим."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: несовместимые формы {a.shape} и {b.shape}.")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError(f"matmul: несовместимые формы {a.shape} и {b.shape}.")

    def vjp(g: np.ndarray):
        grad_a = np.matmul(g, np.swapaxes(b.data, -1, -2))
        grad_b = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(grad_a, a.shape), _unbroadcast(grad_b, b.shape)

    return _apply("matmul", (a, b), out, vjp)


def power(a, exponent: float) -> Tensor:
    """Поэлементная степень с постоянным показателем."""
    a = as_tensor(a)
    p: float = float(exponent)
    out = np.power(a.data, p)
    return _apply("power", (a,), out, lambda g: (g * p * np.power(a.data, p - 1.0),))


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _stable_sigmoid(a.data)
    return _apply("sigmoid", (a,), out, lambda g: (g * out * (1.0 - out),))


def log_sigmoid(a) -> Tensor:
    """log σ(x), устойчивый при больших |x|."""
    a = as_tensor(a)
    out = -np.logaddexp(0.0, -a.data)
    return _apply("log_sigmoid", (a,), out, lambda g: (g * _stable_sigmoid(-a.data),))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _apply("tanh", (a,), out, lambda g: (g * (1.0 - out * out),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _apply("relu", (a,), np.where(mask, a.data, 0.0), lambda g: (g * mask,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _apply("exp", (a,), out, lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise NonFiniteError(f"log: вход должен быть строго положительным (min={a.data.min()}).")
    return _apply("log", (a,), np.log(a.data), lambda g: (g / a.data,))


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)
    return _apply("softmax", (a,), out,
                  lambda g: (out * (g - (g * out).sum(axis=axis, keepdims=True)),))


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    return _apply("log_softmax", (a,), out,
                  lambda g: (g - np.exp(out) * g.sum(axis=axis, keepdims=True),))


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    parts: Tuple[Tensor, ...] = tuple(as_tensor(t) for t in tensors)
    try:
        out = np.concatenate([t.data for t in parts], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: несовместимые формы {[t.shape for t in parts]} по оси {axis}.")
    sizes = np.cumsum([t.shape[axis] for t in parts])[:-1]

    def vjp(g: np.ndarray):
        return tuple(np.split(g, sizes, axis=axis))

    return _apply("concat", parts, out, vjp)


def _expand_reduced(g: np.ndarray, shape: Tuple[int, ...], axis, keepdims: bool) -> np.ndarray:
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape).copy()


def sum_(a, axis: int | Tuple[int, ...] | None = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = np.asarray(a.data.sum(axis=axis, keepdims=keepdims))
    return _apply("sum", (a,), out, lambda g: (_expand_reduced(g, a.shape, axis, keepdims),))


def mean(a, axis: int | Tuple[int, ...] | None = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = np.asarray(a.data.mean(axis=axis, keepdims=keepdims))
    count: int = a.data.size // max(out.size, 1) if a.data.size else 1
    return _apply("mean", (a,), out, lambda g: (_expand_reduced(g, a.shape, axis, keepdims) / count,))


def slice_(a, index) -> Tensor:
    """Базовая индексация (срезы, целые, Ellipsis, None)."""
    a = as_tensor(a)
    items = index if isinstance(index, tuple) else (index,)
    if any(isinstance(i, (list, np.ndarray, Tensor)) for i in items):
        raise ShapeError("slice: поддерживается только базовая индексация.")
    try:
        out = np.array(a.data[index])
    except IndexError:
        raise ShapeError(f"slice: индекс {index!r} вне формы {a.shape}.")

    def vjp(g: np.ndarray):
        grad = np.zeros_like(a.data)
        grad[index] = g
        return (grad,)

    return _apply("slice", (a,), out, vjp)


def reshape(a, shape: Tuple[int, ...]) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: нельзя привести {a.shape} к {shape}.")
    return _apply("reshape", (a,), out, lambda g: (g.reshape(a.shape),))


def transpose(a) -> Tensor:
    """Перестановка двух последних осей."""
    a = as_tensor(a)
    if a.ndim < 2:
        raise ShapeError(f"transpose: нужен тензор ранга ≥ 2, получена форма {a.shape}.")
    return _apply("transpose", (a,), np.swapaxes(a.data, -1, -2), lambda g: (np.swapaxes(g, -1, -2),))


def clip(a, low: float | None = None, high: float | None = None) -> Tensor:
    """Ограничение значений; градиент проходит только внутри границ."""
    a = as_tensor(a)
    out = np.clip(a.data, low, high)
    inside = np.ones_like(a.data, dtype=bool)
    if low is not None:
        inside &= a.data >= low
    if high is not None:
        inside &= a.data <= high
    return _apply("clip", (a,), out, lambda g: (g * inside,))


def backward(tape: ComputationTape, root: Tensor, leaves: Iterable[Tensor] | None = None) -> Dict[Tensor, np.ndarray]:
    """
    Обратный проход по ленте.

    Args:
        tape (ComputationTape): Лента, на которой записан корень.
        root (Tensor): Скалярный корень (форма ()).
        leaves (Iterable[Tensor] | None): Листы, для которых нужны градиенты; по умолчанию все листы ленты.

    Returns:
        Dict[Tensor, np.ndarray]: Градиент для каждого листа в форме листа; нетронутые листы получают нули.

    Raises:
        ShapeError: Если корень не скаляр.
    """
    if root.shape != ():
        raise ShapeError(f"backward: корень должен быть скаляром, получена форма {root.shape}.")
    grads: Dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
    for entry in reversed(tape.entries):
        grad_out = grads.get(id(entry.output))
        if grad_out is None:
            continue
        for tensor, grad in zip(entry.inputs, entry.vjp(grad_out)):
            if grad is None or not tensor.requires_grad:
                continue
            key = id(tensor)
            grads[key] = grads[key] + grad if key in grads else grad

    targets = tape.leaves() if leaves is None else list(leaves)
    result: Dict[Tensor, np.ndarray] = {}
    for leaf in targets:
        grad = grads.get(id(leaf))
        result[leaf] = np.zeros_like(leaf.data) if grad is None else np.asarray(grad).reshape(leaf.shape)
    return result
