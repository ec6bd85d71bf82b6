"""Small differentiable kernel for the duration predictor.

Forward ops take a :class:`Tape` as first argument and record a backward
closure for their output. ``Tape.backward`` replays the closures in reverse
order, accumulating gradients into the ``grad`` buffer of every
:class:`Variable` that took part. All math is float64.

Example::

    tape = Tape()
    x = Variable(np.ones((4, 2)))
    w = Variable(np.eye(2))
    b = Variable(np.zeros(2))
    loss = sum_all(tape, linear_forward(tape, x, w, b))
    tape.backward(loss)
    w.grad  # column sums of x
"""

import logging

import numpy as np

logger = logging.getLogger(__name__)


class BackwardError(RuntimeError):
    """Raised when gradients are requested before any forward op ran."""


class Variable:
    """A float64 array with a gradient buffer of identical shape.

    Attributes:
        value (ndarray): the data. 2-D for activations (rows are positions,
            columns are channels), any shape for parameters.
        grad (ndarray): accumulated gradient of the last scalar passed to
            :meth:`Tape.backward`.
        name (str): optional parameter name.
    """

    __slots__ = ("value", "grad", "name")

    def __init__(self, value, name=None):
        self.value = np.array(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad = np.zeros_like(self.value)

    def __repr__(self):
        label = f"{self.name}, " if self.name else ""
        return f"Variable({label}shape={self.value.shape})"


class Tape:
    """Records forward ops so that their gradients can be computed in reverse."""

    def __init__(self):
        self._nodes = []

    def __len__(self):
        return len(self._nodes)

    def record(self, output, backward_fn):
        """Register ``backward_fn(upstream_grad)`` as the backward step of ``output``."""
        self._nodes.append((output, backward_fn))
        return output

    def backward(self, output, grad=None):
        """Backpropagate from ``output``.

        Gradients of op outputs are recomputed from scratch on every call,
        while leaves (parameters and inputs) keep accumulating until they are
        reset with :meth:`ParamStore.zero_grad`.

        Args:
            output (Variable): the value to differentiate, usually a 1x1 loss.
            grad (ndarray, optional): upstream gradient; defaults to ones and
                is only optional for single-element outputs.
        """
        if not self._nodes:
            raise BackwardError("backward called before any forward op was recorded")
        if grad is None:
            if output.value.size != 1:
                raise ValueError(f"an upstream gradient is required for outputs of shape {output.shape}")
            grad = np.ones_like(output.value)
        grad = np.asarray(grad, dtype=np.float64)
        if grad.shape != output.value.shape:
            raise ValueError(f"upstream gradient shape {grad.shape} does not match output shape {output.shape}")
        for node, _ in self._nodes:
            node.zero_grad()
        output.grad = output.grad + grad
        for node, backward_fn in reversed(self._nodes):
            backward_fn(node.grad)


class ParamStore:
    """Named parameters, each with its own gradient buffer."""

    def __init__(self):
        self._params = {}

    def add(self, name, value):
        if name in self._params:
            raise ValueError(f'parameter "{name}" already exists')
        param = Variable(value, name=name)
        if not np.all(np.isfinite(param.value)):
            raise ValueError(f'parameter "{name}" has non-finite entries')
        self._params[name] = param
        return param

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __iter__(self):
        return iter(self._params)

    def __len__(self):
        return len(self._params)

    def items(self):
        return self._params.items()

    def values(self):
        return list(self._params.values())

    def zero_grad(self):
        for param in self._params.values():
            param.zero_grad()

    def grads(self):
        return {name: param.grad for name, param in self._params.items()}

    def num_parameters(self):
        return sum(param.value.size for param in self._params.values())

    def state_dict(self):
        return {name: param.value.copy() for name, param in self._params.items()}

    def load_state_dict(self, state):
        missing = set(self._params) - set(state)
        unexpected = set(state) - set(self._params)
        if missing or unexpected:
            raise KeyError(f"state mismatch, missing: {sorted(missing)}, unexpected: {sorted(unexpected)}")
        for name, value in state.items():
            value = np.asarray(value, dtype=np.float64)
            if value.shape != self._params[name].shape:
                raise ValueError(f'shape of "{name}" is {value.shape}, expected {self._params[name].shape}')
            if not np.all(np.isfinite(value)):
                raise ValueError(f'parameter "{name}" has non-finite entries')
            self._params[name].value = value.copy()
            self._params[name].zero_grad()


def check_2d(x, name="input"):
    if x.value.ndim != 2:
        raise ValueError(f'"{name}" must be 2-D (positions x channels), got shape {x.shape}')


def glorot_uniform(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def conv1d_forward(tape, x, kernel, bias):
    """Same-length 1-D convolution over positions with zero padding.

    ``out[u, co] = bias[co] + sum_{k, ci} x[u + k - K // 2, ci] * kernel[k, ci, co]``

    Args:
        tape (Tape): tape to record on.
        x (Variable): input of shape ``U x Cin``.
        kernel (Variable): weights of shape ``K x Cin x Cout`` with odd ``K``.
        bias (Variable): weights of shape ``Cout``.

    Returns:
        Variable: output of shape ``U x Cout``.
    """
    check_2d(x)
    if kernel.value.ndim != 3:
        raise ValueError(f"kernel must have shape K x Cin x Cout, got {kernel.shape}")
    k_size, c_in, c_out = kernel.shape
    if k_size % 2 == 0:
        raise ValueError(f"kernel size must be odd, got {k_size}")
    if c_in != x.shape[1]:
        raise ValueError(f"kernel expects {c_in} input channels, input has {x.shape[1]}")
    if bias.shape != (c_out,):
        raise ValueError(f"bias must have shape ({c_out},), got {bias.shape}")
    n_pos = x.shape[0]
    pad = k_size // 2
    padded = np.pad(x.value, ((pad, pad), (0, 0)))
    out_value = np.tile(bias.value, (n_pos, 1))
    for k in range(k_size):
        out_value += padded[k : k + n_pos] @ kernel.value[k]
    out = Variable(out_value)

    def backward(grad):
        bias.grad += grad.sum(axis=0)
        d_padded = np.zeros_like(padded)
        for k in range(k_size):
            kernel.grad[k] += padded[k : k + n_pos].T @ grad
            d_padded[k : k + n_pos] += grad @ kernel.value[k].T
        x.grad += d_padded[pad : pad + n_pos]

    return tape.record(out, backward)


def linear_forward(tape, x, weight, bias):
    """Affine map applied to every position: ``x @ weight + bias``."""
    check_2d(x)
    if weight.value.ndim != 2 or weight.shape[0] != x.shape[1]:
        raise ValueError(f"weight shape {weight.shape} does not fit input with {x.shape[1]} channels")
    if bias.shape != (weight.shape[1],):
        raise ValueError(f"bias must have shape ({weight.shape[1]},), got {bias.shape}")
    out = Variable(x.value @ weight.value + bias.value)

    def backward(grad):
        x.grad += grad @ weight.value.T
        weight.grad += x.value.T @ grad
        bias.grad += grad.sum(axis=0)

    return tape.record(out, backward)


def relu(tape, x):
    active = x.value > 0
    out = Variable(np.where(active, x.value, 0.0))

    def backward(grad):
        x.grad += grad * active

    return tape.record(out, backward)


def mask_rows(tape, x, mask):
    """Zero the rows of ``x`` whose mask entry is 0."""
    check_2d(x)
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != (x.shape[0],):
        raise ValueError(f"mask must have shape ({x.shape[0]},), got {mask.shape}")
    out = Variable(x.value * mask[:, None])

    def backward(grad):
        x.grad += grad * mask[:, None]

    return tape.record(out, backward)


def sum_all(tape, x):
    out = Variable(np.full((1, 1), x.value.sum()))

    def backward(grad):
        x.grad += grad.reshape(()) * np.ones_like(x.value)

    return tape.record(out, backward)


def gradcheck(model_fn, params, epsilon=1e-4):
    """Compare analytic gradients with central finite differences.

    Args:
        model_fn (callable): builds the forward pass on the tape it receives
            and returns a single-element :class:`Variable` loss.
        params (iterable): the :class:`Variable` objects to check, or a
            :class:`ParamStore`.
        epsilon (float): finite-difference step.

    Returns:
        float: ``max |analytic - numeric| / max(1, |analytic|, |numeric|)``
        over every entry of every parameter.
    """
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    params = params.values() if isinstance(params, ParamStore) else list(params)

    def evaluate():
        value = float(model_fn(Tape()).value.sum())
        if not np.isfinite(value):
            raise ValueError("gradcheck needs a finite loss")
        return value

    for param in params:
        param.zero_grad()
    tape = Tape()
    loss = model_fn(tape)
    if not np.all(np.isfinite(loss.value)):
        raise ValueError("gradcheck needs a finite loss")
    tape.backward(loss)
    analytic = [param.grad.copy() for param in params]

    max_error = 0.0
    for param, grad in zip(params, analytic):
        flat = param.value.reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + epsilon
            loss_plus = evaluate()
            flat[i] = original - epsilon
            loss_minus = evaluate()
            flat[i] = original
            numeric = (loss_plus - loss_minus) / (2 * epsilon)
            exact = grad.reshape(-1)[i]
            error = abs(exact - numeric) / max(1.0, abs(exact), abs(numeric))
            max_error = max(max_error, error)
    logger.debug("gradcheck over %d parameters: max relative error %.3e", len(params), max_error)
    return max_error
