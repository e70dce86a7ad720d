"""
A small float64 layer library with hand-written backward passes.

Every module follows the same contract:

    y = module.forward(x)          # caches what backward needs
    dx = module.backward(dy)       # returns d loss / d x, accumulates param grads

Convolutions are computed by gathering input columns through a precomputed index
map (output position x kernel tap) and a matmul against the flattened kernel, so
1D (circular) and 2D (valid) convolutions share one implementation.
"""
import hashlib
import logging
import math

import numpy as np

from .errors import ShapeMismatchError

log = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)


class Parameter:
    __slots__ = ('value', 'grad')

    def __init__(self, value: np.ndarray):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)

    def zero_grad(self) -> None:
        self.grad[...] = 0.0


class Module:
    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def parameters(self) -> dict[str, Parameter]:
        return {}

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.zero_grad()

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)


def _uniform_fan_in(rng: np.random.Generator, shape: tuple, fan_in: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


# ------------------------------- dense / activations ------------------------ #

class Dense(Module):
    """y = x W^T + b over the last axis of a (B, in) batch."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator):
        self.n_in, self.n_out = n_in, n_out
        self.W = Parameter(_uniform_fan_in(rng, (n_out, n_in), n_in))
        self.b = Parameter(np.zeros(n_out))
        self._x = None

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise ShapeMismatchError(f"Dense expects (B, {self.n_in}), got {x.shape}")
        self._x = x
        return x @ self.W.value.T + self.b.value

    def backward(self, grad):
        self.W.grad += grad.T @ self._x
        self.b.grad += grad.sum(axis=0)
        return grad @ self.W.value

    def parameters(self):
        return {'W': self.W, 'b': self.b}


class Tanh(Module):
    def __init__(self):
        self._y = None

    def forward(self, x):
        self._y = np.tanh(x)
        return self._y

    def backward(self, grad):
        return grad * (1.0 - self._y ** 2)


class Flatten(Module):
    def __init__(self):
        self._shape = None

    def forward(self, x):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        return grad.reshape(self._shape)


class Sequential(Module):
    def __init__(self, *layers: Module):
        self.layers = list(layers)

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, grad):
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def parameters(self):
        out = {}
        for i, layer in enumerate(self.layers):
            for name, p in layer.parameters().items():
                out[f"{i}.{name}"] = p
        return out

    def __len__(self):
        return len(self.layers)


# ------------------------------- convolutions ------------------------------- #

def conv1d_index(length: int, kernel: int, stride: int, circular: bool) -> np.ndarray:
    """(P, K) input indices for every output position and kernel tap."""
    if circular:
        pad = kernel - stride
        n_out = (length + pad - kernel) // stride + 1
        start = np.arange(n_out) * stride - pad // 2
        return (start[:, None] + np.arange(kernel)[None, :]) % length
    if length < kernel:
        raise ShapeMismatchError(f"conv1d: length {length} shorter than kernel {kernel}")
    n_out = (length - kernel) // stride + 1
    return np.arange(n_out)[:, None] * stride + np.arange(kernel)[None, :]


def conv2d_index(height: int, width: int, kernel: int, stride: int) -> tuple[np.ndarray, int, int]:
    if height < kernel or width < kernel:
        raise ShapeMismatchError(f"conv2d: input {height}x{width} smaller than kernel {kernel}")
    ho = (height - kernel) // stride + 1
    wo = (width - kernel) // stride + 1
    rows = np.arange(ho)[:, None] * stride
    cols = np.arange(wo)[None, :] * stride
    origin = (rows * width + cols).reshape(-1)
    ky, kx = np.meshgrid(np.arange(kernel), np.arange(kernel), indexing='ij')
    taps = (ky * width + kx).reshape(-1)
    return origin[:, None] + taps[None, :], ho, wo


class _IndexedConv(Module):
    """Shared gather/matmul/scatter core over a flattened spatial axis."""

    def __init__(self, c_in: int, c_out: int, taps: int, rng: np.random.Generator):
        self.c_in, self.c_out, self.taps = c_in, c_out, taps
        self.W = Parameter(_uniform_fan_in(rng, (c_out, c_in * taps), c_in * taps))
        self.b = Parameter(np.zeros(c_out))
        self._cols = None
        self._idx = None
        self._in_shape = None

    def _conv(self, xf: np.ndarray, idx: np.ndarray) -> np.ndarray:
        # xf: (B, C, S) -> (B, P, O)
        b = xf.shape[0]
        p, k = idx.shape
        cols = xf[:, :, idx].transpose(0, 2, 1, 3).reshape(b, p, self.c_in * k)
        self._cols, self._idx = cols, idx
        return cols @ self.W.value.T + self.b.value

    def _conv_backward(self, g: np.ndarray, spatial: int) -> np.ndarray:
        # g: (B, P, O) -> (B, C, S)
        b = g.shape[0]
        p, k = self._idx.shape
        self.W.grad += np.tensordot(g, self._cols, axes=([0, 1], [0, 1]))
        self.b.grad += g.sum(axis=(0, 1))
        dcols = (g @ self.W.value).reshape(b, p, self.c_in, k).transpose(1, 3, 0, 2)
        dx = np.zeros((spatial, b, self.c_in))
        np.add.at(dx, self._idx.reshape(-1), dcols.reshape(p * k, b, self.c_in))
        return dx.transpose(1, 2, 0)

    def parameters(self):
        return {'W': self.W, 'b': self.b}


class Conv1d(_IndexedConv):
    def __init__(self, c_in: int, c_out: int, kernel: int, stride: int,
                 rng: np.random.Generator, circular: bool = True):
        super().__init__(c_in, c_out, kernel, rng)
        self.kernel, self.stride, self.circular = kernel, stride, circular
        self._maps: dict[int, np.ndarray] = {}

    def index(self, length: int) -> np.ndarray:
        if length not in self._maps:
            self._maps[length] = conv1d_index(length, self.kernel, self.stride, self.circular)
        return self._maps[length]

    def out_length(self, length: int) -> int:
        return self.index(length).shape[0]

    def forward(self, x):
        if x.ndim != 3 or x.shape[1] != self.c_in:
            raise ShapeMismatchError(f"Conv1d expects (B, {self.c_in}, L), got {x.shape}")
        self._in_shape = x.shape
        y = self._conv(x, self.index(x.shape[2]))
        return y.transpose(0, 2, 1)

    def backward(self, grad):
        return self._conv_backward(grad.transpose(0, 2, 1), self._in_shape[2])


class Conv2d(_IndexedConv):
    def __init__(self, c_in: int, c_out: int, kernel: int, stride: int, rng: np.random.Generator):
        super().__init__(c_in, c_out, kernel * kernel, rng)
        self.kernel, self.stride = kernel, stride
        self._maps: dict[tuple[int, int], tuple[np.ndarray, int, int]] = {}

    def index(self, height: int, width: int) -> tuple[np.ndarray, int, int]:
        if (height, width) not in self._maps:
            self._maps[(height, width)] = conv2d_index(height, width, self.kernel, self.stride)
        return self._maps[(height, width)]

    def forward(self, x):
        if x.ndim != 4 or x.shape[1] != self.c_in:
            raise ShapeMismatchError(f"Conv2d expects (B, {self.c_in}, H, W), got {x.shape}")
        self._in_shape = x.shape
        b, c, h, w = x.shape
        idx, ho, wo = self.index(h, w)
        y = self._conv(x.reshape(b, c, h * w), idx)
        return y.transpose(0, 2, 1).reshape(b, self.c_out, ho, wo)

    def backward(self, grad):
        b, c, h, w = self._in_shape
        g = grad.reshape(b, self.c_out, -1).transpose(0, 2, 1)
        return self._conv_backward(g, h * w).reshape(b, c, h, w)


# ------------------------------- distributions ------------------------------ #

def gaussian_logprob(mean: np.ndarray, log_std: np.ndarray, action: np.ndarray) -> np.ndarray:
    """Diagonal Gaussian log-density summed over the last axis."""
    z = (action - mean) * np.exp(-log_std)
    return np.sum(-0.5 * z * z - log_std - 0.5 * LOG_2PI, axis=-1)


def gaussian_logprob_grads(mean, log_std, action) -> tuple[np.ndarray, np.ndarray]:
    """(d logp / d mean, d logp / d log_std), both shaped like `action`."""
    inv_var = np.exp(-2.0 * log_std)
    diff = action - mean
    return diff * inv_var, diff * diff * inv_var - 1.0


def gaussian_entropy(log_std: np.ndarray) -> float:
    return float(np.sum(log_std + 0.5 * (LOG_2PI + 1.0)))


def sigmoid(z: np.ndarray) -> np.ndarray:
    return np.exp(-np.logaddexp(0.0, -z))


def bernoulli_logprob(logit, outcome) -> np.ndarray:
    logit = np.asarray(logit, dtype=float)
    outcome = np.asarray(outcome, dtype=float)
    return -(outcome * np.logaddexp(0.0, -logit) + (1.0 - outcome) * np.logaddexp(0.0, logit))


def bernoulli_logprob_grad(logit, outcome) -> np.ndarray:
    return np.asarray(outcome, dtype=float) - sigmoid(np.asarray(logit, dtype=float))


def bernoulli_entropy(logit) -> np.ndarray:
    logit = np.asarray(logit, dtype=float)
    return np.logaddexp(0.0, logit) - logit * sigmoid(logit)


def bernoulli_entropy_grad(logit) -> np.ndarray:
    logit = np.asarray(logit, dtype=float)
    s = sigmoid(logit)
    return -logit * s * (1.0 - s)


# ------------------------------- optimisation ------------------------------- #

class Adam:
    """Bias-corrected Adam over a named parameter dict."""

    def __init__(self, params: dict[str, Parameter], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.k = 0
        self.m = {name: np.zeros_like(p.value) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.value) for name, p in params.items()}

    def step(self, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        self.k += 1
        c1 = 1.0 - self.beta1 ** self.k
        c2 = 1.0 - self.beta2 ** self.k
        for name, p in self.params.items():
            if p.grad.shape != p.value.shape:
                raise ShapeMismatchError(f"grad shape {p.grad.shape} != param shape {p.value.shape} for {name}")
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * p.grad
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * p.grad ** 2
            p.value -= lr * (self.m[name] / c1) / (np.sqrt(self.v[name] / c2) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {f"m/{n}": a for n, a in self.m.items()}
        out.update({f"v/{n}": a for n, a in self.v.items()})
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray], k: int) -> None:
        for name in self.params:
            self.m[name] = np.array(arrays[f"m/{name}"], dtype=np.float64)
            self.v[name] = np.array(arrays[f"v/{name}"], dtype=np.float64)
        self.k = int(k)


def clip_grad_norm(params: dict[str, Parameter], max_norm: float) -> float:
    total = math.sqrt(sum(float(np.sum(p.grad ** 2)) for p in params.values()))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for p in params.values():
            p.grad *= scale
    return total


def param_digest(params: dict[str, Parameter]) -> str:
    h = hashlib.sha1()
    for name in sorted(params):
        h.update(name.encode())
        h.update(np.ascontiguousarray(params[name].value).tobytes())
    return h.hexdigest()


# ------------------------------- gradient check ----------------------------- #

def grad_check(net: Module, x: np.ndarray, tolerance: float | None = None, h: float = 1e-5,
               seed: int = 0, max_per_param: int | None = None) -> float:
    """
    Max relative error |analytic - numeric| / max(1, |numeric|) over parameters,
    for the scalar projected loss sum(u * net(x)) with a fixed random u.
    """
    rng = np.random.default_rng(seed)
    proj = rng.standard_normal(net.forward(x).shape)

    def loss() -> float:
        return float(np.sum(proj * net.forward(x)))

    net.zero_grad()
    net.forward(x)
    net.backward(proj)
    worst = 0.0
    for name, p in net.parameters().items():
        analytic = p.grad.copy()
        flat = p.value.reshape(-1)
        entries = np.arange(flat.size)
        if max_per_param is not None and flat.size > max_per_param:
            entries = rng.choice(flat.size, size=max_per_param, replace=False)
        for i in entries:
            old = flat[i]
            flat[i] = old + h
            up = loss()
            flat[i] = old - h
            down = loss()
            flat[i] = old
            numeric = (up - down) / (2 * h)
            err = abs(analytic.reshape(-1)[i] - numeric) / max(1.0, abs(numeric))
            worst = max(worst, err)
    if tolerance is not None and worst > tolerance:
        log.warning("gradient check failed: max rel err %.3e > %.1e", worst, tolerance)
    return worst
