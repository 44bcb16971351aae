"""Dense float64 kernels, trainable parameters, Adam, and gradient checking.

All tensors are CPU torch.float64. Reverse-mode gradients come from the
torch tape; the finite-difference checker below is the independent route
that validates every analytic gradient in the test suite.
"""

from __future__ import annotations

import io
import struct
from collections.abc import Callable, Mapping

import numpy as np
import torch

CHECKPOINT_MAGIC = b"HTLA1\n"


class NonFiniteGradientError(RuntimeError):
    """Raised by adam_step when a parameter's gradient contains NaN/Inf."""


class Parameter:
    """A learnable tensor with its gradient and Adam state.

    ``value`` carries requires_grad; ``adam_m``/``adam_v`` are the first and
    second moment accumulators, ``step_count`` the number of Adam updates
    applied. All four share one shape.
    """

    def __init__(self, value: torch.Tensor, name: str = ""):
        self.value = value.detach().clone().to(torch.float64).requires_grad_(True)
        self.adam_m = torch.zeros_like(self.value, requires_grad=False)
        self.adam_v = torch.zeros_like(self.value, requires_grad=False)
        self.step_count = 0
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.value.shape)

    @property
    def grad(self) -> torch.Tensor | None:
        return self.value.grad

    def zero_grad(self) -> None:
        if self.value.grad is not None:
            self.value.grad.detach_()
            self.value.grad.zero_()

    def numel(self) -> int:
        return self.value.numel()

    def __repr__(self) -> str:
        return f"Parameter(name={self.name!r}, shape={self.shape})"


def _val(x) -> torch.Tensor:
    return x.value if isinstance(x, Parameter) else x


def softmax(x: torch.Tensor, axis: int = -1) -> torch.Tensor:
    """Numerically stable softmax (max subtraction) along ``axis``."""
    x = _val(x)
    m = x.max(dim=axis, keepdim=True).values
    e = torch.exp(x - m)
    return e / e.sum(dim=axis, keepdim=True)


def layer_norm(x: torch.Tensor, gain, bias, eps: float = 1e-5) -> torch.Tensor:
    """Normalize over the last axis, then scale by gain and shift by bias."""
    x = _val(x)
    mean = x.mean(dim=-1, keepdim=True)
    var = ((x - mean) ** 2).mean(dim=-1, keepdim=True)
    return (x - mean) / torch.sqrt(var + eps) * _val(gain) + _val(bias)


_GELU_C = float(np.sqrt(2.0 / np.pi))


def gelu(x: torch.Tensor) -> torch.Tensor:
    """Tanh-approximation GELU: 0.5*x*(1+tanh(sqrt(2/pi)*(x+0.044715*x^3)))."""
    x = _val(x)
    return 0.5 * x * (1.0 + torch.tanh(_GELU_C * (x + 0.044715 * x**3)))


def cosine_sim(a: torch.Tensor, b: torch.Tensor, eps: float = 1e-12) -> torch.Tensor:
    """Cosine similarity of two vectors with an epsilon norm guard."""
    a, b = _val(a), _val(b)
    na = torch.clamp(torch.linalg.vector_norm(a), min=eps)
    nb = torch.clamp(torch.linalg.vector_norm(b), min=eps)
    return (a * b).sum() / (na * nb)


def adam_step(
    p: Parameter,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> Parameter:
    """Bias-corrected Adam update in place; grad is left intact for
    inspection and must be zeroed by the caller before the next backward."""
    g = p.grad
    if g is None:
        g = torch.zeros_like(p.value)
    if not torch.isfinite(g).all():
        raise NonFiniteGradientError(f"non-finite gradient in parameter {p.name!r}")
    with torch.no_grad():
        p.step_count += 1
        p.adam_m.mul_(beta1).add_(g, alpha=1.0 - beta1)
        p.adam_v.mul_(beta2).addcmul_(g, g, value=1.0 - beta2)
        m_hat = p.adam_m / (1.0 - beta1**p.step_count)
        v_hat = p.adam_v / (1.0 - beta2**p.step_count)
        p.value.add_(-lr * m_hat / (torch.sqrt(v_hat) + eps))
    return p


def grad_check(
    loss_fn: Callable[[], torch.Tensor],
    params: Mapping[str, Parameter],
    step: float = 1e-4,
    max_samples: int = 200,
    seed: int = 0,
) -> float:
    """Compare analytic gradients of ``loss_fn`` against central finite
    differences, subsampling at most ``max_samples`` elements per tensor.

    Returns the maximum relative error |a-n| / max(1e-6, |a|+|n|).
    """
    for p in params.values():
        p.zero_grad()
    loss = loss_fn()
    loss.backward()
    analytic = {
        name: (p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p.value))
        for name, p in params.items()
    }
    rng = np.random.default_rng(seed)
    worst = 0.0
    with torch.no_grad():
        for name, p in params.items():
            flat = p.value.view(-1)
            n = flat.numel()
            idx = np.arange(n) if n <= max_samples else rng.choice(n, size=max_samples, replace=False)
            a_flat = analytic[name].view(-1)
            for k in idx:
                orig = flat[k].item()
                flat[k] = orig + step
                lp = loss_fn().item()
                flat[k] = orig - step
                lm = loss_fn().item()
                flat[k] = orig
                numeric = (lp - lm) / (2.0 * step)
                a = a_flat[k].item()
                err = abs(a - numeric) / max(1e-6, abs(a) + abs(numeric))
                worst = max(worst, err)
    for p in params.values():
        p.zero_grad()
    return worst


def init_uniform(shape, rng: torch.Generator, scale: float = 0.02, name: str = "") -> Parameter:
    v = (torch.rand(*shape, generator=rng, dtype=torch.float64) * 2.0 - 1.0) * scale
    return Parameter(v, name=name)


def init_projection(shape, rng: torch.Generator, name: str = "") -> Parameter:
    # scaled normal, std = 1/sqrt(fan_in)
    fan_in = shape[0]
    v = torch.randn(*shape, generator=rng, dtype=torch.float64) / np.sqrt(fan_in)
    return Parameter(v, name=name)


def init_zeros(shape, name: str = "") -> Parameter:
    return Parameter(torch.zeros(*shape, dtype=torch.float64), name=name)


def init_ones(shape, name: str = "") -> Parameter:
    return Parameter(torch.ones(*shape, dtype=torch.float64), name=name)


def checkpoint_bytes(params: Mapping[str, Parameter]) -> bytes:
    """Serialize parameters to the versioned "HTLA1" binary container.

    Layout after the magic header, for each parameter in sorted name order:
    u32 name length, utf-8 name, u32 ndim, u64 dims, raw little-endian
    float64 data.
    """
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", len(params)))
    for name in sorted(params):
        data = params[name].value.detach().numpy().astype("<f8")
        nb = name.encode("utf-8")
        buf.write(struct.pack("<I", len(nb)))
        buf.write(nb)
        buf.write(struct.pack("<I", data.ndim))
        for d in data.shape:
            buf.write(struct.pack("<Q", d))
        buf.write(data.tobytes())
    return buf.getvalue()


def save_checkpoint(path, params: Mapping[str, Parameter]) -> None:
    with open(path, "wb") as f:
        f.write(checkpoint_bytes(params))


def parse_checkpoint(blob: bytes) -> dict[str, np.ndarray]:
    if not blob.startswith(CHECKPOINT_MAGIC):
        raise ValueError("not an HTLA1 checkpoint (bad magic header)")
    off = len(CHECKPOINT_MAGIC)
    (count,) = struct.unpack_from("<I", blob, off)
    off += 4
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", blob, off)
        off += 4
        name = blob[off : off + nlen].decode("utf-8")
        off += nlen
        (ndim,) = struct.unpack_from("<I", blob, off)
        off += 4
        shape = struct.unpack_from(f"<{ndim}Q", blob, off) if ndim else ()
        off += 8 * ndim
        n = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype="<f8", count=n, offset=off).reshape(shape)
        off += 8 * n
        out[name] = arr.copy()
    return out


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        return parse_checkpoint(f.read())


def restore_parameters(params: Mapping[str, Parameter], arrays: Mapping[str, np.ndarray]) -> None:
    """Load checkpoint arrays into live parameters, checking shapes."""
    for name, p in params.items():
        if name not in arrays:
            raise KeyError(f"checkpoint missing parameter {name!r}")
        arr = arrays[name]
        if tuple(arr.shape) != p.shape:
            raise ValueError(
                f"shape mismatch for {name!r}: checkpoint {tuple(arr.shape)}, model {p.shape}"
            )
        with torch.no_grad():
            p.value.copy_(torch.from_numpy(np.ascontiguousarray(arr)))
