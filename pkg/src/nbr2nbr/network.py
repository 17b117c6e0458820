"""A small differentiable convolutional denoiser with analytic gradients.

Architecture family: an encoder/decoder stack with skip connections
(3x3 convs, leaky-ReLU 0.1, 2x max-pool down, 2x nearest-neighbor up)
followed by a tail of 1x1 convolutions, the last one linear. depth=0
degenerates to a plain conv stack. The denoiser is resolution
preserving: all 3x3 convs use zero padding 1.

Activations are (N, H, W, C) float32 arrays ("Tensor4"); parameters
live in one flat float32 vector with views per layer, in creation
order: for each conv, weight (k, k, c_in, c_out) row-major, then bias
(c_out,). Gradients mirror the parameter vector. Loss reductions and
the finite-difference gradient check run in float64.

Checkpoint format: magic b"N2NCKPT1", u32-LE byte length + UTF-8 JSON
architecture descriptor, u64-LE parameter count, raw float32-LE
parameter values in the layer order above.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "ArchDescriptor",
    "Network",
    "build_network",
    "forward",
    "backward",
    "parameter_count",
    "gradient_check",
    "save_checkpoint",
    "load_checkpoint",
    "CHECKPOINT_MAGIC",
]

CHECKPOINT_MAGIC = b"N2NCKPT1"
LEAKY_SLOPE = 0.1


@dataclass(frozen=True)
class ArchDescriptor:
    """Shape of the denoiser: channels in, number of down/up levels,
    channel width at the first level, and trailing 1x1 conv count."""

    input_channels: int
    depth: int = 2
    base_width: int = 24
    tail_1x1: int = 3

    def __post_init__(self):
        if self.input_channels not in (1, 3):
            raise ValueError("input_channels must be 1 or 3")
        if self.depth < 0 or self.tail_1x1 < 0 or self.base_width < 1:
            raise ValueError("invalid architecture descriptor")

    def to_json(self) -> str:
        return json.dumps(
            {
                "input_channels": self.input_channels,
                "depth": self.depth,
                "base_width": self.base_width,
                "tail_1x1": self.tail_1x1,
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "ArchDescriptor":
        d = json.loads(text)
        return cls(
            input_channels=int(d["input_channels"]),
            depth=int(d["depth"]),
            base_width=int(d["base_width"]),
            tail_1x1=int(d["tail_1x1"]),
        )


def _conv_specs(d: ArchDescriptor) -> list[tuple[int, int, int]]:
    """(ksize, c_in, c_out) per conv, in the documented layer order."""
    t = d.tail_1x1
    specs: list[tuple[int, int, int]] = []
    if d.depth == 0:
        body_out = d.base_width if t > 0 else d.input_channels
        specs.append((3, d.input_channels, body_out))
        c = body_out
    else:
        widths = [d.base_width << i for i in range(d.depth + 1)]
        c = d.input_channels
        for i in range(d.depth):  # encoder
            specs.append((3, c, widths[i]))
            specs.append((3, widths[i], widths[i]))
            c = widths[i]
        specs.append((3, c, widths[d.depth]))  # bottleneck
        specs.append((3, widths[d.depth], widths[d.depth]))
        c = widths[d.depth]
        for i in range(d.depth - 1, -1, -1):  # decoder
            out = widths[i] if (i > 0 or t > 0) else d.input_channels
            specs.append((3, c + widths[i], out))
            specs.append((3, out, out))
            c = out
    for j in range(t):
        c_out = d.input_channels if j == t - 1 else d.base_width
        specs.append((1, c, c_out))
        c = c_out
    return specs


def parameter_count(d: ArchDescriptor) -> int:
    return sum(k * k * ci * co + co for k, ci, co in _conv_specs(d))


class _Conv:
    """Zero-padded convolution over NHWC tensors; weight (k,k,cin,cout)."""

    def __init__(self, ksize, c_in, c_out, weight, bias, gw, gb):
        self.k = ksize
        self.c_in = c_in
        self.c_out = c_out
        self.w = weight
        self.b = bias
        self.gw = gw
        self.gb = gb

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        p = self.k // 2
        xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0))) if p else x
        n, hp, wp, _ = xp.shape
        h, w = hp - 2 * p, wp - 2 * p
        wmat = self.w if self.w.dtype == x.dtype else self.w.astype(x.dtype)
        out = np.zeros((n, h, w, self.c_out), dtype=x.dtype)
        for dy in range(self.k):
            for dx in range(self.k):
                out += xp[:, dy : dy + h, dx : dx + w, :] @ wmat[dy, dx]
        out += self.b.astype(x.dtype)
        return out, xp

    def backward(self, grad: np.ndarray, xp: np.ndarray) -> np.ndarray:
        p = self.k // 2
        n, hp, wp, _ = xp.shape
        h, w = hp - 2 * p, wp - 2 * p
        wmat = self.w if self.w.dtype == grad.dtype else self.w.astype(grad.dtype)
        gxp = np.zeros_like(xp)
        for dy in range(self.k):
            for dx in range(self.k):
                sl = xp[:, dy : dy + h, dx : dx + w, :]
                self.gw[dy, dx] += np.tensordot(sl, grad, axes=([0, 1, 2], [0, 1, 2]))
                gxp[:, dy : dy + h, dx : dx + w, :] += grad @ wmat[dy, dx].T
        self.gb += grad.sum(axis=(0, 1, 2))
        return gxp[:, p : hp - p, p : wp - p, :] if p else gxp


class Network:
    """Denoiser with flat parameter and gradient vectors.

    forward/backward mutate the recorded tape and gradients and must
    not run concurrently on one instance.
    """

    def __init__(self, descriptor: ArchDescriptor, params: np.ndarray):
        self.descriptor = descriptor
        n = parameter_count(descriptor)
        if params.shape != (n,):
            raise ValueError(f"expected {n} parameters, got {params.shape}")
        self.params = params
        self.grads = np.zeros(n, dtype=params.dtype)
        self.convs: list[_Conv] = []
        pos = 0
        for k, ci, co in _conv_specs(descriptor):
            nw, nb = k * k * ci * co, co
            w = self.params[pos : pos + nw].reshape(k, k, ci, co)
            gw = self.grads[pos : pos + nw].reshape(k, k, ci, co)
            pos += nw
            b = self.params[pos : pos + nb]
            gb = self.grads[pos : pos + nb]
            pos += nb
            self.convs.append(_Conv(k, ci, co, w, b, gw, gb))
        self._tape: list[tuple] | None = None

    # -- helpers ----------------------------------------------------------

    @property
    def dtype(self):
        return self.params.dtype

    def astype(self, dtype) -> "Network":
        return Network(self.descriptor, self.params.astype(dtype))

    def zero_grad(self) -> None:
        self.grads[:] = 0

    # -- forward / backward ----------------------------------------------

    def forward(self, x: np.ndarray, record: bool = True) -> np.ndarray:
        d = self.descriptor
        x = np.ascontiguousarray(x, dtype=self.dtype)
        if x.ndim != 4 or x.shape[3] != d.input_channels:
            raise ValueError(f"expected (N,H,W,{d.input_channels}) input, got {x.shape}")
        if d.depth and (x.shape[1] % (1 << d.depth) or x.shape[2] % (1 << d.depth)):
            raise ValueError(
                f"spatial dims {x.shape[1]}x{x.shape[2]} not divisible by 2^{d.depth}"
            )
        tape: list[tuple] = []
        ci = iter(self.convs)

        def conv(x):
            layer = next(ci)
            out, xp = layer.forward(x)
            tape.append(("conv", layer, xp))
            return out

        def act(x):
            mask = x >= 0
            tape.append(("lrelu", mask))
            return np.where(mask, x, LEAKY_SLOPE * x)

        if d.depth == 0:
            x = conv(x)
            if d.tail_1x1 > 0:
                x = act(x)
        else:
            skips = []
            for _ in range(d.depth):
                x = act(conv(x))
                x = act(conv(x))
                skips.append(x)
                tape.append(("push_skip",))
                x = _pool(x, tape)
            x = act(conv(x))
            x = act(conv(x))
            for i in range(d.depth - 1, -1, -1):
                x = _upsample(x, tape)
                skip = skips[i]
                tape.append(("cat", x.shape[3]))
                x = np.concatenate([x, skip], axis=3)
                x = act(conv(x))
                x = conv(x)
                if i > 0 or d.tail_1x1 > 0:
                    x = act(x)
                else:
                    tape.append(("noact",))
        for j in range(d.tail_1x1):
            x = conv(x)
            if j < d.tail_1x1 - 1:
                x = act(x)
        if record:
            self._tape = tape
        return x

    def backward(self, upstream: np.ndarray) -> np.ndarray:
        """Accumulate d(loss)/d(theta) into self.grads for the recorded
        forward pass; returns d(loss)/d(input)."""
        if self._tape is None:
            raise RuntimeError("backward called without a recorded forward pass")
        grad = np.ascontiguousarray(upstream, dtype=self.dtype)
        skip_grads: list[np.ndarray] = []
        for entry in reversed(self._tape):
            kind = entry[0]
            if kind == "conv":
                _, layer, xp = entry
                grad = layer.backward(grad, xp)
            elif kind == "lrelu":
                mask = entry[1]
                grad = np.where(mask, grad, LEAKY_SLOPE * grad)
            elif kind == "noact":
                pass
            elif kind == "pool":
                grad = _pool_back(grad, entry[1], entry[2])
            elif kind == "up":
                n, h, w, c = grad.shape
                grad = grad.reshape(n, h // 2, 2, w // 2, 2, c).sum(axis=(2, 4))
            elif kind == "cat":
                split = entry[1]
                skip_grads.append(grad[:, :, :, split:])
                grad = np.ascontiguousarray(grad[:, :, :, :split])
            elif kind == "push_skip":
                grad = grad + skip_grads.pop()
            else:  # pragma: no cover
                raise RuntimeError(f"corrupt tape entry {kind}")
        self._tape = None
        return grad


def _pool(x: np.ndarray, tape: list) -> np.ndarray:
    n, h, w, c = x.shape
    win = x.reshape(n, h // 2, 2, w // 2, 2, c).transpose(0, 1, 3, 5, 2, 4)
    win = win.reshape(n, h // 2, w // 2, c, 4)
    idx = win.argmax(axis=-1)  # first max wins on ties
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    tape.append(("pool", idx, (n, h, w, c)))
    return out


def _pool_back(grad: np.ndarray, idx: np.ndarray, shape: tuple) -> np.ndarray:
    n, h, w, c = shape
    scat = np.zeros((n, h // 2, w // 2, c, 4), dtype=grad.dtype)
    np.put_along_axis(scat, idx[..., None], grad[..., None], axis=-1)
    scat = scat.reshape(n, h // 2, w // 2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3)
    return scat.reshape(n, h, w, c)


def _upsample(x: np.ndarray, tape: list) -> np.ndarray:
    tape.append(("up",))
    return x.repeat(2, axis=1).repeat(2, axis=2)


def build_network(d: ArchDescriptor, rng: np.random.Generator) -> Network:
    """Allocate and initialize a network: weights uniform He-style
    (bound sqrt(6/fan_in)), biases zero, deterministic given rng."""
    params = np.zeros(parameter_count(d), dtype=np.float32)
    pos = 0
    for k, ci, co in _conv_specs(d):
        nw = k * k * ci * co
        bound = np.sqrt(6.0 / (k * k * ci))
        params[pos : pos + nw] = rng.uniform(-bound, bound, nw).astype(np.float32)
        pos += nw + co  # biases stay zero
    return Network(d, params)


def forward(net: Network, x: np.ndarray, record: bool = True) -> np.ndarray:
    return net.forward(x, record=record)


def backward(net: Network, upstream: np.ndarray) -> np.ndarray:
    return net.backward(upstream)


def gradient_check(
    net: Network,
    x: np.ndarray,
    h: float = 1e-4,
    tol: float = 1e-3,
    n_params: int = 200,
    rng: np.random.Generator | None = None,
) -> dict:
    """Compare analytic gradients of L(theta) = ||f_theta(x)||^2 / 2
    against central differences on a random parameter subset.

    Runs entirely in float64. Returns a report dict with max_rel_error
    and passed.
    """
    rng = rng or np.random.default_rng(0)
    net64 = net.astype(np.float64)
    x = np.ascontiguousarray(x, dtype=np.float64)

    out = net64.forward(x)
    net64.zero_grad()
    net64.backward(out)  # d(||out||^2/2)/d(out) = out
    analytic = net64.grads.copy()

    n = len(net64.params)
    count = min(n_params, n)
    idx = rng.choice(n, size=count, replace=False) if count < n else np.arange(n)

    def loss() -> float:
        y = net64.forward(x, record=False)
        return 0.5 * float(np.sum(y.astype(np.float64) ** 2))

    max_rel = 0.0
    details = []
    for i in idx:
        orig = net64.params[i]
        net64.params[i] = orig + h
        lp = loss()
        net64.params[i] = orig - h
        lm = loss()
        net64.params[i] = orig
        fd = (lp - lm) / (2 * h)
        denom = max(abs(fd), abs(analytic[i]), 1e-12)
        rel = abs(fd - analytic[i]) / denom
        max_rel = max(max_rel, rel)
        details.append((int(i), float(analytic[i]), float(fd), float(rel)))
    return {
        "max_rel_error": max_rel,
        "passed": max_rel < tol,
        "checked": count,
        "tol": tol,
        "details": details,
    }


def save_checkpoint(net: Network, path) -> None:
    desc = net.descriptor.to_json().encode("utf-8")
    params = np.ascontiguousarray(net.params, dtype="<f4")
    blob = (
        CHECKPOINT_MAGIC
        + struct.pack("<I", len(desc))
        + desc
        + struct.pack("<Q", len(params))
        + params.tobytes()
    )
    Path(path).write_bytes(blob)


def load_checkpoint(path) -> Network:
    data = Path(path).read_bytes()
    if data[:8] != CHECKPOINT_MAGIC:
        raise ValueError("bad checkpoint magic")
    (dlen,) = struct.unpack("<I", data[8:12])
    desc = ArchDescriptor.from_json(data[12 : 12 + dlen].decode("utf-8"))
    pos = 12 + dlen
    (count,) = struct.unpack("<Q", data[pos : pos + 8])
    pos += 8
    if count != parameter_count(desc):
        raise ValueError(
            f"checkpoint parameter count {count} does not match descriptor "
            f"({parameter_count(desc)})"
        )
    params = np.frombuffer(data, "<f4", count, pos)
    if len(params) != count:
        raise ValueError("checkpoint truncated")
    return Network(desc, params.astype(np.float32))
