"""Minimal dense-tensor core.

Channels-first float32 tensors plus the handful of numeric operations the
feature-enhancement network and the losses need: direct convolution,
inference-mode batch norm, bilinear upsampling, elementwise add/concat.
Every convolution shape is describable by a :class:`ConvLayer`, which is
also the unit of FLOPs accounting (1 MAC = 1 FLOP; normalization,
activations and additions are not counted).

Also home of the ``.tns`` binary tensor file format used repo-wide and of
the central-difference gradient checker the loss tests rely on.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "ShapeError",
    "Tensor",
    "conv2d",
    "batch_norm_relu",
    "upsample_bilinear",
    "add",
    "concat",
    "ConvLayer",
    "FlopsReport",
    "flops_of",
    "finite_diff_grad",
    "save_tensor",
    "load_tensor",
]


class ShapeError(ValueError):
    """Raised when tensor shapes do not satisfy an operation's contract."""


class Tensor:
    """Dense float32 array with explicit shape, row-major, channels-first.

    Wraps a contiguous ``numpy`` array. All dimensions must be >= 1; the
    flat buffer length always equals the product of the dims.
    """

    __slots__ = ("array",)

    def __init__(self, array):
        arr = np.asarray(array, dtype=np.float32)
        if arr.ndim == 0:
            raise ShapeError("tensor must have at least one dimension")
        arr = np.ascontiguousarray(arr)
        if any(d < 1 for d in arr.shape):
            raise ShapeError(f"all dimensions must be >= 1, got {arr.shape}")
        self.array = arr

    @property
    def shape(self) -> tuple[int, ...]:
        return self.array.shape

    @property
    def ndim(self) -> int:
        return self.array.ndim

    @property
    def data(self) -> np.ndarray:
        """Flat row-major f32 view of the buffer."""
        return self.array.reshape(-1)

    def __array__(self, dtype=None):
        return self.array if dtype is None else self.array.astype(dtype)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape})"

    @classmethod
    def zeros(cls, *shape: int) -> "Tensor":
        return cls(np.zeros(shape, dtype=np.float32))

    @classmethod
    def full(cls, shape: Sequence[int], value: float) -> "Tensor":
        return cls(np.full(tuple(shape), value, dtype=np.float32))


def _as_array(x) -> np.ndarray:
    return x.array if isinstance(x, Tensor) else np.asarray(x, dtype=np.float32)


# ---------------------------------------------------------------------------
# Convolution
# ---------------------------------------------------------------------------

def conv2d(x, weights, bias=None, stride: int = 1, padding: int = 0,
           groups: int = 1) -> Tensor:
    """Direct 2-D convolution (cross-correlation), exact sum semantics.

    ``x`` is C_in x H x W, ``weights`` is C_out x (C_in/groups) x k x k.
    ``groups == C_in`` with matching C_out gives a depthwise convolution;
    ``k == 1, groups == 1`` is a pointwise (channel-mixing) convolution.
    """
    xa = _as_array(x)
    wa = _as_array(weights)
    if xa.ndim != 3:
        raise ShapeError(f"conv2d input must be C x H x W, got {xa.shape}")
    if wa.ndim != 4:
        raise ShapeError(f"conv2d weights must be 4-D, got {wa.shape}")
    c_in, h, w = xa.shape
    c_out, c_grp, kh, kw = wa.shape
    if kh != kw:
        raise ShapeError(f"only square kernels supported, got {kh}x{kw}")
    k = kh
    if k % 2 != 1:
        raise ShapeError(f"kernel size must be odd, got {k}")
    if stride not in (1, 2):
        raise ShapeError(f"stride must be 1 or 2, got {stride}")
    if c_in % groups != 0 or c_out % groups != 0:
        raise ShapeError(
            f"channels not divisible by groups: in={c_in} out={c_out} groups={groups}")
    if c_grp * groups != c_in:
        raise ShapeError(
            f"weight shape {wa.shape} incompatible with input shape {xa.shape} "
            f"(expected {c_out}x{c_in // groups}x{k}x{k} for groups={groups})")
    if bias is not None:
        ba = _as_array(bias).reshape(-1)
        if ba.shape[0] != c_out:
            raise ShapeError(f"bias length {ba.shape[0]} != out channels {c_out}")
    else:
        ba = None

    out_h = (h + 2 * padding - k) // stride + 1
    out_w = (w + 2 * padding - k) // stride + 1
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"empty conv output for input {xa.shape}, k={k}, "
                         f"stride={stride}, padding={padding}")
    xp = np.pad(xa, ((0, 0), (padding, padding), (padding, padding))) if padding else xa

    if groups == c_in and c_out == c_in:
        # Depthwise fast path: accumulate k*k shifted strided views.
        out = np.zeros((c_out, out_h, out_w), dtype=np.float32)
        for u in range(k):
            for v in range(k):
                view = xp[:, u:u + (out_h - 1) * stride + 1:stride,
                          v:v + (out_w - 1) * stride + 1:stride]
                out += wa[:, 0, u, v][:, None, None] * view
    else:
        out = np.empty((c_out, out_h, out_w), dtype=np.float32)
        og = c_out // groups
        for g in range(groups):
            xg = xp[g * c_grp:(g + 1) * c_grp]
            cols = _im2col(xg, k, stride, out_h, out_w)
            wg = wa[g * og:(g + 1) * og].reshape(og, c_grp * k * k)
            out[g * og:(g + 1) * og] = (wg @ cols).reshape(og, out_h, out_w)
    if ba is not None:
        out += ba[:, None, None]
    return Tensor(out)


def _im2col(x: np.ndarray, k: int, stride: int, out_h: int, out_w: int) -> np.ndarray:
    """Unfold (C,H,W) into a (C*k*k, out_h*out_w) patch matrix."""
    c = x.shape[0]
    cols = np.empty((c, k, k, out_h, out_w), dtype=np.float32)
    for u in range(k):
        for v in range(k):
            cols[:, u, v] = x[:, u:u + (out_h - 1) * stride + 1:stride,
                              v:v + (out_w - 1) * stride + 1:stride]
    return cols.reshape(c * k * k, out_h * out_w)


# ---------------------------------------------------------------------------
# Normalization / activation / joins
# ---------------------------------------------------------------------------

def batch_norm_relu(x, mean, var, gamma, beta, eps: float = 1e-5,
                    apply_relu: bool = True) -> Tensor:
    """Inference-mode per-channel affine normalization, optional ReLU."""
    xa = _as_array(x)
    c = xa.shape[0]
    vecs = []
    for name, v in (("mean", mean), ("var", var), ("gamma", gamma), ("beta", beta)):
        va = _as_array(v).reshape(-1)
        if va.shape[0] != c:
            raise ShapeError(f"{name} length {va.shape[0]} != channel count {c}")
        vecs.append(va)
    mean_a, var_a, gamma_a, beta_a = vecs
    if np.any(var_a < 0):
        raise ValueError("variance must be non-negative")
    scale = gamma_a / np.sqrt(var_a + np.float32(eps))
    shift = beta_a - mean_a * scale
    expand = (slice(None),) + (None,) * (xa.ndim - 1)
    out = xa * scale[expand] + shift[expand]
    if apply_relu:
        np.maximum(out, 0.0, out=out)
    return Tensor(out)


def upsample_bilinear(x, factor: int) -> Tensor:
    """Integer-factor bilinear upsampling, half-pixel-centers convention.

    Output sample (i, j) reads the source at ((i + 0.5)/factor - 0.5,
    (j + 0.5)/factor - 0.5), clamped to the source extent.
    """
    xa = _as_array(x)
    if factor < 2:
        raise ShapeError(f"upsample factor must be >= 2, got {factor}")
    if xa.ndim != 3:
        raise ShapeError(f"upsample input must be C x H x W, got {xa.shape}")
    c, h, w = xa.shape
    out_h, out_w = h * factor, w * factor
    src_y = (np.arange(out_h, dtype=np.float32) + 0.5) / factor - 0.5
    src_x = (np.arange(out_w, dtype=np.float32) + 0.5) / factor - 0.5
    y0 = np.clip(np.floor(src_y), 0, h - 1).astype(np.int64)
    x0 = np.clip(np.floor(src_x), 0, w - 1).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = np.clip(src_y - y0, 0.0, 1.0).astype(np.float32)
    fx = np.clip(src_x - x0, 0.0, 1.0).astype(np.float32)

    top = xa[:, y0][:, :, x0] * (1 - fx) + xa[:, y0][:, :, x1] * fx
    bot = xa[:, y1][:, :, x0] * (1 - fx) + xa[:, y1][:, :, x1] * fx
    out = top * (1 - fy)[None, :, None] + bot * fy[None, :, None]
    return Tensor(out)


def add(a, b) -> Tensor:
    aa, bb = _as_array(a), _as_array(b)
    if aa.shape != bb.shape:
        raise ShapeError(f"add shape mismatch: {aa.shape} vs {bb.shape}")
    return Tensor(aa + bb)


def concat(a, b) -> Tensor:
    """Concatenate along the channel axis; spatial dims must match."""
    aa, bb = _as_array(a), _as_array(b)
    if aa.ndim != bb.ndim or aa.shape[1:] != bb.shape[1:]:
        raise ShapeError(f"concat spatial mismatch: {aa.shape} vs {bb.shape}")
    return Tensor(np.concatenate([aa, bb], axis=0))


# ---------------------------------------------------------------------------
# FLOPs accounting
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConvLayer:
    """Shape descriptor of one convolution, the unit of MAC counting."""

    name: str
    in_channels: int
    out_channels: int
    in_h: int
    in_w: int
    kernel: int
    stride: int = 1
    padding: int = 0
    groups: int = 1

    def out_hw(self) -> tuple[int, int]:
        oh = (self.in_h + 2 * self.padding - self.kernel) // self.stride + 1
        ow = (self.in_w + 2 * self.padding - self.kernel) // self.stride + 1
        return oh, ow

    def macs(self) -> int:
        oh, ow = self.out_hw()
        return oh * ow * self.out_channels * (self.in_channels // self.groups) \
            * self.kernel * self.kernel


@dataclass
class FlopsReport:
    """Per-layer multiply-accumulate counts; total is the exact sum."""

    entries: list[tuple[str, int, tuple[int, ...]]] = field(default_factory=list)

    @property
    def total(self) -> int:
        return sum(macs for _, macs, _ in self.entries)

    @property
    def total_gflops(self) -> float:
        return self.total / 1e9

    def subtotal(self, prefix: str) -> int:
        return sum(macs for name, macs, _ in self.entries if name.startswith(prefix))

    def to_json(self) -> dict:
        return {
            "entries": [
                {"name": n, "macs": m, "out_shape": list(s)} for n, m, s in self.entries
            ],
            "total_macs": self.total,
            "total_gflops": self.total_gflops,
        }

    def format_table(self) -> str:
        width = max([len(n) for n, _, _ in self.entries] + [5])
        lines = [f"{'layer':<{width}}  {'MACs':>14}  out shape"]
        for name, macs, shape in self.entries:
            lines.append(f"{name:<{width}}  {macs:>14,}  {'x'.join(map(str, shape))}")
        lines.append(f"{'total':<{width}}  {self.total:>14,}  "
                     f"({self.total_gflops:.3f} GFLOPS)")
        return "\n".join(lines)


def flops_of(layers: Iterable[ConvLayer] | ConvLayer) -> FlopsReport:
    """MAC count for one conv layer or a list of them.

    Convention: conv MACs = H'*W'*C_out*(C_in/groups)*k^2; batch norm, ReLU,
    elementwise additions and upsampling count as zero.
    """
    if isinstance(layers, ConvLayer):
        layers = [layers]
    report = FlopsReport()
    for layer in layers:
        oh, ow = layer.out_hw()
        report.entries.append((layer.name, layer.macs(), (layer.out_channels, oh, ow)))
    return report


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------

def finite_diff_grad(fn: Callable[[np.ndarray], float], x, eps: float = 1e-3,
                     ) -> np.ndarray:
    """Central-difference gradient of a scalar function, elementwise.

    ``x`` may be a Tensor or ndarray; the function is evaluated on float64
    copies and must be deterministic. Non-finite values abort with the
    offending flat index.
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    base = np.array(_as_array(x), dtype=np.float64)
    grad = np.zeros_like(base)
    flat = base.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        f_plus = float(fn(base))
        flat[i] = orig - eps
        f_minus = float(fn(base))
        flat[i] = orig
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise FloatingPointError(
                f"non-finite function value at flat index {i}: "
                f"f(+eps)={f_plus}, f(-eps)={f_minus}")
        gflat[i] = (f_plus - f_minus) / (2.0 * eps)
    return grad


# ---------------------------------------------------------------------------
# Binary tensor file format
# ---------------------------------------------------------------------------
# Layout: magic "PTNS", u8 version=1, u8 dtype=0 (f32), u8 ndim, u8 pad,
# ndim x u32 little-endian dims, then the raw little-endian f32 payload.

_MAGIC = b"PTNS"
_VERSION = 1
_DTYPE_F32 = 0


def save_tensor(path, x) -> None:
    arr = _as_array(x)
    if arr.ndim > 255:
        raise ShapeError("too many dimensions for the tensor format")
    header = _MAGIC + struct.pack("<BBBB", _VERSION, _DTYPE_F32, arr.ndim, 0)
    dims = struct.pack(f"<{arr.ndim}I", *arr.shape)
    payload = np.ascontiguousarray(arr, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(dims)
        fh.write(payload)


def load_tensor(path) -> Tensor:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 8 or raw[:4] != _MAGIC:
        raise ValueError(f"{path}: not a tensor file (bad magic)")
    version, dtype, ndim, _pad = struct.unpack("<BBBB", raw[4:8])
    if version != _VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    if dtype != _DTYPE_F32:
        raise ValueError(f"{path}: unsupported dtype code {dtype}")
    dims = struct.unpack(f"<{ndim}I", raw[8:8 + 4 * ndim])
    count = int(np.prod(dims)) if ndim else 0
    payload = raw[8 + 4 * ndim:]
    if len(payload) != 4 * count:
        raise ValueError(f"{path}: payload length {len(payload)} != expected {4 * count}")
    arr = np.frombuffer(payload, dtype="<f4").reshape(dims)
    return Tensor(arr.astype(np.float32))
