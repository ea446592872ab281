"""Dense NHWC tensor ops with reverse-mode differentiation.

Only the node kinds produced by :mod:`evorecon.phenotype` are supported.
Tensors are plain ``numpy.ndarray`` objects of dtype float32 (default) or
float64 (used by every gradient check).  Each op comes as a forward function
plus a ``*_backward`` that maps an upstream gradient to input gradients.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import phenotype as ph
from .errors import ShapeError, TensorFileError
from .phenotype import ArchGraph

DTYPES = {"float32": np.float32, "float64": np.float64}


# -- primitive ops ------------------------------------------------------------

def _pads(k: int) -> tuple[int, int]:
    lo = (k - 1) // 2
    return lo, k - 1 - lo


def _im2col(x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """(N,H,W,C) -> (N*H*W, kh*kw*C) patches for a same-padded conv."""
    n, h, w, c = x.shape
    xp = np.pad(x, ((0, 0), _pads(kh), _pads(kw), (0, 0)))
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))  # N,H,W,C,kh,kw view
    return np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(n * h * w, kh * kw * c)


def _crop(w, h, wd):
    """Drop kernel taps that can only ever touch zero padding."""
    kh, kw = w.shape[:2]
    ch, cw = min(kh, 2 * h - 1), min(kw, 2 * wd - 1)
    if (ch, cw) == (kh, kw):
        return w, None
    t, l = (kh - ch) // 2, (kw - cw) // 2
    return w[t:t + ch, l:l + cw], (slice(t, t + ch), slice(l, l + cw))


# large kernels on large maps go through the FFT; below these sizes the
# patch matrix is cheaper
FFT_MIN_TAPS = 49
FFT_MIN_PIXELS = 256


def _fast_len(n: int) -> int:
    """Smallest 5-smooth integer >= n."""
    while True:
        m = n
        for p in (2, 3, 5):
            while m % p == 0:
                m //= p
        if m == 1:
            return n
        n += 1


def _use_fft(kh, kw, h, wd) -> bool:
    return kh * kw >= FFT_MIN_TAPS and h * wd >= FFT_MIN_PIXELS


def _spec_mm(a, b):
    """Per-frequency channel mixing: (N,A,B,I) x (A,B,I,O) -> (N,A,B,O)."""
    n, fa, fb, ci = a.shape
    co = b.shape[-1]
    at = a.transpose(1, 2, 0, 3).reshape(fa * fb, n, ci)
    out = np.matmul(at, b.reshape(fa * fb, ci, co))
    return out.reshape(fa, fb, n, co).transpose(2, 0, 1, 3)


def _fft_setup(x, w):
    h, wd = x.shape[1:3]
    kh, kw = w.shape[:2]
    size = (_fast_len(h + kh - 1), _fast_len(wd + kw - 1))
    # padding past h + k - 1 keeps the circular products free of wrap-around
    xf = np.fft.rfft2(x, s=size, axes=(1, 2))
    wf = np.fft.rfft2(w[::-1, ::-1], s=size, axes=(0, 1))
    return size, xf, wf


def _conv_fft(x, w):
    """FFT route; also returns the input and kernel spectra for backward."""
    n, h, wd, _ = x.shape
    t, l = (w.shape[0] - 1) // 2, (w.shape[1] - 1) // 2
    size, xf, wf = _fft_setup(x, w)
    full = np.fft.irfft2(_spec_mm(xf, wf), s=size, axes=(1, 2))
    return full[:, t:t + h, l:l + wd].astype(x.dtype), (size, xf, wf)


def _conv_fft_backward(x, w, gout, spectra=None):
    n, h, wd, cin = x.shape
    kh, kw, _, cout = w.shape
    t, l = (kh - 1) // 2, (kw - 1) // 2
    size, xf, wf = spectra if spectra is not None else _fft_setup(x, w)
    gp = np.zeros((n, *size, cout), dtype=gout.dtype)
    gp[:, t:t + h, l:l + wd] = gout
    gf = np.fft.rfft2(gp, axes=(1, 2))
    # adjoint of the embedded circular conv: multiply by the conjugate kernel
    gx = np.fft.irfft2(_spec_mm(gf, np.conj(wf).transpose(0, 1, 3, 2)), s=size, axes=(1, 2))
    fa, fb = xf.shape[1:3]
    xt = np.conj(xf).transpose(1, 2, 3, 0).reshape(fa * fb, cin, n)
    gt = gf.transpose(1, 2, 0, 3).reshape(fa * fb, n, cout)
    gwf = np.fft.irfft2(np.matmul(xt, gt).reshape(fa, fb, cin, cout), s=size, axes=(0, 1))
    return gx[:, :h, :wd].astype(x.dtype), gwf[kh - 1::-1, kw - 1::-1].astype(w.dtype)


def conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Same-padded stride-1 convolution. ``w`` is (K_h, K_w, C_in, C_out)."""
    return _conv2d(x, w, b)[0]


def _conv2d(x, w, b):
    """:func:`conv2d` plus whatever the backward pass can reuse."""
    if x.ndim != 4 or x.shape[3] != w.shape[2]:
        raise ShapeError(f"conv2d expects {w.shape[2]} input channels, got input {x.shape}")
    n, h, wd, _ = x.shape
    w = _crop(w, h, wd)[0]
    kh, kw, cin, cout = w.shape
    aux = None
    if kh == kw == 1:
        out = x.reshape(-1, cin) @ w.reshape(cin, cout)
    elif _use_fft(kh, kw, h, wd):
        out, aux = _conv_fft(x, w)
        out = out.reshape(-1, cout)
    else:
        out = _im2col(x, kh, kw) @ w.reshape(kh * kw * cin, cout)
    out += b
    return out.reshape(n, h, wd, cout), aux


def conv2d_backward(x, w, gout, aux=None):
    """Gradients of :func:`conv2d` w.r.t. input, weights and bias."""
    n, h, wd, _ = x.shape
    full_shape = w.shape
    w, window = _crop(w, h, wd)
    kh, kw, cin, cout = w.shape
    g2 = gout.reshape(-1, cout)
    gb = g2.sum(axis=0)
    if kh == kw == 1:
        gw = (x.reshape(-1, cin).T @ g2).reshape(w.shape)
        gx = (g2 @ w.reshape(cin, cout).T).reshape(x.shape)
    elif _use_fft(kh, kw, h, wd):
        gx, gw = _conv_fft_backward(x, w, gout, aux)
    else:
        gw = (_im2col(x, kh, kw).T @ g2).reshape(w.shape)
        # odd kernels, symmetric padding: the input gradient is a same-padded
        # conv of gout with the 180-degree rotated, io-transposed kernel
        w_rot = np.ascontiguousarray(w[::-1, ::-1].transpose(0, 1, 3, 2))
        gx = (_im2col(gout, kh, kw) @ w_rot.reshape(kh * kw * cout, cin)).reshape(x.shape)
    if window is not None:
        full = np.zeros(full_shape, dtype=gw.dtype)
        full[window] = gw
        gw = full
    return gx, gw, gb


def _windows(x):
    n, h, w, c = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"pool2 needs even spatial dims, got {x.shape}")
    # (N, H/2, W/2, C, 4) with window positions in row-major order
    return x.reshape(n, h // 2, 2, w // 2, 2, c).transpose(0, 1, 3, 5, 2, 4).reshape(
        n, h // 2, w // 2, c, 4)


def _unwindows(win, shape):
    n, h, w, c = shape
    return win.reshape(n, h // 2, w // 2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(shape)


def pool2(x: np.ndarray, kind: str = "MAX"):
    """2x2 stride-2 pooling. Returns ``(out, argmax)``; argmax is None for AVG."""
    win = _windows(x)
    if kind == "MAX":
        arg = win.argmax(axis=-1)  # first index wins ties
        return np.take_along_axis(win, arg[..., None], axis=-1)[..., 0], arg
    if kind == "AVG":
        return win.mean(axis=-1), None
    raise ValueError(f"unknown pool kind {kind!r}")


def pool2_backward(gout, shape, kind, argmax=None):
    if kind == "MAX":
        win = (np.arange(4) == argmax[..., None]) * gout[..., None]
    else:
        win = np.broadcast_to(gout[..., None] * 0.25, gout.shape + (4,))
    return _unwindows(np.ascontiguousarray(win, dtype=gout.dtype), shape)


def upsample2(x: np.ndarray) -> np.ndarray:
    """Nearest-neighbour x2 in H and W."""
    return x.repeat(2, axis=1).repeat(2, axis=2)


def upsample2_backward(gout):
    n, h, w, c = gout.shape
    return gout.reshape(n, h // 2, 2, w // 2, 2, c).sum(axis=(2, 4))


def concat(xs) -> np.ndarray:
    base = xs[0].shape[:3]
    for x in xs[1:]:
        if x.shape[:3] != base:
            raise ShapeError(f"concat spatial mismatch: {xs[0].shape} vs {x.shape}")
    return np.concatenate(xs, axis=-1)


def concat_backward(gout, channels):
    return np.split(gout, np.cumsum(channels)[:-1], axis=-1)


def add(xs) -> np.ndarray:
    out = xs[0].copy()
    for x in xs[1:]:
        if x.shape != out.shape:
            raise ShapeError(f"add shape mismatch: {xs[0].shape} vs {x.shape}")
        out += x
    return out


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(x, gout):
    return gout * (x > 0)


def mse_loss(pred: np.ndarray, target: np.ndarray):
    """Mean squared error over pixels, averaged over the batch.

    Returns ``(loss, dloss/dpred)``.
    """
    if pred.shape != target.shape:
        raise ShapeError(f"mse_loss shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred - target
    loss = float(np.mean(diff * diff))
    return loss, diff * (2.0 / diff.size)


# -- parameters ---------------------------------------------------------------

def param_shapes(graph: ArchGraph) -> dict[str, tuple[int, ...]]:
    shapes = {}
    for n in graph.nodes:
        if n.kind == ph.SEP_CONV_PAIR:
            k = n.kernel
            shapes[f"{n.id}.w1"] = (k, 1, n.c_in, n.c_out)
            shapes[f"{n.id}.b1"] = (n.c_out,)
            shapes[f"{n.id}.w2"] = (1, k, n.c_out, n.c_out)
            shapes[f"{n.id}.b2"] = (n.c_out,)
        elif n.is_conv:
            shapes[f"{n.id}.w"] = (n.kernel, n.kernel, n.c_in, n.c_out)
            shapes[f"{n.id}.b"] = (n.c_out,)
    return shapes


def init_params(graph: ArchGraph, seed: int, dtype="float32") -> dict[str, np.ndarray]:
    """He-uniform weights (limit sqrt(6 / fan_in)), zero biases."""
    rng = np.random.default_rng(seed)
    dt = DTYPES[dtype] if isinstance(dtype, str) else dtype
    params = {}
    for key, shape in param_shapes(graph).items():
        if len(shape) == 1:
            params[key] = np.zeros(shape, dtype=dt)
        else:
            fan_in = shape[0] * shape[1] * shape[2]
            limit = np.sqrt(6.0 / fan_in)
            params[key] = rng.uniform(-limit, limit, size=shape).astype(dt)
    return params


def check_params(graph: ArchGraph, params: dict[str, np.ndarray]):
    expected = param_shapes(graph)
    if set(expected) != set(params):
        missing = sorted(set(expected) - set(params))
        extra = sorted(set(params) - set(expected))
        raise ShapeError(f"parameter keys do not match graph (missing {missing}, extra {extra})")
    for key, shape in expected.items():
        if params[key].shape != shape:
            raise ShapeError(f"node {key.split('.')[0]}: parameter {key} has shape "
                             f"{params[key].shape}, expected {shape}")


# -- graph execution ----------------------------------------------------------

class Tape:
    """Values and per-node caches recorded by :func:`forward`."""

    def __init__(self, graph, params):
        self.graph = graph
        self.params = params
        self.values: dict[int, np.ndarray] = {}
        self.cache: dict[int, object] = {}

    def release(self):
        self.values.clear()
        self.cache.clear()
        self.params = None

    @property
    def released(self) -> bool:
        return self.params is None


def forward(graph: ArchGraph, params: dict[str, np.ndarray], batch: np.ndarray,
            check_finite: bool = False):
    """Run the graph on an (N, H, W, 1) batch; returns ``(output, tape)``."""
    s = graph.input_shape
    if batch.ndim != 4 or batch.shape[1:] != (s.height, s.width, s.channels):
        raise ShapeError(f"node 0: batch shape {batch.shape} does not match graph input {s}")
    tape = Tape(graph, params)
    vals = tape.values
    for node in graph.nodes:
        if node.kind == ph.INPUT:
            vals[node.id] = batch
            continue
        ins = [vals[i] for i in node.inputs]
        try:
            out = _forward_node(node, ins, params, tape)
        except ShapeError as exc:
            raise ShapeError(f"node {node.id} ({node.kind}): {exc}") from None
        if check_finite and not np.all(np.isfinite(out)):
            raise FloatingPointError(f"node {node.id} ({node.kind}) produced non-finite values")
        vals[node.id] = out
    return vals[graph.output_id], tape


def _forward_node(node, ins, params, tape):
    kind = node.kind
    if kind == ph.SEP_CONV_PAIR:
        mid = conv2d(ins[0], params[f"{node.id}.w1"], params[f"{node.id}.b1"])
        tape.cache[node.id] = mid
        return conv2d(mid, params[f"{node.id}.w2"], params[f"{node.id}.b2"])
    if node.is_conv:
        out, aux = _conv2d(ins[0], params[f"{node.id}.w"], params[f"{node.id}.b"])
        if aux is not None:
            tape.cache[node.id] = aux
        return out
    if kind in ph.POOL_KINDS:
        out, arg = pool2(ins[0], "MAX" if kind == ph.MAX_POOL_2 else "AVG")
        tape.cache[node.id] = arg
        return out
    if kind == ph.UPSAMPLE_2:
        return upsample2(ins[0])
    if kind == ph.CONCAT:
        return concat(ins)
    if kind == ph.ADD:
        return add(ins)
    if kind == ph.RELU:
        return relu(ins[0])
    raise ShapeError(f"unsupported node kind {kind!r}")


def backward(tape: Tape, loss_grad: np.ndarray) -> dict[str, np.ndarray]:
    """Propagate d(loss)/d(output) back through the tape.

    Returns gradients keyed like the parameter dict. The tape is released.
    """
    if tape.released:
        raise RuntimeError("tape already released")
    graph, params, vals = tape.graph, tape.params, tape.values
    grads_v: dict[int, np.ndarray] = {graph.output_id: loss_grad}
    grads: dict[str, np.ndarray] = {}

    def push(node_id, g):
        if node_id in grads_v:
            grads_v[node_id] = grads_v[node_id] + g
        else:
            grads_v[node_id] = g

    for node in reversed(graph.nodes):
        g = grads_v.pop(node.id, None)
        if g is None or node.kind == ph.INPUT:
            continue
        kind, nid = node.kind, node.id
        x = vals[node.inputs[0]]
        if kind == ph.SEP_CONV_PAIR:
            mid = tape.cache[nid]
            gmid, grads[f"{nid}.w2"], grads[f"{nid}.b2"] = conv2d_backward(
                mid, params[f"{nid}.w2"], g)
            gx, grads[f"{nid}.w1"], grads[f"{nid}.b1"] = conv2d_backward(
                x, params[f"{nid}.w1"], gmid)
            push(node.inputs[0], gx)
        elif node.is_conv:
            gx, grads[f"{nid}.w"], grads[f"{nid}.b"] = conv2d_backward(
                x, params[f"{nid}.w"], g, tape.cache.get(nid))
            push(node.inputs[0], gx)
        elif kind in ph.POOL_KINDS:
            pk = "MAX" if kind == ph.MAX_POOL_2 else "AVG"
            push(node.inputs[0], pool2_backward(g, x.shape, pk, tape.cache.get(nid)))
        elif kind == ph.UPSAMPLE_2:
            push(node.inputs[0], upsample2_backward(g))
        elif kind == ph.CONCAT:
            parts = concat_backward(g, [vals[i].shape[-1] for i in node.inputs])
            for src, part in zip(node.inputs, parts):
                push(src, part)
        elif kind == ph.ADD:
            for src in node.inputs:
                push(src, g)
        elif kind == ph.RELU:
            push(node.inputs[0], relu_backward(vals[nid], g))
    tape.release()
    return grads


def predict(graph: ArchGraph, params, images: np.ndarray, batch_size: int = 16) -> np.ndarray:
    """Forward pass in fixed-size chunks, without keeping tapes."""
    outs = []
    for start in range(0, len(images), batch_size):
        out, tape = forward(graph, params, images[start:start + batch_size])
        tape.release()
        outs.append(out)
    return np.concatenate(outs, axis=0)


# -- ETNS tensor files ----------------------------------------------------------

MAGIC = b"ETNS"
_CODE_TO_DTYPE = {1: np.dtype("<f4"), 2: np.dtype("<f8"), 3: np.dtype("u1")}
_DTYPE_TO_CODE = {np.dtype(np.float32): 1, np.dtype(np.float64): 2,
                  np.dtype(np.uint8): 3, np.dtype(np.bool_): 3}


def tensor_to_bytes(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    code = _DTYPE_TO_CODE.get(arr.dtype)
    if code is None:
        raise TensorFileError(f"unsupported dtype {arr.dtype}")
    if arr.ndim > 255:
        raise TensorFileError("rank too large")
    head = MAGIC + struct.pack("<BB", code, arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    data = np.ascontiguousarray(arr, dtype=_CODE_TO_DTYPE[code]).tobytes()
    return head + data


def tensor_from_bytes(buf: bytes) -> np.ndarray:
    if len(buf) < 6 or buf[:4] != MAGIC:
        raise TensorFileError("missing ETNS magic")
    code, rank = struct.unpack_from("<BB", buf, 4)
    if code not in _CODE_TO_DTYPE:
        raise TensorFileError(f"unknown dtype code {code}")
    end = 6 + 4 * rank
    if len(buf) < end:
        raise TensorFileError("truncated header")
    dims = struct.unpack_from(f"<{rank}I", buf, 6)
    dt = _CODE_TO_DTYPE[code]
    expected = int(np.prod(dims, dtype=np.int64)) * dt.itemsize
    if len(buf) - end != expected:
        raise TensorFileError(f"payload is {len(buf) - end} bytes, expected {expected}")
    arr = np.frombuffer(buf, dtype=dt, offset=end).reshape(dims)
    return arr.astype(dt.newbyteorder("="))


def write_tensor(path, arr):
    Path(path).write_bytes(tensor_to_bytes(arr))


def read_tensor(path) -> np.ndarray:
    return tensor_from_bytes(Path(path).read_bytes())
