"""Differentiable op library.

Each op takes Tensors (or raw arrays, treated as constants), computes the
forward result with numpy, and records a backward closure when any input
sits on a tape. Convolutions run through one shared im2col/matmul kernel;
their input gradients and transposed convolution share one shift-and-add
kernel, so the adjoint pair is exercised in both directions.
"""

from __future__ import annotations

import numpy as np

from .autodiff import ShapeError, Tape, Tensor, UnsupportedOpError


def _data(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def _node(x) -> int | None:
    return x.node_id if isinstance(x, Tensor) and x.tape is not None else None


def _tape(*xs) -> Tape | None:
    tape = None
    for x in xs:
        if isinstance(x, Tensor) and x.tape is not None:
            if tape is None:
                tape = x.tape
            elif tape is not x.tape:
                raise ValueError("inputs live on different tapes")
    return tape


def _result(op, tape, parents, backward, out) -> Tensor:
    if tape is None:
        return Tensor(out)
    live = tuple(p for p in parents if p is not None)
    if not live:
        return Tensor(out)

    def bw(g):
        full = backward(g)
        return [fg for p, fg in zip(parents, full) if p is not None]

    return tape.record(op, live, bw, out)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum gradient over axes that were broadcast in the forward op."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(op, a, b):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, [a.shape, b.shape], "not broadcastable") from None


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    ad, bd = _data(a), _data(b)
    _check_broadcast("add", ad, bd)
    out = ad + bd
    return _result(
        "add",
        _tape(a, b),
        (_node(a), _node(b)),
        lambda g: (_unbroadcast(g, ad.shape), _unbroadcast(g, bd.shape)),
        out,
    )


def sub(a, b) -> Tensor:
    ad, bd = _data(a), _data(b)
    _check_broadcast("sub", ad, bd)
    out = ad - bd
    return _result(
        "sub",
        _tape(a, b),
        (_node(a), _node(b)),
        lambda g: (_unbroadcast(g, ad.shape), _unbroadcast(-g, bd.shape)),
        out,
    )


def mul(a, b) -> Tensor:
    ad, bd = _data(a), _data(b)
    _check_broadcast("mul", ad, bd)
    out = ad * bd
    return _result(
        "mul",
        _tape(a, b),
        (_node(a), _node(b)),
        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
        out,
    )


def scale(x, s: float) -> Tensor:
    xd = _data(x)
    s = float(s)
    return _result("scale", _tape(x), (_node(x),), lambda g: (g * s,), xd * s)


# ---------------------------------------------------------------------------
# matmul


def matmul(a, b) -> Tensor:
    ad, bd = _data(a), _data(b)
    if ad.ndim < 2 or bd.ndim < 2:
        raise ShapeError("matmul", [ad.shape, bd.shape], "operands must be at least 2-d")
    if ad.shape[-1] != bd.shape[-2]:
        raise ShapeError("matmul", [ad.shape, bd.shape], "inner dimensions differ")
    if ad.ndim > 2 and bd.ndim > 2 and ad.shape[:-2] != bd.shape[:-2]:
        raise ShapeError("matmul", [ad.shape, bd.shape], "batch dimensions differ")
    out = np.matmul(ad, bd)

    def backward(g):
        ga = np.matmul(g, np.swapaxes(bd, -1, -2))
        gb = np.matmul(np.swapaxes(ad, -1, -2), g)
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return _result("matmul", _tape(a, b), (_node(a), _node(b)), backward, out)


# ---------------------------------------------------------------------------
# convolution machinery (shared by conv2d / conv3d / transposed_conv3d)


def _im2col(x: np.ndarray, kshape: tuple[int, ...], stride: int, pad: int):
    """Extract strided patches: x [B, C, *S] -> cols [B*prod(O), C*prod(K)]."""
    nd = len(kshape)
    if pad:
        width = [(0, 0), (0, 0)] + [(pad, pad)] * nd
        x = np.pad(x, width)
    win = np.lib.stride_tricks.sliding_window_view(x, kshape, axis=tuple(range(2, 2 + nd)))
    sl = (slice(None), slice(None)) + (slice(None, None, stride),) * nd
    win = win[sl]
    out_spatial = win.shape[2 : 2 + nd]
    # [B, C, *O, *K] -> [B, *O, C, *K]
    win = np.moveaxis(win, 1, 1 + nd)
    b = x.shape[0]
    cols = np.ascontiguousarray(win).reshape(b * int(np.prod(out_spatial)), -1)
    return cols, out_spatial


def _conv_forward(x: np.ndarray, w: np.ndarray, stride: int, pad: int):
    """Cross-correlation: x [B, Cin, *S], w [Cout, Cin, *K] -> [B, Cout, *O]."""
    kshape = w.shape[2:]
    cols, out_spatial = _im2col(x, kshape, stride, pad)
    y = cols @ w.reshape(w.shape[0], -1).T
    b = x.shape[0]
    y = y.reshape((b,) + tuple(out_spatial) + (w.shape[0],))
    return np.ascontiguousarray(np.moveaxis(y, -1, 1)), out_spatial


def _conv_grad_w(x: np.ndarray, g: np.ndarray, kshape, stride: int, pad: int) -> np.ndarray:
    """Gradient w.r.t. kernel: recomputes im2col of x (cheaper than caching)."""
    cols, _ = _im2col(x, kshape, stride, pad)
    nd = len(kshape)
    gm = np.moveaxis(g, 1, 1 + nd).reshape(cols.shape[0], -1)
    gw = gm.T @ cols
    cout = g.shape[1]
    return gw.reshape((cout, x.shape[1]) + tuple(kshape))


def _shift_add(src: np.ndarray, w: np.ndarray, stride: int, pad: int, out_spatial) -> np.ndarray:
    """Adjoint spreading: out[:, co, i*stride + k - pad] += src[:, ci, i] * w[ci, co, *k].

    Serves both the input gradient of a convolution and the forward pass of
    a transposed convolution. Iterates over kernel offsets; each offset is
    one dense channel contraction plus a strided slice add.
    """
    b, cin = src.shape[:2]
    cout = w.shape[1]
    kshape = w.shape[2:]
    nd = len(kshape)
    src_spatial = src.shape[2:]
    out = np.zeros((b, cout) + tuple(out_spatial), dtype=src.dtype)
    # contract channels once; per offset we only slice
    mixed = np.tensordot(src, w, axes=([1], [0]))  # [B, *Ssrc, Cout, *K]
    mixed = np.moveaxis(mixed, 1 + nd, 1)  # [B, Cout, *Ssrc, *K]
    for k_idx in np.ndindex(*kshape):
        src_sl, out_sl = [], []
        valid = True
        for d in range(nd):
            offset = k_idx[d] - pad
            n_src = src_spatial[d]
            n_out = out_spatial[d]
            # output position = i*stride + offset for i in [0, n_src)
            i_lo = 0
            while i_lo * stride + offset < 0:
                i_lo += 1
            i_hi = n_src
            while i_hi > i_lo and (i_hi - 1) * stride + offset >= n_out:
                i_hi -= 1
            if i_hi <= i_lo:
                valid = False
                break
            src_sl.append(slice(i_lo, i_hi))
            out_sl.append(slice(i_lo * stride + offset, (i_hi - 1) * stride + offset + 1, stride))
        if not valid:
            continue
        piece = mixed[(slice(None), slice(None), *src_sl, *k_idx)]
        out[(slice(None), slice(None), *out_sl)] += piece
    return out


def _conv_nd(op_name: str, x, w, bias, stride: int, pad, nd: int) -> Tensor:
    xd, wd = _data(x), _data(w)
    if xd.ndim != nd + 2 or wd.ndim != nd + 2:
        raise ShapeError(op_name, [xd.shape, wd.shape], f"expected {nd + 2}-d input and kernel")
    if xd.shape[1] != wd.shape[1]:
        raise ShapeError(op_name, [xd.shape, wd.shape], "channel count mismatch")
    if pad == "same":
        if stride != 1:
            raise ValueError(f"{op_name}: 'same' padding requires stride 1")
        pad = wd.shape[2] // 2
    pad = int(pad)
    out, _ = _conv_forward(xd, wd, stride, pad)
    bd = None
    if bias is not None:
        bd = _data(bias)
        out = out + bd.reshape((1, -1) + (1,) * nd)

    def backward(g):
        g = np.ascontiguousarray(g)
        gx = _shift_add_conv_input(g, wd, stride, pad, xd.shape[2:])
        gw = _conv_grad_w(xd, g, wd.shape[2:], stride, pad)
        gb = None
        if bd is not None:
            gb = g.sum(axis=(0,) + tuple(range(2, 2 + nd)))
        return gx, gw, gb

    parents = (_node(x), _node(w)) + ((_node(bias),) if bias is not None else (None,))
    return _result(op_name, _tape(x, w, bias), parents, backward, out)


def _shift_add_conv_input(g: np.ndarray, w: np.ndarray, stride: int, pad: int, in_spatial) -> np.ndarray:
    """Input gradient of correlation: gx[:, ci, i*stride + k - pad] += g[:, co, i] * w[co, ci, *k]."""
    return _shift_add(g, w, stride, pad, in_spatial)


def conv2d(x, w, bias=None, stride: int = 1, pad=0) -> Tensor:
    """2-d cross-correlation. x [B, Cin, H, W], w [Cout, Cin, KH, KW]."""
    return _conv_nd("conv2d", x, w, bias, stride, pad, 2)


def conv3d(x, w, bias=None, stride: int = 1, pad=0) -> Tensor:
    """3-d cross-correlation. x [B, Cin, D, H, W], w [Cout, Cin, KD, KH, KW]."""
    return _conv_nd("conv3d", x, w, bias, stride, pad, 3)


def transposed_conv3d(x, w, bias=None, stride: int = 2, pad=1, out_spatial=None) -> Tensor:
    """Transposed 3-d convolution (adjoint of conv3d with the same stride/pad).

    w has layout [Cin, Cout, KD, KH, KW]. out_spatial defaults to
    stride * input spatial extent, the shape conv3d with the same stride and
    padding maps back to this input.
    """
    xd, wd = _data(x), _data(w)
    if xd.ndim != 5 or wd.ndim != 5:
        raise ShapeError("transposed_conv3d", [xd.shape, wd.shape], "expected 5-d input and kernel")
    if xd.shape[1] != wd.shape[0]:
        raise ShapeError("transposed_conv3d", [xd.shape, wd.shape], "channel count mismatch")
    pad = int(pad)
    if out_spatial is None:
        out_spatial = tuple(int(s) * stride for s in xd.shape[2:])
    else:
        out_spatial = tuple(int(s) for s in out_spatial)
    out = _shift_add(xd, wd, stride, pad, out_spatial)
    bd = None
    if bias is not None:
        bd = _data(bias)
        out = out + bd.reshape(1, -1, 1, 1, 1)

    def backward(g):
        g = np.ascontiguousarray(g)
        # adjoint of _shift_add w.r.t. src is a strided correlation by w
        gx_full, _ = _conv_forward(g, wd, stride, pad)
        gx = gx_full[(slice(None), slice(None)) + tuple(slice(0, s) for s in xd.shape[2:])]
        # kernel gradient: gw[ci, co, k] = sum over b, i of x[b, ci, i] g[b, co, i*stride + k - pad]
        gw = _conv_grad_w(g, xd, wd.shape[2:], stride, pad)
        gb = g.sum(axis=(0, 2, 3, 4)) if bd is not None else None
        return gx, gw, gb

    parents = (_node(x), _node(w)) + ((_node(bias),) if bias is not None else (None,))
    return _result("transposed_conv3d", _tape(x, w, bias), parents, backward, out)


# ---------------------------------------------------------------------------
# activations and pointwise nonlinearities


def relu(x) -> Tensor:
    xd = _data(x)
    out = np.maximum(xd, 0)
    return _result("relu", _tape(x), (_node(x),), lambda g: (g * (xd > 0),), out)


def softplus(x) -> Tensor:
    xd = _data(x)
    out = np.logaddexp(xd.dtype.type(0), xd)
    return _result("softplus", _tape(x), (_node(x),), lambda g: (g * _sigmoid(xd),), out)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(x) -> Tensor:
    xd = _data(x)
    out = _sigmoid(xd)
    return _result("sigmoid", _tape(x), (_node(x),), lambda g: (g * out * (1.0 - out),), out)


def exp(x) -> Tensor:
    xd = _data(x)
    out = np.exp(xd)
    return _result("exp", _tape(x), (_node(x),), lambda g: (g * out,), out)


# ---------------------------------------------------------------------------
# reductions and shape ops


def _norm_axis(axis, ndim):
    if axis is None:
        return None
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum_(x, axis=None, keepdims: bool = False) -> Tensor:
    xd = _data(x)
    axis = _norm_axis(axis, xd.ndim)
    out = xd.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, xd.shape),)

    return _result("sum", _tape(x), (_node(x),), backward, out)


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    xd = _data(x)
    axis = _norm_axis(axis, xd.ndim)
    out = xd.mean(axis=axis, keepdims=keepdims)
    count = xd.size if axis is None else int(np.prod([xd.shape[a] for a in axis]))

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, xd.shape) / count,)

    return _result("mean", _tape(x), (_node(x),), backward, out)


def concat(xs, axis: int = 0) -> Tensor:
    datas = [_data(x) for x in xs]
    base = list(datas[0].shape)
    ax = axis % datas[0].ndim
    for d in datas[1:]:
        other = list(d.shape)
        if len(other) != len(base) or any(o != b for i, (o, b) in enumerate(zip(other, base)) if i != ax):
            raise ShapeError("concat", [d.shape for d in datas], f"mismatch outside axis {ax}")
    out = np.concatenate(datas, axis=ax)
    sizes = [d.shape[ax] for d in datas]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        pieces = []
        for i in range(len(datas)):
            sl = [slice(None)] * g.ndim
            sl[ax] = slice(offsets[i], offsets[i + 1])
            pieces.append(np.ascontiguousarray(g[tuple(sl)]))
        return pieces

    tape = _tape(*xs)
    return _result("concat", tape, tuple(_node(x) for x in xs), backward, out)


def slice_(x, axis: int, start: int, stop: int) -> Tensor:
    xd = _data(x)
    ax = axis % xd.ndim
    if not (0 <= start <= stop <= xd.shape[ax]):
        raise ShapeError("slice", [xd.shape], f"range [{start}:{stop}] invalid on axis {ax}")
    sl = [slice(None)] * xd.ndim
    sl[ax] = slice(start, stop)
    out = np.ascontiguousarray(xd[tuple(sl)])

    def backward(g):
        gx = np.zeros_like(xd)
        gx[tuple(sl)] = g
        return (gx,)

    return _result("slice", _tape(x), (_node(x),), backward, out)


def reshape(x, shape) -> Tensor:
    xd = _data(x)
    out = xd.reshape(shape)
    return _result("reshape", _tape(x), (_node(x),), lambda g: (g.reshape(xd.shape),), out)


def permute(x, axes) -> Tensor:
    xd = _data(x)
    axes = tuple(int(a) for a in axes)
    inv = tuple(int(a) for a in np.argsort(axes))
    out = np.ascontiguousarray(xd.transpose(axes))
    return _result("permute", _tape(x), (_node(x),), lambda g: (np.ascontiguousarray(g.transpose(inv)),), out)


# ---------------------------------------------------------------------------
# normalization / attention


def group_norm(x, gamma, beta, groups: int = 8, eps: float = 1e-5) -> Tensor:
    """Group normalization over [B, C, *spatial] with per-channel affine."""
    xd, gd, bd = _data(x), _data(gamma), _data(beta)
    b, c = xd.shape[:2]
    if c % groups != 0:
        raise ShapeError("group_norm", [xd.shape], f"{c} channels not divisible by {groups} groups")
    if gd.shape != (c,) or bd.shape != (c,):
        raise ShapeError("group_norm", [xd.shape, gd.shape, bd.shape], "affine params must be [C]")
    spatial = xd.shape[2:]
    xg = xd.reshape(b, groups, -1)
    mu = xg.mean(axis=2, keepdims=True)
    var = xg.var(axis=2, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xg - mu) * inv
    xhat_full = xhat.reshape(xd.shape)
    shape_c = (1, c) + (1,) * len(spatial)
    out = xhat_full * gd.reshape(shape_c) + bd.reshape(shape_c)

    def backward(g):
        reduce_axes = (0,) + tuple(range(2, xd.ndim))
        gbeta = g.sum(axis=reduce_axes)
        ggamma = (g * xhat_full).sum(axis=reduce_axes)
        dxhat = (g * gd.reshape(shape_c)).reshape(b, groups, -1)
        m1 = dxhat.mean(axis=2, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=2, keepdims=True)
        dx = inv * (dxhat - m1 - xhat * m2)
        return dx.reshape(xd.shape), ggamma, gbeta

    return _result(
        "group_norm",
        _tape(x, gamma, beta),
        (_node(x), _node(gamma), _node(beta)),
        backward,
        out,
    )


def softmax(x, axis: int = -1) -> Tensor:
    xd = _data(x)
    shifted = xd - xd.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return ((g - dot) * out,)

    return _result("softmax", _tape(x), (_node(x),), backward, out)


def scaled_dot_attention(q, k, v) -> Tensor:
    """softmax(q kᵀ / sqrt(d)) v with q [B, Lq, D], k [B, Lk, D], v [B, Lk, Dv].

    Composed from primitive tape ops, so gradients fall out of the pieces.
    """
    qd, kd, vd = _data(q), _data(k), _data(v)
    if qd.shape[-1] != kd.shape[-1] or kd.shape[-2] != vd.shape[-2]:
        raise ShapeError("scaled_dot_attention", [qd.shape, kd.shape, vd.shape])
    kt = permute(k, tuple(range(kd.ndim - 2)) + (kd.ndim - 1, kd.ndim - 2))
    logits = scale(matmul(q, kt), 1.0 / float(np.sqrt(qd.shape[-1])))
    return matmul(softmax(logits, axis=-1), v)


# ---------------------------------------------------------------------------
# grid sampling


def _trilinear_weights(n: int, points: np.ndarray):
    """Corner indices and weights for volume sampling on the [-1, 1]^3 lattice.

    Voxel k's center sits at 2 (k + 0.5) / n - 1 per axis. Points inside the
    cube but outside the outermost centers clamp to the edge; callers mask
    points outside the cube entirely.
    """
    grid = (points + 1.0) * (0.5 * n) - 0.5
    grid = np.clip(grid, 0.0, n - 1.0)
    base = np.minimum(grid.astype(np.int64), n - 2) if n > 1 else np.zeros_like(grid, dtype=np.int64)
    frac = grid - base
    return base, frac


def trilinear_sample(vol, points) -> Tensor:
    """Sample a feature volume [C, N, N, N] at world points [P, 3] -> [P, C].

    Differentiable w.r.t. the volume only; points are fixed coordinates.
    Points outside the [-1, 1] cube return zeros.
    """
    vd = _data(vol)
    pts = np.asarray(points, dtype=vd.dtype)
    if vd.ndim != 4 or vd.shape[1] != vd.shape[2] or vd.shape[2] != vd.shape[3]:
        raise ShapeError("trilinear_sample", [vd.shape], "volume must be [C, N, N, N]")
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ShapeError("trilinear_sample", [pts.shape], "points must be [P, 3]")
    c, n = vd.shape[0], vd.shape[1]
    p = pts.shape[0]
    inside = (np.abs(pts) <= 1.0).all(axis=1)
    base, frac = _trilinear_weights(n, pts)
    # index math in flat [N^3] space; layout is [C][z][y][x]
    bx, by, bz = base[:, 0], base[:, 1], base[:, 2]
    fx, fy, fz = frac[:, 0], frac[:, 1], frac[:, 2]
    flat = vd.reshape(c, -1)
    idx000 = (bz * n + by) * n + bx
    corner_idx = []
    corner_w = []
    for dz in (0, 1):
        wz = fz if dz else 1.0 - fz
        for dy in (0, 1):
            wy = fy if dy else 1.0 - fy
            for dx in (0, 1):
                wx = fx if dx else 1.0 - fx
                corner_idx.append(idx000 + (dz * n + dy) * n + dx)
                corner_w.append((wz * wy * wx) * inside)
    out = np.zeros((p, c), dtype=vd.dtype)
    for ci, cw in zip(corner_idx, corner_w):
        out += flat[:, ci].T * cw[:, None]

    def backward(g):
        gv = np.zeros((c, n * n * n), dtype=vd.dtype)
        for ci, cw in zip(corner_idx, corner_w):
            weighted = g * cw[:, None]
            for ch in range(c):
                gv[ch] += np.bincount(ci, weights=weighted[:, ch], minlength=n * n * n).astype(vd.dtype)
        return (gv.reshape(vd.shape),)

    return _result("trilinear_sample", _tape(vol), (_node(vol),), backward, out)


def bilinear_sample(maps, uv) -> Tensor:
    """Sample image feature maps [B, C, H, W] at pixel coords [B, P, 2] -> [B, C, P].

    uv is in continuous pixel units with pixel (i, j) centered at
    (i + 0.5, j + 0.5); samples clamp to the image border. Differentiable
    w.r.t. the maps only.
    """
    md = _data(maps)
    uvd = np.asarray(uv, dtype=md.dtype)
    if md.ndim != 4:
        raise ShapeError("bilinear_sample", [md.shape], "maps must be [B, C, H, W]")
    if uvd.ndim != 3 or uvd.shape[2] != 2 or uvd.shape[0] != md.shape[0]:
        raise ShapeError("bilinear_sample", [md.shape, uvd.shape], "uv must be [B, P, 2]")
    b, c, h, w = md.shape
    p = uvd.shape[1]
    gx = np.clip(uvd[..., 0] - 0.5, 0.0, w - 1.0)
    gy = np.clip(uvd[..., 1] - 0.5, 0.0, h - 1.0)
    x0 = np.minimum(gx.astype(np.int64), w - 2) if w > 1 else np.zeros_like(gx, dtype=np.int64)
    y0 = np.minimum(gy.astype(np.int64), h - 2) if h > 1 else np.zeros_like(gy, dtype=np.int64)
    fx = gx - x0
    fy = gy - y0
    batch_off = (np.arange(b, dtype=np.int64) * (h * w))[:, None]
    flat = md.transpose(0, 2, 3, 1).reshape(b * h * w, c)
    corners = []
    for dy in (0, 1):
        wy = fy if dy else 1.0 - fy
        for dx in (0, 1):
            wx = fx if dx else 1.0 - fx
            idx = batch_off + (y0 + dy) * w + (x0 + dx)
            corners.append((idx, wy * wx))
    out = np.zeros((b, p, c), dtype=md.dtype)
    for idx, cw in corners:
        out += flat[idx] * cw[..., None]
    out = np.ascontiguousarray(out.transpose(0, 2, 1))

    def backward(g):
        gm = np.zeros((b * h * w, c), dtype=md.dtype)
        gp = g.transpose(0, 2, 1)  # [B, P, C]
        for idx, cw in corners:
            weighted = gp * cw[..., None]
            fi = idx.reshape(-1)
            wv = weighted.reshape(-1, c)
            for ch in range(c):
                gm[:, ch] += np.bincount(fi, weights=wv[:, ch], minlength=b * h * w).astype(md.dtype)
        return (np.ascontiguousarray(gm.reshape(b, h, w, c).transpose(0, 3, 1, 2)),)

    return _result("bilinear_sample", _tape(maps), (_node(maps),), backward, out)


# ---------------------------------------------------------------------------
# upsampling


def _subdivide_axis(x: np.ndarray, axis: int) -> np.ndarray:
    """Double one axis by average-preserving linear subdivision.

    Each parent cell splits into two children offset by a quarter of the
    parent spacing, using central-difference slopes (one-sided at the ends).
    The two children always average back to the parent, so resampling the
    result at the original cell centers is exact, and affine ramps are
    reproduced everywhere including boundaries.
    """
    x = np.moveaxis(x, axis, -1)
    n = x.shape[-1]
    s = np.empty_like(x)
    if n == 1:
        s[...] = 0.0
    else:
        s[..., 1:-1] = (x[..., 2:] - x[..., :-2]) * 0.5
        s[..., 0] = x[..., 1] - x[..., 0]
        s[..., -1] = x[..., -1] - x[..., -2]
    out = np.empty(x.shape[:-1] + (2 * n,), dtype=x.dtype)
    out[..., 0::2] = x - 0.25 * s
    out[..., 1::2] = x + 0.25 * s
    return np.moveaxis(out, -1, axis)


def _subdivide_axis_adjoint(g: np.ndarray, axis: int) -> np.ndarray:
    g = np.moveaxis(g, axis, -1)
    ge = g[..., 0::2]
    go = g[..., 1::2]
    n = ge.shape[-1]
    gx = (ge + go).copy()
    d = (go - ge) * 0.25
    if n > 1:
        gx[..., 2:] += d[..., 1:-1] * 0.5
        gx[..., :-2] -= d[..., 1:-1] * 0.5
        gx[..., 1] += d[..., 0]
        gx[..., 0] -= d[..., 0]
        gx[..., -1] += d[..., -1]
        gx[..., -2] -= d[..., -1]
    return np.moveaxis(gx, -1, axis)


def upsample_trilinear(x, factor: int = 2) -> Tensor:
    """Double every spatial axis of [B, C, D, H, W] (factor must be 2)."""
    xd = _data(x)
    if xd.ndim != 5:
        raise ShapeError("upsample_trilinear", [xd.shape], "expected [B, C, D, H, W]")
    if factor != 2:
        raise ValueError("upsample_trilinear: only factor 2 is supported")
    out = xd
    for ax in (2, 3, 4):
        out = _subdivide_axis(out, ax)

    def backward(g):
        for ax in (4, 3, 2):
            g = _subdivide_axis_adjoint(g, ax)
        return (g,)

    return _result("upsample_trilinear", _tape(x), (_node(x),), backward, out)


# ---------------------------------------------------------------------------
# dispatcher

_OPS = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "scale": scale,
    "matmul": matmul,
    "conv2d": conv2d,
    "conv3d": conv3d,
    "transposed_conv3d": transposed_conv3d,
    "relu": relu,
    "softplus": softplus,
    "sigmoid": sigmoid,
    "exp": exp,
    "sum": sum_,
    "mean": mean,
    "concat": concat,
    "slice": slice_,
    "reshape": reshape,
    "permute": permute,
    "group_norm": group_norm,
    "softmax": softmax,
    "scaled_dot_attention": scaled_dot_attention,
    "trilinear_sample": trilinear_sample,
    "bilinear_sample": bilinear_sample,
    "upsample_trilinear": upsample_trilinear,
}

OP_KINDS = tuple(sorted(_OPS))


def apply(op_kind: str, *inputs, **attrs) -> Tensor:
    """Dispatch by op name. Unknown kinds raise UnsupportedOpError."""
    fn = _OPS.get(op_kind)
    if fn is None:
        raise UnsupportedOpError(f"unsupported op kind {op_kind!r}; known kinds: {', '.join(OP_KINDS)}")
    if op_kind == "concat":
        return fn(inputs, **attrs)
    return fn(*inputs, **attrs)
