"""Coordinate conventions, keypoint heatmaps, dense flow and differentiable warping.

Conventions used everywhere in this package:

* Images are ``(C, H, W)`` float tensors in ``[0, 1]`` (batched: ``(B, C, H, W)``).
* Keypoints are ``(N, 2)`` tensors of ``[x, y]`` in normalized coordinates,
  x rightward and y downward, with the frame spanning ``[-1, 1]`` in both axes.
  Pixel centers sit on the align-corners lattice ``x_j = 2j/(W-1) - 1``.
* Flow fields are ``(2, H, W)`` backward displacement maps in normalized
  coordinates: ``warped(p) = img(p + flow(p))``.  A zero field is the
  identity warp, exactly.
* Mask stacks are ``(K, H, W)`` in ``[0, 1]``; "hard" masks contain only 0/1.
"""

import torch
import torch.nn.functional as F

__all__ = [
    "gaussian_heatmap",
    "bilinear_warp",
    "compose_flow",
    "translate_copies",
    "render_keypoint_image",
    "resize",
    "mask_union",
    "mask_subtract",
    "mask_intersect",
    "harden",
    "require_hard",
    "FLIP_INDEX_68",
]


def _axis_coords(n, dtype, device):
    # 2*i/(n-1) - 1 keeps pixel centers exactly on the lattice used by floor/frac
    i = torch.arange(n, dtype=dtype, device=device)
    return 2.0 * i / (n - 1) - 1.0


def gaussian_heatmap(keypoints, variance, height, width):
    """Render one Gaussian bump per keypoint.

    Channel i is ``exp(-||p - k_i||^2 / (2 * variance))`` evaluated at every
    pixel center p, so the peak is exactly 1 when the keypoint coincides with
    a pixel center.  Accepts ``(N, 2)`` or batched ``(B, N, 2)`` keypoints and
    returns ``(N, H, W)`` or ``(B, N, H, W)`` accordingly.
    """
    if variance <= 0:
        raise ValueError(f"variance must be positive, got {variance}")
    k = torch.as_tensor(keypoints)
    if k.ndim not in (2, 3) or k.shape[-1] != 2:
        raise ValueError(f"keypoints must be (N, 2) or (B, N, 2), got {tuple(k.shape)}")
    squeeze = k.ndim == 2
    if squeeze:
        k = k.unsqueeze(0)
    dtype = k.dtype if k.is_floating_point() else torch.get_default_dtype()
    k = k.to(dtype)
    xs = _axis_coords(width, dtype, k.device)
    ys = _axis_coords(height, dtype, k.device)
    gx = torch.exp(-((xs.view(1, 1, -1) - k[..., 0].unsqueeze(-1)) ** 2) / (2.0 * variance))
    gy = torch.exp(-((ys.view(1, 1, -1) - k[..., 1].unsqueeze(-1)) ** 2) / (2.0 * variance))
    out = gy.unsqueeze(-1) * gx.unsqueeze(-2)
    return out[0] if squeeze else out


def _warp_batched(img, flow, border):
    B, C, H, W = img.shape
    dtype = img.dtype
    ix = torch.arange(W, dtype=dtype, device=img.device).view(1, 1, W)
    iy = torch.arange(H, dtype=dtype, device=img.device).view(1, H, 1)
    px = ix + flow[:, 0] * ((W - 1) / 2.0)
    py = iy + flow[:, 1] * ((H - 1) / 2.0)
    x0f = px.floor()
    y0f = py.floor()
    fx = (px - x0f).unsqueeze(1)
    fy = (py - y0f).unsqueeze(1)
    x0 = x0f.long()
    y0 = y0f.long()
    x1 = x0 + 1
    y1 = y0 + 1
    flat = img.reshape(B, C, H * W)

    def corner(yy, xx):
        yc = yy.clamp(0, H - 1)
        xc = xx.clamp(0, W - 1)
        idx = (yc * W + xc).reshape(B, 1, H * W).expand(B, C, H * W)
        v = flat.gather(2, idx).reshape(B, C, H, W)
        if border == "zeros":
            valid = (xx >= 0) & (xx <= W - 1) & (yy >= 0) & (yy <= H - 1)
            v = v * valid.to(dtype).unsqueeze(1)
        return v

    w00 = (1 - fx) * (1 - fy)
    w01 = fx * (1 - fy)
    w10 = (1 - fx) * fy
    w11 = fx * fy
    return (corner(y0, x0) * w00 + corner(y0, x1) * w01
            + corner(y1, x0) * w10 + corner(y1, x1) * w11)


def bilinear_warp(img, flow, border="clamp"):
    """Backward-warp ``img`` by ``flow``: ``out(p) = img(p + flow(p))``.

    Differentiable with respect to both arguments.  Out-of-range samples are
    clamped to the border (``border="clamp"``) or read as zero
    (``border="zeros"``).  ``flow == 0`` reproduces the input bitwise.
    """
    if border not in ("clamp", "zeros"):
        raise ValueError(f"unknown border policy {border!r}")
    if img.ndim == 3 and flow.ndim == 3:
        if flow.shape[0] != 2 or img.shape[1:] != flow.shape[1:]:
            raise ValueError(
                f"image {tuple(img.shape)} and flow {tuple(flow.shape)} disagree")
        return _warp_batched(img.unsqueeze(0), flow.unsqueeze(0), border)[0]
    if img.ndim == 4 and flow.ndim == 4:
        if flow.shape[1] != 2 or img.shape[2:] != flow.shape[2:] or img.shape[0] != flow.shape[0]:
            raise ValueError(
                f"image {tuple(img.shape)} and flow {tuple(flow.shape)} disagree")
        return _warp_batched(img, flow, border)
    raise ValueError("img and flow must both be 3-D or both be 4-D")


def compose_flow(kdiff, mask, refinement):
    """Dense flow from per-keypoint displacements: ``sum_i kdiff_i * M_i + F_ref``.

    ``mask`` must hold soft (post-softmax) weights with per-pixel channel sums
    at most ``1 + 1e-6``.  Accepts single ``((N,2), (N,H,W), (2,H,W))`` or
    batched arguments with a leading batch dimension.
    """
    squeeze = kdiff.ndim == 2
    if squeeze:
        kdiff, mask, refinement = kdiff.unsqueeze(0), mask.unsqueeze(0), refinement.unsqueeze(0)
    if kdiff.shape[1] != mask.shape[1]:
        raise ValueError(
            f"keypoint count {kdiff.shape[1]} does not match mask channels {mask.shape[1]}")
    sums = mask.sum(dim=1)
    if sums.max() > 1 + 1e-6 or mask.min() < -1e-6:
        raise ValueError("mask must be soft with per-pixel channel sums <= 1")
    out = torch.einsum("bnc,bnhw->bchw", kdiff, mask) + refinement
    return out[0] if squeeze else out


def translate_copies(img, kdiff):
    """Stack of per-keypoint translated copies of ``img``.

    Copy i equals ``bilinear_warp(img, constant field kdiff_i)`` with clamped
    borders; copies whose displacement is exactly zero are the input itself.
    ``(C,H,W) + (N,2) -> (N,C,H,W)``; batched ``(B,C,H,W) + (B,N,2) ->
    (B,N,C,H,W)``.
    """
    squeeze = img.ndim == 3
    if squeeze:
        img, kdiff = img.unsqueeze(0), kdiff.unsqueeze(0)
    B, C, H, W = img.shape
    N = kdiff.shape[1]
    dtype = img.dtype
    ys = _axis_coords(H, dtype, img.device)
    xs = _axis_coords(W, dtype, img.device)
    base = torch.stack(torch.meshgrid(ys, xs, indexing="ij")[::-1], dim=-1)  # (H,W,2) xy
    grid = base.view(1, H, W, 2) + kdiff.to(dtype).reshape(B * N, 1, 1, 2)
    flat = img.unsqueeze(1).expand(B, N, C, H, W).reshape(B * N, C, H, W)
    out = F.grid_sample(flat, grid, mode="bilinear", padding_mode="border",
                        align_corners=True).reshape(B, N, C, H, W)
    zero = (kdiff == 0).all(dim=-1)  # exact-zero shifts must reproduce img bitwise
    if bool(zero.any()):
        out = torch.where(zero.view(B, N, 1, 1, 1), img.unsqueeze(1), out)
    return out[0] if squeeze else out


# 68-landmark facial regions: (start, end inclusive, closed?, RGB color).
_REGIONS_68 = (
    ("jaw", 0, 16, False, (0.0, 0.9, 0.2)),
    ("right_brow", 17, 21, False, (0.9, 0.1, 0.1)),
    ("left_brow", 22, 26, False, (0.9, 0.5, 0.1)),
    ("nose_bridge", 27, 30, False, (0.9, 0.9, 0.1)),
    ("nose_base", 31, 35, False, (0.6, 0.9, 0.3)),
    ("right_eye", 36, 41, True, (0.1, 0.4, 0.9)),
    ("left_eye", 42, 47, True, (0.1, 0.9, 0.9)),
    ("outer_mouth", 48, 59, True, (0.9, 0.1, 0.9)),
    ("inner_mouth", 60, 67, True, (0.9, 0.4, 0.6)),
)

# index permutation mapping landmark i to its horizontal mirror counterpart
FLIP_INDEX_68 = (
    list(range(16, -1, -1))
    + list(range(26, 21, -1)) + list(range(21, 16, -1))
    + [27, 28, 29, 30]
    + list(range(35, 30, -1))
    + [45, 44, 43, 42, 47, 46] + [39, 38, 37, 36, 41, 40]
    + [54, 53, 52, 51, 50, 49, 48, 59, 58, 57, 56, 55]
    + [64, 63, 62, 61, 60, 67, 66, 65]
)


def render_keypoint_image(keypoints, height, width):
    """Deterministic RGB rendering of a keypoint set on a black canvas.

    With 68 keypoints the standard facial regions are drawn as polylines,
    each in a fixed distinct color; any other count is drawn as a single
    white polyline through consecutive points.
    """
    k = torch.as_tensor(keypoints, dtype=torch.float64)
    canvas = torch.zeros(3, height, width, dtype=torch.float64)
    if k.shape[0] == 68:
        regions = _REGIONS_68
    else:
        regions = (("all", 0, k.shape[0] - 1, False, (1.0, 1.0, 1.0)),)
    sx = (width - 1) / 2.0
    sy = (height - 1) / 2.0
    for _, lo, hi, closed, color in regions:
        idx = list(range(lo, hi + 1))
        if closed:
            idx.append(lo)
        col = torch.tensor(color, dtype=torch.float64).view(3, 1)
        for a, b in zip(idx[:-1], idx[1:]):
            pa = k[a]
            pb = k[b]
            ax, ay = (pa[0] + 1) * sx, (pa[1] + 1) * sy
            bx, by = (pb[0] + 1) * sx, (pb[1] + 1) * sy
            n = int(torch.hypot(bx - ax, by - ay).ceil().item()) * 3 + 2
            t = torch.linspace(0.0, 1.0, n, dtype=torch.float64)
            xs = torch.floor(ax + (bx - ax) * t + 0.5).long()
            ys = torch.floor(ay + (by - ay) * t + 0.5).long()
            ok = (xs >= 0) & (xs < width) & (ys >= 0) & (ys < height)
            if bool(ok.any()):
                canvas[:, ys[ok], xs[ok]] = col
    return canvas.to(k.dtype if torch.is_tensor(keypoints) else torch.get_default_dtype())


def resize(img, height, width, mode="bilinear"):
    """Resize ``(C,H,W)`` or ``(B,C,H,W)`` tensors; bilinear is align-corners."""
    squeeze = img.ndim == 3
    x = img.unsqueeze(0) if squeeze else img
    if mode == "bilinear":
        out = F.interpolate(x, size=(height, width), mode="bilinear", align_corners=True)
    elif mode == "nearest":
        out = F.interpolate(x, size=(height, width), mode="nearest")
    else:
        raise ValueError(f"unknown resize mode {mode!r}")
    return out[0] if squeeze else out


def require_hard(mask, name="mask"):
    """Raise unless every entry of ``mask`` is exactly 0 or 1."""
    if not bool(((mask == 0) | (mask == 1)).all()):
        raise ValueError(f"{name} must be hard (only 0/1 values)")
    return mask


def _check_pair(a, b):
    if a.shape != b.shape:
        raise ValueError(f"mask shapes disagree: {tuple(a.shape)} vs {tuple(b.shape)}")
    require_hard(a, "a")
    require_hard(b, "b")


def mask_union(a, b):
    _check_pair(a, b)
    return torch.maximum(a, b)


def mask_subtract(a, b):
    """``a AND NOT b`` on hard masks."""
    _check_pair(a, b)
    return a * (1 - b)


def mask_intersect(a, b):
    _check_pair(a, b)
    return a * b


def harden(mask, threshold=0.5):
    """Binarize a soft mask at ``threshold`` (values >= threshold become 1)."""
    return (mask >= threshold).to(mask.dtype)
