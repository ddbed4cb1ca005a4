"""Procedural multi-view face renderer and dataset reader/writer.

Every sample is a deterministic function of an identity spec and a pose spec.
The renderer is 2.5-D: a feature at face-local position ``(u, v)`` with depth
``z`` lands at ``x = tx + scale*(u*cos(yaw) + z*sin(yaw))``,
``y = ty + scale*v``, so yaw compresses the face horizontally and sweeps
deep features (nose most of all) sideways, while the silhouette stays put.
Hair is painted last and may occlude forehead, clothes and background; the
same scene rendered without the hair layer yields the underlying semantic
parse, which is exactly the inpainting ground truth a real dataset cannot
provide.

Dataset directory layout (all images 8-bit PNG)::

    <id>/<pose>.png            RGB image
    <id>/<pose>.hair.png       visible-region masks, {0,255}
    <id>/<pose>.face.png
    <id>/<pose>.forehead.png
    <id>/<pose>.clothes.png
    <id>/<pose>.bg.png
    <id>/<pose>.parse.png      hairless parse, values {0 bg, 1 face, 2 clothes}
    <id>/<pose>.kp.json        68 [x, y] pairs, normalized coordinates
    manifest.json              identities, specs, poses, split assignment
"""

import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image as PILImage

from .errors import DatasetFormatError

MANIFEST_VERSION = 1
MASK_NAMES = ("hair", "face", "forehead", "clothes", "bg")
# parse label values
PARSE_BG, PARSE_FACE, PARSE_CLOTHES = 0, 1, 2

_BROW_COLOR = (0.22, 0.14, 0.10)
_EYE_COLOR = (0.09, 0.07, 0.08)
_LIP_COLOR = (0.72, 0.30, 0.33)


@dataclass(frozen=True)
class HairSpec:
    length: float      # 0 = cropped cap, 1 = past the shoulders
    color: tuple
    waviness: float
    fringe: float      # fraction of the forehead covered
    wave_phase: float = 0.0


@dataclass(frozen=True)
class IdentitySpec:
    face_width: float      # ellipse semi-axis, normalized units
    face_height: float
    skin: tuple
    eye_dx: float
    eye_v: float
    eye_r: float
    brow_off: float
    nose_tip_v: float
    mouth_v: float
    mouth_w: float
    clothes_color: tuple
    stripe_color: tuple
    n_stripes: int
    stripe_phase: float
    hair: HairSpec
    bg_top: tuple
    bg_bottom: tuple
    bg_angle: float

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        hair = d.pop("hair")
        return cls(hair=HairSpec(**{k: tuple(v) if k == "color" else v
                                    for k, v in hair.items()}),
                   **{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


@dataclass(frozen=True)
class PoseSpec:
    yaw_deg: float     # [-60, 60], 0 = frontal
    scale: float       # [0.7, 1.3]
    tx: float          # [-0.1, 0.1]
    ty: float

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class RenderedSample:
    image: torch.Tensor      # (3,H,W) float32 in [0,1]
    masks: dict              # name -> (1,H,W) float32, hard; visible regions
    parse: torch.Tensor      # (H,W) int64, hairless semantic labels
    keypoints: torch.Tensor  # (68,2) float32, normalized

    @property
    def height(self):
        return self.image.shape[1]

    @property
    def width(self):
        return self.image.shape[2]


def sample_identity(rng):
    """Draw an identity uniformly over the documented parameter ranges."""
    skin_r = rng.uniform(0.70, 0.95)
    skin_g = skin_r * rng.uniform(0.72, 0.88)
    skin_b = skin_g * rng.uniform(0.70, 0.92)
    hair_r = rng.uniform(0.05, 0.85)
    hair_g = hair_r * rng.uniform(0.5, 1.0)
    hair_b = hair_g * rng.uniform(0.4, 1.0)
    return IdentitySpec(
        face_width=rng.uniform(0.26, 0.38),
        face_height=rng.uniform(0.38, 0.50),
        skin=(skin_r, skin_g, skin_b),
        eye_dx=rng.uniform(0.10, 0.16),
        eye_v=rng.uniform(-0.18, -0.08),
        eye_r=rng.uniform(0.025, 0.045),
        brow_off=rng.uniform(0.05, 0.09),
        nose_tip_v=rng.uniform(0.02, 0.10),
        mouth_v=rng.uniform(0.18, 0.28),
        mouth_w=rng.uniform(0.09, 0.15),
        clothes_color=tuple(rng.uniform(0.10, 0.90, 3).tolist()),
        stripe_color=tuple(rng.uniform(0.10, 0.90, 3).tolist()),
        n_stripes=int(rng.integers(0, 4)),
        stripe_phase=rng.uniform(0.0, 1.0),
        hair=HairSpec(
            length=rng.uniform(0.0, 1.0),
            color=(hair_r, hair_g, hair_b),
            waviness=rng.uniform(0.0, 1.0),
            fringe=rng.uniform(0.0, 1.0),
            wave_phase=rng.uniform(0.0, 1.0),
        ),
        bg_top=tuple(rng.uniform(0.20, 1.00, 3).tolist()),
        bg_bottom=tuple(rng.uniform(0.20, 1.00, 3).tolist()),
        bg_angle=rng.uniform(0.0, 2 * math.pi),
    )


def sample_pose(rng):
    return PoseSpec(
        yaw_deg=rng.uniform(-60.0, 60.0),
        scale=rng.uniform(0.7, 1.3),
        tx=rng.uniform(-0.1, 0.1),
        ty=rng.uniform(-0.1, 0.1),
    )


# ---------------------------------------------------------------- rasterizer

def _pixel_grid(height, width):
    xs = 2.0 * np.arange(width) / (width - 1) - 1.0
    ys = 2.0 * np.arange(height) / (height - 1) - 1.0
    X, Y = np.meshgrid(xs, ys)
    return X.ravel(), Y.ravel()


def _polygon_mask(px, py, X, Y, shape):
    """Even-odd fill by vectorized crossing counting."""
    x1, y1 = px, py
    x2, y2 = np.roll(px, -1), np.roll(py, -1)
    cond = (y1[:, None] > Y) != (y2[:, None] > Y)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (Y - y1[:, None]) / (y2 - y1)[:, None]
        xint = x1[:, None] + t * (x2 - x1)[:, None]
        cross = cond & (X < xint)
    return np.bitwise_xor.reduce(cross, axis=0).reshape(shape)


class _Mapper:
    def __init__(self, pose):
        phi = math.radians(pose.yaw_deg)
        self.c = math.cos(phi)
        self.s = math.sin(phi)
        self.scale = pose.scale
        self.tx = pose.tx
        self.ty = pose.ty

    def __call__(self, u, v, z=0.0):
        u = np.asarray(u, dtype=np.float64)
        v = np.asarray(v, dtype=np.float64)
        z = np.broadcast_to(np.asarray(z, dtype=np.float64), u.shape)
        x = self.tx + self.scale * (u * self.c + z * self.s)
        y = self.ty + self.scale * v
        return x, y

    def y_of(self, v):
        return self.ty + self.scale * v


def _keypoints(identity, pose):
    m = _Mapper(pose)
    ax, ay = identity.face_width, identity.face_height
    us, vs, zs = [], [], []

    def add(u, v, z):
        us.append(u)
        vs.append(v)
        zs.append(z)

    for i in range(17):                                   # jaw
        t = math.pi + (8 - i) / 8.0 * 1.67
        add(ax * math.sin(t), -ay * math.cos(t), 0.0)
    for side in (-1, 1):                                  # brows 17-21, 22-26
        for j in range(5):
            add(side * identity.eye_dx + (j - 2) * 1.1 * identity.eye_r,
                identity.eye_v - identity.brow_off, 0.35 * ax)
    bridge_v = np.linspace(identity.eye_v + 0.01, identity.nose_tip_v, 4)
    bridge_z = np.linspace(0.45, 0.90, 4) * ax
    for v, z in zip(bridge_v, bridge_z):                  # nose bridge 27-30
        add(0.0, float(v), float(z))
    for j in range(5):                                    # nose base 31-35
        add((j - 2) * 0.022, identity.nose_tip_v + 0.03, 0.60 * ax)
    for side in (-1, 1):                                  # eyes 36-41, 42-47
        for deg in (180, 120, 60, 0, 300, 240):
            th = math.radians(deg)
            add(side * identity.eye_dx + identity.eye_r * 1.45 * math.cos(th),
                identity.eye_v - identity.eye_r * 0.75 * math.sin(th), 0.35 * ax)
    for j in range(12):                                   # outer mouth 48-59
        th = math.radians(180 - j * 30)
        add(identity.mouth_w * math.cos(th),
            identity.mouth_v - 0.42 * identity.mouth_w * math.sin(th), 0.50 * ax)
    for j in range(8):                                    # inner mouth 60-67
        th = math.radians(180 - j * 45)
        add(0.55 * identity.mouth_w * math.cos(th),
            identity.mouth_v - 0.23 * identity.mouth_w * math.sin(th), 0.50 * ax)

    x, y = m(np.array(us), np.array(vs), np.array(zs))
    return np.stack([x, y], axis=1)


def _face_polygon(identity, m, n=160):
    t = np.linspace(0.0, 2 * math.pi, n, endpoint=False)
    return m(identity.face_width * np.sin(t), -identity.face_height * np.cos(t))


def _clothes_polygon(identity, m):
    ax, ay = identity.face_width, identity.face_height
    u = np.array([-2.5 * ax, -2.5 * ax, -0.5 * ax, 0.5 * ax, 2.5 * ax, 2.5 * ax])
    v = np.array([3.0, 1.22 * ay, 0.94 * ay, 0.94 * ay, 1.22 * ay, 3.0])
    return m(u, v, 0.12 * ax)


def _hair_polygon(identity, m):
    ax, ay = identity.face_width, identity.face_height
    hair = identity.hair
    Ax, Ay = 1.32 * ax, 1.30 * ay
    t_side = 1.49 + 0.93 * hair.length
    t = np.linspace(-t_side, t_side, 140)
    r = 1.0 + 0.05 * hair.waviness * np.sin(8.5 * t + 2 * math.pi * hair.wave_phase)
    arc_u = Ax * r * np.sin(t)
    arc_v = -Ay * r * np.cos(t)
    drop = 0.95 * ay * hair.length
    v_low_l = arc_v[0] + drop
    v_low_r = arc_v[-1] + drop
    scoop_v = 0.92 * ay
    mid_v = scoop_v if min(v_low_l, v_low_r) > scoop_v else max(v_low_l, v_low_r)
    u = np.concatenate([[arc_u[0] * 0.96], arc_u, [arc_u[-1] * 0.96, 0.0]])
    v = np.concatenate([[v_low_l], arc_v, [v_low_r, mid_v]])
    return m(u, v)


def _ellipse_polygon(m, cu, cv, ru, rv, z, n=24):
    t = np.linspace(0.0, 2 * math.pi, n, endpoint=False)
    return m(cu + ru * np.cos(t), cv + rv * np.sin(t), z)


def _render_arrays(identity, pose, height, width, with_hair=True):
    """Labels and image as float64 numpy arrays.

    Label codes: 0 bg, 1 clothes, 2 face, 3 forehead, 4 hair.
    """
    m = _Mapper(pose)
    X, Y = _pixel_grid(height, width)
    shape = (height, width)
    ax, ay = identity.face_width, identity.face_height

    proj = (X * math.cos(identity.bg_angle) + Y * math.sin(identity.bg_angle))
    g = ((proj / math.sqrt(2.0)) + 1.0) / 2.0
    top = np.array(identity.bg_top)
    bottom = np.array(identity.bg_bottom)
    img = (top[:, None] + (bottom - top)[:, None] * g).reshape(3, height, width)
    labels = np.zeros(shape, dtype=np.int64)

    def paint(mask, color):
        img[:, mask] = np.asarray(color, dtype=np.float64)[:, None]

    clothes = _polygon_mask(*_clothes_polygon(identity, m), X, Y, shape)
    labels[clothes] = 1
    paint(clothes, identity.clothes_color)
    ygrid = Y.reshape(shape)
    pitch, band = 0.55 * ay, 0.24 * ay
    for k in range(identity.n_stripes):
        v_lo = 0.94 * ay + (k + identity.stripe_phase) * pitch
        stripe = clothes & (ygrid >= m.y_of(v_lo)) & (ygrid < m.y_of(v_lo + band))
        paint(stripe, identity.stripe_color)

    face = _polygon_mask(*_face_polygon(identity, m), X, Y, shape)
    v_fh = identity.eye_v - 0.5 * identity.brow_off
    forehead = face & (ygrid < m.y_of(v_fh))
    labels[face] = 2
    labels[forehead] = 3
    paint(face, identity.skin)

    # facial features: paint only, face-labelled throughout
    for side in (-1, 1):
        u0 = side * identity.eye_dx - 2.4 * identity.eye_r
        u1 = side * identity.eye_dx + 2.4 * identity.eye_r
        vb = identity.eye_v - identity.brow_off
        brow = _polygon_mask(*m(np.array([u0, u1, u1, u0]),
                                np.array([vb - 0.013, vb - 0.013, vb + 0.013, vb + 0.013]),
                                0.35 * ax), X, Y, shape)
        paint(brow & face, _BROW_COLOR)
        eye = _polygon_mask(*_ellipse_polygon(m, side * identity.eye_dx, identity.eye_v,
                                              1.45 * identity.eye_r, 0.75 * identity.eye_r,
                                              0.35 * ax), X, Y, shape)
        paint(eye & face, _EYE_COLOR)
    ntv = identity.nose_tip_v
    nose = _polygon_mask(*m(np.array([-0.018, 0.018, 0.030, 0.0, -0.030]),
                            np.array([identity.eye_v + 0.04, identity.eye_v + 0.04,
                                      ntv, ntv + 0.035, ntv]),
                            np.array([0.5 * ax, 0.5 * ax, 0.85 * ax, 0.85 * ax, 0.85 * ax])),
                         X, Y, shape)
    paint(nose & face, tuple(0.82 * c for c in identity.skin))
    mouth = _polygon_mask(*_ellipse_polygon(m, 0.0, identity.mouth_v, identity.mouth_w,
                                            0.42 * identity.mouth_w, 0.5 * ax),
                          X, Y, shape)
    paint(mouth & face, _LIP_COLOR)

    if with_hair:
        hair_outer = _polygon_mask(*_hair_polygon(identity, m), X, Y, shape)
        fringe_v = -ay + identity.hair.fringe * (v_fh + ay)
        fringe = face & (ygrid < m.y_of(fringe_v))
        hair = (hair_outer & ~face) | fringe
        labels[hair] = 4
        xgrid = X.reshape(shape)
        strands = 1.0 + 0.07 * np.sin((xgrid * 31 + ygrid * 7)
                                      * (1 + 0.8 * identity.hair.waviness)
                                      + 2 * math.pi * identity.hair.wave_phase)
        hair_color = np.asarray(identity.hair.color)[:, None] * strands[None, hair]
        img[:, hair] = hair_color

    np.clip(img, 0.0, 1.0, out=img)
    return img, labels


def render(identity, pose, height=64, width=64):
    """Deterministic raster of one identity under one pose."""
    img, labels = _render_arrays(identity, pose, height, width, with_hair=True)
    _, labels_bald = _render_arrays(identity, pose, height, width, with_hair=False)
    parse = np.full(labels_bald.shape, PARSE_BG, dtype=np.int64)
    parse[(labels_bald == 2) | (labels_bald == 3)] = PARSE_FACE
    parse[labels_bald == 1] = PARSE_CLOTHES
    masks = {
        "hair": labels == 4,
        "face": labels == 2,
        "forehead": labels == 3,
        "clothes": labels == 1,
        "bg": labels == 0,
    }
    return RenderedSample(
        image=torch.from_numpy(img.astype(np.float32)),
        masks={k: torch.from_numpy(v.astype(np.float32)).unsqueeze(0)
               for k, v in masks.items()},
        parse=torch.from_numpy(parse),
        keypoints=torch.from_numpy(_keypoints(identity, pose).astype(np.float32)),
    )


def sim_ground_truth(parse, inpaint_mask):
    """One-hot (4,H,W) ground truth for the semantic inpaint mask.

    Channel order: face, clothes, background, unknown.  The renderer's
    hairless parse labels every pixel, so the unknown channel is empty on
    synthetic data; it exists for ingested real data whose under-hair labels
    are unavailable.
    """
    squeeze = parse.ndim == 2
    p = parse.unsqueeze(0) if squeeze else parse
    m = inpaint_mask.unsqueeze(0) if squeeze else inpaint_mask
    gt = torch.stack([p == PARSE_FACE, p == PARSE_CLOTHES, p == PARSE_BG,
                      torch.zeros_like(p, dtype=torch.bool)], dim=1).to(m.dtype)
    gt = gt * m.unsqueeze(1) if m.ndim == 3 else gt * m
    return gt[0] if squeeze else gt


def make_pair(identity, pose_a, pose_b, height=64, width=64):
    """Two views of the same identity and hairstyle."""
    return (render(identity, pose_a, height, width),
            render(identity, pose_b, height, width))


def make_transfer_triplet(id_src, id_tgt, pose_src, pose_tgt, height=64, width=64):
    """Source, target, and the cross-identity ground truth: the source
    identity under the source pose wearing the target's hair."""
    source = render(id_src, pose_src, height, width)
    target = render(id_tgt, pose_tgt, height, width)
    gt_identity = dataclasses.replace(id_src, hair=id_tgt.hair)
    ground_truth = render(gt_identity, pose_src, height, width)
    return source, target, ground_truth


# ---------------------------------------------------------------- dataset IO

def _save_png(path, array):
    PILImage.fromarray(array).save(path, format="PNG")


def write_sample(directory, pose_idx, sample):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    stem = str(pose_idx)
    img8 = np.clip(np.rint(sample.image.numpy() * 255.0), 0, 255).astype(np.uint8)
    _save_png(directory / f"{stem}.png", np.ascontiguousarray(img8.transpose(1, 2, 0)))
    for name in MASK_NAMES:
        m8 = (sample.masks[name][0].numpy() * 255.0).astype(np.uint8)
        _save_png(directory / f"{stem}.{name}.png", m8)
    _save_png(directory / f"{stem}.parse.png", sample.parse.numpy().astype(np.uint8))
    with open(directory / f"{stem}.kp.json", "w") as f:
        json.dump([[float(x), float(y)] for x, y in sample.keypoints.tolist()], f)


def write_dataset(root, records, resolution, seed=None):
    """Write rendered samples and a manifest.

    ``records`` is a list of ``(identity_id, split, IdentitySpec,
    [PoseSpec, ...])``; every pose of every identity is rendered and saved.
    """
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    manifest = {"format_version": MANIFEST_VERSION, "resolution": resolution,
                "n_keypoints": 68, "seed": seed, "identities": []}
    for identity_id, split, spec, poses in records:
        for pose_idx, pose in enumerate(poses):
            sample = render(spec, pose, resolution, resolution)
            write_sample(root / identity_id, pose_idx, sample)
        manifest["identities"].append({
            "id": identity_id,
            "split": split,
            "identity": spec.to_dict(),
            "poses": [p.to_dict() for p in poses],
        })
    with open(root / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
    return SynthDataset(root)


def generate_dataset(root, n_identities, n_poses, resolution=64, seed=0,
                     train_fraction=0.8):
    """Sample identities and poses, render everything, write it out."""
    rng = np.random.default_rng(seed)
    n_train = round(n_identities * train_fraction)
    records = []
    for i in range(n_identities):
        spec = sample_identity(rng)
        poses = [sample_pose(rng) for _ in range(n_poses)]
        split = "train" if i < n_train else "val"
        records.append((f"id{i:04d}", split, spec, poses))
    return write_dataset(root, records, resolution, seed=seed)


def _load_png(path, sample_id):
    if not path.exists():
        raise DatasetFormatError(f"sample {sample_id}: missing file {path.name}")
    try:
        return np.asarray(PILImage.open(path))
    except Exception as exc:
        raise DatasetFormatError(f"sample {sample_id}: unreadable {path.name}: {exc}")


class SynthDataset:
    """Read handle over a written dataset directory; samples load lazily and
    are cached."""

    def __init__(self, root, cache=True):
        self.root = Path(root)
        manifest_path = self.root / "manifest.json"
        if not manifest_path.exists():
            raise DatasetFormatError(f"no manifest.json under {self.root}")
        with open(manifest_path) as f:
            self.manifest = json.load(f)
        if self.manifest.get("format_version") != MANIFEST_VERSION:
            raise DatasetFormatError(
                f"unsupported manifest version {self.manifest.get('format_version')}")
        self._by_id = {e["id"]: e for e in self.manifest["identities"]}
        self._cache = {} if cache else None

    @property
    def resolution(self):
        return self.manifest["resolution"]

    @property
    def n_keypoints(self):
        return self.manifest["n_keypoints"]

    def identities(self, split=None):
        return [e["id"] for e in self.manifest["identities"]
                if split is None or e["split"] == split]

    def entries(self, split=None):
        out = []
        for e in self.manifest["identities"]:
            if split is None or e["split"] == split:
                out.extend((e["id"], i) for i in range(len(e["poses"])))
        return out

    def identity_spec(self, identity_id):
        return IdentitySpec.from_dict(self._by_id[identity_id]["identity"])

    def pose_spec(self, identity_id, pose_idx):
        return PoseSpec.from_dict(self._by_id[identity_id]["poses"][pose_idx])

    def n_poses(self, identity_id):
        return len(self._by_id[identity_id]["poses"])

    def sample(self, identity_id, pose_idx):
        key = (identity_id, pose_idx)
        if self._cache is not None and key in self._cache:
            return self._cache[key]
        sid = f"{identity_id}:{pose_idx}"
        directory = self.root / identity_id
        stem = str(pose_idx)
        img = _load_png(directory / f"{stem}.png", sid).astype(np.float32) / 255.0
        masks = {}
        for name in MASK_NAMES:
            arr = _load_png(directory / f"{stem}.{name}.png", sid)
            masks[name] = torch.from_numpy((arr > 127).astype(np.float32)).unsqueeze(0)
        parse = torch.from_numpy(
            _load_png(directory / f"{stem}.parse.png", sid).astype(np.int64))
        kp_path = directory / f"{stem}.kp.json"
        if not kp_path.exists():
            raise DatasetFormatError(f"sample {sid}: missing file {kp_path.name}")
        with open(kp_path) as f:
            kp = torch.tensor(json.load(f), dtype=torch.float32)
        sample = RenderedSample(
            image=torch.from_numpy(np.ascontiguousarray(img.transpose(2, 0, 1))),
            masks=masks, parse=parse, keypoints=kp)
        if self._cache is not None:
            self._cache[key] = sample
        return sample


def read_dataset(root, cache=True):
    return SynthDataset(root, cache=cache)
