"""Parametric face-like image renderer for hermetic desk-scale runs.

Each identity is a fixed draw of shape and colour parameters (face
ellipse, hair, eyes, brows, nose, mouth, skin tone).  Each image of an
identity varies pose, lighting, expression, background and texture.
Rendering happens at twice the target resolution and is box-downsampled
so edges are anti-aliased.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage


@dataclass(frozen=True)
class IdentityParams:
    skin: tuple
    hair: tuple
    iris: tuple
    lips: tuple
    face_a: float  # half-width, fraction of frame
    face_b: float  # half-height
    hairline: float
    eye_dx: float
    eye_y: float
    eye_r: float
    brow_thick: float
    brow_tilt: float
    nose_len: float
    mouth_w: float
    mouth_y: float
    chin: float


def sample_identity(seed):
    rng = np.random.default_rng(seed)
    skin_base = rng.uniform([0.45, 0.30, 0.22], [0.95, 0.78, 0.65])
    return IdentityParams(
        skin=tuple(skin_base),
        hair=tuple(rng.uniform(0.03, 0.6, 3) * rng.uniform(0.5, 1.0)),
        iris=tuple(rng.uniform(0.05, 0.6, 3)),
        lips=tuple(np.clip(skin_base * rng.uniform([0.7, 0.35, 0.35], [0.95, 0.6, 0.6]), 0, 1)),
        face_a=float(rng.uniform(0.27, 0.34)),
        face_b=float(rng.uniform(0.36, 0.43)),
        hairline=float(rng.uniform(-0.22, -0.12)),
        eye_dx=float(rng.uniform(0.10, 0.15)),
        eye_y=float(rng.uniform(-0.09, -0.03)),
        eye_r=float(rng.uniform(0.035, 0.05)),
        brow_thick=float(rng.uniform(0.012, 0.03)),
        brow_tilt=float(rng.uniform(-0.25, 0.25)),
        nose_len=float(rng.uniform(0.08, 0.14)),
        mouth_w=float(rng.uniform(0.08, 0.13)),
        mouth_y=float(rng.uniform(0.17, 0.23)),
        chin=float(rng.uniform(0.0, 0.35)),
    )


def _soft(sd, softness):
    """Coverage from a signed distance (negative inside)."""
    return 1.0 / (1.0 + np.exp(np.clip(sd / softness, -50, 50)))


def _ellipse_sd(u, v, cu, cv, a, b):
    return (np.sqrt(((u - cu) / a) ** 2 + ((v - cv) / b) ** 2) - 1.0) * min(a, b)


def _blend(canvas, color, alpha):
    color = np.asarray(color, dtype=np.float64)
    return canvas * (1.0 - alpha[..., None]) + color * alpha[..., None]


def _smooth_noise(rng, size, sigma, amp):
    n = ndimage.gaussian_filter(rng.standard_normal((size, size)), sigma, mode="wrap")
    return amp * n / (n.std() + 1e-12)


def render_face(ident, rng, size=64):
    """Render one image of ``ident``; returns ``(size, size, 3)`` float64 in [0, 1]."""
    big = size * 2
    soft = 1.2 / big
    pose_rot = np.deg2rad(rng.uniform(-8, 8))
    pose_scale = rng.uniform(0.93, 1.07)
    pose_t = rng.uniform(-0.04, 0.04, 2)
    yaw = rng.uniform(-0.04, 0.04)
    mouth_open = rng.uniform(0.0, 1.0)
    eye_open = rng.uniform(0.55, 1.0)
    light_dir = rng.uniform(-1, 1, 2)
    light_amt = rng.uniform(0.1, 0.3)
    bg = rng.uniform(0.15, 0.85, 3)
    bg2 = np.clip(bg + rng.uniform(-0.25, 0.25, 3), 0, 1)

    coords = (np.arange(big) + 0.5) / big - 0.5
    vv, uu = np.meshgrid(coords, coords, indexing="ij")
    # face frame
    cu, cv = uu - pose_t[0], vv - pose_t[1]
    cos, sin = np.cos(pose_rot), np.sin(pose_rot)
    u = (cos * cu + sin * cv) / pose_scale
    v = (-sin * cu + cos * cv) / pose_scale

    t = (uu + vv) * 0.5 + 0.5
    canvas = bg[None, None, :] * (1 - t[..., None]) + bg2[None, None, :] * t[..., None]
    canvas += _smooth_noise(rng, big, 10, 0.04)[..., None]

    p = ident
    # hair mass behind the head
    hair_sd = _ellipse_sd(u, v, 0.0, -0.05, p.face_a * 1.18, p.face_b * 1.08)
    hair_alpha = _soft(hair_sd, soft) * _soft(v - 0.12, 0.02)
    hair_tex = 1.0 + _smooth_noise(rng, big, 1.5, 0.12)
    canvas = _blend(canvas, np.array(p.hair), hair_alpha)
    canvas = canvas * (1 + (hair_tex - 1)[..., None] * hair_alpha[..., None])

    # ears
    for side in (-1, 1):
        ear = _soft(_ellipse_sd(u, v, side * p.face_a * 0.98, 0.0, 0.045, 0.075), soft)
        canvas = _blend(canvas, np.array(p.skin) * 0.9, ear)

    # face, with a narrowing chin
    vb = np.where(v > 0, v * (1 + p.chin * v / p.face_b), v)
    face_sd = _ellipse_sd(u, vb, yaw, 0.0, p.face_a, p.face_b)
    face = _soft(face_sd, soft)
    shade = 1.0 + light_amt * (light_dir[0] * u / p.face_a + light_dir[1] * v / p.face_b) * 0.5
    rim = 1.0 - 0.25 * np.clip(1 + face_sd / (p.face_a * 0.35), 0, 1)
    skin = np.array(p.skin)[None, None, :] * (shade * rim)[..., None]
    skin = skin * (1 + _smooth_noise(rng, big, 3, 0.025))[..., None]
    canvas = canvas * (1 - face[..., None]) + skin * face[..., None]

    # fringe of hair over the forehead
    fringe = _soft(v - (p.hairline - 0.2 * p.face_b + 0.03 * np.cos(u * 25)), 0.01)
    fringe = fringe * _soft(hair_sd, soft) * (v < 0)
    canvas = _blend(canvas, np.array(p.hair), fringe * face)

    for side in (-1, 1):
        ex = side * p.eye_dx + yaw
        white = _soft(_ellipse_sd(u, v, ex, p.eye_y, p.eye_r * 1.5, p.eye_r * eye_open), soft)
        canvas = _blend(canvas, [0.93, 0.92, 0.9], white)
        gaze = rng.uniform(-0.3, 0.3) * p.eye_r
        iris = _soft(_ellipse_sd(u, v, ex + gaze, p.eye_y, p.eye_r * 0.75, p.eye_r * 0.75), soft) * white
        canvas = _blend(canvas, np.array(p.iris), iris)
        pupil = _soft(_ellipse_sd(u, v, ex + gaze, p.eye_y, p.eye_r * 0.33, p.eye_r * 0.33), soft) * white
        canvas = _blend(canvas, [0.03, 0.03, 0.03], pupil)
        # brow: thick arc above the eye
        bu = u - ex
        bv = v - (p.eye_y - p.eye_r * 2.1) - side * p.brow_tilt * bu + 1.5 * bu**2
        brow = _soft(np.abs(bv) - p.brow_thick, soft) * _soft(np.abs(bu) - p.eye_r * 1.8, soft)
        canvas = _blend(canvas, np.array(p.hair) * 0.8, brow)

    # nose: shaded ridge and nostril shadow
    nu = u - yaw * 1.3
    ridge = _soft(np.abs(nu - 0.012) - 0.008, soft) * _soft(np.abs(v - p.nose_len / 2) - p.nose_len / 2, soft)
    canvas = canvas * (1 - 0.18 * ridge[..., None])
    nostril = _soft(_ellipse_sd(nu, v, 0.0, p.nose_len + 0.01, 0.035, 0.012), soft)
    canvas = canvas * (1 - 0.35 * nostril[..., None])

    # mouth
    mh = 0.012 + 0.035 * mouth_open
    lips = _soft(_ellipse_sd(u, v, yaw, p.mouth_y, p.mouth_w, mh + 0.012), soft)
    canvas = _blend(canvas, np.array(p.lips), lips)
    inner = _soft(_ellipse_sd(u, v, yaw, p.mouth_y, p.mouth_w * 0.8, mh * 0.6), soft) * (mouth_open > 0.25)
    canvas = _blend(canvas, [0.25, 0.05, 0.06], inner)

    canvas = canvas + rng.normal(0, 0.008, canvas.shape)
    small = canvas.reshape(size, 2, size, 2, 3).mean(axis=(1, 3))
    return np.clip(small, 0.0, 1.0)


def make_corpus(n_identities=2, images_per_identity=200, size=64, seed=0):
    """Render a corpus; returns ``{identity_label: [images]}``."""
    corpus = {}
    for k in range(n_identities):
        ident = sample_identity([seed, k, 0])
        rng = np.random.default_rng([seed, k, 1])
        corpus[f"id{k}"] = [render_face(ident, rng, size) for _ in range(images_per_identity)]
    return corpus


def write_corpus(root, n_identities=2, images_per_identity=200, size=64, seed=0):
    """Render a corpus to ``root/<identity>/<nnnn>.png`` and return ``root``."""
    root = Path(root)
    for label, images in make_corpus(n_identities, images_per_identity, size, seed).items():
        d = root / label
        d.mkdir(parents=True, exist_ok=True)
        for i, im in enumerate(images):
            Image.fromarray(np.round(im * 255).astype(np.uint8)).save(d / f"{i:04d}.png")
    return root
