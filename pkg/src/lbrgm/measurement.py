"""Linear measurement operators (identity, inpainting mask, block downsampling)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensorcore as tc
from .rng import make_rng, normal

KINDS = ("identity", "mask", "downsample")


class OpSpecError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class MeasurementOp:
    kind: str
    mask: np.ndarray | None = None   # (H, W) bool, True = observed
    factor: int = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown operator kind {self.kind!r}")
        if self.kind == "mask":
            if self.mask is None or self.mask.ndim != 2:
                raise ValueError("mask operator needs a 2-D boolean mask")
            m = np.array(self.mask, dtype=bool)
            m.setflags(write=False)
            object.__setattr__(self, "mask", m)
        if self.kind == "downsample" and self.factor < 1:
            raise ValueError("downsample factor must be a positive integer")

    def out_shape(self, shape: tuple[int, int, int]) -> tuple[int, int, int]:
        self.check_input(shape)
        h, w, c = shape
        if self.kind == "downsample":
            return (h // self.factor, w // self.factor, c)
        return tuple(shape)

    def check_input(self, shape) -> None:
        if len(shape) != 3:
            raise tc.ShapeError(f"expected an (H, W, C) image, got shape {tuple(shape)}")
        h, w, _ = shape
        if self.kind == "mask" and self.mask.shape != (h, w):
            raise tc.ShapeError(f"mask shape {self.mask.shape} does not match image {h}x{w}")
        if self.kind == "downsample" and (h % self.factor or w % self.factor):
            raise tc.ShapeError(f"factor {self.factor} does not divide {h}x{w}")

    def observed(self, shape) -> np.ndarray:
        """Boolean array of observation entries that carry data (for noise and counting)."""
        out = self.out_shape(shape)
        if self.kind == "mask":
            return np.broadcast_to(self.mask[:, :, None], out)
        return np.ones(out, dtype=bool)

    def describe(self) -> str:
        if self.kind == "downsample":
            return f"down:{self.factor}"
        if self.kind == "mask":
            return f"mask({int(self.mask.sum())}/{self.mask.size} observed)"
        return "identity"


def identity() -> MeasurementOp:
    return MeasurementOp("identity")


def downsample(k: int) -> MeasurementOp:
    return MeasurementOp("downsample", factor=int(k))


def mask_op(mask) -> MeasurementOp:
    return MeasurementOp("mask", mask=np.asarray(mask, dtype=bool))


def half_mask(h: int, w: int) -> np.ndarray:
    m = np.ones((h, w), dtype=bool)
    m[:, w // 2:] = False
    return m


def apply(op: MeasurementOp, image):
    """A x. Returns a Var when given a Var."""
    x = tc.const(image)
    op.check_input(x.value.shape)
    if op.kind == "identity":
        out = tc.mul(x, 1.0)
    elif op.kind == "mask":
        out = tc.mul(x, op.mask[:, :, None].astype(np.float64))
    else:
        out = tc.block_pool(x, op.factor)
    return out if isinstance(image, tc.Var) else out.value.copy()


def adjoint(op: MeasurementOp, obs) -> np.ndarray:
    u = np.asarray(obs, dtype=np.float64)
    if u.ndim != 3:
        raise tc.ShapeError(f"expected an (h, w, C) observation, got shape {u.shape}")
    if op.kind == "identity":
        return u.copy()
    if op.kind == "mask":
        if u.shape[:2] != op.mask.shape:
            raise tc.ShapeError(f"observation shape {u.shape} does not match mask {op.mask.shape}")
        return u * op.mask[:, :, None]
    k = op.factor
    return np.repeat(np.repeat(u, k, axis=0), k, axis=1) / (k * k)


@dataclass(frozen=True)
class DegradeConfig:
    op: MeasurementOp
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")


def degrade(cfg: DegradeConfig, x) -> np.ndarray:
    """y = A x + e, e ~ N(0, sigma^2) on every observed entry (row-major draw order)."""
    y = apply(cfg.op, np.asarray(x, dtype=np.float64))
    if cfg.noise_sigma > 0:
        obs = cfg.op.observed(np.shape(x))
        y[obs] += normal(make_rng(cfg.seed), (int(obs.sum()),), cfg.noise_sigma)
    return y


def parse_op_spec(text: str, shape=None) -> MeasurementOp:
    """Parse ``identity | half | patch:x,y,w,h | down:k``.

    ``shape`` is the (H, W[, C]) of the images the op will act on; masks need it.
    """
    text = text.strip()
    name, _, arg = text.partition(":")
    if name == "identity" and not arg:
        return identity()
    if name == "down":
        try:
            k = int(arg)
        except ValueError:
            raise OpSpecError(f"bad downsample factor {arg!r} in {text!r}") from None
        if k < 1:
            raise OpSpecError(f"downsample factor must be >= 1, got {k}")
        return downsample(k)
    if name in ("half", "patch"):
        if shape is None:
            raise OpSpecError(f"operator {name!r} needs the image shape")
        h, w = int(shape[0]), int(shape[1])
        if name == "half":
            if arg:
                raise OpSpecError(f"unexpected argument {arg!r} for 'half'")
            return mask_op(half_mask(h, w))
        fields = arg.split(",")
        if len(fields) != 4:
            raise OpSpecError(f"patch needs x,y,w,h, got {arg!r}")
        try:
            px, py, pw, ph = (int(f) for f in fields)
        except ValueError:
            bad = next(f for f in fields if not f.strip().lstrip("-").isdigit())
            raise OpSpecError(f"bad patch coordinate {bad!r}") from None
        if px < 0 or py < 0 or pw < 1 or ph < 1 or px + pw > w or py + ph > h:
            raise OpSpecError(f"patch {px},{py},{pw},{ph} out of bounds for {h}x{w} image")
        m = np.ones((h, w), dtype=bool)
        m[py:py + ph, px:px + pw] = False
        return mask_op(m)
    raise OpSpecError(f"unknown operator {name!r} in {text!r}")
