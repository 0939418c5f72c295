"""Toy style-based generator: mapping network and modulated dense synthesis."""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import tensorcore as tc
from .rng import make_rng, normal

DEMOD_EPS = 1e-8
MAGIC = b"LBGM"
FORMAT_VERSION = 1


class ModelFormatError(ValueError):
    pass


def default_hidden_dims(num_layers: int, out_size: int, base: int = 32, cap: int = 256) -> tuple[int, ...]:
    widths = [min(base * 2 ** i, cap) for i in range(num_layers - 1)]
    return tuple(widths) + (out_size,)


@dataclass(frozen=True)
class GeneratorArch:
    d_z: int = 16
    d_w: int = 16
    mapping_layers: int = 8
    mapping_width: int = 64
    num_layers: int = 6
    out_shape: tuple[int, int, int] = (32, 32, 1)
    hidden_dims: tuple[int, ...] = ()

    def __post_init__(self):
        for name in ("d_z", "d_w", "mapping_layers", "mapping_width", "num_layers"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if len(self.out_shape) != 3 or min(self.out_shape) < 1:
            raise ValueError(f"bad out_shape {self.out_shape}")
        if not self.hidden_dims:
            object.__setattr__(self, "hidden_dims", default_hidden_dims(self.num_layers, self.out_size))
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        object.__setattr__(self, "out_shape", tuple(int(s) for s in self.out_shape))
        if len(self.hidden_dims) != self.num_layers:
            raise ValueError("hidden_dims must have one entry per synthesis layer")
        if min(self.hidden_dims) < 1:
            raise ValueError("hidden_dims must be positive")
        if self.hidden_dims[-1] != self.out_size:
            raise ValueError(f"last hidden dim {self.hidden_dims[-1]} != H*W*C = {self.out_size}")

    @property
    def out_size(self) -> int:
        h, w, c = self.out_shape
        return h * w * c

    def mapping_dims(self) -> list[tuple[int, int]]:
        """(in, out) per mapping layer."""
        dims = [self.d_z] + [self.mapping_width] * (self.mapping_layers - 1) + [self.d_w]
        return list(zip(dims[:-1], dims[1:]))

    def synthesis_dims(self) -> list[tuple[int, int]]:
        ins = (self.hidden_dims[0],) + self.hidden_dims[:-1]
        return list(zip(ins, self.hidden_dims))


@dataclass(frozen=True)
class StyleLayer:
    affine: np.ndarray        # (in, d_w)
    affine_bias: np.ndarray   # (in,)
    weight: np.ndarray        # (out, in)
    bias: np.ndarray          # (out,)
    weight_sq: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "weight_sq", self.weight * self.weight)


@dataclass(frozen=True)
class GeneratorWeights:
    arch: GeneratorArch
    mapping: tuple[tuple[np.ndarray, np.ndarray], ...]
    const_input: np.ndarray
    layers: tuple[StyleLayer, ...]

    def arrays(self) -> list[np.ndarray]:
        """All weight arrays in declaration (file) order."""
        out = []
        for w, b in self.mapping:
            out += [w, b]
        out.append(self.const_input)
        for layer in self.layers:
            out += [layer.affine, layer.affine_bias, layer.weight, layer.bias]
        return out

    def __post_init__(self):
        arch = self.arch
        if len(self.mapping) != arch.mapping_layers or len(self.layers) != arch.num_layers:
            raise ModelFormatError("layer count inconsistent with arch")
        expected = _expected_shapes(arch)
        for arr, shape in zip(self.arrays(), expected):
            if arr.shape != shape:
                raise ModelFormatError(f"array shape {arr.shape} inconsistent with arch (expected {shape})")
            if not np.all(np.isfinite(arr)):
                raise ModelFormatError("non-finite weight")


def _expected_shapes(arch: GeneratorArch) -> list[tuple[int, ...]]:
    shapes = []
    for fan_in, fan_out in arch.mapping_dims():
        shapes += [(fan_out, fan_in), (fan_out,)]
    shapes.append((arch.hidden_dims[0],))
    for fan_in, fan_out in arch.synthesis_dims():
        shapes += [(fan_in, arch.d_w), (fan_in,), (fan_out, fan_in), (fan_out,)]
    return shapes


def _assemble(arch: GeneratorArch, arrays: list[np.ndarray]) -> GeneratorWeights:
    for a in arrays:
        a.setflags(write=False)
    it = iter(arrays)
    mapping = tuple((next(it), next(it)) for _ in range(arch.mapping_layers))
    const_input = next(it)
    layers = tuple(StyleLayer(next(it), next(it), next(it), next(it)) for _ in range(arch.num_layers))
    return GeneratorWeights(arch, mapping, const_input, layers)


LRELU_GAIN = float(np.sqrt(2.0 / (1.0 + tc.LRELU_SLOPE ** 2)))


CONST_STD = 2.0


def init_weights(arch: GeneratorArch, seed: int, mapping_gain: float = LRELU_GAIN,
                 const_std: float = CONST_STD) -> GeneratorWeights:
    """Seeded weights, drawn in file order.

    Matrices and biases are N(0, 1/fan_in); mapping matrices are additionally
    scaled by ``mapping_gain`` so the style spread survives eight lrelu layers.
    Demodulation is linear in the layer input, so ``const_std`` sets how much
    the constant input outweighs the per-layer biases; 2 gives varied samples
    that remain easy to invert. Pass ``mapping_gain=1, const_std=1`` for the
    plain initialisation.

    Values are rounded to float32 so the model file round-trips bit-exactly.
    """
    rng = make_rng(seed)
    stds = []
    for fan_in, _ in arch.mapping_dims():
        stds += [mapping_gain * fan_in ** -0.5, fan_in ** -0.5]
    stds.append(const_std)
    for fan_in, _ in arch.synthesis_dims():
        stds += [arch.d_w ** -0.5] * 2 + [fan_in ** -0.5] * 2
    arrays = [normal(rng, shape, std).astype(np.float32).astype(np.float64)
              for shape, std in zip(_expected_shapes(arch), stds)]
    return _assemble(arch, arrays)


# -- forward passes -----------------------------------------------------------

def _mapping(weights: GeneratorWeights, z: tc.Var) -> tc.Var:
    h = z
    for w, b in weights.mapping:
        h = tc.lrelu(tc.matmul(h, w.T) + b)
    return h


def mapping_forward(weights: GeneratorWeights, z):
    """M(z). Accepts a single latent (d_z,) or a batch (n, d_z)."""
    zz = tc.const(z)
    if zz.value.shape[-1] != weights.arch.d_z:
        raise tc.ShapeError(f"latent has size {zz.value.shape[-1]}, expected {weights.arch.d_z}")
    out = _mapping(weights, zz)
    return out if isinstance(z, tc.Var) else out.value


def modulated_dense(x, style, layer: StyleLayer, demod_eps: float = DEMOD_EPS, with_bias: bool = True) -> tc.Var:
    """One modulated/demodulated dense layer, before the nonlinearity."""
    num = tc.matmul(layer.weight, x * style)
    den = tc.sqrt(tc.matmul(layer.weight_sq, tc.square(style)) + demod_eps)
    u = num / den
    return u + layer.bias if with_bias else u


def _synthesis(weights: GeneratorWeights, w_plus: tc.Var) -> tc.Var:
    arch = weights.arch
    x = tc.const(weights.const_input)
    for i, layer in enumerate(weights.layers):
        style = tc.matmul(layer.affine, w_plus[i]) + layer.affine_bias
        u = modulated_dense(x, style, layer)
        x = tc.lrelu(u) if i < arch.num_layers - 1 else tc.sigmoid(u)
    return tc.reshape(x, arch.out_shape)


def synthesis_forward(weights: GeneratorWeights, w_plus):
    """G(w+) for an (L, d_w) style stack; returns an (H, W, C) image in (0, 1)."""
    ww = tc.const(w_plus)
    arch = weights.arch
    if ww.value.shape != (arch.num_layers, arch.d_w):
        raise tc.ShapeError(f"style stack has shape {ww.value.shape}, "
                            f"expected {(arch.num_layers, arch.d_w)}")
    out = _synthesis(weights, ww)
    return out if isinstance(w_plus, tc.Var) else out.value


def synthesis_tied(weights: GeneratorWeights, w):
    """G with the same style vector fed to every layer."""
    ww = tc.const(w)
    out = synthesis_forward(weights, tc.tile_rows(ww, weights.arch.num_layers))
    return out if isinstance(w, tc.Var) else out.value


def generate(weights: GeneratorWeights, z):
    """G(M(z)) with the mapped style shared across layers."""
    zz = tc.const(z)
    out = synthesis_tied(weights, mapping_forward(weights, zz))
    return out if isinstance(z, tc.Var) else out.value


def sample_image(weights: GeneratorWeights, seed: int) -> tuple[np.ndarray, np.ndarray]:
    z = normal(make_rng(seed), (weights.arch.d_z,))
    return generate(weights, z), z


# -- model file -----------------------------------------------------------------

def serialize_model(weights: GeneratorWeights) -> bytes:
    arch = weights.arch
    h, w, c = arch.out_shape
    parts = [MAGIC, struct.pack("<I", FORMAT_VERSION),
             struct.pack("<8I", arch.d_z, arch.d_w, arch.mapping_layers, arch.mapping_width,
                         arch.num_layers, h, w, c),
             struct.pack(f"<{arch.num_layers}I", *arch.hidden_dims)]
    for arr in weights.arrays():
        parts.append(struct.pack("<Q", arr.size))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def deserialize_model(data: bytes) -> GeneratorWeights:
    pos = 0

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(data):
            raise ModelFormatError("unexpected end of model file")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    if take(4) != MAGIC:
        raise ModelFormatError("bad magic")
    (version,) = struct.unpack("<I", take(4))
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"version mismatch: file has {version}, expected {FORMAT_VERSION}")
    d_z, d_w, f, mw, n_layers, h, w, c = struct.unpack("<8I", take(32))
    hidden = struct.unpack(f"<{n_layers}I", take(4 * n_layers))
    try:
        arch = GeneratorArch(d_z, d_w, f, mw, n_layers, (h, w, c), hidden)
    except ValueError as exc:
        raise ModelFormatError(f"inconsistent arch block: {exc}") from exc
    arrays = []
    for shape in _expected_shapes(arch):
        (count,) = struct.unpack("<Q", take(8))
        if count != int(np.prod(shape)):
            raise ModelFormatError(f"array of {count} elements inconsistent with expected shape {shape}")
        arr = np.frombuffer(take(4 * count), dtype="<f4").astype(np.float64).reshape(shape)
        arrays.append(arr)
    if pos != len(data):
        raise ModelFormatError("trailing bytes after model payload")
    return _assemble(arch, arrays)


def save_model(weights: GeneratorWeights, path) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize_model(weights))


def load_model(path) -> GeneratorWeights:
    with open(path, "rb") as fh:
        return deserialize_model(fh.read())
