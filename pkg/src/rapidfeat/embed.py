"""Forward evaluation of the nested voxel autoencoder and its losses.

The outer stage is voxel set attention: pointwise features are projected to
keys and values, cross-attended against a small set of latent queries with a
softmax computed independently inside each voxel group, and scatter-summed
into a voxel-wise tensor. The inner stage compresses the feature width with
linear+batchnorm stages, exchanges information between neighboring voxels
with two depthwise 3x3x3 convolutions over the sparse voxel grid, and
reconstructs the width with linear stages. The point decoder broadcasts
voxel features back to points and attends them against point-side queries.

Everything here is pure forward math with explicit weights; there is no
training loop. Reductions run in a fixed order so results do not depend on
scheduling.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from itertools import product
from typing import Optional, Union

import numpy as np

from .cloud import PointCloud
from .errors import ContractError
from . import scene_io

_ACTIVATIONS = {
    "relu": lambda x: np.maximum(x, 0.0),
    "identity": lambda x: x,
    "tanh": np.tanh,
}


@dataclass(frozen=True)
class EmbeddingDims:
    """Shape parameters of the autoencoder.

    latents   number of latent queries l
    width     feature width d of the outer stage
    reduced   compressed width d' of the inner stage (at most d)
    stages    number of inner encoder stages
    activation  nonlinearity between the depthwise convolutions
    """

    latents: int = 4
    width: int = 16
    reduced: int = 8
    stages: int = 2
    activation: str = "relu"

    def __post_init__(self) -> None:
        if min(self.latents, self.width, self.reduced, self.stages) < 1:
            raise ContractError("all embedding dimensions must be >= 1")
        if self.reduced > self.width:
            raise ContractError("reduced width must not exceed width")
        if self.activation not in _ACTIVATIONS:
            raise ContractError(f"unknown activation {self.activation!r}")

    def stage_widths(self) -> list[int]:
        """Inner encoder widths from d down to d', linearly interpolated."""
        d, dp, u = self.width, self.reduced, self.stages
        return [d] + [round(d + (dp - d) * (i + 1) / u) for i in range(u)]


@dataclass(frozen=True)
class VoxelGroups:
    """Point-to-voxel assignment with deterministic segment structure.

    point_voxel  (m,) voxel index per point
    voxel_coords (c, 3) integer voxel coordinates, lexicographically sorted
    order        (m,) point indices sorted by (voxel, point index)
    starts       (c,) segment start of each voxel within order
    """

    point_voxel: np.ndarray
    voxel_coords: np.ndarray
    order: np.ndarray
    starts: np.ndarray

    @property
    def num_points(self) -> int:
        return len(self.point_voxel)

    @property
    def num_voxels(self) -> int:
        return len(self.voxel_coords)

    def counts(self) -> np.ndarray:
        return np.bincount(self.point_voxel, minlength=self.num_voxels)


def voxelize(
    source: Union[PointCloud, np.ndarray], voxel_size: float
) -> VoxelGroups:
    """Assign points to voxels by floor division of coordinates.

    Voxels are ordered lexicographically by their integer coordinates, which
    makes the grouping independent of point storage order.
    """
    if voxel_size <= 0:
        raise ContractError("voxel_size must be positive")
    points = source.points if isinstance(source, PointCloud) else np.asarray(source)
    coords = np.floor(points / voxel_size).astype(np.int64)
    voxel_coords, inverse = np.unique(coords, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1).astype(np.int64)
    order = np.argsort(inverse, kind="stable")
    counts = np.bincount(inverse, minlength=len(voxel_coords))
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    return VoxelGroups(
        point_voxel=inverse,
        voxel_coords=voxel_coords,
        order=order,
        starts=starts,
    )


# ---------------------------------------------------------------------------
# weights
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LinearStage:
    weight: np.ndarray
    bias: np.ndarray

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return x @ self.weight + self.bias


@dataclass(frozen=True)
class NormStage:
    """Batch normalization with fixed statistics."""

    gamma: np.ndarray
    beta: np.ndarray
    mean: np.ndarray
    var: np.ndarray
    eps: float = 1e-5

    def __post_init__(self) -> None:
        if np.any(np.asarray(self.var) <= 0):
            raise ContractError("batch-norm variance must be positive")

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / np.sqrt(self.var + self.eps) * self.gamma + self.beta


@dataclass(frozen=True)
class WeightSet:
    """All parameters of the forward autoencoder evaluation.

    enc_key/enc_value  encode-side projections of the input features
    dec_query          decode-side projection of the input features
    dec_key/dec_value  projections of the broadcast voxel features
    inner_encoder      (linear, batchnorm) stages reducing d to d'
    ffn_conv1/2        depthwise 3x3x3 kernels, shape (l, d', 3, 3, 3)
    activation         nonlinearity between the two depthwise convolutions
    inner_decoder      linear stages reconstructing d' back to d
    """

    enc_key: LinearStage
    enc_value: LinearStage
    dec_query: LinearStage
    dec_key: LinearStage
    dec_value: LinearStage
    inner_encoder: tuple[tuple[LinearStage, NormStage], ...]
    ffn_conv1: np.ndarray
    ffn_conv2: np.ndarray
    activation: str
    inner_decoder: tuple[LinearStage, ...]

    @classmethod
    def seeded(
        cls, dims: EmbeddingDims, rng: np.random.Generator, in_width: Optional[int] = None
    ) -> "WeightSet":
        """Random weights with a deterministic layout for a given generator."""
        d_in = dims.width if in_width is None else in_width
        d, dp, l = dims.width, dims.reduced, dims.latents

        def lin(a: int, b: int) -> LinearStage:
            return LinearStage(
                weight=rng.normal(0.0, 1.0 / np.sqrt(a), size=(a, b)),
                bias=rng.normal(0.0, 0.01, size=b),
            )

        widths = dims.stage_widths()
        inner_enc = tuple(
            (
                lin(widths[i], widths[i + 1]),
                NormStage(
                    gamma=rng.uniform(0.5, 1.5, widths[i + 1]),
                    beta=rng.normal(0.0, 0.01, widths[i + 1]),
                    mean=rng.normal(0.0, 0.01, widths[i + 1]),
                    var=rng.uniform(0.5, 1.5, widths[i + 1]),
                ),
            )
            for i in range(dims.stages)
        )
        rev = widths[::-1]
        inner_dec = tuple(lin(rev[i], rev[i + 1]) for i in range(dims.stages))
        return cls(
            enc_key=lin(d_in, d),
            enc_value=lin(d_in, d),
            dec_query=lin(d_in, d),
            dec_key=lin(d, d),
            dec_value=lin(d, d),
            inner_encoder=inner_enc,
            ffn_conv1=rng.normal(0.0, 0.2, size=(l, dp, 3, 3, 3)),
            ffn_conv2=rng.normal(0.0, 0.2, size=(l, dp, 3, 3, 3)),
            activation=dims.activation,
            inner_decoder=inner_dec,
        )

    @classmethod
    def identity(cls, dims: EmbeddingDims) -> "WeightSet":
        """Identity pipeline: requires reduced == width; batch-norm epsilon is
        zero so the round trip is exact."""
        if dims.reduced != dims.width:
            raise ContractError("identity weights require reduced == width")
        d, l = dims.width, dims.latents

        def eye(n: int) -> LinearStage:
            return LinearStage(weight=np.eye(n), bias=np.zeros(n))

        unit_norm = NormStage(
            gamma=np.ones(d), beta=np.zeros(d), mean=np.zeros(d), var=np.ones(d), eps=0.0
        )
        delta = np.zeros((l, d, 3, 3, 3))
        delta[:, :, 1, 1, 1] = 1.0
        return cls(
            enc_key=eye(d),
            enc_value=eye(d),
            dec_query=eye(d),
            dec_key=eye(d),
            dec_value=eye(d),
            inner_encoder=tuple((eye(d), unit_norm) for _ in range(dims.stages)),
            ffn_conv1=delta,
            ffn_conv2=delta.copy(),
            activation="identity",
            inner_decoder=tuple(eye(d) for _ in range(dims.stages)),
        )

    def save(self, path) -> None:
        tensors: dict[str, np.ndarray] = {}
        for name in ("enc_key", "enc_value", "dec_query", "dec_key", "dec_value"):
            stage: LinearStage = getattr(self, name)
            tensors[f"{name}.weight"] = stage.weight
            tensors[f"{name}.bias"] = stage.bias
        eps = []
        for i, (lin, norm) in enumerate(self.inner_encoder):
            tensors[f"inner.enc{i}.weight"] = lin.weight
            tensors[f"inner.enc{i}.bias"] = lin.bias
            for field_name in ("gamma", "beta", "mean", "var"):
                tensors[f"inner.enc{i}.{field_name}"] = getattr(norm, field_name)
            eps.append(norm.eps)
        for i, lin in enumerate(self.inner_decoder):
            tensors[f"inner.dec{i}.weight"] = lin.weight
            tensors[f"inner.dec{i}.bias"] = lin.bias
        tensors["ffn.conv1"] = self.ffn_conv1
        tensors["ffn.conv2"] = self.ffn_conv2
        meta = {
            "activation": self.activation,
            "bn_eps": eps,
            "encoder_stages": len(self.inner_encoder),
            "decoder_stages": len(self.inner_decoder),
        }
        scene_io.save_tensors(path, tensors, meta)

    @classmethod
    def load(cls, path) -> "WeightSet":
        tensors, meta = scene_io.load_tensors(path)

        def lin(prefix: str) -> LinearStage:
            return LinearStage(tensors[f"{prefix}.weight"], tensors[f"{prefix}.bias"])

        n_enc = int(meta["encoder_stages"])
        n_dec = int(meta["decoder_stages"])
        eps = meta["bn_eps"]
        inner_enc = tuple(
            (
                lin(f"inner.enc{i}"),
                NormStage(
                    gamma=tensors[f"inner.enc{i}.gamma"],
                    beta=tensors[f"inner.enc{i}.beta"],
                    mean=tensors[f"inner.enc{i}.mean"],
                    var=tensors[f"inner.enc{i}.var"],
                    eps=float(eps[i]),
                ),
            )
            for i in range(n_enc)
        )
        return cls(
            enc_key=lin("enc_key"),
            enc_value=lin("enc_value"),
            dec_query=lin("dec_query"),
            dec_key=lin("dec_key"),
            dec_value=lin("dec_value"),
            inner_encoder=inner_enc,
            ffn_conv1=tensors["ffn.conv1"],
            ffn_conv2=tensors["ffn.conv2"],
            activation=meta["activation"],
            inner_decoder=tuple(lin(f"inner.dec{i}") for i in range(n_dec)),
        )


def seeded_latents(dims: EmbeddingDims, rng: np.random.Generator) -> np.ndarray:
    return rng.normal(0.0, 1.0, size=(dims.latents, dims.width))


# ---------------------------------------------------------------------------
# forward operations
# ---------------------------------------------------------------------------


def scatter_softmax(scores: np.ndarray, groups: VoxelGroups) -> np.ndarray:
    """Softmax over the points of each voxel, independently per column.

    Within every voxel group the weights of each latent column sum to 1.
    """
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] != groups.num_points:
        raise ContractError(f"scores must be (m, l) with m={groups.num_points}")
    grouped = s[groups.order]
    seg_max = np.maximum.reduceat(grouped, groups.starts, axis=0)
    rep = np.repeat(np.arange(groups.num_voxels), groups.counts())
    e = np.exp(grouped - seg_max[rep])
    seg_sum = np.add.reduceat(e, groups.starts, axis=0)
    att_sorted = e / seg_sum[rep]
    out = np.empty_like(att_sorted)
    out[groups.order] = att_sorted
    return out


def scatter_sum(per_point: np.ndarray, groups: VoxelGroups) -> np.ndarray:
    """Per-voxel sum of point rows, deterministic segment reduction."""
    x = np.asarray(per_point, dtype=np.float64)
    flat = x[groups.order].reshape(groups.num_points, -1)
    summed = np.add.reduceat(flat, groups.starts, axis=0)
    return summed.reshape((groups.num_voxels,) + x.shape[1:])


def vsa_encode(
    feats: np.ndarray,
    latents: np.ndarray,
    weights: WeightSet,
    groups: VoxelGroups,
) -> tuple[np.ndarray, np.ndarray]:
    """Outer voxel encoder: per-point attention tensor and its voxel sums.

    Returns (H, Hv) with H of shape (m, l, d) and Hv of shape (c, l, d);
    Hv is exactly the per-voxel sum of its member points' H.
    """
    g = np.asarray(feats, dtype=np.float64)
    if g.ndim != 2 or g.shape[0] != groups.num_points:
        raise ContractError("feats must be (m, d_in) matching the voxel groups")
    if g.shape[1] != weights.enc_key.weight.shape[0]:
        raise ContractError("feature width does not match the encode projections")
    k = weights.enc_key(g)
    v = weights.enc_value(g)
    lat = np.asarray(latents, dtype=np.float64)
    if lat.ndim != 2 or lat.shape[1] != k.shape[1]:
        raise ContractError("latents must be (l, d) with d matching the projections")
    att = scatter_softmax(k @ lat.T, groups)
    h = att[:, :, None] * v[:, None, :]
    hv = scatter_sum(h, groups)
    return h, hv


def _sparse_depthwise_conv(
    x: np.ndarray, coords: np.ndarray, kernel: np.ndarray
) -> np.ndarray:
    """Depthwise 3x3x3 convolution over occupied voxels; absent neighbors
    contribute zero. coords must be lexicographically sorted."""
    c = len(coords)
    if kernel.shape[:2] != x.shape[1:] or kernel.shape[2:] != (3, 3, 3):
        raise ContractError("kernel must be (l, d', 3, 3, 3) matching the input")
    lo = coords.min(axis=0) - 1
    extent = coords.max(axis=0) - lo + 3
    codes = np.ravel_multi_index((coords - lo).T, extent)
    out = np.zeros_like(x)
    for dx, dy, dz in product((-1, 0, 1), repeat=3):
        nb = coords + np.array([dx, dy, dz])
        nb_codes = np.ravel_multi_index((nb - lo).T, extent)
        pos = np.searchsorted(codes, nb_codes)
        pos_c = np.minimum(pos, c - 1)
        found = codes[pos_c] == nb_codes
        taps = kernel[:, :, dx + 1, dy + 1, dz + 1]
        out[found] += x[pos_c[found]] * taps
    return out


def inner_bottleneck(
    hv: np.ndarray, weights: WeightSet, groups: VoxelGroups
) -> tuple[np.ndarray, np.ndarray]:
    """Inner autoencoder over the voxel tensor.

    Encoder stages (linear + batchnorm) reduce the width to d', the ConvFFN
    applies DwConv2 o zeta o DwConv1 over the sparse voxel grid, and decoder
    stages reconstruct the width. Returns (hbar, Hv_hat): the compressed
    embedding before the ConvFFN and the reconstructed voxel tensor.
    """
    x = np.asarray(hv, dtype=np.float64)
    if x.ndim != 3 or x.shape[0] != groups.num_voxels:
        raise ContractError("hv must be (c, l, d) matching the voxel groups")
    for lin, norm in weights.inner_encoder:
        if x.shape[-1] != lin.weight.shape[0]:
            raise ContractError("inner encoder stage width mismatch")
        x = norm(lin(x))
    hbar = x
    act = _ACTIVATIONS[weights.activation]
    y = _sparse_depthwise_conv(hbar, groups.voxel_coords, weights.ffn_conv1)
    y = _sparse_depthwise_conv(act(y), groups.voxel_coords, weights.ffn_conv2)
    for lin in weights.inner_decoder:
        if y.shape[-1] != lin.weight.shape[0]:
            raise ContractError("inner decoder stage width mismatch")
        y = lin(y)
    return hbar, y


def vsa_decode(
    hv_hat: np.ndarray,
    feats: np.ndarray,
    weights: WeightSet,
    groups: VoxelGroups,
) -> np.ndarray:
    """Point decoder: broadcast voxel features to points and attend against
    point-side queries. Returns the reconstructed (m, d) feature set."""
    hv = np.asarray(hv_hat, dtype=np.float64)
    g = np.asarray(feats, dtype=np.float64)
    if hv.ndim != 3 or hv.shape[0] != groups.num_voxels:
        raise ContractError("hv_hat must be (c, l, d) matching the voxel groups")
    if g.ndim != 2 or g.shape[0] != groups.num_points:
        raise ContractError("feats must be (m, d_in) matching the voxel groups")
    h_hat = hv[groups.point_voxel]
    q = weights.dec_query(g)
    k_star = h_hat @ weights.dec_key.weight + weights.dec_key.bias
    v_star = h_hat @ weights.dec_value.weight + weights.dec_value.bias
    if q.shape[1] != k_star.shape[2]:
        raise ContractError("query width does not match the broadcast features")
    scores = np.einsum("mld,md->ml", k_star, q)
    scores = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(scores)
    att = e / e.sum(axis=1, keepdims=True)
    return np.einsum("ml,mld->md", att, v_star)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def _similarity(a: np.ndarray, b: np.ndarray, kind: str) -> np.ndarray:
    """Rowwise similarity; cosine treats zero vectors as similarity 0."""
    if kind == "dot":
        return np.einsum("ij,ij->i", a, b)
    if kind == "cosine":
        na = np.sqrt(np.einsum("ij,ij->i", a, a))
        nb = np.sqrt(np.einsum("ij,ij->i", b, b))
        denom = na * nb
        dot = np.einsum("ij,ij->i", a, b)
        return np.divide(dot, denom, out=np.zeros_like(dot), where=denom > 0)
    raise ContractError(f"unknown similarity {kind!r}")


def _nearest_in_mask(
    points: np.ndarray, eligible: np.ndarray, chunk: int = 256
) -> np.ndarray:
    """Per point, the (distance, index)-smallest point among eligible[i, :].

    eligible is an (m, m) boolean matrix; rows with no eligible point get -1.
    Exhaustive by design: tie-breaks must match the enumeration oracle.
    """
    m = len(points)
    out = np.full(m, -1, dtype=np.int64)
    for lo in range(0, m, chunk):
        hi = min(lo + chunk, m)
        diff = points[lo:hi, None, :] - points[None, :, :]
        d2 = np.einsum("abc,abc->ab", diff, diff)
        d2[~eligible[lo:hi]] = np.inf
        best = np.argmin(d2, axis=1)  # first minimum: ties by ascending index
        has = d2[np.arange(hi - lo), best] < np.inf
        out[lo:hi] = np.where(has, best, -1)
    return out


def contrastive_loss(
    embeddings: np.ndarray,
    points: np.ndarray,
    labels: np.ndarray,
    alpha: float = 0.5,
    sim: str = "cosine",
) -> float:
    """Class-aware hinge loss over nearest positive and negative pairs.

    For each point, the positive pair is the coordinate-nearest point of the
    same class and the negative pair the coordinate-nearest point of a
    different class; a term is skipped when no such point exists. When no
    point has a negative pair (single-class input), the loss degrades to
    positive terms only and a RuntimeWarning is emitted.
    """
    h = np.asarray(embeddings, dtype=np.float64)
    p = np.asarray(points, dtype=np.float64)
    y = np.asarray(labels)
    m = len(h)
    if len(p) != m or len(y) != m:
        raise ContractError("embeddings, points, and labels must align")
    same = y[:, None] == y[None, :]
    np.fill_diagonal(same, False)
    diff_class = y[:, None] != y[None, :]
    pos = _nearest_in_mask(p, same)
    neg = _nearest_in_mask(p, diff_class)
    if np.all(neg < 0):
        warnings.warn(
            "all points share one class; contrastive loss uses positive terms only",
            RuntimeWarning,
            stacklevel=2,
        )
    total = np.zeros(m, dtype=np.float64)
    has_pos = pos >= 0
    if has_pos.any():
        s = _similarity(h[has_pos], h[pos[has_pos]], sim)
        total[has_pos] += np.maximum(alpha - s, 0.0)
    has_neg = neg >= 0
    if has_neg.any():
        s = _similarity(h[has_neg], h[neg[has_neg]], sim)
        total[has_neg] += np.maximum(s - alpha, 0.0)
    return float(total.mean())


@dataclass(frozen=True)
class EmbeddingForward:
    """Every tensor of one autoencoder forward pass, with its shape fixed by
    (m points, c voxels, l latents, d width, d' reduced width)."""

    feats: np.ndarray          # (m, d_in) input features
    latents: np.ndarray        # (l, d) latent queries
    attention: np.ndarray      # (m, l) scatter softmax weights
    pointwise: np.ndarray      # (m, l, d) per-point attention tensor
    voxelwise: np.ndarray      # (c, l, d) scatter-summed voxel tensor
    compressed: np.ndarray     # (c, l, d') inner embedding
    reconstructed_voxel: np.ndarray  # (c, l, d)
    reconstructed: np.ndarray  # (m, d) decoded feature set


def autoencoder_forward(
    feats: np.ndarray,
    latents: np.ndarray,
    weights: WeightSet,
    groups: VoxelGroups,
) -> EmbeddingForward:
    """Full nested forward pass: outer encode, inner bottleneck, point decode."""
    g = np.asarray(feats, dtype=np.float64)
    k = weights.enc_key(g)
    att = scatter_softmax(k @ np.asarray(latents, dtype=np.float64).T, groups)
    h, hv = vsa_encode(g, latents, weights, groups)
    hbar, hv_hat = inner_bottleneck(hv, weights, groups)
    g_hat = vsa_decode(hv_hat, g, weights, groups)
    return EmbeddingForward(
        feats=g,
        latents=np.asarray(latents, dtype=np.float64),
        attention=att,
        pointwise=h,
        voxelwise=hv,
        compressed=hbar,
        reconstructed_voxel=hv_hat,
        reconstructed=g_hat,
    )


def reconstruction_loss(feats: np.ndarray, reconstructed: np.ndarray) -> float:
    """Mean squared error over all entries."""
    g = np.asarray(feats, dtype=np.float64)
    g_hat = np.asarray(reconstructed, dtype=np.float64)
    if g.shape != g_hat.shape:
        raise ContractError(f"shape mismatch: {g.shape} vs {g_hat.shape}")
    return float(np.mean((g - g_hat) ** 2))


def total_loss(recon: float, contr: float, lam: float) -> float:
    """Weighted sum: reconstruction plus lam times the contrastive term."""
    if lam < 0:
        raise ContractError("lambda must be >= 0")
    return float(recon + lam * contr)
