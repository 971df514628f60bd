"""Multi-level gradient-based fusion network, training loop, and persistence.

The high-resolution map passes through a single gradient-extraction conv
before entering the encoder, whose weights are physically shared with the
low-resolution path. Per-level features of the two paths are summed and
skip-connected into an upsampling decoder with prediction heads at three
scales.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import kernels, losses
from .autodiff import Tensor
from .errors import (
    CorruptFile,
    InvalidConfig,
    NonFiniteLoss,
    ShapeMismatch,
    VersionMismatch,
)
from .gradops import guided_fuse, sobel, edge_map
from .raster import DepthMap, Raster, minmax_scale, resize_bilinear
from .sampling import (
    PairSource,
    SampleConfig,
    merge_pair_sets,
    pair_arrays,
    sample_edge_pairs,
)

PARAMS_MAGIC = b"DFNP"
PARAMS_VERSION = 1

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
WEIGHT_DECAY = 1e-4
BASE_LR = 1e-4
LR_DECAY = 0.99
LR_DECAY_EVERY = 100


@dataclass(frozen=True)
class FusionNetConfig:
    levels: int = 4
    base_channels: int = 8
    head_scales: int = 3
    input_low: tuple[int, int] = (64, 64)    # (h, w)
    input_high: tuple[int, int] = (192, 192)
    seed: int = 0

    def __post_init__(self):
        if self.levels < 2:
            raise InvalidConfig(f"levels must be >= 2, got {self.levels}")
        if self.base_channels < 1:
            raise InvalidConfig("base_channels must be >= 1")
        if not 1 <= self.head_scales <= self.levels:
            raise InvalidConfig("head_scales must be in [1, levels]")
        lh, lw = self.input_low
        hh, hw = self.input_high
        if hh % lh or hw % lw:
            raise InvalidConfig("high dims must be integer multiples of low dims")
        div = 2 ** (self.levels - 1)
        if hh % div or hw % div:
            raise InvalidConfig(
                f"high dims must be divisible by 2^(levels-1) = {div}")

    def channels(self) -> list[int]:
        cap = 8 * self.base_channels
        return [min(self.base_channels * 2 ** i, cap) for i in range(self.levels)]


@dataclass
class FusionNetParams:
    cfg: FusionNetConfig
    tensors: dict[str, Tensor]

    def named(self):
        return self.tensors.items()

    def count(self) -> int:
        return sum(t.data.size for t in self.tensors.values())


def _he_conv(rng, c_out, c_in, k):
    std = math.sqrt(2.0 / (c_in * k * k))
    w = rng.normal(0.0, std, size=(c_out, c_in, k, k))
    b = np.zeros(c_out)
    return w, b


def build(cfg: FusionNetConfig) -> FusionNetParams:
    """He-initialized parameters, deterministic for a fixed seed.

    Encoder blocks are stored once and used by both input paths (the weight
    sharing is storage identity, not a copy).
    """
    rng = np.random.default_rng(cfg.seed)
    ch = cfg.channels()
    tensors: dict[str, Tensor] = {}

    def put(name, w, b):
        tensors[name + ".w"] = Tensor(w, requires_grad=True)
        tensors[name + ".b"] = Tensor(b, requires_grad=True)

    put("eg", *_he_conv(rng, 1, 1, 3))
    put("enc0", *_he_conv(rng, ch[0], 1, 3))
    for i in range(1, cfg.levels):
        put(f"enc{i}", *_he_conv(rng, ch[i], ch[i - 1], 3))
    for i in range(cfg.levels - 1):
        put(f"dec{i}", *_he_conv(rng, ch[i], ch[i + 1], 3))
    for k in range(cfg.head_scales):
        put(f"head{k}", *_he_conv(rng, 1, ch[k], 1))
    return FusionNetParams(cfg, tensors)


def parameter_count(cfg: FusionNetConfig) -> int:
    """Closed-form parameter total from the layer shapes."""
    ch = cfg.channels()
    total = 1 * 1 * 9 + 1                      # gradient-extraction conv
    total += ch[0] * 1 * 9 + ch[0]             # encoder stem
    for i in range(1, cfg.levels):
        total += ch[i] * ch[i - 1] * 9 + ch[i]
    for i in range(cfg.levels - 1):
        total += ch[i] * ch[i + 1] * 9 + ch[i]
    for k in range(cfg.head_scales):
        total += ch[k] * 1 + 1
    return total


def _upsample_to(values: np.ndarray, h, w) -> np.ndarray:
    return kernels.resize_bilinear(np.ascontiguousarray(values), h, w)


def forward(params: FusionNetParams, d_low: Tensor, d_high: Tensor) -> list[Tensor]:
    """Run the fusion net; returns predictions at full, 1/2 and 1/4 scale.

    Inputs are (1, 1, h, w) tensors; d_low is bilinearly upsampled to the
    high dims outside the graph (no gradient flows to the inputs).
    """
    cfg = params.cfg
    t = params.tensors
    if d_low.shape[2:] != cfg.input_low or d_high.shape[2:] != cfg.input_high:
        raise ShapeMismatch(
            f"inputs {d_low.shape[2:]}/{d_high.shape[2:]} do not match config "
            f"{cfg.input_low}/{cfg.input_high}")
    hh, hw = cfg.input_high
    n = d_low.shape[0]
    up = np.stack([_upsample_to(d_low.data[b, 0], hh, hw) for b in range(n)])
    low_up = Tensor(up[:, None, :, :])

    g = ad.conv2d(d_high, t["eg.w"], t["eg.b"], stride=1, pad=1)

    def encode(x):
        feats = []
        f = ad.leaky_relu(ad.conv2d(x, t["enc0.w"], t["enc0.b"], stride=1, pad=1))
        feats.append(f)
        for i in range(1, cfg.levels):
            f = ad.leaky_relu(
                ad.conv2d(f, t[f"enc{i}.w"], t[f"enc{i}.b"], stride=2, pad=1))
            feats.append(f)
        return feats

    low_feats = encode(low_up)
    high_feats = encode(g)
    skips = [ad.add(a, b) for a, b in zip(low_feats, high_feats)]

    dec = [None] * cfg.levels
    dec[cfg.levels - 1] = skips[cfg.levels - 1]
    for i in range(cfg.levels - 2, -1, -1):
        upf = ad.upsample_bilinear2x(dec[i + 1])
        conv = ad.conv2d(upf, t[f"dec{i}.w"], t[f"dec{i}.b"], stride=1, pad=1)
        dec[i] = ad.leaky_relu(ad.add(conv, skips[i]))

    outs = []
    for k in range(cfg.head_scales):
        outs.append(ad.conv2d(dec[k], t[f"head{k}.w"], t[f"head{k}.b"],
                              stride=1, pad=0))
    return outs


# ---------------------------------------------------------------------------
# Loss graph builders (forward values delegate to the numpy evaluators)

def ilnr_graph(pred: Tensor, target: Raster) -> Tensor:
    """ILNR as an autodiff node with an analytic gradient w.r.t. pred."""
    p = pred.data[0, 0]
    value = losses.ilnr(Raster(p), target)

    flat = p.ravel()
    order = np.argsort(flat, kind="stable")
    k = int(losses.TRIM_FRACTION * flat.size)
    kept_idx = order[k:flat.size - k] if k > 0 else order
    m = kept_idx.size
    mu = float(flat[kept_idx].mean())
    sd_raw = float(flat[kept_idx].std())
    sd = max(sd_raw, losses.SIGMA_FLOOR)
    floored = sd_raw < losses.SIGMA_FLOOR

    pn = (flat - mu) / sd
    tn = losses._normalize(target.values).ravel()
    s = losses.TANH_SCALE
    n_pix = flat.size
    gbar = (np.sign(pn - tn)
            + np.sign(np.tanh(pn / s) - np.tanh(tn / s))
            * (1.0 - np.tanh(pn / s) ** 2) / s) / n_pix

    grad = gbar / sd
    in_subset = np.zeros(n_pix, dtype=bool)
    in_subset[kept_idx] = True
    grad = grad - (gbar.sum() / (m * sd)) * in_subset
    if not floored:
        grad = grad - (float(gbar @ pn) / (m * sd)) * pn * in_subset
    grad_img = grad.reshape(pred.data.shape)

    def gfn(g):
        return float(g.ravel()[0]) * grad_img

    return ad.custom_op(np.full((1, 1, 1, 1), value), [pred], [gfn])


def ranking_graph(pred: Tensor, d_gf: Raster, pairs, sigma: float) -> Tensor:
    """Weighted pair ranking loss as an autodiff node."""
    p = pred.data[0, 0]
    value = losses.ranking_loss(Raster(p), d_gf, pairs, sigma)
    grad_img = np.zeros_like(pred.data)
    if pairs:
        iy, ix, jy, jx, w, z = pair_arrays(pairs)
        gv = d_gf.values
        fd = p[iy, ix] - p[jy, jx]
        d = 2.0 * fd  # same-side pairs: d/dfi of (fi - fj)^2
        straddle = z == 1
        a = fd[straddle] - (gv[iy, ix] - gv[jy, jx])[straddle] + sigma
        # d/da log(1 + e^{-1/|a|}) = sigmoid(-1/|a|) * sign(a) / a^2,
        # computed via exp(u) with u <= 0 so nothing overflows; 0 at a = 0
        with np.errstate(divide="ignore", invalid="ignore"):
            s = np.exp(-1.0 / np.abs(a))
            de = (s / (1.0 + s)) * np.sign(a) / (a * a)
        de[a == 0.0] = 0.0
        d[straddle] = de
        d *= w / w.sum()
        gimg = grad_img[0, 0]
        np.add.at(gimg, (iy, ix), d)
        np.add.at(gimg, (jy, jx), -d)

    def gfn(g):
        return float(g.ravel()[0]) * grad_img

    return ad.custom_op(np.full((1, 1, 1, 1), value), [pred], [gfn])


def fusion_loss_graph(preds: list[Tensor], d_low: DepthMap, d_gf: DepthMap,
                      pairs_per_scale, sigma: float = 0.1):
    """Training objective over the prediction pyramid.

    Returns (total tensor, LossBreakdown of the forward values).
    """
    milnr_terms = []
    rank_terms = []
    per_scale = []
    for p, scale_pairs in zip(preds, pairs_per_scale):
        h, w = p.shape[2], p.shape[3]
        low_r = resize_bilinear(d_low.raster, w, h)
        node = ilnr_graph(p, low_r)
        milnr_terms.append(node)
        per_scale.append(float(node.data.ravel()[0]))
        if scale_pairs:
            gf_r = resize_bilinear(d_gf.raster, w, h)
            rank_terms.append(ranking_graph(p, gf_r, scale_pairs, sigma))

    total = milnr_terms[0]
    for term in milnr_terms[1:] + rank_terms:
        total = ad.add(total, term)
    milnr_val = float(sum(per_scale))
    rank_val = float(sum(float(r.data.ravel()[0]) for r in rank_terms))
    return total, losses.LossBreakdown(milnr_val, rank_val, tuple(per_scale))


# ---------------------------------------------------------------------------
# Optimizer (AdamW with cosine annealing x step decay)

@dataclass
class OptimizerState:
    step: int = 0
    base_lr: float = BASE_LR
    total_steps: int = 10000
    weight_decay: float = WEIGHT_DECAY
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def learning_rate(opt: OptimizerState, step: int | None = None) -> float:
    """Cosine annealing composed multiplicatively with 0.99 decay per 100 steps."""
    s = opt.step if step is None else step
    frac = min(s, opt.total_steps) / opt.total_steps
    cosine = 0.5 * (1.0 + math.cos(math.pi * frac))
    return opt.base_lr * (LR_DECAY ** (s // LR_DECAY_EVERY)) * cosine


def adamw_update(params: FusionNetParams, opt: OptimizerState):
    lr = learning_rate(opt)
    opt.step += 1
    t = opt.step
    bc1 = 1.0 - ADAM_BETA1 ** t
    bc2 = 1.0 - ADAM_BETA2 ** t
    for name, tensor in params.named():
        g = tensor.grad
        if g is None:
            continue
        if name not in opt.m:
            opt.m[name] = np.zeros_like(tensor.data)
            opt.v[name] = np.zeros_like(tensor.data)
        m = opt.m[name]
        v = opt.v[name]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * g * g
        update = (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)
        tensor.data -= lr * (update + opt.weight_decay * tensor.data)
    return lr


# ---------------------------------------------------------------------------
# Training

@dataclass
class TrainSample:
    d_low: DepthMap       # scaled to [-1, 1], at input_low dims
    d_high: DepthMap      # scaled, at input_high dims
    d_gf: DepthMap        # guided fusion of the two, at input_high dims
    pairs_per_scale: list


def prepare_sample(d_low: DepthMap, d_high: DepthMap, cfg: FusionNetConfig,
                   sample_cfg: SampleConfig, rng: np.random.Generator,
                   augment_rng: np.random.Generator | None = None) -> TrainSample:
    """Scale inputs, compute the guided-filter supervision, optionally
    augment, and sample ranking pairs per head scale."""
    from .raster import resize_depth

    lh, lw = cfg.input_low
    hh, hw = cfg.input_high
    low_s = minmax_scale(resize_depth(d_low, lw, lh))
    high_s = minmax_scale(resize_depth(d_high, hw, hh))
    d_gf = guided_fuse(low_s, high_s)

    if augment_rng is not None:
        low_s, high_s, d_gf = augment((low_s, high_s, d_gf), augment_rng)

    pairs_per_scale = []
    for k in range(cfg.head_scales):
        div = 2 ** k
        scfg = sample_cfg.at_scale(div)
        gf_k = resize_bilinear(d_gf.raster, hw // div, hh // div)
        high_k = resize_bilinear(high_s.raster, hw // div, hh // div)
        g_gf = sobel(gf_k)
        g_high = sobel(high_k)
        gf_pairs = sample_edge_pairs(gf_k, g_gf, edge_map(g_gf, scfg.alpha),
                                     scfg, rng, source=PairSource.FROM_GF)
        high_pairs = sample_edge_pairs(gf_k, g_high,
                                       edge_map(g_high, scfg.alpha), scfg, rng,
                                       source=PairSource.FROM_HIGH)
        pairs_per_scale.append(merge_pair_sets(gf_pairs, high_pairs,
                                               scfg.weights))
    return TrainSample(low_s, high_s, d_gf, pairs_per_scale)


def augment(maps: tuple[DepthMap, DepthMap, DepthMap],
            rng: np.random.Generator) -> tuple[DepthMap, DepthMap, DepthMap]:
    """Random x/y flips and sign inversion, applied consistently to all maps.

    Inputs are expected in the scaled [-1, 1] domain.
    """
    flip_x = rng.random() < 0.5
    flip_y = rng.random() < 0.5
    invert = rng.random() < 0.5

    def apply(d: DepthMap) -> DepthMap:
        v = d.values
        if flip_x:
            v = v[:, ::-1]
        if flip_y:
            v = v[::-1, :]
        if invert:
            v = -v
        return DepthMap(Raster(v.copy()), d.semantics)

    return tuple(apply(d) for d in maps)


def train_step(params: FusionNetParams, opt: OptimizerState,
               batch: list[TrainSample], sigma: float = 0.1):
    """One AdamW update over a batch; returns (LossBreakdown, lr used)."""
    for _, tensor in params.named():
        tensor.zero_grad()

    milnr_sum = 0.0
    rank_sum = 0.0
    per_scale = None
    for sample in batch:
        d_low_t = Tensor(sample.d_low.values[None, None])
        d_high_t = Tensor(sample.d_high.values[None, None])
        preds = forward(params, d_low_t, d_high_t)
        total, bd = fusion_loss_graph(preds, sample.d_low, sample.d_gf,
                                      sample.pairs_per_scale, sigma)
        if not math.isfinite(bd.total):
            raise NonFiniteLoss(
                f"loss diverged at step {opt.step}: milnr={bd.milnr} rank={bd.rank}")
        scaled = ad.scalar_mul(total, 1.0 / len(batch))
        ad.backward(scaled)
        milnr_sum += bd.milnr
        rank_sum += bd.rank
        ps = np.asarray(bd.per_scale_milnr)
        per_scale = ps if per_scale is None else per_scale + ps

    lr = adamw_update(params, opt)
    n = len(batch)
    breakdown = losses.LossBreakdown(milnr_sum / n, rank_sum / n,
                                     tuple(per_scale / n))
    return breakdown, lr


def train(params: FusionNetParams, opt: OptimizerState,
          dataset: list[tuple[DepthMap, DepthMap]], steps: int,
          sample_cfg: SampleConfig | None = None, batch_size: int = 2,
          seed: int = 0, sigma: float = 0.1, use_augment: bool = True,
          log=None):
    """Self-supervised loop: pairs resampled once per sample per epoch.

    ``log`` receives (step, lr, breakdown) if given. Returns the history of
    LossBreakdowns.
    """
    if sample_cfg is None:
        sample_cfg = SampleConfig(rng_seed=seed)
    cfg = params.cfg
    history = []
    prepared: list[TrainSample] = []
    epoch = -1
    cursor = 0
    for step in range(steps):
        batch = []
        for _ in range(batch_size):
            if cursor >= len(prepared):
                epoch += 1
                root = np.random.SeedSequence((seed, epoch))
                children = root.spawn(len(dataset))
                prepared = []
                for ss, (dl, dh) in zip(children, dataset):
                    r1, r2 = [np.random.default_rng(s) for s in ss.spawn(2)]
                    prepared.append(prepare_sample(
                        dl, dh, cfg, sample_cfg, r1,
                        augment_rng=r2 if use_augment else None))
                cursor = 0
            batch.append(prepared[cursor])
            cursor += 1
        breakdown, lr = train_step(params, opt, batch, sigma)
        history.append(breakdown)
        if log is not None:
            log(step, lr, breakdown)
    return history


# ---------------------------------------------------------------------------
# Persistence ("DFNP": magic, version, config echo, per-layer f64 LE blobs)

def save_params(params: FusionNetParams, path):
    cfg = params.cfg
    with open(path, "wb") as f:
        f.write(PARAMS_MAGIC)
        f.write(struct.pack("<I", PARAMS_VERSION))
        f.write(struct.pack("<7I", cfg.levels, cfg.base_channels,
                            cfg.head_scales, *cfg.input_low, *cfg.input_high))
        f.write(struct.pack("<Q", cfg.seed))
        f.write(struct.pack("<I", len(params.tensors)))
        for name, tensor in params.named():
            nb = name.encode("utf-8")
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            f.write(struct.pack("<B", tensor.data.ndim))
            f.write(struct.pack(f"<{tensor.data.ndim}I", *tensor.data.shape))
            f.write(tensor.data.astype("<f8").tobytes())


def _read_exact(f, n):
    buf = f.read(n)
    if len(buf) != n:
        raise CorruptFile(f"parameter file truncated ({len(buf)} of {n} bytes)")
    return buf


def load_params(path, expected_cfg: FusionNetConfig | None = None) -> FusionNetParams:
    with open(path, "rb") as f:
        if _read_exact(f, 4) != PARAMS_MAGIC:
            raise CorruptFile("bad magic, not a DFNP parameter file")
        (version,) = struct.unpack("<I", _read_exact(f, 4))
        if version != PARAMS_VERSION:
            raise VersionMismatch(f"unsupported version {version}")
        fields = struct.unpack("<7I", _read_exact(f, 28))
        (seed,) = struct.unpack("<Q", _read_exact(f, 8))
        cfg = FusionNetConfig(levels=fields[0], base_channels=fields[1],
                              head_scales=fields[2],
                              input_low=(fields[3], fields[4]),
                              input_high=(fields[5], fields[6]), seed=seed)
        if expected_cfg is not None and cfg != expected_cfg:
            raise VersionMismatch(
                f"config echo {cfg} does not match expected {expected_cfg}")
        (n_params,) = struct.unpack("<I", _read_exact(f, 4))
        tensors: dict[str, Tensor] = {}
        for _ in range(n_params):
            (name_len,) = struct.unpack("<H", _read_exact(f, 2))
            name = _read_exact(f, name_len).decode("utf-8")
            (ndim,) = struct.unpack("<B", _read_exact(f, 1))
            shape = struct.unpack(f"<{ndim}I", _read_exact(f, 4 * ndim))
            count = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(_read_exact(f, 8 * count),
                                 dtype="<f8").reshape(shape)
            tensors[name] = Tensor(data.copy(), requires_grad=True)
        extra = f.read(1)
        if extra:
            raise CorruptFile("trailing bytes after parameter payload")
    return FusionNetParams(cfg, tensors)


# ---------------------------------------------------------------------------
# Inference

def fuse(params: FusionNetParams, d_low: DepthMap, d_high: DepthMap) -> DepthMap:
    """Scale, run the network, and map the full-scale output back to the
    low-resolution map's value range (its values are the trusted ones)."""
    from .raster import resize_depth

    cfg = params.cfg
    lh, lw = cfg.input_low
    hh, hw = cfg.input_high
    low_s = minmax_scale(resize_depth(d_low, lw, lh))
    high_s = minmax_scale(resize_depth(d_high, hw, hh))
    preds = forward(params, Tensor(low_s.values[None, None]),
                    Tensor(high_s.values[None, None]))
    out = preds[0].data[0, 0]

    lo, hi = float(d_low.values.min()), float(d_low.values.max())
    omin, omax = float(out.min()), float(out.max())
    if omax > omin:
        rescaled = (out - omin) / (omax - omin) * (hi - lo) + lo
    else:
        rescaled = np.full_like(out, 0.5 * (lo + hi))
    return DepthMap(Raster(rescaled), d_low.semantics)
