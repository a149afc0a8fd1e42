"""Graph-convolutional mesh autoencoder whose decoder drives an embedded deformation layer.

Encoder: one (graph conv, ELU, downsample) module per hierarchy step, then a
fully connected layer with ELU. Decoder: fully connected layer with ELU,
reshape to the coarsest level, (upsample, graph conv, ELU) modules up to the
graph level, two refinement convs with ELU and a final linear conv whose
output feeds the embedded deformation layer.

Training variants:

``EDL``  decoder emits 3 Euler angles + 3 translations per node; vertex loss.
``LP``   decoder emits translations; rotations come from 1-ring Procrustes
         without gradient; vertex loss.
``GL``   decoder emits node offsets from the template graph; loss on node
         positions only. Rotations are recovered by Procrustes at inference.
"""
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import nn
from .edl import EmbeddedDeformation, bind_skinning, euler_to_rotation, ring_rotations
from .graph_conv import ChebConv, SpiralConv, build_spectral, build_spirals
from .hierarchy import downsample, downsample_backward, upsample, upsample_backward

log = logging.getLogger(__name__)

VARIANTS = ("EDL", "GL", "LP")
CONV_TYPES = ("spiral", "spectral")


class TrainingError(RuntimeError):
    pass


@dataclass
class ModelConfig:
    latent_dim: int = 8
    conv_type: str = "spiral"
    variant: str = "EDL"
    encoder_widths: list = field(default_factory=lambda: [16, 32, 64, 128])
    decoder_widths: list = None
    refine_width: int = None
    graph_level: int = None
    batch_size: int = 8
    epochs: int = 50
    max_steps: int = None
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    cheb_order: int = 6
    cheb_refine_order: int = 2
    spiral_length: int = None
    dtype: str = "float32"
    level_counts: list = None
    graph_nodes: int = None

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.latent_dim < 1:
            raise ValueError("latent_dim must be >= 1")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.conv_type not in CONV_TYPES:
            raise ValueError(f"conv_type must be one of {CONV_TYPES}, got {self.conv_type!r}")
        widths = list(self.encoder_widths) + list(self.decoder_widths or [])
        if self.refine_width is not None:
            widths.append(self.refine_width)
        if any(int(w) <= 0 for w in widths):
            raise ValueError("channel widths must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}")
        return cls(**data)

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


class _Down:
    def __init__(self, level):
        self.level = level

    def forward(self, x):
        return downsample(self.level, x)

    def backward(self, dy):
        return downsample_backward(self.level, dy)


class _Up:
    def __init__(self, level):
        self.level = level

    def forward(self, x):
        return upsample(self.level, x)

    def backward(self, dy):
        return upsample_backward(self.level, dy)


def build_supports(hierarchy, conv_type, spiral_length=None):
    out = {}
    for k, lv in enumerate(hierarchy.levels):
        if conv_type == "spiral":
            out[k] = {"spirals": build_spirals(lv.mesh, spiral_length)}
        else:
            out[k] = {"laplacian": build_spectral(lv.mesh)}
    return out


class MeshAutoencoder:
    def __init__(self, hierarchy, config, supports=None):
        if hierarchy.graph is None or hierarchy.graph_level is None:
            raise ValueError("the hierarchy needs an embedded graph on level 1 or 2")
        if len(hierarchy.levels) < 2:
            raise ValueError("the autoencoder needs at least two hierarchy levels")
        self.hierarchy = hierarchy
        self.config = config
        self.graph = hierarchy.graph
        self.graph_level = hierarchy.graph_level
        if config.graph_level is not None and config.graph_level != self.graph_level:
            raise ValueError(f"config graph_level {config.graph_level} but hierarchy has {self.graph_level}")
        self.dtype = np.dtype(config.dtype)
        kind = "spirals" if config.conv_type == "spiral" else "laplacian"
        if supports is None or any(kind not in supports.get(k, {}) for k in range(len(hierarchy.levels))):
            supports = build_supports(hierarchy, config.conv_type, config.spiral_length)
        self.supports = supports
        self.store = nn.ParameterStore(self.dtype)
        rng = np.random.default_rng(config.seed)

        levels = hierarchy.levels
        n_down = len(levels) - 1
        enc_w = [int(w) for w in config.encoder_widths]
        if len(enc_w) < n_down:
            raise ValueError(f"need {n_down} encoder widths, got {len(enc_w)}")
        enc_w = enc_w[:n_down]
        n_up = n_down - self.graph_level
        dec_w = ([int(w) for w in config.decoder_widths] if config.decoder_widths
                 else enc_w[::-1][:n_up + 1])
        if len(dec_w) != n_up + 1:
            raise ValueError(f"need {n_up + 1} decoder widths, got {len(dec_w)}")
        refine = int(config.refine_width or dec_w[-1])
        self.n_up = n_up
        self.out_channels = 6 if config.variant == "EDL" else 3

        enc = []
        f_in = 3
        for i in range(n_down):
            enc += [self._conv(f"enc{i}", i, f_in, enc_w[i], rng), nn.ELU(), _Down(levels[i + 1])]
            f_in = enc_w[i]
        n_coarse = levels[-1].n_vertices
        enc += [nn.Dense(self.store, "enc_fc", n_coarse * f_in, config.latent_dim, rng), nn.ELU()]
        self.encoder = nn.Sequential(enc)

        dec = [nn.Dense(self.store, "dec_fc", config.latent_dim, n_coarse * dec_w[0], rng), nn.ELU(),
               nn.Reshape((n_coarse, dec_w[0]))]
        for j in range(n_up):
            lv = len(levels) - 2 - j
            dec += [_Up(levels[lv + 1]), self._conv(f"dec{j}", lv, dec_w[j], dec_w[j + 1], rng), nn.ELU()]
        g = self.graph_level
        dec += [self._conv("refine0", g, dec_w[-1], refine, rng), nn.ELU(),
                self._conv("refine1", g, refine, refine, rng, refine_stage=True), nn.ELU(),
                self._conv("out", g, refine, self.out_channels, rng, zero=True, refine_stage=True)]
        self.decoder = nn.Sequential(dec)

        mesh = levels[0].mesh
        self.template = mesh
        self.binding = bind_skinning(mesh, self.graph, self.graph_level)
        self.edl = EmbeddedDeformation(mesh, self.graph, self.binding)
        self.graph_neighbors = self.graph.neighbors()

    def _conv(self, name, level, f_in, f_out, rng, zero=False, refine_stage=False):
        sup = self.supports[level]
        if self.config.conv_type == "spiral":
            return SpiralConv(self.store, name, sup["spirals"], f_in, f_out, rng, zero)
        order = self.config.cheb_refine_order if refine_stage else self.config.cheb_order
        return ChebConv(self.store, name, sup["laplacian"], f_in, f_out, order, rng, zero)

    # -- inference -------------------------------------------------------------

    def _batch(self, x, width):
        x = np.asarray(x, dtype=self.dtype)
        single = x.ndim == width
        return (x[None] if single else x), single

    def encode(self, vertices):
        x, single = self._batch(vertices, 2)
        if x.shape[1:] != (self.template.n_vertices, 3):
            raise ValueError(f"expected ({self.template.n_vertices}, 3) vertices, got {x.shape[1:]}")
        z = self.encoder.forward(x)
        return z[0] if single else z

    def decode(self, latent):
        """Raw per-node decoder output, (L, C) or (B, L, C)."""
        z, single = self._batch(latent, 1)
        if z.shape[1] != self.config.latent_dim:
            raise ValueError(f"latent dimension {z.shape[1]} != {self.config.latent_dim}")
        out = self.decoder.forward(z)
        return out[0] if single else out

    def node_transforms(self, raw):
        """``(rotations, translations)`` for EDL from raw decoder output, batched."""
        raw = np.asarray(raw, dtype=np.float64)
        g = self.edl.nodes
        if self.config.variant == "EDL":
            return euler_to_rotation(raw[..., :3]), raw[..., 3:]
        if self.config.variant == "LP":
            t = raw
            return ring_rotations(g, g + t, self.graph_neighbors), t
        positions = g + raw
        return ring_rotations(g, positions, self.graph_neighbors), positions - g

    def node_positions(self, raw):
        return self.edl.nodes + np.asarray(raw, dtype=np.float64)[..., -3:]

    def reconstruct(self, latent):
        z, single = self._batch(latent, 1)
        raw = self.decoder.forward(z)
        rot, trans = self.node_transforms(raw)
        v = self.edl.deform(rot, trans)
        return v[0] if single else v

    def autoencode(self, vertices):
        x, single = self._batch(vertices, 2)
        v = self.reconstruct(self.encode(x))
        return v[0] if single else v

    # -- training --------------------------------------------------------------

    def loss_and_grad(self, batch, return_latent_grad=False):
        """Forward + backward on a (B, N, 3) batch; gradients accumulate in the store."""
        target = np.asarray(batch, dtype=np.float64)
        z = self.encoder.forward(target.astype(self.dtype))
        raw = self.decoder.forward(z)
        raw64 = raw.astype(np.float64)
        variant = self.config.variant
        if variant == "EDL":
            verts = self.edl.forward(raw64[..., :3], raw64[..., 3:])
            loss, dv = nn.l1_vertex_loss(verts, target)
            ga, gt = self.edl.backward(dv)
            draw = np.concatenate([ga, gt], axis=-1)
        elif variant == "LP":
            g = self.edl.nodes
            rot = ring_rotations(g, g + raw64, self.graph_neighbors)
            verts = self.edl.deform(rot, raw64)
            loss, dv = nn.l1_vertex_loss(verts, target)
            _, draw = self.edl.rotation_backward(dv)
        else:
            loss, draw = nn.l1_graph_loss(self.edl.nodes + raw64, target, self.graph.node_to_vertex)
        dz = self.decoder.backward(draw.astype(self.dtype))
        self.encoder.backward(dz)
        if return_latent_grad:
            return loss, dz
        return loss

    def latent_loss_and_grad(self, latent, target):
        """Decoder-only loss and d(loss)/d(latent), used for end-to-end gradient checks."""
        z = np.asarray(latent, dtype=self.dtype)[None]
        raw = self.decoder.forward(z).astype(np.float64)
        target = np.asarray(target, dtype=np.float64)[None]
        if self.config.variant == "GL":
            loss, draw = nn.l1_graph_loss(self.edl.nodes + raw, target, self.graph.node_to_vertex)
        elif self.config.variant == "LP":
            g = self.edl.nodes
            rot = ring_rotations(g, g + raw, self.graph_neighbors)
            loss, dv = nn.l1_vertex_loss(self.edl.deform(rot, raw), target)
            _, draw = self.edl.rotation_backward(dv)
        else:
            verts = self.edl.forward(raw[..., :3], raw[..., 3:])
            loss, dv = nn.l1_vertex_loss(verts, target)
            draw = np.concatenate(self.edl.backward(dv), axis=-1)
        dz = self.decoder.backward(draw.astype(self.dtype))
        return loss, dz[0]

    def adam_step(self):
        c = self.config
        nn.adam_step(self.store, c.learning_rate, c.beta1, c.beta2, c.eps)

    def mean_vertex_error(self, data):
        """Mean per-vertex l1 error and mean per-vertex Euclidean error over ``data``."""
        data = np.asarray(data, dtype=np.float64)
        rec = self.autoencode(data)
        diff = rec - data
        return float(np.abs(diff).sum(-1).mean()), float(np.linalg.norm(diff, axis=-1).mean())

    # -- persistence -----------------------------------------------------------

    def save(self, path, with_moments=True):
        nn.save_checkpoint(self.store, path, with_moments)

    def load(self, path, with_moments=True):
        nn.load_checkpoint(self.store, path, with_moments)
        return self


def train(model, dataset, steps=None, epochs=None, checkpoint=None, history_path=None,
          progress=None):
    """Mini-batch Adam on ``dataset`` (M, N, 3). Returns the loss history.

    Runs ``steps`` optimizer steps (default ``config.max_steps``); when no
    step count is set anywhere, runs ``epochs`` passes' worth of batches
    instead. With ``checkpoint`` set, the parameters are written there after
    every epoch and at the last step. History rows are ``(step, epoch, loss)``.
    """
    cfg = model.config
    data = np.asarray(dataset, dtype=np.float64)
    if data.ndim != 3 or data.shape[1:] != (model.template.n_vertices, 3):
        raise TrainingError(
            f"dataset must be (M, {model.template.n_vertices}, 3), got {data.shape}")
    steps = cfg.max_steps if steps is None else steps
    epochs = cfg.epochs if epochs is None else epochs
    rng = np.random.default_rng(cfg.seed + 1)
    m = len(data)
    batch_size = min(cfg.batch_size, m)
    if steps is None:
        steps = epochs * math.ceil(m / batch_size)
    history = []
    hist_fh = open(history_path, "w") if history_path else None
    # batches are cut from a stream of per-epoch permutations, so every
    # batch holds batch_size distinct-as-possible samples even when the
    # dataset size is not a multiple of it
    queue = np.empty(0, dtype=np.int64)
    seen = 0
    try:
        if hist_fh:
            hist_fh.write("step,epoch,loss\n")
        for step in range(1, steps + 1):
            while len(queue) < batch_size:
                queue = np.concatenate([queue, rng.permutation(m)])
            idx, queue = queue[:batch_size], queue[batch_size:]
            epoch = seen // m
            seen += batch_size
            loss = model.loss_and_grad(data[idx])
            if not np.isfinite(loss):
                raise TrainingError(
                    f"non-finite loss {loss} at step {step} (epoch {epoch}); "
                    f"max |param| = {max(np.abs(p.value).max() for _, p in model.store.items()):.3g}")
            model.adam_step()
            history.append((step, epoch, loss))
            if hist_fh:
                hist_fh.write(f"{step},{epoch},{loss!r}\n")
            if progress and step % progress == 0:
                log.info("step %d epoch %d loss %.6g", step, epoch, loss)
            if checkpoint and (seen // m > epoch or step == steps):
                model.save(checkpoint)
    finally:
        if hist_fh:
            hist_fh.close()
    return history
