"""Two-stage forward pass, alternating critic/generator updates, and the training loop."""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import losses as L
from . import tensor as T
from .attention import side_branch
from .cubemap import stitch_side_faces
from .layers import InpaintModel, ModelConfig, cube_input, face_generator
from .losses import LossReport, LossWeights
from .masks import MaskSpec, sample_mask
from .tensor import GradTape, Tensor

logger = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    lr: float = 4e-4
    batch_size: int = 2
    face_size: int = 32
    channels: int = 16
    critic_steps: int = 1
    steps: int = 500
    seed: int = 0
    gated: bool = True
    use_cr: bool = True
    circular_strip: bool = True
    attn_level: int = 2
    patch_size: int = 3
    temperature: float = 0.1
    disc_layers: int = 5
    composite_critic_input: bool = True
    gp_penalize_known: bool = True
    sides_only: bool = False
    mask_lo: float = 0.1
    mask_hi: float = 0.3
    beta1: float = 0.5
    beta2: float = 0.999
    adam_eps: float = 1e-8
    lambda_mask: float = 10.0
    lambda_non_mask: float = 1.0
    lambda_d: float = 1.0
    lambda_g: float = 0.001
    lambda_cr: float = 1.0
    lambda_gp: float = 10.0
    alpha: float = 1.0
    data: str = ""
    num_images: int = 4
    out_dir: str = "runs/default"
    checkpoint_every: int = 0
    dump_every: int = 0

    def __post_init__(self):
        for name in ("lr", "batch_size", "face_size", "channels", "critic_steps", "patch_size",
                     "temperature", "num_images", "disc_layers"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.steps < 0:
            raise ConfigError(f"steps must be >= 0, got {self.steps}")
        if not 1 <= self.attn_level <= 6:
            raise ConfigError(f"attn_level must be in 1..6, got {self.attn_level}")
        self.weights()
        try:
            self.mask_spec()
        except ValueError as exc:
            raise ConfigError(f"mask_lo/mask_hi: {exc}") from None

    def weights(self) -> LossWeights:
        try:
            return LossWeights(self.lambda_mask, self.lambda_non_mask, self.lambda_d,
                               self.lambda_g, self.lambda_cr, self.lambda_gp, self.alpha)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def model_config(self) -> ModelConfig:
        return ModelConfig(self.face_size, self.channels, self.gated, self.use_cr,
                           self.circular_strip, self.attn_level, self.patch_size, 1,
                           self.temperature, self.disc_layers)

    def mask_spec(self) -> MaskSpec:
        return MaskSpec(self.mask_lo, self.mask_hi)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, values: dict) -> "TrainConfig":
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            if key not in types:
                raise ConfigError(f"unknown config key: {key}")
            kwargs[key] = _coerce(key, raw, getattr(cls, key, None))
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path) -> "TrainConfig":
        return cls.from_dict(read_key_values(path))

    def write(self, path) -> None:
        Path(path).write_text("".join(f"{k}={v}\n" for k, v in self.to_dict().items()))


def _coerce(key: str, raw, default):
    if not isinstance(raw, str):
        return raw
    try:
        if isinstance(default, bool):
            low = raw.strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"bad value for config key {key}: {raw!r}") from None
    return raw


def read_key_values(path) -> dict[str, str]:
    """Parse ``key=value`` lines; blank lines and ``#`` comments are ignored."""
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


# ---------------------------------------------------------------- forward pass

@dataclass
class PipelineOutput:
    x_hat: Tensor             # (N, 18, S, S) Cube Generator output
    y: Tensor | None          # (N, 18, S, S) side-branch output, training only
    strip: Tensor             # (N, 3, S, 4S) Face Generator output
    incomplete: np.ndarray    # (N, 18, S, S) X ⊙ (1 − M)
    mask: np.ndarray          # (N, 18, S, S) mask broadcast over RGB

    def composite(self) -> Tensor:
        return T.add(T.mul(self.x_hat, Tensor(self.mask.astype(self.x_hat.dtype))),
                     Tensor(self.incomplete.astype(self.x_hat.dtype)))


def faces_to_channels(faces: np.ndarray) -> np.ndarray:
    """(N, 6, C, S, S) -> (N, 6*C, S, S), face-major."""
    n, f, c, s, _ = faces.shape
    return faces.reshape(n, f * c, s, s)


def channels_to_faces(x: np.ndarray, c: int = 3) -> np.ndarray:
    n, fc, s, _ = x.shape
    return x.reshape(n, fc // c, c, s, s)


def forward_pipeline(model: InpaintModel, x: np.ndarray, mask: np.ndarray,
                     with_side: bool | None = None) -> PipelineOutput:
    """Face Generator on the side strip, then the Cube Generator on all six faces.

    ``x`` is (N, 6, 3, S, S) ground truth, ``mask`` (N, 6, 1, S, S) with 1 = missing.
    """
    dtype = model.face_gen.encoder[0].feature_weight.dtype
    x = np.asarray(x, dtype=dtype)
    mask = np.asarray(mask, dtype=dtype)
    if x.ndim != 5 or x.shape[1:3] != (6, 3) or mask.shape != x.shape[:2] + (1,) + x.shape[3:]:
        raise ValueError(f"expected faces (N, 6, 3, S, S) and masks (N, 6, 1, S, S), "
                         f"got {x.shape} and {mask.shape}")
    n, _, _, s, _ = x.shape
    incomplete = x * (1 - mask)
    strip_i = stitch_side_faces(incomplete)
    strip_m = stitch_side_faces(mask)
    strip_out = face_generator(model.face_gen, Tensor(strip_i), Tensor(strip_m))
    strip_comp = T.add(T.mul(strip_out, Tensor(strip_m)), Tensor(strip_i))
    sides = T.transpose(T.reshape(strip_comp, (n, 3, s, 4, s)), (0, 3, 1, 2, 4))
    faces_in = T.concat([sides, Tensor(incomplete[:, 4:])], axis=1)
    cube_in = cube_input(faces_in, Tensor(mask))
    feats, sizes = model.cube_gen.encode(cube_in)
    x_hat = model.cube_gen.decoder(feats[-1], sizes)
    if with_side is None:
        with_side = model.config.use_cr
    y = None
    if with_side:
        y = side_branch(model, feats[model.config.attn_level - 1], mask, sizes)
    mask18 = np.repeat(mask, 3, axis=2)
    return PipelineOutput(x_hat, y, strip_out, faces_to_channels(incomplete),
                          faces_to_channels(mask18))


def inpaint(model: InpaintModel, x: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Composited (N, 6, 3, S, S) result; known pixels are copied from ``x``."""
    with T.no_grad():
        out = forward_pipeline(model, x, mask, with_side=False)
        comp = out.composite().data
    return channels_to_faces(comp)


# ---------------------------------------------------------------- optimiser

@dataclass
class AdamState:
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_update(params: dict[str, Tensor], grads: dict[str, np.ndarray], state: AdamState,
                lr: float) -> None:
    """In-place bias-corrected adaptive-moment step over ``params``."""
    state.step += 1
    t = state.step
    c1 = 1 - state.beta1 ** t
    c2 = 1 - state.beta2 ** t
    for name, p in params.items():
        g = np.asarray(grads[name])
        if g.shape != p.shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= state.beta1
        m += (1 - state.beta1) * g
        v *= state.beta2
        v += (1 - state.beta2) * g * g
        p.data = p.data - (lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype)


# ---------------------------------------------------------------- one step

def _slices(t: Tensor) -> Tensor:
    n, fc, s, _ = t.shape
    return T.reshape(t, (n * fc // 3, 3, s, s))


def _check_finite(values: dict[str, float]) -> None:
    for name, v in values.items():
        if not math.isfinite(v):
            raise FloatingPointError(f"non-finite loss component {name}: {v}")


def critic_losses(model: InpaintModel, real: Tensor, fake: Tensor, mask: np.ndarray,
                  rng: np.random.Generator, penalize_known: bool = True):
    """WGAN critic loss and masked gradient penalty summed over both critics."""
    m = Tensor(mask.astype(real.dtype))
    d_wgan = T.add(L.wgan_d_loss(model.slice_d(_slices(real)), model.slice_d(_slices(fake))),
                   L.wgan_d_loss(model.whole_d(real), model.whole_d(fake)))
    gp_whole = L.gradient_penalty(model.whole_d, L.interpolate(real, fake, rng), m,
                                  penalize_known)
    gp_slice = L.gradient_penalty(model.slice_d, L.interpolate(_slices(real), _slices(fake), rng),
                                  _slices(m), penalize_known)
    return d_wgan, T.add(gp_whole, gp_slice)


def train_step(model: InpaintModel, x: np.ndarray, mask: np.ndarray, opt_g: AdamState,
               opt_d: AdamState, config: TrainConfig, rng: np.random.Generator) -> LossReport:
    """One critic update (or ``critic_steps``) followed by one generator update."""
    w = config.weights()
    real = Tensor(faces_to_channels(np.asarray(x, np.float32)))
    critic_params = dict(model.named_critic_parameters())
    for _ in range(config.critic_steps):
        with T.no_grad():
            out = forward_pipeline(model, x, mask, with_side=False)
            fake = out.composite() if config.composite_critic_input else out.x_hat
        fake = Tensor(fake.data)
        with GradTape() as tape:
            d_wgan, gp = critic_losses(model, real, fake, out.mask, rng, config.gp_penalize_known)
            loss_d = T.add(T.mul(d_wgan, w.d_wgan), T.mul(gp, w.gp))
        _check_finite({"d_wgan": d_wgan.item(), "gp": gp.item()})
        grads = tape.gradient(loss_d, list(critic_params.values()))
        adam_update(critic_params, {k: g.data for k, g in zip(critic_params, grads)}, opt_d,
                    config.lr)

    gen_params = dict(model.named_generator_parameters())
    with GradTape() as tape:
        out = forward_pipeline(model, x, mask)
        fake = out.composite() if config.composite_critic_input else out.x_hat
        g_wgan = T.add(L.wgan_g_loss(model.slice_d(_slices(fake))),
                       L.wgan_g_loss(model.whole_d(fake)))
        m = Tensor(out.mask)
        l1m = L.l1_mask(out.x_hat, real, m)
        l1n = L.l1_non_mask(out.x_hat, real, m)
        loss_g = T.add(T.add(T.mul(l1m, w.l1_mask), T.mul(l1n, w.l1_non_mask)),
                       T.mul(g_wgan, w.g_wgan))
        cr = None
        if out.y is not None:
            cr = L.cr_loss(out.y, real, Tensor(out.incomplete), m, model.whole_d, w.alpha)
            loss_g = T.add(loss_g, T.mul(cr, w.cr))
    values = {"g_wgan": g_wgan.item(), "d_wgan": d_wgan.item(), "gp": gp.item(),
              "l1_mask": l1m.item(), "l1_non_mask": l1n.item(),
              "cr": cr.item() if cr is not None else 0.0}
    _check_finite(values)
    grads = tape.gradient(loss_g, list(gen_params.values()))
    adam_update(gen_params, {k: g.data for k, g in zip(gen_params, grads)}, opt_g, config.lr)
    total = float(L.total_loss(values, w))
    return LossReport(total=total, **values)


# ---------------------------------------------------------------- loop

class Trainer:
    """Owns model, optimisers, RNG stream and data for a training run."""

    def __init__(self, config: TrainConfig, faces: np.ndarray | None = None):
        self.config = config
        self.rng = np.random.default_rng(config.seed)
        self.model = InpaintModel(config.model_config(), self.rng)
        self.opt_g = AdamState(config.beta1, config.beta2, config.adam_eps)
        self.opt_d = AdamState(config.beta1, config.beta2, config.adam_eps)
        self.step_count = 0
        self.faces = faces if faces is not None else load_training_faces(config)
        if self.faces.shape[-1] != config.face_size:
            raise ConfigError(f"data face size {self.faces.shape[-1]} != face_size "
                              f"{config.face_size}")

    def next_batch(self) -> tuple[np.ndarray, np.ndarray]:
        cfg = self.config
        n = len(self.faces)
        idx = self.rng.choice(n, cfg.batch_size, replace=n < cfg.batch_size)
        spec = cfg.mask_spec()
        masks = np.stack([sample_mask(spec, cfg.face_size, self.rng, cfg.sides_only)
                          for _ in idx])[:, :, None]
        return self.faces[idx], masks

    def step(self) -> LossReport:
        x, mask = self.next_batch()
        report = train_step(self.model, x, mask, self.opt_g, self.opt_d, self.config, self.rng)
        self.step_count += 1
        return report

    def run(self, steps: int | None = None, log_path=None, checkpoint_dir=None,
            callback=None) -> list[LossReport]:
        """Train until ``steps`` total steps, appending rows to a loss CSV if given."""
        from .checkpoint import save_checkpoint

        steps = self.config.steps if steps is None else steps
        reports = []
        writer = fh = None
        if log_path is not None:
            new = not Path(log_path).exists() or self.step_count == 0
            fh = open(log_path, "w" if new else "a", newline="")
            writer = csv.writer(fh)
            if new:
                writer.writerow(LossReport.CSV_HEADER)
        try:
            while self.step_count < steps:
                report = self.step()
                reports.append(report)
                if writer is not None:
                    writer.writerow([self.step_count] + [repr(v) for v in report.as_row()])
                    fh.flush()
                every = self.config.checkpoint_every
                if checkpoint_dir is not None and every and self.step_count % every == 0:
                    save_checkpoint(Path(checkpoint_dir) / f"step_{self.step_count:06d}", self)
                if self.config.dump_every and checkpoint_dir is not None \
                        and self.step_count % self.config.dump_every == 0:
                    self.dump_triptych(Path(checkpoint_dir) / f"sample_{self.step_count:06d}.png")
                if callback is not None:
                    callback(self.step_count, report)
        finally:
            if fh is not None:
                fh.close()
        return reports

    def dump_triptych(self, path) -> None:
        """PNG of input / composite / ground truth side strips for the first image."""
        from .data import save_image

        x = self.faces[:1]
        mask = sample_mask(self.config.mask_spec(), self.config.face_size,
                           np.random.default_rng(self.step_count))[None, :, None]
        out = inpaint(self.model, x, mask)
        rows = [stitch_side_faces(a[0]) for a in (x * (1 - mask), out, x)]
        save_image(path, np.concatenate(rows, axis=1))


def load_training_faces(config: TrainConfig) -> np.ndarray:
    from .data import load_faces_dir, synthetic_faces

    if config.data:
        faces, _ = load_faces_dir(config.data, config.face_size, config.num_images)
        return faces
    return synthetic_faces(config.num_images, config.face_size, config.seed)
