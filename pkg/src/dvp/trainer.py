"""Training loop: pretraining on the noise-approximation loss, then the full
loss with interleaved variance updates."""
from __future__ import annotations

import ctypes
import ctypes.util
import logging
import sys
from contextlib import nullcontext
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from .autodiff import Adam, GradientError, Tensor, slice_batch
from .config import TrainConfig, format_config, parse_config
from .dvpcore import UpdateBuffer, s2_update
from .network import Architecture, DnCNN
from .noise import AuxiliarySample, NoiseSpec, VarianceModel, eval_f, sample_z
from .objective import lc_from_outputs, lhat_from_output
from .perturb import compute_weights, make_perturbed, select_subset

logger = logging.getLogger(__name__)

STREAMS = ("init", "noise", "crop", "z", "perturb")
LOSS_HEADER = "loss\tstep\tphase\tlhat\tlc\ttotal\tlr\talpha"
S2_HEADER = "s2\tstep\tvalid\tbeta_before\tbeta_after\tlperp\tm"


class DataError(ValueError):
    pass


def tune_allocator() -> bool:
    """Keep large temporaries on the heap (glibc only); avoids page faults
    from mmap-backed allocations being returned and re-faulted every step."""
    if not sys.platform.startswith("linux"):
        return False
    name = ctypes.util.find_library("c")
    if name is None:
        return False
    try:
        libc = ctypes.CDLL(name)
        ok = libc.mallopt(-3, 1 << 30)  # M_MMAP_THRESHOLD
        ok &= libc.mallopt(-1, (1 << 31) - 1)  # M_TRIM_THRESHOLD
        ok &= libc.mallopt(-2, 1 << 28)  # M_TOP_PAD
        return bool(ok)
    except (OSError, AttributeError):
        return False


def make_streams(seed: int) -> dict[str, np.random.Generator]:
    children = np.random.SeedSequence(seed).spawn(len(STREAMS))
    return {name: np.random.Generator(np.random.PCG64(s)) for name, s in zip(STREAMS, children)}


@dataclass
class Dataset:
    names: list[str]
    images: list[np.ndarray]

    def __len__(self) -> int:
        return len(self.images)


def prepare_dataset(names: list[str], clean: list[np.ndarray], cfg: TrainConfig,
                    rng: np.random.Generator) -> Dataset:
    """Apply the configured synthetic noise once, so every epoch sees the
    same noisy observation of each image. ``noise.kind = none`` means the
    images are already noisy."""
    if not clean:
        raise DataError("dataset is empty")
    images = []
    for name, img in zip(names, clean):
        img = np.asarray(img, dtype=np.float64)
        if img.ndim != 2:
            raise DataError(f"{name}: expected a grayscale image, got shape {img.shape}")
        if min(img.shape) < cfg.crop_size:
            raise DataError(f"{name}: image {img.shape[0]}x{img.shape[1]} is smaller than "
                            f"crop_size {cfg.crop_size}")
        if cfg.noise_kind != "none":
            spec = NoiseSpec(cfg.noise_kind, cfg.noise_sigma, cfg.noise_lambda)
            img = spec.apply(img, rng)
        images.append(img.astype(np.float32))
    return Dataset(list(names), images)


def crop_batch(dataset: Dataset, batch_size: int, crop_size: int,
               rng: np.random.Generator) -> np.ndarray:
    """(batch, crop, crop) array of random crops from uniformly chosen images."""
    idx = rng.integers(0, len(dataset), size=batch_size)
    out = np.empty((batch_size, crop_size, crop_size), dtype=np.float32)
    for b, i in enumerate(idx):
        img = dataset.images[i]
        h, w = img.shape
        if h < crop_size or w < crop_size:
            raise DataError(f"{dataset.names[i]}: image {h}x{w} is smaller than crop_size {crop_size}")
        r = rng.integers(0, h - crop_size + 1)
        c = rng.integers(0, w - crop_size + 1)
        out[b] = img[r:r + crop_size, c:c + crop_size]
    return out


@dataclass
class RunState:
    cfg: TrainConfig
    model: DnCNN
    optim: Adam
    vm: VarianceModel
    buffer: UpdateBuffer
    rngs: dict[str, np.random.Generator]
    step: int = 0
    log: list[str] = field(default_factory=list)
    beta_history: list[tuple[int, list[float]]] = field(default_factory=list)

    @property
    def phase(self) -> str:
        return "pretrain" if self.step < self.cfg.pretrain_steps else "full"

    @property
    def s2_updates(self) -> int:
        return sum(1 for line in self.log if line.startswith("s2\t"))


def init_state(cfg: TrainConfig) -> RunState:
    cfg.validate()
    rngs = make_streams(cfg.seed)
    model = DnCNN(Architecture(cfg.depth, cfg.channels), rngs["init"])
    optim = Adam(model.params, lr=cfg.lr_at(0))
    vm = VarianceModel(np.array(cfg.beta_init), cfg.eps_var)
    return RunState(cfg, model, optim, vm, UpdateBuffer(), rngs)


def _fmt(v: float) -> str:
    return repr(float(v))


def _fmt_vec(values) -> str:
    return ",".join(_fmt(v) for v in values)


def full_loss(model: DnCNN, y: np.ndarray, z: np.ndarray, alpha: float, perts: list,
              gamma: float, eps_var: float = 1e-8):
    """Batched ``L_hat + gamma L_c`` with yhat1, yhat2, yhat3 stacked into one
    forward pass. Returns the loss tensors and the cached r1, r2 arrays."""
    n = y.shape[0]
    yhat1 = np.stack([p.yhat1 for p in perts])
    yhat2 = np.stack([p.yhat2 for p in perts])
    yhat3 = np.stack([p.yhat3 for p in perts])
    out = model(Tensor(np.concatenate([yhat1, yhat2, yhat3])[:, None]))
    r1, r2, r3 = (slice_batch(out, k * n, (k + 1) * n) for k in range(3))
    lhat = lhat_from_output(r1, y[:, None], z[:, None], alpha)
    r1d, r2d = r1.data[:, 0], r2.data[:, 0]
    w = np.stack([compute_weights(r1d[b], r2d[b], p.S, yhat1[b], yhat2[b], eps_var).w
                  for b, p in enumerate(perts)])
    count = sum(len(p.S) for p in perts)
    tau = np.array([p.tau1 for p in perts])
    lc = lc_from_outputs(r1, r2, r3, tau, w[:, None], count)
    total = lhat + lc * gamma if gamma > 0 else lhat
    return lhat, lc, total, r1d, r2d


def train_step(state: RunState, dataset: Dataset) -> list[str]:
    """One optimisation step; returns the metrics lines it produced."""
    cfg, model = state.cfg, state.model
    lines: list[str] = []
    y = crop_batch(dataset, cfg.batch_size, cfg.crop_size, state.rngs["crop"])
    pretrain = state.phase == "pretrain"
    if pretrain:
        alpha = cfg.alpha_pretrain
    else:
        alpha = float(state.rngs["z"].uniform(*cfg.alpha_range))
    z = sample_z(y, state.vm, state.rngs["z"])
    yhat1 = y + np.float32(alpha) * z
    n = cfg.batch_size
    lr = cfg.lr_at(state.step)
    state.optim.state.lr = lr
    model.zero_grad()

    if pretrain:
        out = model(Tensor(yhat1[:, None]))
        lhat = lhat_from_output(out, y[:, None], z[:, None], alpha)
        total, lc_value = lhat, 0.0
    else:
        subsets, perts = [], []
        for b in range(n):
            S = select_subset(cfg.crop_size, cfg.crop_size, state.rngs["perturb"])
            aux = AuxiliarySample(z[b], alpha, yhat1[b])
            perts.append(make_perturbed(aux, y[b], state.vm, S, state.rngs["perturb"]))
            subsets.append(S)
        lhat, lc, total, r1d, r2d = full_loss(model, y, z, alpha, perts, cfg.gamma, state.vm.eps_var)
        lc_value = float(lc.data)

    lhat_value, total_value = float(lhat.data), float(total.data)
    try:
        total.backward()
        state.optim.step()
    except GradientError as exc:
        logger.warning("step %d skipped: %s", state.step, exc)
        lines.append(f"skip\t{state.step}\t{exc}")
    model.zero_grad()

    if state.step % cfg.log_every == 0 or state.step == cfg.total_steps - 1:
        lines.append("\t".join(["loss", str(state.step), "pretrain" if pretrain else "full",
                                _fmt(lhat_value), _fmt(lc_value), _fmt(total_value), _fmt(lr),
                                _fmt(alpha)]))

    if not pretrain:
        j = state.step - cfg.pretrain_steps
        if j >= cfg.beta_freeze_steps:
            yhat2 = np.stack([p.yhat2 for p in perts])
            state.buffer.push(y, yhat1, yhat2, r1d, r2d, subsets, alpha)
            if (j - cfg.beta_freeze_steps + 1) % cfg.s2_delay == 0:
                before = state.vm.beta.copy()
                upd, est = s2_update(state.vm, state.buffer.flush(), cfg.upsilon)
                state.vm = upd.model
                state.beta_history.append((state.step, list(state.vm.beta)))
                lines.append("\t".join(["s2", str(state.step), str(upd.valid_bins), _fmt_vec(before),
                                        _fmt_vec(state.vm.beta), _fmt_vec(est.lperp), _fmt_vec(est.m)]))
    state.step += 1
    state.log.extend(lines)
    return lines


def to_checkpoint(state: RunState) -> ckpt.CheckpointData:
    st = state.optim.state
    return ckpt.CheckpointData(
        arch=state.model.arch, step=state.step,
        params=[np.asarray(p, np.float64) for p in state.model.get_flat()],
        adam_hyper=(st.lr, st.beta1, st.beta2, st.eps), adam_step=st.step,
        adam_m=[np.asarray(m, np.float64) for m in st.m],
        adam_v=[np.asarray(v, np.float64) for v in st.v],
        beta=state.vm.beta.copy(), eps_var=state.vm.eps_var,
        config_text=format_config(state.cfg),
        rng_state={k: g.bit_generator.state for k, g in state.rngs.items()},
        buffer=[dict(e) for e in state.buffer.entries],
    )


def from_checkpoint(data: ckpt.CheckpointData) -> RunState:
    cfg = parse_config(data.config_text)
    if (cfg.depth, cfg.channels) != (data.arch.depth, data.arch.channels):
        raise ckpt.CheckpointError("architecture in header disagrees with stored config")
    model = DnCNN(data.arch, np.random.default_rng(0))
    model.load_flat(data.params)
    optim = Adam(model.params, lr=data.adam_hyper[0], betas=data.adam_hyper[1:3], eps=data.adam_hyper[3])
    optim.state.step = data.adam_step
    optim.state.m = [np.asarray(m, model.dtype).copy() for m in data.adam_m]
    optim.state.v = [np.asarray(v, model.dtype).copy() for v in data.adam_v]
    vm = VarianceModel(data.beta.copy(), data.eps_var)
    rngs = {}
    for name in STREAMS:
        g = np.random.Generator(np.random.PCG64())
        g.bit_generator.state = data.rng_state[name]
        rngs[name] = g
    buffer = UpdateBuffer([dict(e) for e in (data.buffer or [])])
    return RunState(cfg, model, optim, vm, buffer, rngs, step=data.step)


def save_state(path, state: RunState) -> None:
    ckpt.save(path, to_checkpoint(state))


def load_state(path) -> RunState:
    return from_checkpoint(ckpt.load(path))


def _thread_limit(deterministic: bool):
    if not deterministic:
        return nullcontext()
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=1)


def train(cfg: TrainConfig, dataset: Dataset, out_dir: str | Path | None = None,
          state: RunState | None = None, deterministic: bool = False,
          stop_at: int | None = None) -> RunState:
    """Run (or continue) training until ``cfg.total_steps`` or ``stop_at``.

    With ``out_dir`` the metrics log is appended to ``metrics.tsv`` and
    checkpoints are written every ``checkpoint_every`` steps plus at exit.
    """
    tune_allocator()
    state = init_state(cfg) if state is None else state
    end = cfg.total_steps if stop_at is None else min(stop_at, cfg.total_steps)
    log_file = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        log_path = out_dir / "metrics.tsv"
        fresh = state.step == 0 or not log_path.exists()
        log_file = open(log_path, "w" if state.step == 0 else "a")
        if fresh:
            log_file.write(f"# {LOSS_HEADER}\n# {S2_HEADER}\n")
    try:
        with _thread_limit(deterministic):
            while state.step < end:
                lines = train_step(state, dataset)
                if log_file is not None and lines:
                    log_file.write("".join(line + "\n" for line in lines))
                    log_file.flush()
                if (out_dir is not None and cfg.checkpoint_every
                        and state.step % cfg.checkpoint_every == 0):
                    save_state(out_dir / "checkpoint.ckpt", state)
    finally:
        if log_file is not None:
            log_file.close()
    if out_dir is not None:
        save_state(out_dir / "checkpoint.ckpt", state)
    return state


def variance_table(vm: VarianceModel, levels: int = 256) -> np.ndarray:
    """(levels, 2) array of intensity ``l / (levels - 1)`` and ``f`` at it."""
    grid = np.arange(levels) / (levels - 1)
    return np.column_stack([grid, eval_f(vm, grid)])
