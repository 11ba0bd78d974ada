"""Training, inference and the ablation driver.

Each epoch draws its batch order, crop offsets and flips from
``np.random.default_rng([seed, epoch])``, so a run resumed from any
checkpoint replays exactly the batches an uninterrupted run would have seen.

Output directory layout::

    out_dir/
        loss.csv          step,l_int,l_grad,l_ssim,total
        ckpt_<epoch>.bin  see filmfuse.checkpoint
        latest            file name of the newest checkpoint
"""

import csv
import logging
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np
import torch

from . import checkpoint, losses, metrics
from .errors import ContractError, NumericFault
from .fusionnet import DESK_NET, NetConfig, build_net, fuse_arrays, no_text_config, parity_gap
from .imaging import load_image, to_luma_chroma
from .vlfdata import build_dataset, fuse_text_features, read_manifest

log = logging.getLogger(__name__)

LOG_COLUMNS = ("step", "l_int", "l_grad", "l_ssim", "total")
LATEST = "latest"


@dataclass(frozen=True)
class TrainConfig:
    task: str = "IVF"
    epochs: int = 300
    batch_size: int = 16
    lr0: float = 1e-4
    lr_decay: float = 0.5
    decay_every: int = 50
    crop_size: int = 128
    seed: int = 0
    clip_norm: float = 1.0
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    ckpt_every: int = 10
    flip: bool = True
    max_steps: int = 0  # 0: no limit

    def __post_init__(self):
        losses.task_config(self.task)
        if self.epochs < 1 or self.batch_size < 1 or self.crop_size < 8:
            raise ContractError("epochs and batch_size must be >= 1 and crop_size >= 8")

    def to_dict(self):
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ContractError(f"unknown train settings {sorted(unknown)}")
        d = dict(d)
        if "betas" in d:
            d["betas"] = tuple(d["betas"])
        return cls(**d)


FULL_TRAIN = TrainConfig()
DESK_TRAIN = TrainConfig(epochs=30, batch_size=4, crop_size=64)
PROFILES = {"full": (NetConfig(), FULL_TRAIN), "desk": (DESK_NET, DESK_TRAIN)}


def lr_schedule(epoch, lr0=FULL_TRAIN.lr0, decay=FULL_TRAIN.lr_decay, every=FULL_TRAIN.decay_every):
    if epoch < 0:
        raise ContractError(f"epoch must be >= 0, got {epoch}")
    return lr0 * decay ** (epoch // every)


@dataclass
class Sample:
    pair_id: str
    i1: np.ndarray
    i2: np.ndarray
    text: np.ndarray | None = None


def _luma(img):
    return to_luma_chroma(img)[0]


def samples_from_manifest(path, with_text=True):
    path = Path(path)
    out = []
    for rec in read_manifest(path):
        if not rec.image_1 or not rec.image_2:
            raise ContractError(f"record {rec.pair_id} has no image references")
        text = fuse_text_features(*rec.load_embeddings(path.parent)) if with_text else None
        out.append(Sample(rec.pair_id, _luma(load_image(rec.resolve(path.parent, rec.image_1))),
                          _luma(load_image(rec.resolve(path.parent, rec.image_2))), text))
    return out


def samples_from_dir(root):
    """Pair folders ``root/<id>/{1,2}.png`` (or .pgm/.ppm), sorted by name."""
    out = []
    for d in sorted(p for p in Path(root).iterdir() if p.is_dir()):
        a = _first(d, "1")
        b = _first(d, "2")
        if a and b:
            out.append(Sample(d.name, _luma(load_image(a)), _luma(load_image(b))))
    if not out:
        raise FileNotFoundError(f"no image pairs under {root}")
    return out


def _first(d, stem):
    for ext in (".png", ".pgm", ".ppm"):
        if (d / f"{stem}{ext}").is_file():
            return d / f"{stem}{ext}"
    return None


def _text_batch(texts, dtype):
    """Pad variable-length token matrices; returns ``(text, mask)``."""
    n = max(t.shape[0] for t in texts)
    d = texts[0].shape[1]
    out = torch.zeros(len(texts), n, d, dtype=dtype)
    mask = torch.zeros(len(texts), n, dtype=torch.bool)
    for k, t in enumerate(texts):
        out[k, :t.shape[0]] = torch.from_numpy(np.asarray(t, dtype=np.float32)).to(dtype)
        mask[k, :t.shape[0]] = True
    if bool(mask.all()):
        mask = None
    return out, mask


def epoch_plan(samples, cfg, epoch):
    """Batches for one epoch: lists of ``(index, top, left, flip)``."""
    rng = np.random.default_rng([cfg.seed, epoch])
    order = rng.permutation(len(samples))
    crop = crop_size(samples, cfg)
    plan = []
    for k in order:
        h, w = samples[k].i1.shape
        top = int(rng.integers(0, h - crop + 1))
        left = int(rng.integers(0, w - crop + 1))
        flip = bool(rng.random() < 0.5) and cfg.flip
        plan.append((int(k), top, left, flip))
    return [plan[s:s + cfg.batch_size] for s in range(0, len(plan), cfg.batch_size)]


def crop_size(samples, cfg):
    return min(cfg.crop_size, *(min(s.i1.shape) for s in samples))


def make_batch(samples, items, crop, use_text, dtype=torch.float32):
    """Aligned crops of both sources (same window, same flip), plus padded text."""
    a, b, texts = [], [], []
    for k, top, left, _ in items:
        s = samples[k]
        window = slice(top, top + crop), slice(left, left + crop)
        a.append(s.i1[window])
        b.append(s.i2[window])
        texts.append(s.text)
    a, b = np.stack(a), np.stack(b)
    flips = np.array([it[3] for it in items])
    a[flips] = a[flips, :, ::-1]
    b[flips] = b[flips, :, ::-1]
    ta = torch.from_numpy(np.ascontiguousarray(a)).to(dtype)[:, None]
    tb = torch.from_numpy(np.ascontiguousarray(b)).to(dtype)[:, None]
    if not use_text:
        return ta, tb, None, None
    if any(t is None for t in texts):
        raise ContractError("the network needs text but some samples have none")
    text, mask = _text_batch(texts, dtype)
    return ta, tb, text, mask


def _write_latest(out_dir, name):
    tmp = out_dir / (LATEST + ".tmp")
    tmp.write_text(name + "\n")
    tmp.replace(out_dir / LATEST)


def latest_checkpoint(out_dir):
    p = Path(out_dir) / LATEST
    if not p.is_file():
        return None
    return Path(out_dir) / p.read_text().strip()


def _make_optimizer(net, cfg, epoch):
    return torch.optim.Adam(net.parameters(), lr=lr_schedule(epoch, cfg.lr0, cfg.lr_decay, cfg.decay_every),
                            betas=cfg.betas, eps=cfg.eps)


def train(samples, net_cfg, cfg, out_dir, resume=False, on_step=None):
    """Train on ``samples`` and return the final :class:`checkpoint.Checkpoint`.

    With ``resume`` the newest checkpoint in ``out_dir`` is loaded and training
    continues from the batch after it. A non-finite loss aborts with
    :class:`NumericFault`; checkpoints already written are kept.
    """
    if not samples:
        raise ContractError("empty training set")
    task_cfg = losses.task_config(cfg.task)
    if not task_cfg.trainable:
        raise losses.UnsupportedTaskError(f"{cfg.task} is not trained; use an IVF checkpoint")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    net = build_net(net_cfg, seed=cfg.seed)
    epoch, batch, step = 0, 0, 0
    opt = _make_optimizer(net, cfg, 0)
    ckpt_path = latest_checkpoint(out_dir) if resume else None
    if ckpt_path is not None:
        ck = checkpoint.load(ckpt_path)
        if ck.net_cfg != net_cfg:
            raise ContractError("checkpoint network config differs from the requested one")
        net = ck.build()
        epoch, batch, step = ck.epoch, ck.batch, ck.step
        opt = _make_optimizer(net, cfg, epoch)
        checkpoint.restore_optimizer(opt, net, ck)
        log.info("resumed from %s at epoch %d batch %d", ckpt_path, epoch, batch)
    net.train()

    log_path = out_dir / "loss.csv"
    fresh = ckpt_path is None
    log_file = open(log_path, "w" if fresh else "a", newline="")
    writer = csv.writer(log_file)
    if fresh:
        writer.writerow(LOG_COLUMNS)

    def snapshot(e, b):
        ck = checkpoint.from_training(net, opt, cfg.seed, cfg.task, e, b, step, cfg.to_dict())
        name = f"ckpt_{e:04d}.bin" if b == 0 else f"ckpt_{e:04d}_{b:04d}.bin"
        checkpoint.save(out_dir / name, ck)
        _write_latest(out_dir, name)
        return ck

    crop = crop_size(samples, cfg)
    last = None
    try:
        while epoch < cfg.epochs:
            for group in opt.param_groups:
                group["lr"] = lr_schedule(epoch, cfg.lr0, cfg.lr_decay, cfg.decay_every)
            plan = epoch_plan(samples, cfg, epoch)
            while batch < len(plan):
                a, b, text, mask = make_batch(samples, plan[batch], crop, net_cfg.use_text)
                opt.zero_grad(set_to_none=True)
                out = net(a, b, text, mask)
                terms = losses.loss_terms(out, a, b, task_cfg)
                total = terms["total"]
                if not torch.isfinite(total):
                    raise NumericFault(f"non-finite loss at step {step + 1}")
                total.backward()
                torch.nn.utils.clip_grad_norm_(net.parameters(), cfg.clip_norm)
                opt.step()
                step += 1
                batch += 1
                row = [step] + [float(terms[k].detach()) if terms[k] is not None else 0.0 for k in LOG_COLUMNS[1:]]
                writer.writerow([row[0]] + [repr(v) for v in row[1:]])
                if on_step is not None:
                    on_step(step, dict(zip(LOG_COLUMNS, row)))
                if cfg.max_steps and step >= cfg.max_steps:
                    break
            if batch >= len(plan):
                epoch, batch = epoch + 1, 0
            if cfg.max_steps and step >= cfg.max_steps:
                break
            if epoch % cfg.ckpt_every == 0:
                last = snapshot(epoch, batch)
        log_file.flush()
        if last is None or (last.epoch, last.batch) != (epoch, batch):
            last = snapshot(epoch, batch)
    finally:
        log_file.close()
    return last


def read_log(path):
    with open(path, newline="") as fh:
        return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(fh)]


def infer(ckpt, i1, i2, text=None, task=None):
    """Fused luma plane for a pair of luma images.

    Medical (MIF) pairs reuse a checkpoint trained on infrared-visible data.
    """
    if not isinstance(ckpt, checkpoint.Checkpoint):
        ckpt = checkpoint.load(ckpt)
    if task is not None:
        task = task.upper()
        allowed = {"IVF"} if task == "MIF" else {task}
        if ckpt.task not in allowed:
            raise ContractError(f"{task} inference needs a {'/'.join(sorted(allowed))} checkpoint, got {ckpt.task}")
    net = ckpt.build().eval()
    return fuse_arrays(net, i1, i2, text if net.cfg.use_text else None)


ABLATION_VARIANTS = ("full", "no_text", "no_caption", "no_dc_sm", "no_sm", "no_gpt")


def evaluate(ckpt, samples, workers=1):
    """Metric rows for every sample plus their mean."""
    net = ckpt.build().eval()
    fused = [fuse_arrays(net, s.i1, s.i2, s.text if net.cfg.use_text else None) for s in samples]
    rows = metrics.report_many([(s.pair_id, f, s.i1, s.i2) for s, f in zip(samples, fused)], workers)
    return rows, metrics.mean_report(rows)


def run_ablation(variant, train_pairs, test_pairs, clients, out_dir, net_cfg=DESK_NET, train_cfg=DESK_TRAIN):
    """Train and evaluate one ablation variant; returns the mean metric row.

    ``train_pairs``/``test_pairs``: lists of ``(pair_id, i1, i2)`` luma arrays.
    The descriptions for each variant come from the caption pipeline run in
    that variant's mode; ``no_text`` skips it and uses the parameter-matched
    text-free network.
    """
    if variant not in ABLATION_VARIANTS:
        raise ContractError(f"unknown variant {variant!r}; expected one of {ABLATION_VARIANTS}")
    out_dir = Path(out_dir) / variant
    if variant == "no_text":
        cfg = no_text_config(net_cfg)
        gap = parity_gap(net_cfg)
        if abs(gap) > 0.05:
            raise ContractError(f"no_text parameter gap {gap:+.1%} exceeds 5%")
        log.info("no_text parity gap %+.2f%%", 100 * gap)
        train_s = [Sample(pid, a, b) for pid, a, b in train_pairs]
        test_s = [Sample(pid, a, b) for pid, a, b in test_pairs]
    else:
        cfg = net_cfg
        train_s = _described(train_pairs, clients, out_dir / "train", variant, train_cfg, net_cfg)
        test_s = _described(test_pairs, clients, out_dir / "test", variant, train_cfg, net_cfg)
    ck = train(train_s, cfg, train_cfg, out_dir / "run")
    _, mean = evaluate(ck, test_s)
    return replace(mean, image_id=variant)


def _described(pairs, clients, out_dir, variant, train_cfg, net_cfg):
    items = [(pid, a, b, ("", "")) for pid, a, b in pairs]
    _, records = build_dataset(items, clients, out_dir, task=train_cfg.task, variant=variant,
                               embed_dim=net_cfg.text_dim, seed=train_cfg.seed)
    out = []
    for (pid, a, b), rec in zip(pairs, records):
        out.append(Sample(pid, a, b, fuse_text_features(*rec.load_embeddings(out_dir))))
    return out

