"""Checkpoint container.

Layout (little-endian)::

    offset  size  field
    0       4     magic  b"FLMC"
    4       2     version (u16, currently 1)
    6       4     header length H (u32)
    10      H     UTF-8 JSON header
    10+H    ...   tensor payload, float32, concatenated in header order

The JSON header holds ``net`` (NetConfig fields), ``seed``, ``task``,
``epoch``/``batch`` (position of the next batch to run), ``step`` (optimizer
steps taken), ``train`` (TrainConfig fields), ``adam`` (``betas``, ``eps`` and
per-parameter ``steps``) and ``tensors``: a list of ``{"name", "shape",
"offset"}`` entries where ``offset`` counts float32 elements from the start of
the payload. Parameter tensors are named ``param/<name>``; Adam moments are
``adam/exp_avg/<name>`` and ``adam/exp_avg_sq/<name>``.
"""

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .errors import FormatError
from .fusionnet import NetConfig, build_net

MAGIC = b"FLMC"
VERSION = 1
_HEAD = struct.Struct("<4sHI")


@dataclass
class Checkpoint:
    net_cfg: NetConfig
    params: dict
    seed: int = 0
    task: str = "IVF"
    epoch: int = 0
    batch: int = 0
    step: int = 0
    train: dict = field(default_factory=dict)
    adam: dict = field(default_factory=dict)
    moments: dict = field(default_factory=dict)

    def build(self):
        """Network with these parameters loaded."""
        net = build_net(self.net_cfg, seed=self.seed)
        state = {k: torch.from_numpy(v.copy()) for k, v in self.params.items()}
        net.load_state_dict(state)
        return net


def _tensor_items(ckpt):
    for name, arr in ckpt.params.items():
        yield f"param/{name}", arr
    for name, (m, v) in ckpt.moments.items():
        yield f"adam/exp_avg/{name}", m
        yield f"adam/exp_avg_sq/{name}", v


def save(path, ckpt):
    index, chunks, offset = [], [], 0
    for name, arr in _tensor_items(ckpt):
        a = np.ascontiguousarray(arr, dtype="<f4")
        index.append({"name": name, "shape": list(a.shape), "offset": offset})
        chunks.append(a.tobytes())
        offset += a.size
    header = {
        "net": ckpt.net_cfg.to_dict(),
        "seed": ckpt.seed,
        "task": ckpt.task,
        "epoch": ckpt.epoch,
        "batch": ckpt.batch,
        "step": ckpt.step,
        "train": ckpt.train,
        "adam": ckpt.adam,
        "tensors": index,
    }
    blob = json.dumps(header, sort_keys=True).encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(_HEAD.pack(MAGIC, VERSION, len(blob)) + blob + b"".join(chunks))
    tmp.replace(path)
    return path


def load(path):
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such checkpoint: {path}")
    raw = path.read_bytes()
    if len(raw) < _HEAD.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, hlen = _HEAD.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    try:
        header = json.loads(raw[_HEAD.size:_HEAD.size + hlen].decode())
        net_cfg = NetConfig.from_dict(header["net"])
        index = header["tensors"]
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"{path}: bad header: {exc}") from exc
    payload = raw[_HEAD.size + hlen:]
    total = sum(int(np.prod(t["shape"], dtype=np.int64)) for t in index)
    if len(payload) != 4 * total:
        raise FormatError(f"{path}: payload is {len(payload)} bytes, expected {4 * total}")
    flat = np.frombuffer(payload, dtype="<f4")
    params, m, v = {}, {}, {}
    for t in index:
        n = int(np.prod(t["shape"], dtype=np.int64))
        arr = flat[t["offset"]:t["offset"] + n].reshape(t["shape"]).astype(np.float32)
        kind, _, name = t["name"].partition("/")
        if kind == "param":
            params[name] = arr
        elif name.startswith("exp_avg_sq/"):
            v[name[len("exp_avg_sq/"):]] = arr
        elif name.startswith("exp_avg/"):
            m[name[len("exp_avg/"):]] = arr
        else:
            raise FormatError(f"{path}: unknown tensor {t['name']!r}")
    if set(m) != set(v):
        raise FormatError(f"{path}: incomplete optimizer state")
    return Checkpoint(net_cfg, params, header.get("seed", 0), header.get("task", "IVF"),
                      header.get("epoch", 0), header.get("batch", 0), header.get("step", 0),
                      header.get("train", {}), header.get("adam", {}), {k: (m[k], v[k]) for k in m})


def from_training(net, opt, seed, task, epoch, batch, step, train=None):
    """Snapshot a network and its Adam optimizer."""
    names = {id(p): n for n, p in net.named_parameters()}
    params = {k: t.detach().cpu().numpy().astype(np.float32) for k, t in net.state_dict().items()}
    moments, steps = {}, {}
    group = opt.param_groups[0]
    for p in group["params"]:
        st = opt.state.get(p)
        if not st:
            continue
        name = names[id(p)]
        moments[name] = (st["exp_avg"].detach().numpy().copy(), st["exp_avg_sq"].detach().numpy().copy())
        steps[name] = int(st["step"])
    adam = {"betas": list(group["betas"]), "eps": group["eps"], "lr": group["lr"], "steps": steps}
    return Checkpoint(net.cfg, params, seed, task, epoch, batch, step, dict(train or {}), adam, moments)


def restore_optimizer(opt, net, ckpt):
    """Load Adam moments from ``ckpt`` into a freshly built optimizer over ``net``."""
    params = dict(net.named_parameters())
    for name, (m, v) in ckpt.moments.items():
        p = params[name]
        opt.state[p] = {
            "step": torch.tensor(float(ckpt.adam["steps"][name])),
            "exp_avg": torch.from_numpy(m.copy()),
            "exp_avg_sq": torch.from_numpy(v.copy()),
        }
