"""Checkpoint container.

A checkpoint is a NumPy ``.npz`` archive (a zip of ``.npy`` members, each
carrying dtype and shape). Members:

``__meta__``
    UTF-8 JSON, stored as a ``uint8`` array: format tag, format version,
    run config, mesh digest, episode counter, NumPy RNG state, reward
    normalizer state, episode outcome table and the episode records so far.
``param/<module>/<name>``
    Network tensors for ``actor``, ``q1``, ``q2``, ``q1_target``,
    ``q2_target`` and the scalar ``log_alpha``.
``optim/<optimizer>/<param index>/<slot>``
    Adam moment estimates and step counters; hyper-parameters live in meta.
``replay/<field>``
    Replay buffer arrays (``obs``, ``act``, ``task_reward``, ``next_obs``,
    ``done``, ``timestep``, ``episode``).
``rng/torch``
    State of the agent's exploration generator (``uint8``).
"""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path
from typing import Any

import numpy as np
import torch

from .errors import ConfigError, VersionError

FORMAT = "lifespan-rl-checkpoint"
VERSION = 1
REPLAY_FIELDS = ("obs", "act", "task_reward", "next_obs", "done", "timestep", "episode")


def file_digest(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def pack(agent, buffer, meta: dict[str, Any]) -> dict[str, np.ndarray]:
    arrays: dict[str, np.ndarray] = {}
    for name, module in agent.modules().items():
        for pname, tensor in module.state_dict().items():
            arrays[f"param/{name}/{pname}"] = tensor.detach().numpy().copy()
    arrays["param/log_alpha"] = agent.log_alpha.detach().numpy().copy()
    groups = {}
    for oname, opt in agent.optimizers().items():
        sd = opt.state_dict()
        groups[oname] = sd["param_groups"]
        for idx, slots in sd["state"].items():
            for slot, value in slots.items():
                arrays[f"optim/{oname}/{idx}/{slot}"] = torch.as_tensor(value).detach().numpy().copy()
    for field in REPLAY_FIELDS:
        arrays[f"replay/{field}"] = getattr(buffer, field)[: buffer.size].copy()
    arrays["rng/torch"] = agent.generator.get_state().numpy().copy()
    meta = dict(meta)
    meta.update(
        format=FORMAT,
        version=VERSION,
        optimizer_groups=groups,
        replay={"capacity": buffer.capacity, "size": buffer.size, "cursor": buffer.cursor},
    )
    arrays["__meta__"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    return arrays


def save(path: str | Path, agent, buffer, meta: dict[str, Any]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(".tmp.npz")
    np.savez(tmp, **pack(agent, buffer, meta))
    os.replace(tmp, path)
    return path


def load(path: str | Path) -> tuple[dict[str, Any], dict[str, np.ndarray]]:
    try:
        with np.load(path, allow_pickle=False) as archive:
            arrays = {k: archive[k] for k in archive.files}
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read checkpoint {path}: {exc}") from exc
    if "__meta__" not in arrays:
        raise VersionError(f"{path} is not a {FORMAT} file")
    meta = json.loads(arrays.pop("__meta__").tobytes().decode())
    if meta.get("format") != FORMAT:
        raise VersionError(f"{path} is not a {FORMAT} file")
    if meta.get("version") != VERSION:
        raise VersionError(f"checkpoint version {meta.get('version')} is not supported (expected {VERSION})")
    return meta, arrays


def restore_agent(agent, meta: dict, arrays: dict[str, np.ndarray], with_optimizers: bool = True) -> None:
    for name, module in agent.modules().items():
        state = {}
        for pname, tensor in module.state_dict().items():
            key = f"param/{name}/{pname}"
            if key not in arrays or arrays[key].shape != tuple(tensor.shape):
                raise VersionError(f"checkpoint tensor {key} missing or has the wrong shape")
            state[pname] = torch.from_numpy(arrays[key].copy())
        module.load_state_dict(state)
    with torch.no_grad():
        agent.log_alpha.copy_(torch.from_numpy(arrays["param/log_alpha"].copy()))
    if not with_optimizers:
        return
    for oname, opt in agent.optimizers().items():
        state: dict[int, dict] = {}
        prefix = f"optim/{oname}/"
        for key, value in arrays.items():
            if key.startswith(prefix):
                idx, slot = key[len(prefix):].split("/")
                state.setdefault(int(idx), {})[slot] = torch.from_numpy(value.copy())
        opt.load_state_dict({"state": state, "param_groups": meta["optimizer_groups"][oname]})
    agent.generator.set_state(torch.from_numpy(arrays["rng/torch"].copy()))


def restore_buffer(buffer, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    info = meta["replay"]
    if info["capacity"] != buffer.capacity:
        raise VersionError("replay capacity in checkpoint differs from config")
    size = info["size"]
    for field in REPLAY_FIELDS:
        getattr(buffer, field)[:size] = arrays[f"replay/{field}"]
    buffer.size = size
    buffer.cursor = info["cursor"]
