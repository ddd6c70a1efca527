"""Checkpoint persistence: a directory of named tensor files plus a JSON index.

Tensor keys follow the parameter layout ("sage/<relation>/<layer>",
"lm/<block>/<tensor>", "lora/<layer>/<A|B>", "mlp/..."); each tensor is one
.npy file so float64 bits survive a round trip exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

METADATA_FILE = "checkpoint.json"


@dataclass
class Checkpoint:
    config: dict
    template: dict | None
    vocab_tokens: list[str] | None
    vocab_base_size: int | None
    tensors: dict[str, np.ndarray]
    splits: dict
    history: list[dict]
    best_epoch: int
    rng: dict = field(default_factory=dict)
    manifest_path: str | None = None
    lm_forward_calls: int = 0

    def save(self, dirpath: str | Path) -> None:
        dirpath = Path(dirpath)
        dirpath.mkdir(parents=True, exist_ok=True)
        index = {}
        for key, arr in self.tensors.items():
            fname = key.replace("/", "__") + ".npy"
            np.save(dirpath / fname, arr)
            index[key] = fname
        meta = {
            "config": self.config,
            "template": self.template,
            "vocab_tokens": self.vocab_tokens,
            "vocab_base_size": self.vocab_base_size,
            "splits": self.splits,
            "history": self.history,
            "best_epoch": self.best_epoch,
            "rng": self.rng,
            "manifest_path": self.manifest_path,
            "lm_forward_calls": self.lm_forward_calls,
            "tensor_index": index,
        }
        with open(dirpath / METADATA_FILE, "w", encoding="utf-8") as f:
            json.dump(meta, f, indent=2)
            f.write("\n")

    @classmethod
    def load(cls, dirpath: str | Path) -> "Checkpoint":
        dirpath = Path(dirpath)
        meta_path = dirpath / METADATA_FILE
        if not meta_path.exists():
            raise FileNotFoundError(f"no checkpoint metadata at {meta_path}")
        with open(meta_path, encoding="utf-8") as f:
            meta = json.load(f)
        tensors = {
            key: np.load(dirpath / fname) for key, fname in meta["tensor_index"].items()
        }
        return cls(
            config=meta["config"],
            template=meta["template"],
            vocab_tokens=meta["vocab_tokens"],
            vocab_base_size=meta["vocab_base_size"],
            tensors=tensors,
            splits=meta["splits"],
            history=meta["history"],
            best_epoch=meta["best_epoch"],
            rng=meta.get("rng", {}),
            manifest_path=meta.get("manifest_path"),
            lm_forward_calls=meta.get("lm_forward_calls", 0),
        )
