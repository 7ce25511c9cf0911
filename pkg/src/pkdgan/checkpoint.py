"""Checkpoint persistence: JSON manifest + length-prefixed float32 blob file.

Blob layout, little-endian, per layer record:
    u32 name length | name bytes (utf-8) | u8 dtype (0=f32, 1=i64)
    | u32 ndim | u32 dims... | raw data

Manifests carry everything needed to rebuild the networks from scratch; the
arch spec is stored as explicit integers, never implied by a dataset name.
"""

import json
import os
import struct
from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np
import torch

from .model import ArchSpec, build_discriminator, build_generator

FORMAT_VERSION = 1
MANIFEST_FILE = "manifest.json"
PARAMS_FILE = "params.bin"

_DTYPE_F32 = 0
_DTYPE_I64 = 1


class CheckpointError(RuntimeError):
    """Malformed or unreadable checkpoint."""


class IncompatibleCheckpointError(CheckpointError):
    """Checkpoint valid but unusable here (e.g. latent dimension mismatch)."""


@dataclass
class Checkpoint:
    """In-memory network snapshot plus manifest metadata."""

    spec: ArchSpec
    generator_state: dict
    discriminator_state: dict
    seed: int = 0
    epoch: int = 0
    structure: str = "teacher"
    loss_summary: dict = field(default_factory=dict)
    history: dict = field(default_factory=dict)
    source: str = ""
    created: str = ""

    @classmethod
    def from_networks(cls, generator, discriminator, spec, *, seed=0, epoch=0,
                      structure="teacher", loss_summary=None, history=None,
                      source=""):
        to_np = lambda sd: {k: v.detach().cpu().numpy().copy()
                            for k, v in sd.items()}
        return cls(spec=spec,
                   generator_state=to_np(generator.state_dict()),
                   discriminator_state=to_np(discriminator.state_dict()),
                   seed=seed, epoch=epoch, structure=structure,
                   loss_summary=dict(loss_summary or {}),
                   history=dict(history or {}),
                   source=source,
                   created=datetime.now(timezone.utc).isoformat())

    def build_networks(self):
        """Instantiate a (Generator, Discriminator) pair with these weights."""
        gen = build_generator(self.spec)
        disc = build_discriminator(self.spec)
        _load_state(gen, self.generator_state, "generator")
        _load_state(disc, self.discriminator_state, "discriminator")
        return gen, disc

    def save(self, out_dir, overwrite=False):
        os.makedirs(out_dir, exist_ok=True)
        manifest_path = os.path.join(out_dir, MANIFEST_FILE)
        params_path = os.path.join(out_dir, PARAMS_FILE)
        if not overwrite and (os.path.exists(manifest_path)
                              or os.path.exists(params_path)):
            raise FileExistsError("checkpoint already exists in %s" % out_dir)
        manifest = {
            "format_version": FORMAT_VERSION,
            "arch_spec": self.spec.to_dict(),
            "seed": self.seed,
            "epoch": self.epoch,
            "structure": self.structure,
            "loss_summary": self.loss_summary,
            "history": self.history,
            "source": self.source,
            "created": self.created,
            "params_file": PARAMS_FILE,
        }
        with open(manifest_path, "w") as f:
            json.dump(manifest, f, indent=2, sort_keys=True)
        with open(params_path, "wb") as f:
            for prefix, state in (("generator", self.generator_state),
                                  ("discriminator", self.discriminator_state)):
                for key, value in state.items():
                    _write_record(f, "%s.%s" % (prefix, key), value)
        return out_dir

    @classmethod
    def load(cls, out_dir):
        manifest_path = os.path.join(out_dir, MANIFEST_FILE)
        if not os.path.exists(manifest_path):
            raise CheckpointError("no %s in %s" % (MANIFEST_FILE, out_dir))
        with open(manifest_path) as f:
            manifest = json.load(f)
        version = manifest.get("format_version")
        if version != FORMAT_VERSION:
            raise CheckpointError("unsupported format version %r" % version)
        spec = ArchSpec.from_dict(manifest["arch_spec"])

        blobs = {}
        params_path = os.path.join(out_dir, manifest.get("params_file", PARAMS_FILE))
        with open(params_path, "rb") as f:
            while True:
                record = _read_record(f, params_path)
                if record is None:
                    break
                name, value = record
                blobs[name] = value

        gen_state = {k[len("generator."):]: v for k, v in blobs.items()
                     if k.startswith("generator.")}
        disc_state = {k[len("discriminator."):]: v for k, v in blobs.items()
                      if k.startswith("discriminator.")}
        ckpt = cls(spec=spec, generator_state=gen_state,
                   discriminator_state=disc_state,
                   seed=int(manifest.get("seed", 0)),
                   epoch=int(manifest.get("epoch", 0)),
                   structure=manifest.get("structure", ""),
                   loss_summary=manifest.get("loss_summary", {}),
                   history=manifest.get("history", {}),
                   source=manifest.get("source", ""),
                   created=manifest.get("created", ""))
        ckpt.build_networks()  # validates blob shapes against the spec
        return ckpt


def _write_record(f, name, value):
    arr = np.asarray(value)
    if arr.dtype == np.int64:
        dtype = _DTYPE_I64
        data = arr.astype("<i8").tobytes()
    else:
        dtype = _DTYPE_F32
        data = arr.astype("<f4").tobytes()
    encoded = name.encode("utf-8")
    f.write(struct.pack("<I", len(encoded)))
    f.write(encoded)
    f.write(struct.pack("<BI", dtype, arr.ndim))
    f.write(struct.pack("<%dI" % arr.ndim, *arr.shape))
    f.write(data)


def _read_record(f, path):
    header = f.read(4)
    if not header:
        return None
    if len(header) != 4:
        raise CheckpointError("%s: truncated record header" % path)
    (name_len,) = struct.unpack("<I", header)

    def read_exact(n, what):
        data = f.read(n)
        if len(data) != n:
            raise CheckpointError("%s: truncated record %s" % (path, what))
        return data

    name = read_exact(name_len, "name").decode("utf-8")
    dtype, ndim = struct.unpack("<BI", read_exact(5, "header"))
    shape = struct.unpack("<%dI" % ndim, read_exact(4 * ndim, "shape"))
    np_dtype = "<i8" if dtype == _DTYPE_I64 else "<f4"
    count = int(np.prod(shape)) if shape else 1
    data = f.read(count * np.dtype(np_dtype).itemsize)
    if len(data) != count * np.dtype(np_dtype).itemsize:
        raise CheckpointError("%s: truncated record %r" % (path, name))
    return name, np.frombuffer(data, dtype=np_dtype).reshape(shape).copy()


def _load_state(module, state, what):
    expected = module.state_dict()
    if set(expected) != set(state):
        missing = set(expected) ^ set(state)
        raise CheckpointError("%s: layer name mismatch: %s" % (what, sorted(missing)))
    tensors = {}
    for key, value in state.items():
        if tuple(expected[key].shape) != tuple(np.shape(value)):
            raise CheckpointError(
                "%s: shape mismatch for %s: %s vs %s"
                % (what, key, tuple(np.shape(value)), tuple(expected[key].shape)))
        tensors[key] = torch.as_tensor(value, dtype=expected[key].dtype)
    module.load_state_dict(tensors)
    return module
