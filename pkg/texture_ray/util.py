import hashlib
import os
import zlib
from dataclasses import dataclass
from typing import Any, Iterable, Union

import numpy as np
from ray.util.annotations import DeveloperAPI

ENV_PREFIX = "TEXRAY_"

# Stream kinds used to derive independent random streams from one seed.
STREAM_SPLIT = 0
STREAM_ORDER = 1
STREAM_AUGMENT = 2
STREAM_SHUFFLE = 3
STREAM_EXPAND = 4
STREAM_SYNTH = 5


def _get_environ(item: str, old_val: Any):
    env_var = f"{ENV_PREFIX}{item}"
    new_val = old_val
    if env_var in os.environ:
        new_val_str = os.environ.get(env_var)

        if isinstance(old_val, bool):
            new_val = bool(int(new_val_str))
        elif isinstance(old_val, int):
            new_val = int(new_val_str)
        elif isinstance(old_val, float):
            new_val = float(new_val_str)
        else:
            new_val = new_val_str

    return new_val


@dataclass
class _TextureEnv:
    # Number of torch DataLoader worker processes for the transform pipeline.
    NUM_DATA_WORKERS: int = 0

    # Request deterministic torch kernels (warn-only where unavailable).
    DETERMINISTIC: bool = True

    # Intra-op torch threads. 0 keeps the torch default.
    TORCH_NUM_THREADS: int = 0

    # Status report frequency while waiting on concurrent runs
    STATUS_FREQUENCY_S: int = 30

    def __getattribute__(self, item):
        old_val = super(_TextureEnv, self).__getattribute__(item)
        new_val = _get_environ(item, old_val)
        if new_val != old_val:
            setattr(self, item, new_val)
        return super(_TextureEnv, self).__getattribute__(item)


ENV = _TextureEnv()


@DeveloperAPI
def stable_id(key: Union[str, int]) -> int:
    """Process-independent integer for a sample id (``hash()`` is salted)."""
    if isinstance(key, int):
        return key
    return zlib.crc32(key.encode("utf-8"))


@DeveloperAPI
def derive_rng(seed: int, *keys: Union[str, int]) -> np.random.Generator:
    """Return an independent random stream for ``(seed, *keys)``.

    Streams are derived with ``numpy.random.SeedSequence`` so that every
    combination of global seed, stream kind, sample id and epoch yields its
    own reproducible generator, regardless of evaluation order or of the
    worker process that evaluates it.
    """
    if int(seed) < 0:
        raise ValueError(f"Seeds must be non-negative, got {seed}.")
    entropy = [int(seed)] + [stable_id(k) for k in keys]
    return np.random.default_rng(np.random.SeedSequence(entropy))


@DeveloperAPI
def ids_checksum(ids: Iterable[str]) -> str:
    digest = hashlib.sha256()
    for source_id in sorted(ids):
        digest.update(source_id.encode("utf-8"))
        digest.update(b"\0")
    return digest.hexdigest()
