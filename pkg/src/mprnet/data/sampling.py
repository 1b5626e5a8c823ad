"""Paired patch sampling, flip augmentation and the seeded batch source."""

import logging
import queue
import threading
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Iterator, List, Optional, Tuple

import numpy as np

from ..errors import UsageError
from ..models.config import DegradeSpec, TrainConfig
from .degrade import degrade
from .imageio import list_images, read_image
from .textures import procedural_image

logger = logging.getLogger(__name__)

ImagePair = Tuple[np.ndarray, np.ndarray]
Batch = Tuple[np.ndarray, np.ndarray]

# keeps validation images disjoint from the training stream
VALIDATION_SEED_OFFSET = 1_000_003


def sample_patch(pair: ImagePair, size: int, rng: np.random.Generator) -> Tuple[ImagePair, Tuple[int, int]]:
    """Crop the same ``size`` x ``size`` window from both images; returns the pair and (top, left)."""
    clean, degraded = pair
    if clean.shape != degraded.shape:
        raise UsageError(f"sample_patch: pair shapes differ {clean.shape} vs {degraded.shape}")
    _, h, w = clean.shape
    if size > h or size > w or size < 1:
        raise UsageError(f"sample_patch: patch size {size} does not fit image {h}x{w}")
    top = int(rng.integers(0, h - size + 1))
    left = int(rng.integers(0, w - size + 1))
    window = (slice(None), slice(top, top + size), slice(left, left + size))
    return (clean[window].copy(), degraded[window].copy()), (top, left)


def flip_pair(pair: ImagePair, horizontal: bool, vertical: bool) -> ImagePair:
    clean, degraded = pair
    if horizontal:
        clean, degraded = clean[:, :, ::-1], degraded[:, :, ::-1]
    if vertical:
        clean, degraded = clean[:, ::-1, :], degraded[:, ::-1, :]
    return np.ascontiguousarray(clean), np.ascontiguousarray(degraded)


def augment_flip(pair: ImagePair, rng: np.random.Generator) -> ImagePair:
    """Random horizontal and vertical flips, identical for both images."""
    horizontal, vertical = rng.random(2) < 0.5
    return flip_pair(pair, bool(horizontal), bool(vertical))


class TrainingData:
    """
    Deterministic stream of (clean, degraded) batches.

    Batch ``i`` depends only on (seed, i), so batches can be produced in any
    order or concurrently and still reproduce bitwise.
    """

    def __init__(self, train: TrainConfig, degrade_spec: DegradeSpec, images: Optional[List[np.ndarray]] = None):
        self.train = train
        self.degrade_spec = degrade_spec
        self.images = images or []
        for img in self.images:
            if min(img.shape[1:]) < train.patch_size:
                raise UsageError(f"Training image {img.shape} is smaller than patch_size {train.patch_size}")

    @classmethod
    def from_config(cls, train: TrainConfig, degrade_spec: DegradeSpec) -> "TrainingData":
        images = None
        if train.train_dir:
            paths = list_images(Path(train.train_dir))
            if not paths:
                raise UsageError(f"No PNG/PPM images in train_dir {train.train_dir}")
            images = [read_image(p) for p in paths]
            logger.info("Loaded %d training images from %s", len(images), train.train_dir)
        return cls(train, degrade_spec, images)

    def _clean_image(self, rng: np.random.Generator) -> np.ndarray:
        if self.images:
            return self.images[int(rng.integers(len(self.images)))]
        size = self.train.patch_size + self.train.patch_size // 2
        return procedural_image(size, rng)

    def make_pair(self, rng: np.random.Generator, size: int, augment: bool) -> ImagePair:
        clean = self._clean_image(rng)
        spec = self.degrade_spec.model_copy(update={"degrade_seed": int(rng.integers(2 ** 31))})
        pair, _ = sample_patch((clean, degrade(clean, spec)), size, rng)
        return augment_flip(pair, rng) if augment else pair

    def batch(self, index: int) -> Batch:
        rng = np.random.default_rng([self.train.seed, self.degrade_spec.degrade_seed, index])
        pairs = [self.make_pair(rng, self.train.patch_size, self.train.augment_flips) for _ in range(self.train.batch_size)]
        return np.stack([p[0] for p in pairs]), np.stack([p[1] for p in pairs])

    def validation_pairs(self) -> List[ImagePair]:
        """Fixed, unaugmented validation set of ``val_images`` pairs of ``val_size``."""
        rng = np.random.default_rng([self.train.seed + VALIDATION_SEED_OFFSET, self.degrade_spec.degrade_seed])
        if self.images and min(min(img.shape[1:]) for img in self.images) < self.train.val_size:
            raise UsageError(f"Training images are smaller than val_size {self.train.val_size}")
        pairs = []
        for _ in range(self.train.val_images):
            if self.images:
                clean = self.images[int(rng.integers(len(self.images)))]
            else:
                clean = procedural_image(self.train.val_size, rng)
            spec = self.degrade_spec.model_copy(update={"degrade_seed": int(rng.integers(2 ** 31))})
            pair, _ = sample_patch((clean, degrade(clean, spec)), self.train.val_size, rng)
            pairs.append(pair)
        return pairs


class BatchPrefetcher:
    """
    Produces batches ``start..stop`` ahead of the consumer through a bounded queue.

    With ``workers > 1`` batches are generated concurrently; they are always
    delivered in index order.
    """

    _DONE = object()

    def __init__(self, source: TrainingData, start: int, stop: int, depth: int = 4, workers: int = 1):
        self.source = source
        self.start, self.stop = start, stop
        self.depth = max(1, depth)
        self.workers = max(1, workers)
        self._queue: "queue.Queue" = queue.Queue(maxsize=self.depth)
        self._stop_event = threading.Event()
        self._thread = threading.Thread(target=self._produce, name="batch-prefetch", daemon=True)

    def _put(self, item) -> bool:
        while not self._stop_event.is_set():
            try:
                self._queue.put(item, timeout=0.1)
                return True
            except queue.Full:
                continue
        return False

    def _produce(self) -> None:
        try:
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                pending = []
                index = self.start
                while index < self.stop or pending:
                    while index < self.stop and len(pending) < self.depth:
                        pending.append(pool.submit(self.source.batch, index))
                        index += 1
                    if not self._put(pending.pop(0).result()):
                        return
        except Exception as e:  # surfaced to the consumer
            self._put(e)
            return
        self._put(self._DONE)

    def __iter__(self) -> Iterator[Batch]:
        self._thread.start()
        try:
            while True:
                item = self._queue.get()
                if item is self._DONE:
                    return
                if isinstance(item, Exception):
                    raise item
                yield item
        finally:
            self.close()

    def close(self, timeout: float = 5.0) -> None:
        """Stop the producer thread and wait for it; safe to call more than once."""
        self._stop_event.set()
        if self._thread.is_alive():
            self._thread.join(timeout)

    @property
    def running(self) -> bool:
        return self._thread.is_alive()

    def __enter__(self) -> "BatchPrefetcher":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
