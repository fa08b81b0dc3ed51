"""The seam where a promptable instance segmenter plugs in.

One contract, two implementations: a synthetic oracle that answers prompts
from exact instance-id renders (tests, and a perturbable stand-in for a real
model), and a file-exchange client that writes prompt files and polls for
mask files produced by an external worker process.

Exchange layout (all JSON, coordinates are integer pixels, origin top-left):
  <dir>/<frame:06>.prompts.json
      {"frame": n, "image": "<relpath>", "width": W, "height": H,
       "prompts": [{"id": j, "point": [u, v] | null,
                    "bbox": [u0, v0, u1, v1] | null}]}
  <dir>/<frame:06>.masks.json
      {"frame": n, "width": W, "height": H,
       "masks": [{"prompt_id": j, "rle": [c0, c1, ...]}]}

RLE is row-major with alternating run lengths, the first counting zeros
(possibly 0); counts must sum to W*H.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import FormatError, TransportError
from .geometry import CameraIntrinsics, Pose
from .refine import InstanceMask, Prompt
from .synthetic import NO_INSTANCE, Scene, render_oracle


def encode_rle(bitmap: np.ndarray) -> list[int]:
    """Row-major alternating run lengths, starting with the zero run."""
    flat = np.asarray(bitmap, dtype=bool).reshape(-1)
    if flat.size == 0:
        return []
    changes = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate([[0], changes, [flat.size]])
    counts = np.diff(bounds).tolist()
    if flat[0]:
        counts.insert(0, 0)
    return [int(c) for c in counts]


def decode_rle(counts: list[int], width: int, height: int) -> np.ndarray:
    if any(c < 0 for c in counts):
        raise FormatError("negative RLE count")
    total = int(sum(counts))
    if total != width * height:
        raise FormatError(f"RLE counts sum to {total}, expected {width * height}")
    flat = np.zeros(width * height, dtype=bool)
    pos = 0
    value = False
    for c in counts:
        if value:
            flat[pos:pos + c] = True
        pos += c
        value = not value
    return flat.reshape(height, width)


@dataclass
class MaskRequest:
    frame_index: int
    image: str  # path relative to the exchange directory
    width: int
    height: int
    prompts: list[Prompt]

    def __post_init__(self):
        if not self.prompts:
            raise ValueError("mask request needs at least one prompt")


@dataclass
class MaskResponse:
    frame_index: int
    width: int
    height: int
    masks: list[InstanceMask] = field(default_factory=list)

    def by_prompt(self) -> dict[int, InstanceMask]:
        return {m.prompt_id: m for m in self.masks}


def validate_response(request: MaskRequest, response: MaskResponse) -> None:
    """Response invariants against its request; violations are transport errors."""
    if response.frame_index != request.frame_index:
        raise TransportError(
            f"response frame {response.frame_index} != request {request.frame_index}")
    if (response.width, response.height) != (request.width, request.height):
        raise TransportError(
            f"response size {response.width}x{response.height} != "
            f"request {request.width}x{request.height}")
    ids = {p.id for p in request.prompts}
    seen = set()
    for m in response.masks:
        if m.prompt_id not in ids:
            raise TransportError(f"mask for unknown prompt id {m.prompt_id}")
        if m.prompt_id in seen:
            raise TransportError(f"duplicate mask for prompt id {m.prompt_id}")
        seen.add(m.prompt_id)
        if (m.width, m.height) != (request.width, request.height):
            raise TransportError(
                f"mask {m.width}x{m.height} does not match request "
                f"{request.width}x{request.height}")


def request_masks(segmenter, request: MaskRequest) -> MaskResponse:
    """Single entry point for all segmenter implementations."""
    response = segmenter.request_masks(request)
    validate_response(request, response)
    return response


# -- wire format ----------------------------------------------------------------


def prompts_path(exchange_dir: str | Path, frame_index: int) -> Path:
    return Path(exchange_dir) / f"{frame_index:06d}.prompts.json"


def masks_path(exchange_dir: str | Path, frame_index: int) -> Path:
    return Path(exchange_dir) / f"{frame_index:06d}.masks.json"


def _atomic_write_json(payload: dict, path: Path) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(payload, indent=1, sort_keys=True))
    os.replace(tmp, path)


def write_mask_request(request: MaskRequest, exchange_dir: str | Path) -> Path:
    path = prompts_path(exchange_dir, request.frame_index)
    payload = {
        "frame": request.frame_index,
        "image": request.image,
        "width": request.width,
        "height": request.height,
        "prompts": [
            {"id": p.id,
             "point": list(p.point) if p.point is not None else None,
             "bbox": list(p.bbox) if p.bbox is not None else None}
            for p in request.prompts
        ],
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    _atomic_write_json(payload, path)
    return path


def read_mask_request(path: str | Path) -> MaskRequest:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: invalid JSON ({e})") from e
    try:
        prompts = [
            Prompt(int(p["id"]),
                   point=tuple(p["point"]) if p.get("point") is not None else None,
                   bbox=tuple(p["bbox"]) if p.get("bbox") is not None else None)
            for p in doc["prompts"]
        ]
        return MaskRequest(int(doc["frame"]), str(doc["image"]),
                           int(doc["width"]), int(doc["height"]), prompts)
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError(f"{path}: bad prompts schema ({e})") from e


def write_mask_response(response: MaskResponse, exchange_dir: str | Path) -> Path:
    path = masks_path(exchange_dir, response.frame_index)
    payload = {
        "frame": response.frame_index,
        "width": response.width,
        "height": response.height,
        "masks": [
            {"prompt_id": m.prompt_id, "rle": encode_rle(m.bitmap)}
            for m in response.masks
        ],
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    _atomic_write_json(payload, path)
    return path


def read_mask_response(path: str | Path) -> MaskResponse:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: invalid JSON ({e})") from e
    try:
        width = int(doc["width"])
        height = int(doc["height"])
        masks = [
            InstanceMask(int(m["prompt_id"]), decode_rle(m["rle"], width, height))
            for m in doc["masks"]
        ]
        return MaskResponse(int(doc["frame"]), width, height, masks)
    except FormatError:
        raise
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError(f"{path}: bad masks schema ({e})") from e


# -- oracle segmenter -------------------------------------------------------------


@dataclass(frozen=True)
class OraclePerturbation:
    """Controlled imperfection: morphology plus per-prompt dropout.

    Radii count 4-connected erosion/dilation iterations (erosion first).
    Dropout decisions derive from (seed, frame, prompt id), so responses do
    not depend on prompt list order.
    """

    dilate_radius: int = 0
    erode_radius: int = 0
    dropout: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.dilate_radius < 0 or self.erode_radius < 0:
            raise ValueError("morphology radii must be >= 0")
        if not 0.0 <= self.dropout <= 1.0:
            raise ValueError(f"dropout must be in [0, 1], got {self.dropout}")


class OracleSegmenter:
    """Answers prompts with exact instance silhouettes from a synthetic scene."""

    def __init__(self, scene: Scene, intr: CameraIntrinsics,
                 poses: dict[int, Pose], perturbation: OraclePerturbation | None = None):
        self.scene = scene
        self.intr = intr
        self.poses = dict(poses)
        self.perturbation = perturbation or OraclePerturbation()

    def request_masks(self, request: MaskRequest) -> MaskResponse:
        if request.frame_index not in self.poses:
            raise TransportError(f"no pose for frame {request.frame_index}")
        if (request.width, request.height) != (self.intr.width, self.intr.height):
            raise TransportError("request size does not match oracle intrinsics")
        _, _, inst = render_oracle(self.scene, self.poses[request.frame_index], self.intr)
        pert = self.perturbation
        masks = []
        for prompt in request.prompts:
            instance_id = self._target_instance(prompt, inst)
            if instance_id is None:
                continue  # prompt unanswered
            if pert.dropout > 0:
                rng = np.random.default_rng([pert.seed, request.frame_index, prompt.id])
                if rng.random() < pert.dropout:
                    continue
            bitmap = inst == instance_id
            if pert.erode_radius > 0:
                bitmap = ndimage.binary_erosion(bitmap, iterations=pert.erode_radius)
            if pert.dilate_radius > 0:
                bitmap = ndimage.binary_dilation(bitmap, iterations=pert.dilate_radius)
            if not bitmap.any():
                continue  # erosion ate the whole instance
            masks.append(InstanceMask(prompt.id, bitmap))
        return MaskResponse(request.frame_index, request.width, request.height, masks)

    @staticmethod
    def _target_instance(prompt: Prompt, inst: np.ndarray) -> int | None:
        if prompt.point is not None:
            u, v = prompt.point
            if not (0 <= v < inst.shape[0] and 0 <= u < inst.shape[1]):
                return None
            iid = int(inst[v, u])
            return None if iid == NO_INSTANCE else iid
        u0, v0, u1, v1 = prompt.bbox
        window = inst[v0:v1 + 1, u0:u1 + 1]
        ids, counts = np.unique(window[window != NO_INSTANCE], return_counts=True)
        if ids.size == 0:
            return None
        return int(ids[np.argmax(counts)])  # ties: lowest instance id


def oracle_masks(scene: Scene, pose: Pose, intr: CameraIntrinsics,
                 prompts: list[Prompt], perturbation: OraclePerturbation | None = None,
                 frame_index: int = 0) -> MaskResponse:
    """One-shot oracle answer for a single frame."""
    seg = OracleSegmenter(scene, intr, {frame_index: pose}, perturbation)
    return request_masks(seg, MaskRequest(frame_index, "", intr.width, intr.height,
                                          prompts))


# -- file exchange client ----------------------------------------------------------


class FileExchangeSegmenter:
    """Writes prompt files and polls for mask files from an external worker.

    An already-present masks file is accepted immediately, which makes runs
    replayable against recorded answers.
    """

    def __init__(self, exchange_dir: str | Path, timeout: float = 600.0,
                 poll_interval: float = 0.5):
        self.exchange_dir = Path(exchange_dir)
        self.timeout = timeout
        self.poll_interval = poll_interval

    def request_masks(self, request: MaskRequest) -> MaskResponse:
        write_mask_request(request, self.exchange_dir)
        path = masks_path(self.exchange_dir, request.frame_index)
        deadline = time.monotonic() + self.timeout
        while True:
            if path.exists():
                try:
                    response = read_mask_response(path)
                except FormatError as e:
                    raise TransportError(str(e)) from e
                validate_response(request, response)
                return response
            if time.monotonic() >= deadline:
                raise TransportError(
                    f"timed out after {self.timeout:.0f}s waiting for {path}")
            time.sleep(self.poll_interval)
