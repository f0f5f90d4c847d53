"""Wire protocol for the external decision service, plus the transport
channels: a file-based mock for offline tests and an HTTP client for a
remote service.

Request: UTF-8 JSON {goal, subtask_list, text_log_tail, images}; each image
carries its camera pose and a base64 16-bit grayscale PNG (millimeters).
Response: a JSON-encoded decision tagged by "type" in
{"viewpoint", "invoke", "done", "abort"}.
"""

from __future__ import annotations

import base64
import io
import json
from pathlib import Path

import numpy as np
import requests
from PIL import Image

from .brain import (
    BrainDecision,
    BrainParams,
    Feedback,
    MemoryBank,
    PlannerState,
    SubTask,
    decision_from_json,
)
from .errors import ProviderError
from .geometry import CameraPose, DepthImage, Pose2D, Vec3

_REQUIRED_KEYS = ("goal", "subtask_list", "text_log_tail", "images")


def encode_depth_png(depth: DepthImage) -> bytes:
    """Deterministic 16-bit grayscale PNG; pixel value = depth in mm."""
    mm = np.clip(np.rint(np.where(depth.values > 0, depth.values * 1000.0, 0.0)),
                 0, 65535).astype(np.uint16)
    img = Image.fromarray(mm)  # uint16 array maps to mode I;16
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def decode_depth_png(data: bytes) -> DepthImage:
    img = Image.open(io.BytesIO(data))
    arr = np.asarray(img, dtype=float)
    return DepthImage(arr / 1000.0)


def camera_pose_to_dict(cam: CameraPose) -> dict:
    return {
        "position": [cam.position.x, cam.position.y, cam.position.z],
        "pitch": cam.pitch,
        "yaw": cam.yaw,
        "base": {"x": cam.base_pose.x, "y": cam.base_pose.y,
                 "yaw": cam.base_pose.yaw},
        "base_height": cam.base_height,
    }


def camera_pose_from_dict(d: dict) -> CameraPose:
    return CameraPose(
        position=Vec3(*d["position"]),
        pitch=float(d["pitch"]),
        yaw=float(d["yaw"]),
        base_pose=Pose2D(d["base"]["x"], d["base"]["y"], d["base"]["yaw"]),
        base_height=float(d["base_height"]),
    )


def build_request(goal: str, subtasks: list[SubTask], bank: MemoryBank,
                  tail: int = 20) -> dict:
    images = []
    for entry in bank.images:
        data = entry.snapshot
        png = encode_depth_png(data) if isinstance(data, DepthImage) else bytes(data)
        images.append({
            "camera_pose": camera_pose_to_dict(entry.camera_pose),
            "data": base64.b64encode(png).decode("ascii"),
        })
    return {
        "goal": goal,
        "subtask_list": [st.to_dict() for st in subtasks],
        "text_log_tail": bank.log_tail(tail),
        "images": images,
    }


def request_to_json(request: dict) -> str:
    return json.dumps(request, sort_keys=True, separators=(",", ":"))


def parse_request(text: str) -> dict:
    try:
        req = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ProviderError(f"request is not valid JSON: {exc}") from exc
    missing = [k for k in _REQUIRED_KEYS if k not in req]
    if missing:
        raise ProviderError(f"request missing keys {missing}")
    return req


class FileMockChannel:
    """Serves canned decision responses from a JSON file, in order.

    The file holds {"responses": [<decision dict>, ...]}. Every send()
    validates that the request parses before answering; running out of
    canned responses is a provider error.
    """

    def __init__(self, path: str | Path):
        spec = json.loads(Path(path).read_text())
        self.responses = list(spec.get("responses", []))
        self.requests_seen: list[dict] = []
        self._cursor = 0

    def send(self, request_json: str) -> str:
        self.requests_seen.append(parse_request(request_json))
        if self._cursor >= len(self.responses):
            raise ProviderError("mock channel ran out of canned responses")
        resp = self.responses[self._cursor]
        self._cursor += 1
        return json.dumps(resp, sort_keys=True, separators=(",", ":"))


class RemoteChannel:
    """POSTs the request JSON to a remote decision service."""

    def __init__(self, endpoint: str, timeout: float = 30.0):
        self.endpoint = endpoint
        self.timeout = timeout

    def send(self, request_json: str) -> str:
        try:
            resp = requests.post(
                self.endpoint, data=request_json.encode("utf-8"),
                headers={"Content-Type": "application/json"},
                timeout=self.timeout)
        except requests.RequestException as exc:
            raise ProviderError(f"decision service unreachable: {exc}") from exc
        if resp.status_code != 200:
            raise ProviderError(
                f"decision service returned HTTP {resp.status_code}")
        return resp.text


class ExternalServiceProvider:
    """Decision provider backed by a request/response channel.

    The service owns its own task decomposition (the wire protocol has no
    decompose variant), so the local planner tracks a single umbrella
    sub-task and forwards the service's decisions verbatim; agent feedback is
    logged for the service to read rather than driving local replanning.
    """

    tracks_subtasks = False

    def __init__(self, channel, params: BrainParams | None = None):
        self.channel = channel
        self.params = params or BrainParams()

    def decompose(self, goal: str) -> list[SubTask]:
        return [SubTask(id="t1", description=goal, agent="external")]

    def decide(self, state: PlannerState, bank: MemoryBank) -> BrainDecision:
        request = build_request(state.goal, state.subtasks, bank,
                                self.params.log_tail)
        reply = self.channel.send(request_to_json(request))
        return decision_from_json(reply)

    def on_failure(self, state: PlannerState, fb: Feedback) -> list[SubTask]:
        return []
