"""HTTP clients for the image-generation, image-understanding, and speech
model servers, plus audio peak normalization.

Model inference happens on the far side of these calls; this layer owns the
wire payloads only, and builds them byte-deterministically so request bodies
can be compared against golden fixtures.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import httpx

from .exceptions import (
    EmptyAudio,
    EmptyPrompt,
    EndpointError,
    MissingImageRef,
    NotPng,
    SilentAudio,
)

PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"
DEFAULT_TIMEOUT_S = 60.0

DEFAULT_INFERENCE_STEPS = 4
DEFAULT_GUIDANCE_SCALE = 0.0
DEFAULT_IMAGE_SIZE = 1024


@dataclass(frozen=True)
class ImageGenParams:
    num_inference_steps: int = DEFAULT_INFERENCE_STEPS
    guidance_scale: float = DEFAULT_GUIDANCE_SCALE
    width: int = DEFAULT_IMAGE_SIZE
    height: int = DEFAULT_IMAGE_SIZE
    seed: int | None = None

    def __post_init__(self):
        if self.num_inference_steps < 1:
            raise ValueError("num_inference_steps must be >= 1")
        if self.guidance_scale < 0:
            raise ValueError("guidance_scale must be >= 0")
        if self.width < 1 or self.height < 1:
            raise ValueError("width and height must be >= 1")


@dataclass(frozen=True)
class ImageUnderstandRequest:
    prompt: str
    image_url: str

    def __post_init__(self):
        if not self.image_url:
            raise MissingImageRef("image_url must be set")


@dataclass(frozen=True)
class AudioPayload:
    sampling_rate: int
    raw: tuple[float, ...]

    def __post_init__(self):
        if self.sampling_rate < 1:
            raise ValueError("sampling_rate must be >= 1")


@dataclass(frozen=True)
class Transcript:
    text: str


def _post_json(endpoint: str, body: bytes, timeout_s: float) -> httpx.Response:
    try:
        resp = httpx.post(
            endpoint,
            content=body,
            headers={"Content-Type": "application/json"},
            timeout=timeout_s,
        )
    except httpx.TimeoutException as exc:
        raise EndpointError(f"timeout: {exc}") from exc
    except httpx.TransportError as exc:
        raise EndpointError(f"unreachable: {exc}") from exc
    if resp.status_code // 100 != 2:
        raise EndpointError(f"status {resp.status_code}", resp.status_code)
    return resp


def build_generate_request_body(prompt: str, params: ImageGenParams) -> bytes:
    """The exact JSON bytes sent to the image-generation endpoint."""
    payload: dict = {
        "prompt": prompt,
        "num_inference_steps": params.num_inference_steps,
        "guidance_scale": float(params.guidance_scale),
        "width": params.width,
        "height": params.height,
    }
    if params.seed is not None:
        payload["seed"] = params.seed
    return json.dumps(payload).encode("utf-8")


def generate_image(
    endpoint: str,
    prompt: str,
    params: ImageGenParams | None = None,
    *,
    timeout_s: float = DEFAULT_TIMEOUT_S,
) -> tuple[bytes, dict[str, str]]:
    """Request an image; returns PNG bytes plus response metadata headers."""
    if not prompt:
        raise EmptyPrompt("prompt must be non-empty")
    params = params or ImageGenParams()
    resp = _post_json(endpoint, build_generate_request_body(prompt, params), timeout_s)
    data = resp.content
    if not data.startswith(PNG_SIGNATURE):
        raise NotPng("response does not start with the PNG signature")
    metadata = {
        k.lower(): v
        for k, v in resp.headers.items()
        if k.lower() in ("content-type", "x-params")
    }
    return data, metadata


def understand_image(
    endpoint: str,
    req: ImageUnderstandRequest,
    *,
    timeout_s: float = DEFAULT_TIMEOUT_S,
) -> str:
    """Send a prompt plus image URL; returns the model's text answer."""
    body = json.dumps({"prompt": req.prompt, "image_url": req.image_url}).encode("utf-8")
    resp = _post_json(endpoint, body, timeout_s)
    try:
        return resp.json()["text"]
    except (KeyError, TypeError, ValueError) as exc:
        raise EndpointError(f"malformed response: {exc}") from exc


def normalize_audio(p: AudioPayload) -> AudioPayload:
    """Scale samples so the peak magnitude is exactly 1.0.

    Division by the peak (rather than multiplying by its reciprocal) makes
    the peak sample land on 1.0 exactly, which also makes the operation
    idempotent.
    """
    if len(p.raw) == 0:
        raise EmptyAudio("no samples")
    peak = max(abs(s) for s in p.raw)
    if peak == 0.0:
        raise SilentAudio("all samples are zero")
    return AudioPayload(p.sampling_rate, tuple(s / peak for s in p.raw))


def build_transcribe_request_body(p: AudioPayload) -> bytes:
    """The exact JSON bytes sent to the speech-recognition endpoint."""
    return json.dumps({"sampling_rate": p.sampling_rate, "raw": list(p.raw)}).encode(
        "utf-8"
    )


def transcribe(
    endpoint: str, p: AudioPayload, *, timeout_s: float = DEFAULT_TIMEOUT_S
) -> Transcript:
    """Post normalized audio samples; returns the transcript."""
    resp = _post_json(endpoint, build_transcribe_request_body(p), timeout_s)
    try:
        return Transcript(text=resp.json()["text"])
    except (KeyError, TypeError, ValueError) as exc:
        raise EndpointError(f"malformed response: {exc}") from exc


def audio_from_samples(sampling_rate: int, samples: Sequence[float]) -> AudioPayload:
    return AudioPayload(sampling_rate, tuple(float(s) for s in samples))


def serve_mock_media(port: int = 0):
    """Start the deterministic media mock server; see :mod:`ragchat.mocks`."""
    from .mocks import serve_mock_media as _serve

    return _serve(port=port)
