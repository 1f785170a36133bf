"""
This file is part of atomnav, a toolkit for building sign-centric abstract top-view maps
and grounding navigational signs in them.

You should have received a copy of the Apache-2.0 license along with the code. If not,
see <https://opensource.org/licenses/Apache-2.0>
"""

import base64
import hashlib
import json
import logging
import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import requests

from .errors import ReplayMiss, TransportError

LOGGER = logging.getLogger(__name__)

REPLAY_FILE = "responses.json"

Part = Union[str, bytes]


@dataclass(frozen=True)
class VlmRequest:
    """Ordered multimodal prompt: text parts and PNG image parts."""
    parts: Tuple[Part, ...]

    def __post_init__(self):
        parts = tuple(self.parts)
        if not parts:
            raise ValueError("A VLM request needs at least one part")
        for part in parts:
            if not isinstance(part, (str, bytes)):
                raise TypeError(f"Request parts must be text or image bytes, got {type(part)}")
        object.__setattr__(self, "parts", parts)

    def digest(self) -> str:
        """Content hash used as replay key."""
        h = hashlib.sha256()
        for part in self.parts:
            payload = part.encode("utf-8") if isinstance(part, str) else part
            h.update(b"T" if isinstance(part, str) else b"I")
            h.update(len(payload).to_bytes(8, "little"))
            h.update(payload)
        return h.hexdigest()

    def texts(self) -> List[str]:
        return [p for p in self.parts if isinstance(p, str)]

    def images(self) -> List[bytes]:
        return [p for p in self.parts if isinstance(p, bytes)]


@dataclass(frozen=True)
class VlmResponse:
    text: str


class ReplayVlm:
    """Canned responses keyed by request digest; a miss is an error."""

    def __init__(self, replay_dir: Path):
        self.replay_dir = Path(replay_dir)
        store = self.replay_dir / REPLAY_FILE
        if not store.is_file():
            raise ReplayMiss(f"No replay store at {store}")
        with store.open("r") as fp:
            self.responses: Dict[str, str] = json.load(fp)

    def chat(self, request: VlmRequest) -> VlmResponse:
        key = request.digest()
        if key not in self.responses:
            raise ReplayMiss(f"Request {key[:12]} is not in the replay store {self.replay_dir}")
        return VlmResponse(self.responses[key])


class RecordingVlm:
    """Forward requests to another backend and store every exchange as a replay store."""

    def __init__(self, inner, replay_dir: Path):
        self.inner = inner
        self.replay_dir = Path(replay_dir)
        self.replay_dir.mkdir(parents=True, exist_ok=True)
        self._store = self.replay_dir / REPLAY_FILE
        self._lock = threading.Lock()
        self.responses: Dict[str, str] = {}
        if self._store.is_file():
            with self._store.open("r") as fp:
                self.responses = json.load(fp)

    def chat(self, request: VlmRequest) -> VlmResponse:
        response = self.inner.chat(request)
        with self._lock:
            self.responses[request.digest()] = response.text
            with self._store.open("w") as fp:
                json.dump(self.responses, fp, sort_keys=True, indent=1)
        return response


class HttpVlm:
    """OpenAI-compatible chat-completions endpoint.

    Parameters
    ----------
    url : str
        Full URL of the chat completions route.
    api_key : str, optional
        Bearer token, read from ATOMNAV_VLM_KEY if None.
    model : str, optional
        Model name sent with every request.
    retries : int, optional
        Number of retries after the first failed attempt, by default 3
    timeout : float, optional
        Per-attempt timeout in seconds, by default 60
    """

    def __init__(self,
                 url: str,
                 api_key: Optional[str] = None,
                 model: str = "default",
                 retries: int = 3,
                 timeout: float = 60.0,
                 backoff: float = 1.0):
        self.url = url
        self.api_key = api_key if api_key is not None else os.environ.get("ATOMNAV_VLM_KEY", "")
        self.model = model
        self.retries = retries
        self.timeout = timeout
        self.backoff = backoff

    def _payload(self, request: VlmRequest) -> Dict:
        content = []
        for part in request.parts:
            if isinstance(part, str):
                content.append({"type": "text", "text": part})
            else:
                data = base64.b64encode(part).decode("ascii")
                content.append({"type": "image_url", "image_url": {"url": f"data:image/png;base64,{data}"}})
        return {"model": self.model, "temperature": 0.0, "messages": [{"role": "user", "content": content}]}

    def chat(self, request: VlmRequest) -> VlmResponse:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        payload = self._payload(request)

        last_error = None
        for attempt in range(self.retries + 1):
            try:
                response = requests.post(self.url, headers=headers, json=payload, timeout=self.timeout)
                if response.status_code == 200:
                    choices = response.json().get("choices", [])
                    if choices:
                        return VlmResponse(choices[0].get("message", {}).get("content", ""))
                    last_error = "response contained no choices"
                else:
                    last_error = f"HTTP {response.status_code}: {response.text[:200]}"
            except (requests.RequestException, ValueError) as err:
                last_error = repr(err)
            LOGGER.warning(f"VLM request to {self.url} failed (attempt {attempt + 1}): {last_error}")
            if attempt < self.retries:
                time.sleep(self.backoff * 2**attempt)
        raise TransportError(f"VLM endpoint {self.url} unreachable: {last_error}", retries=self.retries)


def make_vlm(endpoint_config: str,
             scene_path: Optional[Path] = None,
             record_dir: Optional[Path] = None,
             retries: int = 3,
             timeout: float = 60.0):
    """Backend for an endpoint spec: `oracle[:scene.json]`, `replay:<dir>` or `http[:<url>]`.

    `http` without a URL reads ATOMNAV_VLM_URL. `scene_path` is the fallback scene of the oracle.
    With `record_dir`, every exchange is also written as a replay store.
    """
    kind, _, arg = endpoint_config.partition(":")
    if kind == "oracle":
        # the oracle lives in the simulator, which depends on this module
        from .simulator import OracleVlm, load_scene
        path = Path(arg) if arg else scene_path
        if path is None:
            raise ValueError("The oracle backend needs a scene file (oracle:<scene.json>)")
        backend = OracleVlm(load_scene(path))
    elif kind == "replay":
        if not arg:
            raise ValueError("replay backend needs a directory: replay:<dir>")
        backend = ReplayVlm(Path(arg))
    elif kind in ("http", "https"):
        url = endpoint_config if arg.startswith("//") else (arg or os.environ.get("ATOMNAV_VLM_URL"))
        if not url:
            raise ValueError("http backend needs a URL (http:<url> or ATOMNAV_VLM_URL)")
        backend = HttpVlm(url, retries=retries, timeout=timeout)
    else:
        raise ValueError(f"Unknown VLM endpoint '{endpoint_config}'")
    if record_dir is not None:
        backend = RecordingVlm(backend, record_dir)
    return backend


def vlm_chat(endpoint_config: str, request: VlmRequest) -> VlmResponse:
    """One-shot chat with the backend named by `endpoint_config`."""
    return make_vlm(endpoint_config).chat(request)
