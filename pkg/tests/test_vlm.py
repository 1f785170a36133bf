"""
This file is part of atomnav, a toolkit for building sign-centric abstract top-view maps
and grounding navigational signs in them.

You should have received a copy of the Apache-2.0 license along with the code. If not,
see <https://opensource.org/licenses/Apache-2.0>
"""

import pytest
import requests

from atomnav import vlm
from atomnav.errors import ReplayMiss, TransportError
from atomnav.prompts import GROUNDING_PROMPT, grounding_text, in_context_text, split_grounding_text
from atomnav.vlm import HttpVlm, RecordingVlm, ReplayVlm, VlmRequest, VlmResponse, make_vlm


class _Echo:

    def chat(self, request):
        return VlmResponse(" | ".join(request.texts()))


class _Reply:

    def __init__(self, status, body):
        self.status_code = status
        self._body = body
        self.text = str(body)

    def json(self):
        return self._body


def test_request_validation():
    with pytest.raises(ValueError):
        VlmRequest(())
    with pytest.raises(TypeError):
        VlmRequest(("text", 3))


def test_digest_depends_on_part_kind_and_order():
    a = VlmRequest(("abc", b"png"))
    assert a.digest() == VlmRequest(["abc", b"png"]).digest()
    assert a.digest() != VlmRequest((b"png", "abc")).digest()
    assert VlmRequest(("abc",)).digest() != VlmRequest((b"abc",)).digest()
    assert a.images() == [b"png"]


def test_record_then_replay(tmp_path):
    recorder = RecordingVlm(_Echo(), tmp_path)
    request = VlmRequest(("hello", b"img", "world"))
    assert recorder.chat(request).text == "hello | world"

    replay = ReplayVlm(tmp_path)
    assert replay.chat(request).text == "hello | world"
    with pytest.raises(ReplayMiss):
        replay.chat(VlmRequest(("other",)))


def test_replay_without_store(tmp_path):
    with pytest.raises(ReplayMiss):
        ReplayVlm(tmp_path)


def test_http_success(monkeypatch):
    sent = {}

    def post(url, headers, json, timeout):
        sent.update(url=url, headers=headers, json=json)
        return _Reply(200, {"choices": [{"message": {"content": "[A]"}}]})

    monkeypatch.setattr(vlm.requests, "post", post)
    backend = HttpVlm("http://localhost:1/v1/chat/completions", api_key="secret")
    assert backend.chat(VlmRequest(("pick", b"\x89PNG"))).text == "[A]"
    assert sent["headers"]["Authorization"] == "Bearer secret"
    content = sent["json"]["messages"][0]["content"]
    assert content[0] == {"type": "text", "text": "pick"}
    assert content[1]["image_url"]["url"].startswith("data:image/png;base64,")
    assert sent["json"]["temperature"] == 0.0


def test_http_retries_then_fails(monkeypatch):
    calls = []

    def post(url, headers, json, timeout):
        calls.append(url)
        if len(calls) == 1:
            raise requests.ConnectionError("refused")
        return _Reply(503, "busy")

    monkeypatch.setattr(vlm.requests, "post", post)
    monkeypatch.setattr(vlm.time, "sleep", lambda s: None)
    with pytest.raises(TransportError) as err:
        HttpVlm("http://localhost:1", retries=2).chat(VlmRequest(("x",)))
    assert len(calls) == 3
    assert err.value.retries == 2


@pytest.mark.parametrize("spec", ["carrier-pigeon", "replay", "http"])
def test_make_vlm_rejects(spec, monkeypatch):
    monkeypatch.delenv("ATOMNAV_VLM_URL", raising=False)
    with pytest.raises(ValueError):
        make_vlm(spec)


def test_make_vlm_http_url(monkeypatch):
    monkeypatch.setenv("ATOMNAV_VLM_URL", "http://example.invalid/chat")
    assert make_vlm("http").url == "http://example.invalid/chat"
    assert make_vlm("http://host:8000/v1/chat").url == "http://host:8000/v1/chat"


def test_make_vlm_oracle_needs_scene():
    with pytest.raises(ValueError):
        make_vlm("oracle")


def test_make_vlm_records(tmp_path, t_scene_file):
    backend = make_vlm(f"oracle:{t_scene_file}", record_dir=tmp_path / "rec")
    assert isinstance(backend, RecordingVlm)
    assert (tmp_path / "rec").is_dir()


def test_grounding_text_round_trip():
    parsing = "{'left': ['gate'], 'locational': []}"
    text = grounding_text("gate", parsing)
    assert "{location}" not in text
    assert split_grounding_text(text) == ("gate", parsing)
    assert split_grounding_text(GROUNDING_PROMPT[:40]) is None


def test_in_context_text():
    assert in_context_text({}).endswith("This following dictionary {} includes their semantic meaning.")
    assert '{"1":"stairs"}' in in_context_text({"1": "stairs"})
