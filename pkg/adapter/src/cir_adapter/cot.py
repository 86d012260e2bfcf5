"""Chain-of-thought decomposition through a multimodal chat endpoint.

The prompt walks four steps (understand the reference image, understand the
modification, infer the target content, decompose into retained and deleted
elements) and demands one machine-readable object ``{retained, deleted,
target}``.  Free-text reasoning is kept only in the audit transcript.  A
single repair round re-asks for the object alone; after that the sample
fails loudly rather than poisoning the dataset.
"""

from __future__ import annotations

import base64
import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import requests

from .config import AdapterConfig
from .errors import EndpointUnavailableError, UnparseableAfterRepairError

REPAIR_PROMPT = (
    "Your previous reply could not be parsed. Return ONLY the JSON object "
    '{"retained": "...", "deleted": "...", "target": "..."} with nonempty '
    "string values, and no other text."
)


@dataclass(frozen=True)
class CotResult:
    """The three decomposition strings plus the full audit transcript."""

    retained: str
    deleted: str
    target: str
    transcript: tuple[dict, ...] = field(default=(), compare=False)

    def to_json_dict(self) -> dict:
        return {
            "retained": self.retained,
            "deleted": self.deleted,
            "target": self.target,
            "transcript": list(self.transcript),
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "CotResult":
        return cls(
            retained=data["retained"],
            deleted=data["deleted"],
            target=data["target"],
            transcript=tuple(data.get("transcript", ())),
        )


def load_template(config: AdapterConfig) -> str:
    if config.prompt_template is not None:
        return Path(config.prompt_template).read_text(encoding="utf-8")
    return (
        resources.files("cir_adapter").joinpath("prompts/cot_template.txt").read_text("utf-8")
    )


def extract_object(text: str) -> dict | None:
    """Best-effort recovery of the trailing JSON object from a model reply."""
    candidates = [text.strip()]
    start = text.find("{")
    end = text.rfind("}")
    if start != -1 and end > start:
        candidates.append(text[start : end + 1])
        candidates.append(text[text.rfind("{", 0, end + 1) : end + 1])
    for candidate in candidates:
        try:
            obj = json.loads(candidate)
        except json.JSONDecodeError:
            continue
        if isinstance(obj, dict):
            return obj
    return None


def _validate(obj: dict | None) -> tuple[str, str, str] | None:
    if obj is None:
        return None
    values = []
    for key in ("retained", "deleted", "target"):
        value = obj.get(key)
        if not isinstance(value, str) or not value.strip():
            return None
        values.append(value.strip())
    return tuple(values)


class CotClient:
    """Talks to an OpenAI-style chat-completions endpoint."""

    def __init__(self, config: AdapterConfig, timeout: float = 60.0):
        self.config = config
        self.timeout = timeout
        self.template = load_template(config)

    def _post(self, messages: list[dict]) -> str:
        url = self.config.mllm_endpoint.rstrip("/") + "/chat/completions"
        try:
            response = requests.post(
                url,
                json={"model": self.config.mllm_model, "messages": messages},
                timeout=self.timeout,
            )
            response.raise_for_status()
            payload = response.json()
            return payload["choices"][0]["message"]["content"]
        except requests.RequestException as exc:
            raise EndpointUnavailableError(f"reasoning call to {url} failed: {exc}") from exc
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise EndpointUnavailableError(
                f"reasoning endpoint {url} returned an unexpected payload: {exc}"
            ) from exc

    def reason(self, image_bytes: bytes, modification_text: str) -> CotResult:
        prompt = self.template.format(modification_text=modification_text)
        image_b64 = base64.b64encode(image_bytes).decode("ascii")
        image_digest = hashlib.sha256(image_bytes).hexdigest()
        messages = [
            {
                "role": "user",
                "content": [
                    {"type": "text", "text": prompt},
                    {
                        "type": "image_url",
                        "image_url": {"url": f"data:image/png;base64,{image_b64}"},
                    },
                ],
            }
        ]
        transcript: list[dict] = []

        first = self._post(messages)
        transcript.append(
            {"role": "user", "prompt": prompt, "image": f"sha256:{image_digest}"}
        )
        transcript.append({"role": "assistant", "content": first})
        parsed = _validate(extract_object(first))
        if parsed is None:
            messages.append({"role": "assistant", "content": first})
            messages.append({"role": "user", "content": REPAIR_PROMPT})
            second = self._post(messages)
            transcript.append({"role": "user", "prompt": REPAIR_PROMPT})
            transcript.append({"role": "assistant", "content": second})
            parsed = _validate(extract_object(second))
            if parsed is None:
                raise UnparseableAfterRepairError(
                    "no valid {retained, deleted, target} object after one repair round"
                )
        retained, deleted, target = parsed
        return CotResult(
            retained=retained, deleted=deleted, target=target, transcript=tuple(transcript)
        )
