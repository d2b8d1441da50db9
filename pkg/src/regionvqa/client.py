"""Model endpoint clients.

All remote calls go through one contract: a prompt plus an optional image,
answered with text. The HTTP implementation speaks the common
chat-completions wire format (image attached as a base64 data URI). Every
client shares the same plumbing: a content-addressed response cache keyed by
a digest of (endpoint_id, model, full request payload), a sliding-window
rate limiter, and exponential backoff with jitter for transient failures.

Mock clients generate deterministic responses from the request digest and a
seed, so an entire pipeline run is reproducible with no network.
"""

from __future__ import annotations

import base64
import hashlib
import json
import logging
import os
import random
import re
import threading
import time
from collections import Counter, deque
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Protocol

import httpx

from .config import DIMENSIONS, EndpointConfig
from .errors import NonRetryableError, TransportError

log = logging.getLogger(__name__)

BACKOFF_BASE = 0.5
BACKOFF_FACTOR = 2.0
BACKOFF_CAP = 30.0
BACKOFF_JITTER = 0.2


@dataclass
class DecodeParams:
    temperature: float = 0.0
    max_tokens: int = 512
    seed: int | None = None

    def to_payload(self) -> dict[str, Any]:
        payload: dict[str, Any] = {
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        }
        if self.seed is not None:
            payload["seed"] = self.seed
        return payload


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def build_chat_payload(
    model: str, prompt: str, image_bytes: bytes | None, decode: DecodeParams
) -> dict[str, Any]:
    content: list[dict[str, Any]] = [{"type": "text", "text": prompt}]
    if image_bytes is not None:
        encoded = base64.b64encode(image_bytes).decode("ascii")
        content.append(
            {"type": "image_url", "image_url": {"url": f"data:image/jpeg;base64,{encoded}"}}
        )
    return {
        "model": model,
        "messages": [{"role": "user", "content": content}],
        **decode.to_payload(),
    }


def request_digest(endpoint_id: str, model: str, payload: dict[str, Any]) -> str:
    canonical = json.dumps(
        {"endpoint": endpoint_id, "model": model, "payload": payload},
        sort_keys=True,
        separators=(",", ":"),
    )
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


class ResponseCache:
    """Content-addressed response store. Entries are immutable once written."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def _path(self, key: str) -> Path:
        return self.root / f"{key}.json"

    def get(self, key: str) -> str | None:
        path = self._path(key)
        if not path.exists():
            return None
        entry = json.loads(path.read_text(encoding="utf-8"))
        return entry["response"]

    def put(self, key: str, endpoint_id: str, model: str, response: str) -> None:
        path = self._path(key)
        with self._lock:
            if path.exists():
                return
            tmp = path.with_suffix(".tmp")
            tmp.write_text(
                json.dumps(
                    {
                        "key": key,
                        "endpoint": endpoint_id,
                        "model": model,
                        "response": response,
                        "created_at": time.time(),
                    }
                ),
                encoding="utf-8",
            )
            os.replace(tmp, path)


class SlidingWindowLimiter:
    """Allows at most `limit` acquisitions inside any sliding 60 s window."""

    def __init__(
        self,
        limit: int,
        clock: Callable[[], float] = time.monotonic,
        sleeper: Callable[[float], None] = time.sleep,
        window: float = 60.0,
    ):
        self.limit = limit
        self.window = window
        self._clock = clock
        self._sleeper = sleeper
        self._stamps: deque[float] = deque()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = self._clock()
                while self._stamps and now - self._stamps[0] >= self.window:
                    self._stamps.popleft()
                if len(self._stamps) < self.limit:
                    self._stamps.append(now)
                    return
                wait = self._stamps[0] + self.window - now
            self._sleeper(max(wait, 0.001))


def backoff_delay(attempt: int, rng: random.Random) -> float:
    """Delay before retry number `attempt` (0-based): 0.5 s doubling, capped
    at 30 s, with +/-20% jitter."""
    base = min(BACKOFF_CAP, BACKOFF_BASE * (BACKOFF_FACTOR**attempt))
    return base * rng.uniform(1.0 - BACKOFF_JITTER, 1.0 + BACKOFF_JITTER)


class ChatClient(Protocol):
    endpoint: EndpointConfig

    def chat(
        self,
        prompt: str,
        image_bytes: bytes | None = None,
        decode: DecodeParams | None = None,
    ) -> str: ...


def chat_with_image(
    client: ChatClient,
    image_bytes: bytes | None,
    prompt: str,
    decode: DecodeParams | None = None,
) -> str:
    """Single entry point for image-conditioned completion requests."""
    return client.chat(prompt, image_bytes=image_bytes, decode=decode)


class BaseChatClient:
    """Cache handling plus request accounting shared by every implementation."""

    def __init__(self, endpoint: EndpointConfig, cache: ResponseCache | None = None):
        self.endpoint = endpoint
        self.cache = cache
        self.request_counts: Counter[str] = Counter()
        self.requests: list[dict[str, Any]] = []

    def chat(
        self,
        prompt: str,
        image_bytes: bytes | None = None,
        decode: DecodeParams | None = None,
    ) -> str:
        decode = decode or DecodeParams()
        payload = build_chat_payload(self.endpoint.model, prompt, image_bytes, decode)
        key = request_digest(self.endpoint.endpoint_id, self.endpoint.model, payload)
        if self.cache is not None:
            hit = self.cache.get(key)
            if hit is not None:
                return hit
        response = self._send(payload, key)
        self.request_counts[key] += 1
        self.requests.append(payload)
        if self.cache is not None:
            self.cache.put(key, self.endpoint.endpoint_id, self.endpoint.model, response)
        return response

    def _send(self, payload: dict[str, Any], key: str) -> str:
        raise NotImplementedError


class HttpChatClient(BaseChatClient):
    def __init__(
        self,
        endpoint: EndpointConfig,
        cache: ResponseCache | None = None,
        limiter: SlidingWindowLimiter | None = None,
        transport: httpx.BaseTransport | None = None,
        sleeper: Callable[[float], None] = time.sleep,
        rng: random.Random | None = None,
    ):
        super().__init__(endpoint, cache)
        self.limiter = limiter or SlidingWindowLimiter(endpoint.requests_per_minute)
        self._sleeper = sleeper
        self._rng = rng or random.Random()
        self._semaphore = threading.Semaphore(endpoint.max_concurrency)
        headers = {}
        if endpoint.auth_env:
            token = os.environ.get(endpoint.auth_env)
            if token:
                headers["Authorization"] = f"Bearer {token}"
            else:
                log.warning(
                    "auth env var %s for endpoint %s is unset",
                    endpoint.auth_env,
                    endpoint.endpoint_id,
                )
        self._http = httpx.Client(
            base_url=endpoint.base_url,
            timeout=endpoint.timeout,
            headers=headers,
            transport=transport,
        )

    def _send(self, payload: dict[str, Any], key: str) -> str:
        last_error: Exception | None = None
        for attempt in range(self.endpoint.max_retries + 1):
            if attempt > 0:
                self._sleeper(backoff_delay(attempt - 1, self._rng))
            try:
                with self._semaphore:
                    self.limiter.acquire()
                    response = self._http.post("/chat/completions", json=payload)
            except httpx.HTTPError as exc:
                last_error = exc
                log.warning(
                    "endpoint %s attempt %d transport failure: %s",
                    self.endpoint.endpoint_id,
                    attempt + 1,
                    exc,
                )
                continue
            if 400 <= response.status_code < 500:
                raise NonRetryableError(
                    f"endpoint {self.endpoint.endpoint_id} rejected request "
                    f"{key[:12]} with HTTP {response.status_code}"
                )
            if response.status_code >= 500:
                last_error = TransportError(f"HTTP {response.status_code}")
                continue
            try:
                return response.json()["choices"][0]["message"]["content"]
            except (KeyError, IndexError, TypeError, json.JSONDecodeError) as exc:
                last_error = exc
                continue
        raise TransportError(
            f"endpoint {self.endpoint.endpoint_id} failed after "
            f"{self.endpoint.max_retries + 1} attempts: {last_error}"
        )


class ScriptedChatClient(BaseChatClient):
    """Returns canned responses in order. Test double for narrow contracts."""

    def __init__(self, responses: list[str], endpoint_id: str = "scripted"):
        super().__init__(EndpointConfig(endpoint_id=endpoint_id, model="scripted"))
        self._responses = list(responses)
        self.prompts: list[str] = []

    def _send(self, payload: dict[str, Any], key: str) -> str:
        self.prompts.append(payload["messages"][0]["content"][0]["text"])
        if not self._responses:
            raise TransportError(f"scripted client {self.endpoint.endpoint_id} ran out of responses")
        return self._responses.pop(0)


class TranscriptChatClient(BaseChatClient):
    """Replays a recorded transcript: request digest -> response text."""

    def __init__(self, endpoint: EndpointConfig, transcript: dict[str, str]):
        super().__init__(endpoint)
        self._transcript = transcript

    def _send(self, payload: dict[str, Any], key: str) -> str:
        if key not in self._transcript:
            raise TransportError(
                f"transcript for {self.endpoint.endpoint_id} has no entry for request {key[:12]}"
            )
        return self._transcript[key]


# ---------------------------------------------------------------------------
# Deterministic mock clients


ANSWER_BANK = ["red", "blue", "green", "yellow", "4", "7", "star", "circle"]

QUESTION_BANK = [
    "What is the dominant color of the marked patch?",
    "How many dark dots are visible?",
    "What shape is drawn in this region?",
    "What single character is printed here?",
    "What is the texture of the background?",
    "What material does the small object appear to be made of?",
    "What is the object in the corner of the region?",
    "How many stripes cross the patch?",
    "What color is the outline around the object?",
    "What kind of fastener is shown?",
]

LABEL_BANK = ["marker", "chip", "knob", "tag", "bolt", "lens"]

# The mock strips grounding suffixes and answer-style instructions to
# recover the bare question, so the same question yields the same base
# answer whether asked on a crop or on a grounded full image. Markers must
# match the distill/synthesis defaults.
_SUFFIX_MARKERS = (
    "Answer based on the region inside the red bounding box.",
    "Answer based on the region inside the bounding box",
    "Look carefully at the image and answer with a single short phrase",
)

_JUDGE_RE = re.compile(
    r"The answer is: (?P<gt>.*?)\nThe response is: (?P<resp>.*?)\nPlease check",
    re.DOTALL,
)
_DISTRACTOR_RE = re.compile(r"Correct answer: (?P<answer>.*?)\n", re.DOTALL)


def _mock_normalize(text: str) -> str:
    collapsed = " ".join(text.split()).casefold()
    return collapsed.rstrip(".!?,;:")


def _contains_phrase(haystack: str, needle: str) -> bool:
    """Token-level containment, the mock judge's stand-in for semantic
    equivalence: 'I think it is red' matches gold 'red'."""
    hay = haystack.split()
    ned = needle.split()
    if not ned:
        return False
    return any(hay[i : i + len(ned)] == ned for i in range(len(hay) - len(ned) + 1))


def _digest_int(*parts: str) -> int:
    joined = "\x1f".join(parts)
    return int.from_bytes(hashlib.sha256(joined.encode("utf-8")).digest()[:8], "big")


class MockChatClient(BaseChatClient):
    """Offline stand-in for a remote model.

    Responses are a pure function of (role, seed, request payload), so runs
    are reproducible and a resumed run re-derives identical text. Teacher
    answers depend only on the question text; that makes the eight consensus
    samples agree by default, with digest-selected cases that scatter
    (rejected) or leave exactly one dissenter (boundary accept).
    """

    def __init__(self, endpoint: EndpointConfig, role: str, seed: int = 0,
                 cache: ResponseCache | None = None):
        super().__init__(endpoint, cache)
        self.role = role
        self.seed = seed

    # -- helpers

    def _question_core(self, prompt: str) -> str:
        text = prompt
        for marker in _SUFFIX_MARKERS:
            idx = text.find(marker)
            if idx >= 0:
                text = text[:idx]
        # Drop any multiple-choice option block appended for evaluation.
        idx = text.find("\nA. ")
        if idx >= 0:
            text = text[:idx]
        return " ".join(text.split())

    def _base_answer(self, core: str) -> str:
        h = _digest_int("ans", str(self.seed), core)
        return ANSWER_BANK[h % len(ANSWER_BANK)]

    def _styled(self, answer: str, variant: int) -> str:
        forms = (answer, answer + ".", answer.capitalize(), answer.upper())
        return forms[variant % len(forms)]

    # -- role handlers

    def _question_gen(self, payload_digest: str) -> str:
        h = _digest_int("qgen", str(self.seed), payload_digest)
        if h % 17 == 0:
            return "I am not able to find anything interesting in this picture."
        count = 2 + h % 2
        start = h % len(QUESTION_BANK)
        questions = [QUESTION_BANK[(start + i) % len(QUESTION_BANK)] for i in range(count)]
        return json.dumps([{"question": q} for q in questions])

    def _teacher(self, prompt: str, decode_seed: int) -> str:
        core = self._question_core(prompt)
        h = _digest_int("ans", str(self.seed), core)
        mode = h % 9
        if mode == 0:
            # Scatter: every sample answers on its own; consensus fails.
            answer = ANSWER_BANK[(h + decode_seed) % len(ANSWER_BANK)]
        elif mode == 1 and decode_seed == 7:
            # Exactly one dissenting sample out of eight.
            answer = ANSWER_BANK[(h + 3) % len(ANSWER_BANK)]
        else:
            answer = self._base_answer(core)
        return self._styled(answer, h + decode_seed)

    def _student(self, prompt: str, image_part: str, decode_seed: int) -> str:
        core = self._question_core(prompt)
        base = self._base_answer(core)
        # Whether a trial lands on the right answer depends on the image as
        # well as the question, so identical questions on different images
        # produce different difficulty patterns. The right answer itself
        # must stay a function of the question core alone: teachers answer
        # on the crop while the student answers on the grounded full image.
        h = _digest_int("student", str(self.seed), image_part, core, str(decode_seed))
        if h % 5 == 0:
            return f"I think it is {base}"
        if h % 4 == 0:
            answer = base
        else:
            shift = 1 + h % (len(ANSWER_BANK) - 1)
            answer = ANSWER_BANK[(ANSWER_BANK.index(base) + shift) % len(ANSWER_BANK)]
        return self._styled(answer, h)

    def _judge(self, prompt: str) -> str:
        match = _JUDGE_RE.search(prompt)
        if not match:
            return "\\boxed{No}"
        gt = _mock_normalize(match.group("gt"))
        resp = _mock_normalize(match.group("resp"))
        same = gt == resp or _contains_phrase(resp, gt)
        if not same:
            try:
                same = abs(float(gt) - float(resp)) < 1e-9
            except ValueError:
                same = False
        return "\\boxed{Yes}" if same else "\\boxed{No}"

    def _inventory(self, payload_digest: str) -> str:
        h = _digest_int("inv", str(self.seed), payload_digest)
        count = 2 + h % 3
        labels = [LABEL_BANK[(h + i) % len(LABEL_BANK)] for i in range(count)]
        return json.dumps(labels)

    def _distractors(self, prompt: str) -> str:
        match = _DISTRACTOR_RE.search(prompt)
        gold = _mock_normalize(match.group("answer")) if match else ""
        h = _digest_int("distract", str(self.seed), prompt)
        try:
            value = int(gold)
            options = [str(value + delta) for delta in (1, 2, 3)]
        except ValueError:
            pool = [w for w in ANSWER_BANK if _mock_normalize(w) != gold]
            options = [pool[(h + i) % len(pool)] for i in range(7)]
            options = list(dict.fromkeys(options))[:3]
        return json.dumps(options)

    def _classify(self, prompt: str) -> str:
        h = _digest_int("dim", str(self.seed), prompt)
        return DIMENSIONS[h % len(DIMENSIONS)]

    def _eval_answer(self, payload: dict[str, Any], prompt: str) -> str:
        image_part = self._image_part(payload)
        core = self._question_core(prompt)
        h = _digest_int("eval", str(self.seed), image_part, core)
        if "\nA. " in prompt:
            letters = [line[0] for line in prompt.splitlines() if re.match(r"^[A-J]\. ", line)]
            answer = letters[h % len(letters)] if letters else "A"
        else:
            answer = ANSWER_BANK[h % len(ANSWER_BANK)]
        style = h % 4
        if style == 0:
            return f"\\boxed{{{answer}}}"
        if style == 1:
            return f"Looking closely at the region, I conclude.\nAnswer: {answer}"
        if style == 2:
            return str(answer)
        return f"{answer}."

    @staticmethod
    def _image_part(payload: dict[str, Any]) -> str:
        content = payload["messages"][0]["content"]
        if len(content) > 1:
            return sha256_bytes(content[1]["image_url"]["url"].encode("ascii"))[:16]
        return ""

    def _send(self, payload: dict[str, Any], key: str) -> str:
        prompt = payload["messages"][0]["content"][0]["text"]
        decode_seed = int(payload.get("seed", 0) or 0)
        if self.role == "question_generator":
            return self._question_gen(key)
        if self.role == "teacher":
            return self._teacher(prompt, decode_seed)
        if self.role == "student":
            return self._student(prompt, self._image_part(payload), decode_seed)
        if self.role == "judge":
            return self._judge(prompt)
        if self.role == "inventory":
            return self._inventory(key)
        if self.role == "distractor":
            return self._distractors(prompt)
        if self.role == "classifier":
            return self._classify(prompt)
        return self._eval_answer(payload, prompt)


# ---------------------------------------------------------------------------
# Segmenter client: boxes for labels


class SegmenterClient(Protocol):
    def segment(self, image_bytes: bytes, labels: list[str]) -> list[dict[str, Any]]: ...


class HttpSegmenterClient:
    """POSTs {image, labels} and expects {"regions": [{label, bbox}]}."""

    def __init__(
        self,
        endpoint: EndpointConfig,
        limiter: SlidingWindowLimiter | None = None,
        transport: httpx.BaseTransport | None = None,
        sleeper: Callable[[float], None] = time.sleep,
        rng: random.Random | None = None,
    ):
        self.endpoint = endpoint
        self.limiter = limiter or SlidingWindowLimiter(endpoint.requests_per_minute)
        self._sleeper = sleeper
        self._rng = rng or random.Random()
        headers = {}
        if endpoint.auth_env and os.environ.get(endpoint.auth_env):
            headers["Authorization"] = f"Bearer {os.environ[endpoint.auth_env]}"
        self._http = httpx.Client(base_url=endpoint.base_url, timeout=endpoint.timeout, headers=headers)

    def segment(self, image_bytes: bytes, labels: list[str]) -> list[dict[str, Any]]:
        payload = {
            "model": self.endpoint.model,
            "image": base64.b64encode(image_bytes).decode("ascii"),
            "labels": labels,
        }
        last_error: Exception | None = None
        for attempt in range(self.endpoint.max_retries + 1):
            if attempt > 0:
                self._sleeper(backoff_delay(attempt - 1, self._rng))
            try:
                self.limiter.acquire()
                response = self._http.post("/segment", json=payload)
            except httpx.HTTPError as exc:
                last_error = exc
                continue
            if 400 <= response.status_code < 500:
                raise NonRetryableError(
                    f"segmenter {self.endpoint.endpoint_id} rejected request: HTTP {response.status_code}"
                )
            if response.status_code >= 500:
                last_error = TransportError(f"HTTP {response.status_code}")
                continue
            return response.json()["regions"]
        raise TransportError(
            f"segmenter {self.endpoint.endpoint_id} failed after "
            f"{self.endpoint.max_retries + 1} attempts: {last_error}"
        )


class MockSegmenterClient:
    """Deterministic boxes derived from the image bytes and label text.

    Mostly small boxes so the sparsity filter keeps them, with periodic
    oversized and out-of-bounds boxes to exercise filtering and clamping.
    """

    def __init__(self, seed: int = 0):
        self.seed = seed
        self.calls = 0

    def segment(self, image_bytes: bytes, labels: list[str]) -> list[dict[str, Any]]:
        self.calls += 1
        image_key = sha256_bytes(image_bytes)[:16]
        regions = []
        for label in labels:
            h = _digest_int("seg", str(self.seed), image_key, label)
            x1 = h % 700
            y1 = (h >> 8) % 700
            if h % 5 == 0:
                width = height = 420  # oversized: filtered out by area ratio
            else:
                width = 24 + (h >> 16) % 72
                height = 24 + (h >> 24) % 72
            if h % 11 == 0:
                x1 += 900  # lands outside most frames: clamped, then dropped
            regions.append(
                {"label": label, "bbox": [x1, y1, x1 + width, y1 + height]}
            )
        return regions


# ---------------------------------------------------------------------------
# Factory


MOCK_TEACHER_IDS = ("mock-teacher-a", "mock-teacher-b")


class ClientFactory:
    """Builds and memoizes one client per endpoint role.

    With mock=True every role resolves to a deterministic offline client;
    otherwise clients come from the config's endpoint table. Memoization
    keeps request accounting stable across pipeline stages in one process.
    """

    def __init__(self, config: Any, mock: bool = False, seed: int = 0,
                 cache: ResponseCache | None = None):
        self.config = config
        self.mock = mock
        self.seed = seed
        self.cache = cache
        self._chat_clients: dict[str, BaseChatClient] = {}
        self._teachers: list[BaseChatClient] | None = None
        self._segmenter: Any = None
        self._limiters: dict[str, SlidingWindowLimiter] = {}

    def _limiter(self, endpoint: EndpointConfig) -> SlidingWindowLimiter:
        if endpoint.endpoint_id not in self._limiters:
            self._limiters[endpoint.endpoint_id] = SlidingWindowLimiter(
                endpoint.requests_per_minute
            )
        return self._limiters[endpoint.endpoint_id]

    def _role_name(self, role: str) -> str:
        return "teacher" if role.startswith("teacher") else role

    def chat(self, role: str) -> BaseChatClient:
        if role not in self._chat_clients:
            if self.mock:
                endpoint = EndpointConfig(endpoint_id=f"mock-{role}", model=f"mock-{role}")
                client: BaseChatClient = MockChatClient(
                    endpoint, self._role_name(role), seed=self.seed, cache=self.cache
                )
            else:
                endpoint = self.config.endpoint(role)
                client = HttpChatClient(endpoint, cache=self.cache, limiter=self._limiter(endpoint))
            self._chat_clients[role] = client
        return self._chat_clients[role]

    def teachers(self) -> list[BaseChatClient]:
        if self._teachers is None:
            if self.mock:
                self._teachers = [
                    MockChatClient(
                        EndpointConfig(endpoint_id=tid, model=tid),
                        "teacher",
                        seed=self.seed,
                        cache=self.cache,
                    )
                    for tid in MOCK_TEACHER_IDS
                ]
            else:
                configured = self.config.teacher_endpoints()
                if not configured:
                    raise TransportError("no teacher endpoints configured")
                self._teachers = [
                    HttpChatClient(ep, cache=self.cache, limiter=self._limiter(ep))
                    for ep in configured
                ]
        return self._teachers

    def segmenter(self) -> Any:
        if self._segmenter is None:
            if self.mock:
                self._segmenter = MockSegmenterClient(seed=self.seed)
            else:
                endpoint = self.config.endpoint("segmenter")
                self._segmenter = HttpSegmenterClient(endpoint, limiter=self._limiter(endpoint))
        return self._segmenter

    def all_chat_clients(self) -> list[BaseChatClient]:
        clients = list(self._chat_clients.values())
        if self._teachers:
            clients.extend(self._teachers)
        return clients

    def request_totals(self) -> Counter[str]:
        """Combined per-digest request counts across every live client."""
        totals: Counter[str] = Counter()
        for client in self.all_chat_clients():
            totals.update(client.request_counts)
        return totals
