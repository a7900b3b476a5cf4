import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest

from factnli.data import NliLabel, Observation, StrategyNotAllowed
from factnli.generator import (
    EXTEND_INSTRUCTION,
    HYPCOND_INSTRUCTION,
    LIST_INSTRUCTION,
    GenerationCache,
    GenerationError,
    Generator,
    HttpService,
    MockService,
    PromptError,
    PromptTemplate,
    TemplateKind,
    build_prompt,
    builtin_templates,
    generate_bundle,
    load_template,
    parse_fact_list,
)

OBS = Observation("o1", "Anna sold her bike in May, and she bought a car.", "Anna has a car.", NliLabel.ENTAILMENT)


@pytest.fixture(scope="module")
def templates():
    return builtin_templates()


def test_builtin_templates(templates):
    assert set(templates) == {"list1", "list2", "extend1", "extend2", "hypcond"}
    for t in templates.values():
        assert len(t.examples) == 4
    assert templates["list1"].instruction == "List all the facts we explicitly know from the premise:"
    assert templates["hypcond"].instruction == (
        "List a fact we explicitly know from the premise that we can use to verify if the hypothesis is true:"
    )
    assert templates["list1"].examples != templates["list2"].examples
    assert templates["list1"].digest != templates["list2"].digest


def test_list_prompt(templates):
    prompt = build_prompt(templates["list1"], "P is here.")
    assert prompt.endswith("Premise: P is here.\n" + LIST_INSTRUCTION + "\n")
    assert prompt.count(LIST_INSTRUCTION) == 5
    assert build_prompt(templates["list1"], "P is here.") == prompt


def test_hypcond_prompt(templates):
    with pytest.raises(PromptError):
        build_prompt(templates["hypcond"], "P")
    prompt = build_prompt(templates["hypcond"], "P", hypothesis="H")
    assert prompt.endswith("Premise: P\nHypothesis: H\n" + HYPCOND_INSTRUCTION + "\n")


def test_extend_prompt(templates):
    with pytest.raises(PromptError):
        build_prompt(templates["extend1"], "P")
    prompt = build_prompt(templates["extend1"], "P", existing_facts=["Fact one.", "Fact two."])
    tail = prompt.rsplit("\n\n", 1)[1]
    between = tail.split(LIST_INSTRUCTION, 1)[1].split(EXTEND_INSTRUCTION, 1)[0]
    assert "Fact one." in between and "Fact two." in between
    assert prompt.endswith(EXTEND_INSTRUCTION + "\n")


def test_template_needs_four_examples(tmp_path, templates):
    with pytest.raises(PromptError):
        PromptTemplate(TemplateKind.LIST, templates["list1"].examples[:3])
    path = tmp_path / "t.txt"
    path.write_text("Premise: a\nFacts:\n- b\n")
    with pytest.raises(PromptError, match="expected 4"):
        load_template(path, TemplateKind.LIST)


@pytest.mark.parametrize(
    "response,expected",
    [
        ("1. A\n2. B", ["A", "B"]),
        ("- A\n\n- B\n", ["A", "B"]),
        ("• A\n3) B", ["A", "B"]),
        ("", []),
        ("\n  \n", []),
    ],
)
def test_parse_fact_list(response, expected):
    assert parse_fact_list(response) == expected


def test_parse_single():
    assert parse_fact_list("\nFirst fact.\nSecond.", single=True) == ["First fact."]


def _fixed_service(templates, mapping):
    """Mock answering by template name, identified through the few-shot text."""

    def respond(prompt):
        for name, text in mapping.items():
            if prompt.startswith(build_prompt(templates[name], "x", **_extra(name)).rsplit("\n\n", 1)[0]):
                return text
        raise AssertionError("unexpected prompt")

    return MockService(respond)


def _extra(name):
    if name == "hypcond":
        return {"hypothesis": "h"}
    if name.startswith("extend"):
        return {"existing_facts": ["f"]}
    return {}


def test_factcomb_with_mock(templates):
    svc = _fixed_service(templates, {"list1": "1. A\n2. B", "list2": "1. B\n2. C"})
    out = generate_bundle(OBS, svc, "factcomb")
    assert out.texts == ["A", "B", "C"]
    assert len(svc.calls) == 2


def test_factext_and_hypcond(templates):
    svc = _fixed_service(templates, {"list1": "1. A", "extend1": "2. A\n3. D", "list2": "- E", "hypcond": "H\nignored"})
    assert generate_bundle(OBS, svc, "factext").texts == ["A", "D"]
    out = generate_bundle(OBS, svc, "hypcond")
    assert out.texts == ["A", "E", "H"]
    assert [f.eval_only for f in out] == [False, False, True]


def test_hypcond_refused_for_train():
    svc = MockService()
    with pytest.raises(StrategyNotAllowed):
        generate_bundle(OBS, svc, "hypcond", split="train")
    assert svc.calls == []


def test_cache_hit_avoids_calls(tmp_path):
    path = tmp_path / "cache.jsonl"
    first = generate_bundle(OBS, MockService(), "hypcond", cache=GenerationCache(path))
    lines = path.read_text().splitlines()
    assert len(lines) == 3
    svc = MockService()
    again = generate_bundle(OBS, svc, "hypcond", cache=GenerationCache(path))
    assert again == first
    assert svc.calls == []
    assert path.read_text().splitlines() == lines
    rec = json.loads(lines[0])
    assert {"key", "id", "template", "kind", "raw", "facts", "timestamp", "model"} <= set(rec)


def test_parse_failure_surfaces_raw():
    with pytest.raises(GenerationError) as info:
        generate_bundle(OBS, MockService(lambda p: "   \n"), "list1")
    assert info.value.raw == "   \n"


def test_retries_with_backoff():
    attempts = []

    def flaky(prompt):
        attempts.append(1)
        if len(attempts) < 3:
            raise ConnectionError("down")
        return "1. A"

    sleeps = []
    gen = Generator(MockService(flaky), sleep=sleeps.append)
    assert gen.generate_bundle(OBS, "list1").texts == ["A"]
    assert sleeps == [1.0, 2.0]

    sleeps.clear()
    dead = Generator(MockService(lambda p: (_ for _ in ()).throw(ConnectionError("down"))), sleep=sleeps.append)
    with pytest.raises(GenerationError, match="after 3 attempts"):
        dead.generate_bundle(OBS, "list1")
    assert sleeps == [1.0, 2.0]


def test_default_mock_is_deterministic():
    a = generate_bundle(OBS, MockService(), "hypcond")
    b = generate_bundle(OBS, MockService(), "hypcond")
    assert a == b and len(a) >= 2


def test_generate_dataset_concurrent(tmp_path):
    obs = [Observation(f"o{i}", f"Fact {i} holds, and fact {i}b too.", "h", None) for i in range(12)]
    gen = Generator(MockService(), GenerationCache(tmp_path / "c.jsonl"))
    out = gen.generate_dataset(obs, "factcomb", max_workers=4)
    assert [o.id for o in out] == [o.id for o in obs]
    assert all(len(o.facts) >= 1 for o in out)
    assert len((tmp_path / "c.jsonl").read_text().splitlines()) == 24


class _Handler(BaseHTTPRequestHandler):
    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        self.server.seen.append((body, self.headers.get("Authorization")))
        payload = json.dumps({"choices": [{"text": "1. Served fact"}]}).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.end_headers()
        self.wfile.write(payload)

    def log_message(self, *args):
        pass


def test_http_service_wire_format(monkeypatch):
    server = HTTPServer(("127.0.0.1", 0), _Handler)
    server.seen = []
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        monkeypatch.setenv("FACTNLI_SERVICE_URL", f"http://127.0.0.1:{server.server_port}/v1/completions")
        monkeypatch.setenv("FACTNLI_API_KEY", "secret")
        svc = HttpService(model="some-model")
        assert generate_bundle(OBS, svc, "list1").texts == ["Served fact"]
        body, auth = server.seen[0]
        assert auth == "Bearer secret"
        assert body["model"] == "some-model" and body["temperature"] == 0.0 and body["max_tokens"] == 256
        assert body["prompt"].endswith(LIST_INSTRUCTION + "\n")
    finally:
        server.shutdown()
