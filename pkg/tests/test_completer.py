from __future__ import annotations

import json

import httpx
import pytest
from hypothesis import given
from hypothesis import strategies as st

from snipcheck.completer import (
    PLACEHOLDER_PRAGMA,
    BackendError,
    CheckResult,
    CompletionCandidate,
    HttpBackend,
    IncompleteMark,
    PipelineError,
    PromptTooLong,
    ScaffoldBackend,
    ScaffoldError,
    backend_from_spec,
    build_prompt,
    complete_iteratively,
    extract_code,
    preserves_snippet,
    scaffold_complete,
)
from snipcheck.ingest import Snippet

REGISTER = """function registerUser(string memory name) public {
    require(!registered[msg.sender]);
    registered[msg.sender] = true;
    emit Registered(msg.sender, name);
}"""

FULL = """pragma solidity ^0.8.0;
contract A {
    uint256 x;
    function f() public { x = 1; }
}
"""


class Scripted:
    """Backend replying from a fixed list (the last reply repeats)."""

    name = "scripted"

    def __init__(self, *replies):
        self.replies = list(replies)
        self.calls = 0

    def complete(self, prompt):
        self.calls += 1
        return self.replies[min(self.calls, len(self.replies)) - 1]


def compiles_if(marker):
    seen = []

    def check(source):
        seen.append(source)
        return CheckResult(marker in source, [] if marker in source else ["Error: nope"])

    check.seen = seen
    return check


# ------------------------------------------------------------------ prompt


def test_prompt_contains_snippet_verbatim():
    prompt = build_prompt(Snippet.from_text(REGISTER))
    assert REGISTER in prompt.render()
    assert prompt.snippet_body == REGISTER
    assert "verbatim" in prompt.instruction


def test_prompt_for_full_contract():
    assert FULL in build_prompt(FULL).render()


def test_prompt_budget_is_an_error():
    with pytest.raises(PromptTooLong):
        build_prompt("x" * 8001)
    assert build_prompt("x" * 8000)


def test_empty_prompt_rejected():
    with pytest.raises(ValueError):
        build_prompt("   ")


# ------------------------------------------------------------------ loop


def test_first_round_success_stops_early():
    backend = Scripted("contract ok {}")
    result = complete_iteratively(Snippet.from_text("x;"), backend, compiles_if("ok"))
    assert isinstance(result, CompletionCandidate)
    assert result.round_index == 1
    assert backend.calls == 1


def test_same_broken_text_checked_once():
    backend = Scripted("contract bad {}")
    check = compiles_if("ok")
    result = complete_iteratively(Snippet.from_text("x;"), backend, check, max_rounds=13)
    assert isinstance(result, IncompleteMark)
    assert backend.calls == 13
    assert len(check.seen) == 1
    assert result.diagnostics == ["Error: nope"]


def test_success_in_later_round_and_monotone():
    backend = Scripted("a", "b", "c ok")
    found = complete_iteratively(Snippet.from_text("x;"), backend, compiles_if("ok"), max_rounds=3)
    assert found.round_index == 3
    for rounds in (4, 13):
        again = complete_iteratively(Snippet.from_text("x;"), Scripted("a", "b", "c ok"),
                                     compiles_if("ok"), max_rounds=rounds)
        assert isinstance(again, CompletionCandidate) and again.round_index == 3
    short = complete_iteratively(Snippet.from_text("x;"), Scripted("a", "b", "c ok"), compiles_if("ok"), max_rounds=2)
    assert isinstance(short, IncompleteMark)


@given(st.integers(1, 20))
def test_backend_calls_bounded(rounds):
    backend = Scripted(*[f"t{k}" for k in range(30)])
    complete_iteratively(Snippet.from_text("x;"), backend, compiles_if("never"), max_rounds=rounds)
    assert backend.calls == rounds


def test_repair_applied_before_check():
    backend = Scripted("contract ok { function f() public {")
    check = compiles_if("ok")
    result = complete_iteratively(Snippet.from_text("x;"), backend, check)
    assert result.source_text.endswith("}}")


def test_backend_failure_carries_round():
    class Flaky(Scripted):
        def complete(self, prompt):
            self.calls += 1
            if self.calls == 2:
                raise BackendError("connection refused")
            return "nope"

    with pytest.raises(BackendError) as info:
        complete_iteratively(Snippet.from_text("x;"), Flaky(), compiles_if("ok"))
    assert info.value.round_index == 2


def test_check_crash_is_pipeline_error():
    def boom(source):
        raise RuntimeError("solc exploded")

    with pytest.raises(PipelineError):
        complete_iteratively(Snippet.from_text("x;"), Scripted("a"), boom)


def test_drifting_candidate_flagged():
    snippet = Snippet.from_text("function keepMe() public {}")
    result = complete_iteratively(snippet, Scripted("contract ok { function renamed() public {} }"),
                                  compiles_if("ok"))
    assert result.preserves_snippet is False


def test_fenced_reply_extracted():
    reply = "Here you go:\n```solidity\ncontract ok {}\n```\nand a note ```x```"
    assert extract_code(reply) == "contract ok {}\n"


# ------------------------------------------------------------------ backends


def test_backend_from_spec():
    assert isinstance(backend_from_spec("scaffold"), ScaffoldBackend)
    http = backend_from_spec("http:localhost:8080/complete")
    assert isinstance(http, HttpBackend) and http.url == "http://localhost:8080/complete"
    with pytest.raises(ValueError):
        backend_from_spec("gpt")


def test_http_backend_protocol():
    requests = []

    def handler(request):
        requests.append(json.loads(request.content))
        return httpx.Response(200, json={"text": "```\ncontract ok {}\n```"})

    backend = HttpBackend("http://model/complete", client=httpx.Client(transport=httpx.MockTransport(handler)))
    result = complete_iteratively(Snippet.from_text(REGISTER), backend, compiles_if("ok"))
    assert isinstance(result, CompletionCandidate)
    assert requests[0]["prompt"].endswith("### Output:\n")
    assert REGISTER in requests[0]["prompt"]
    assert requests[0]["max_new_tokens"] > 0


@pytest.mark.parametrize("response", [httpx.Response(503), httpx.Response(200, json={"txt": "x"}),
                                      httpx.Response(200, content=b"not json")])
def test_http_backend_errors(response):
    client = httpx.Client(transport=httpx.MockTransport(lambda r: response))
    with pytest.raises(BackendError):
        HttpBackend("http://model", client=client).generate("p")


# ------------------------------------------------------------------ scaffold


def test_scaffold_declares_owner():
    out = scaffold_complete("function kill() public {\n    require(msg.sender == owner);\n    selfdestruct(owner);\n}")
    assert "address payable owner;" in out or "address owner;" in out
    assert "contract SnippetShell {" in out
    assert out.startswith(PLACEHOLDER_PRAGMA)


def test_scaffold_full_contract_identity():
    assert scaffold_complete(FULL) == FULL


def test_scaffold_unknown_type():
    with pytest.raises(ScaffoldError, match="Foo"):
        scaffold_complete("function f() public {\n    Foo bar;\n}")


def test_scaffold_payout_loop():
    snippet = """function payout() public {
    for (uint i = 0; i < investors.length; i++) {
        investors[i].transfer(1 ether);
    }
}"""
    out = scaffold_complete(snippet)
    assert "address payable[] investors;" in out


def test_scaffold_statements_wrapped():
    out = scaffold_complete("balance += msg.value;\ncount = count + 1;")
    assert "function snippetBody() public" in out
    assert "uint256 balance;" in out and "uint256 count;" in out


def test_scaffold_onlyowner_modifier():
    out = scaffold_complete("function withdraw() public onlyOwner {\n    msg.sender.transfer(address(this).balance);\n}")
    assert "modifier onlyOwner()" in out


def test_scaffold_hoists_pragma():
    out = scaffold_complete("pragma solidity ^0.5.0;\nfunction f() public {\n    total = total + 1;\n}")
    assert out.startswith("pragma solidity ^0.5.0;")
    assert out.count("pragma solidity") == 1


_LINES = st.sampled_from([
    "total = total + 1;", "balances[msg.sender] += msg.value;", "owner = msg.sender;",
    "require(msg.sender == owner);", "active = !active;", "count++;",
    "investors.push(msg.sender);", "payable(msg.sender).transfer(amount);",
])


@given(st.lists(_LINES, min_size=1, max_size=6))
def test_scaffold_preserves_snippet_lines(lines):
    snippet = "function snippetFn(uint amount) public {\n" + "\n".join("    " + l for l in lines) + "\n}"
    try:
        out = scaffold_complete(snippet)
    except ScaffoldError:
        return
    assert preserves_snippet(out, snippet)
    for line in snippet.splitlines():
        assert line in out.splitlines()
