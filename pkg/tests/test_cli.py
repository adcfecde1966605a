from __future__ import annotations

import json

import httpx
import pytest

from snipcheck.cli import main

CLEAN = "pragma solidity ^0.8.0;\ncontract Ok {\n    uint256 public x;\n    function set(uint256 v) public { x = v; }\n}\n"
PAYOUT = """function payout() public {
    for (uint i = 0; i < investors.length; i++) {
        investors[i].transfer(1 ether);
    }
}
"""
HOPELESS = "function broken() public {\n    this is not solidity at all;\n}\n"


@pytest.fixture
def files(tmp_path):
    for name, text in (("ok.sol", CLEAN), ("payout.sol", PAYOUT), ("bad.sol", HOPELESS)):
        (tmp_path / name).write_text(text)
    return tmp_path


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


# ------------------------------------------------------------------ analyze


@pytest.mark.solc
def test_clean_snippet_exits_zero(files, capsys, catalog):
    code, out, err = run(capsys, "analyze", files / "ok.sol")
    assert code == 0
    (report,) = [json.loads(line) for line in out.splitlines()]
    assert report["findings"] == []
    assert json.loads(err.splitlines()[-1])["reports"] == 1


@pytest.mark.solc
def test_payout_loop_exits_one(files, capsys, catalog):
    code, out, _ = run(capsys, "analyze", files / "payout.sol")
    assert code == 1
    (report,) = [json.loads(line) for line in out.splitlines()]
    assert [f["kind"] for f in report["findings"]] == ["DoS"]
    assert report["findings"][0]["snippet_line"] == 3


@pytest.mark.solc
def test_uncompletable_snippet_exits_two(files, capsys, catalog):
    code, out, _ = run(capsys, "analyze", files / "bad.sol", "--max-rounds", 2)
    assert code == 2
    stages = {s["name"]: s["status"] for s in json.loads(out)["stages"]}
    assert stages["complete"] == "failed"


@pytest.mark.solc
def test_batch_continues_past_failures(files, capsys, catalog):
    code, out, err = run(capsys, "analyze", files / "bad.sol", files / "ok.sol", "--max-rounds", 1)
    assert code == 2
    assert len(out.splitlines()) == 2
    assert json.loads(err.splitlines()[-1])["with_errors"] == 1


@pytest.mark.solc
def test_output_is_deterministic_and_jobs_agree(files, capsys, catalog):
    args = ["analyze", files / "payout.sol", files / "ok.sol"]
    _, first, _ = run(capsys, *args)
    _, second, _ = run(capsys, *args)
    _, parallel, _ = run(capsys, *args, "--jobs", 2)
    assert first == second == parallel


@pytest.mark.solc
def test_no_prune_and_dump_cfg(files, capsys, catalog, tmp_path):
    dots = tmp_path / "dots"
    dots.mkdir()
    code, out, _ = run(capsys, "analyze", files / "payout.sol", "--no-prune", "--dump-cfg", dots)
    assert code == 1
    report = json.loads(out)
    assert report["metadata"]["prune_enabled"] is False
    assert {f["confidence"] for f in report["findings"]} == {"unpruned"}
    (dot,) = dots.iterdir()
    assert dot.read_text().startswith("digraph")


@pytest.mark.solc
def test_markdown_output_file(files, capsys, catalog, tmp_path):
    target = tmp_path / "r.md"
    code, out, _ = run(capsys, "analyze", files / "ok.sol", "--format", "markdown", "-o", target)
    assert code == 0 and out == ""
    assert "## No issues detected" in target.read_text()


@pytest.mark.solc
def test_config_file_supplies_defaults(files, capsys, catalog, tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text("[snipcheck]\nloop_bound = 2\nprune = false\n")
    _, out, _ = run(capsys, "analyze", files / "ok.sol", "--config", cfg)
    meta = json.loads(out)["metadata"]
    assert meta["limits"]["loop_bound"] == 2 and meta["prune_enabled"] is False
    _, out, _ = run(capsys, "analyze", files / "ok.sol", "--config", cfg, "--loop-bound", 5)
    assert json.loads(out)["metadata"]["limits"]["loop_bound"] == 5


@pytest.mark.parametrize("extra", [
    ["--backend", "gpt"],
    ["--max-rounds", "0"],
    ["--timeout", "-1"],
    ["--catalog", "/nonexistent/catalog.toml"],
    ["--dump-cfg", "/nonexistent/dir"],
])
def test_bad_config_exits_64(files, capsys, extra):
    code, _, err = run(capsys, "analyze", files / "ok.sol", *extra)
    assert code == 64
    assert err


def test_missing_input_exits_64(files, capsys):
    assert run(capsys, "analyze", files / "absent.sol")[0] == 64


def test_unknown_config_key_exits_64(files, capsys, tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text("colour = 'red'\n")
    code, _, err = run(capsys, "analyze", files / "ok.sol", "--config", cfg)
    assert code == 64 and "colour" in err


def test_unknown_command_exits_64(capsys):
    assert run(capsys, "frobnicate")[0] == 64


# ------------------------------------------------------------------ ingest


def test_ingest_emits_filtered_snippets(tmp_path, capsys):
    doc = tmp_path / "post.md"
    doc.write_text(f"Why does this fail?\n\n```solidity\n{PAYOUT}```\n\n```\nuint a;\n```\n")
    code, out, _ = run(capsys, "ingest", doc)
    assert code == 0
    (row,) = [json.loads(line) for line in out.splitlines()]
    assert row["source_text"] == PAYOUT
    assert row["language_guess"] == "Solidity"
    _, out, _ = run(capsys, "ingest", doc, "--all")
    assert len(out.splitlines()) == 2


# ------------------------------------------------------------------ bench


@pytest.fixture
def scored(tmp_path):
    (tmp_path / "a.sol").write_text("contract A {}")
    (tmp_path / "b.sol").write_text("contract B {}")
    truth = tmp_path / "truth.jsonl"
    truth.write_text('{"id": "a", "path": "a.sol", "labels": ["RE"]}\n{"id": "b", "path": "b.sol", "labels": []}\n')
    pred = tmp_path / "pred.ndjson"
    pred.write_text('{"id": "a", "kinds": ["RE"]}\n{"id": "b", "kinds": ["RE"]}\n')
    return truth, pred


def test_bench_score_table_json_and_figure(scored, capsys, tmp_path):
    truth, pred = scored
    code, out, _ = run(capsys, "bench", "score", "--truth", truth, "--pred", pred)
    assert code == 0
    assert "weighted F1: 66.7% over 1 kinds" in out
    _, out, _ = run(capsys, "bench", "score", "--truth", truth, "--pred", pred, "--json",
                    "--figure", tmp_path / "f.png")
    data = json.loads(out)
    assert data["per_kind"]["RE"] == {"tp": 1, "fp": 1, "fn": 0, "support": 1,
                                      "precision": 0.5, "recall": 1.0, "f1": 0.666667}
    assert (tmp_path / "f.png").stat().st_size > 0


def test_bench_score_bad_truth(tmp_path, capsys):
    bad = tmp_path / "t.jsonl"
    bad.write_text('{"id": "a", "path": "a.sol", "labels": ["gas"]}\n')
    assert run(capsys, "bench", "score", "--truth", bad, "--pred", bad)[0] == 64


def test_llm_baseline_needs_http(scored, capsys):
    truth, _ = scored
    assert run(capsys, "bench", "llm-baseline", "--truth", truth, "--backend", "scaffold")[0] == 64


def test_llm_baseline_over_http(scored, capsys, monkeypatch):
    truth, _ = scored

    def handler(request):
        return httpx.Response(200, json={"text": "RE:1 TM:0"})

    real_client = httpx.Client
    monkeypatch.setattr(httpx, "Client", lambda *a, **kw: real_client(transport=httpx.MockTransport(handler)))
    code, out, _ = run(capsys, "bench", "llm-baseline", "--truth", truth, "--backend", "http:model/x",
                       "--kinds", "RE,TM")
    assert code == 0
    rows = [json.loads(line) for line in out.splitlines()]
    assert [r["kinds"] for r in rows] == [["RE"], ["RE"]]


# ------------------------------------------------------------------ cfg


def test_cfg_dump_bytecode(capsys):
    code, out, _ = run(capsys, "cfg", "dump", "--bytecode", "0x600456005b00")
    assert code == 0
    assert out.startswith("digraph") and "->" in out


def test_cfg_dump_loops(capsys, tmp_path):
    # PUSH1 0 ; l: JUMPDEST PUSH1 1 ADD DUP1 PUSH1 3 GT PUSH1 2 JUMPI STOP
    hexfile = tmp_path / "code.hex"
    hexfile.write_text("60005b600101806003116002570" + "0")
    code, out, _ = run(capsys, "cfg", "dump", "--bytecode", f"@{hexfile}", "--loops")
    assert code == 0
    assert out.startswith("header 0x2:")


def test_cfg_dump_bad_hex(capsys):
    assert run(capsys, "cfg", "dump", "--bytecode", "0xZZ")[0] == 64


@pytest.mark.solc
def test_cfg_dump_source(files, capsys, catalog):
    code, out, _ = run(capsys, "cfg", "dump", "--source", files / "ok.sol")
    assert code == 0 and out.startswith("digraph")
