"""Integration: adapter output must drive the fusion engine end to end."""

import hashlib
import json
import subprocess
import sys
from pathlib import Path

import pytest

from cir_adapter.config import AdapterConfig
from cir_adapter.cli import main
from cir_adapter.pipeline import build_manifest, read_triples

from cirfuse.manifest import load_dataset  # loader as conformance oracle
from cirfuse.tensorfile import read_tensor


def digest_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def build(tmp_root, pairs, url, out_name="out"):
    out = tmp_root / out_name
    code = main(
        ["build", "--input", str(pairs), "--out", str(out),
         "--endpoint", url, "--dim", "32"]
    )
    assert code == 0
    return out


class TestBuildManifest:
    def test_five_image_corpus_end_to_end(self, toy_corpus, stub_server):
        tmp_root, pairs, rows = toy_corpus
        url, _ = stub_server
        out = build(tmp_root, pairs, url)

        # The engine's loader accepts the output with zero errors.
        bundle = load_dataset(out)
        samples = bundle.split("val")
        assert len(samples) == 5
        assert len(bundle.gallery) == 4  # one duplicated target deduplicated
        assert bundle.dim == 32

        # Every emitted tensor passes the bit-exact format validator.
        for tensor_path in sorted(out.rglob("*.mvst")):
            read_tensor(tensor_path)

        # The engine's eval runs to completion on the adapter's output.
        result = subprocess.run(
            [sys.executable, "-m", "cirfuse", "eval", "--data", str(out),
             "--zero-mlp", "--split", "val", "--k", "1,2"],
            capture_output=True, text=True, timeout=120,
        )
        assert result.returncode == 0, result.stderr
        report = json.loads(result.stdout)
        assert report["queries"] == 5

    def test_rerun_with_cache_is_byte_identical(self, toy_corpus, stub_server):
        tmp_root, pairs, _ = toy_corpus
        url, state = stub_server
        out = build(tmp_root, pairs, url)
        first = {
            p.relative_to(out): digest_file(p)
            for p in sorted(out.rglob("*")) if p.is_file()
        }
        posts_after_first = state.posts
        assert posts_after_first > 0
        out = build(tmp_root, pairs, url)
        second = {
            p.relative_to(out): digest_file(p)
            for p in sorted(out.rglob("*")) if p.is_file()
        }
        assert first == second
        assert state.posts == posts_after_first  # cache absorbed every reasoning call

    def test_transcripts_are_stored(self, toy_corpus, stub_server):
        tmp_root, pairs, _ = toy_corpus
        url, _ = stub_server
        out = build(tmp_root, pairs, url)
        transcript = json.loads((out / "transcripts" / "q0000.json").read_text())
        assert transcript["retained"] and transcript["deleted"] and transcript["target"]
        assert transcript["transcript"][0]["role"] == "user"

    def test_failed_sample_leaves_no_partial_tensor_dir(self, toy_corpus, stub_server):
        tmp_root, pairs, _ = toy_corpus
        url, state = stub_server
        # Third sample: never parseable -> the build fails loudly.
        state.responses = [state.default, state.default, "junk", "junk"]
        out = tmp_root / "partial"
        config = AdapterConfig(mllm_endpoint=url, dim=32)
        triples = read_triples(pairs)
        with pytest.raises(Exception):
            build_manifest(triples, out, config)
        assert not (out / "manifest.jsonl").exists()
        assert not any(p.name.startswith(".tmp-") for p in (out / "tensors").iterdir())
        # Samples completed before the failure are intact and final.
        assert (out / "tensors" / "q0000" / "patches.mvst").is_file()
        assert not (out / "tensors" / "q0002").exists()

    def test_missing_image_fails(self, toy_corpus, stub_server, tmp_path):
        tmp_root, pairs, rows = toy_corpus
        url, _ = stub_server
        bad_rows = [dict(rows[0], reference="images/ghost.png")]
        bad = tmp_path / "bad.jsonl"
        bad.write_text("\n".join(json.dumps(r) for r in bad_rows) + "\n")
        code = main(["build", "--input", str(bad), "--images-root", str(tmp_root),
                     "--out", str(tmp_path / "o"), "--endpoint", url])
        assert code == 1

    def test_csv_input_supported(self, toy_corpus, stub_server, tmp_path):
        tmp_root, _, rows = toy_corpus
        url, _ = stub_server
        csv_path = tmp_path / "pairs.csv"
        lines = ["reference,text,target"] + [
            f"{r['reference']},{r['text']},{r['target']}" for r in rows[:2]
        ]
        csv_path.write_text("\n".join(lines) + "\n")
        triples = read_triples(csv_path, images_root=tmp_root)
        assert len(triples) == 2
        out = build_manifest(
            triples, tmp_path / "csv_out", AdapterConfig(mllm_endpoint=url, dim=32)
        )
        assert (out / "manifest.jsonl").is_file()
