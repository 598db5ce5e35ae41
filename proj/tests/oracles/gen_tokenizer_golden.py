"""Writes a CGV1 vocab bundle and golden token ids from the reference CLIP tokenizer.

Usage: gen_tokenizer_golden.py <open_clip package dir> <out dir> [merge count]

The bundle holds the first N merges of the published BPE table so the file
stays small; the reference tokenizer is run over the same truncated table.
"""
import gzip
import json
import random
import string
import struct
import sys
import tempfile
from pathlib import Path

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3


def fnv1a64(data: bytes) -> int:
    h = FNV_OFFSET
    for b in data:
        h ^= b
        h = (h * FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


def put_str(out: bytearray, s: str) -> None:
    b = s.encode("utf-8")
    out += struct.pack("<I", len(b)) + b


def main() -> None:
    pkg = Path(sys.argv[1])
    out_dir = Path(sys.argv[2])
    n_merges = int(sys.argv[3]) if len(sys.argv) > 3 else 8000
    sys.path.insert(0, str(pkg.parent))
    from open_clip import tokenizer as ref

    lines = gzip.open(pkg / "bpe_simple_vocab_16e6.txt.gz").read().decode("utf-8").split("\n")
    truncated = lines[: n_merges + 1]
    with tempfile.NamedTemporaryFile(suffix=".txt.gz", delete=False) as f:
        f.write(gzip.compress("\n".join(truncated).encode("utf-8")))
        bpe_path = f.name
    tok = ref.SimpleTokenizer(bpe_path=bpe_path)

    tokens = [None] * len(tok.encoder)
    for t, i in tok.encoder.items():
        tokens[i] = t
    merges = [tuple(m.split()) for m in truncated[1:]]
    pattern = tok.pat.pattern

    body = bytearray(b"CGV1")
    body += struct.pack("<I", 1)  # case-insensitive pattern
    put_str(body, pattern)
    body += struct.pack("<I", len(tokens))
    for t in tokens:
        put_str(body, t)
    body += struct.pack("<I", len(merges))
    for a, b in merges:
        put_str(body, a)
        put_str(body, b)
    body += struct.pack("<II", tok.sot_token_id, tok.eot_token_id)
    body += struct.pack("<Q", fnv1a64(bytes(body)))
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "clip_bpe_8k.cgv").write_bytes(bytes(body))

    rng = random.Random(20240601)
    alphabet = string.ascii_letters + string.digits + string.punctuation + " " * 12 + "\t\n"
    corpus = [
        "This is a satellite image with clouds",
        "This is a satellite image with clear sky",
    ]
    for _ in range(100):
        n = rng.choice([rng.randint(1, 40), rng.randint(40, 400)])
        corpus.append("".join(rng.choice(alphabet) for _ in range(n)))

    cases = []
    for text in corpus:
        ids = tok([text])[0].tolist()
        cases.append({"text": text, "ids": ids})
    doc = {"sot_id": tok.sot_token_id, "eot_id": tok.eot_token_id, "cases": cases}
    (out_dir / "tokenizer_golden.json").write_text(json.dumps(doc, indent=1) + "\n")


if __name__ == "__main__":
    main()
