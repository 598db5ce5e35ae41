"""Builds a tiny CLIP with the reference implementation and freezes its outputs.

Usage: gen_reference_fixture.py <open_clip package dir> <out dir>

Writes, for each activation variant (quick_gelu, gelu):
  ref_<act>.cgt         weights renamed to the CGT1 tensor scheme
  ref_<act>_parity.cgt  parity bundle: prompt token ids and text embeddings,
                        image composites, preprocessed pixels, image embeddings
  ref_<act>_vjp.cgt     text-encoder gradients of <cotangent, embedding> with
                        respect to the token-embedding rows
plus ref_vocab.cgv, a vocabulary bundle sized to the tiny model.
All reference numbers are computed in float64 from the float32 weights.
"""
import gzip
import struct
import sys
import tempfile
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
N_MERGES = 200
EMBED = 16
WIDTH = 32
HEADS = 2
LAYERS = 2
RES = 32
PATCH = 8
MEAN = (0.48145466, 0.4578275, 0.40821073)
STD = (0.26862954, 0.26130258, 0.27577711)
PROMPTS = [
    "This is a satellite image with clouds",
    "This is a satellite image with clear sky",
    "a photo of the sea",
    "Clouds & haze over the mountains!!",
]


def fnv1a64(data: bytes) -> int:
    h = FNV_OFFSET
    for b in data:
        h ^= b
        h = (h * FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


def put_str(out: bytearray, s: str) -> None:
    b = s.encode("utf-8")
    out += struct.pack("<I", len(b)) + b


def write_cgt(path: Path, tensors: dict, metadata: dict) -> None:
    out = bytearray(b"CGT1")
    names = sorted(tensors)
    out += struct.pack("<Q", len(names))
    arrays = {}
    for n in names:
        a = np.ascontiguousarray(np.asarray(tensors[n], dtype="<f4"))
        arrays[n] = a
        put_str(out, n)
        out += struct.pack("<B", a.ndim)
        for d in a.shape:
            out += struct.pack("<Q", d)
    out += struct.pack("<Q", len(metadata))
    for k in sorted(metadata):
        put_str(out, k)
        put_str(out, str(metadata[k]))
    payload = b"".join(arrays[n].tobytes() for n in names)
    out += payload
    out += struct.pack("<Q", fnv1a64(payload))
    path.write_bytes(bytes(out))


def write_cgv(path: Path, tok, merges) -> None:
    tokens = [None] * len(tok.encoder)
    for t, i in tok.encoder.items():
        tokens[i] = t
    body = bytearray(b"CGV1")
    body += struct.pack("<I", 1)
    put_str(body, tok.pat.pattern)
    body += struct.pack("<I", len(tokens))
    for t in tokens:
        put_str(body, t)
    body += struct.pack("<I", len(merges))
    for a, b in merges:
        put_str(body, a)
        put_str(body, b)
    body += struct.pack("<II", tok.sot_token_id, tok.eot_token_id)
    body += struct.pack("<Q", fnv1a64(bytes(body)))
    path.write_bytes(bytes(body))


def block_tensors(sd: dict, src: str, dst: str) -> dict:
    m = {
        "ln_1.weight": "ln_1.weight",
        "ln_1.bias": "ln_1.bias",
        "attn.in_proj_weight": "attn.qkv.weight",
        "attn.in_proj_bias": "attn.qkv.bias",
        "attn.out_proj.weight": "attn.out.weight",
        "attn.out_proj.bias": "attn.out.bias",
        "ln_2.weight": "ln_2.weight",
        "ln_2.bias": "ln_2.bias",
        "mlp.c_fc.weight": "mlp.fc.weight",
        "mlp.c_fc.bias": "mlp.fc.bias",
        "mlp.c_proj.weight": "mlp.proj.weight",
        "mlp.c_proj.bias": "mlp.proj.bias",
    }
    return {dst + v: sd[src + k] for k, v in m.items()}


def export_weights(model, vocab_size: int, activation: str) -> tuple:
    sd = {k: v.detach().float().numpy() for k, v in model.state_dict().items()}
    t = {
        "text.token_embedding": sd["token_embedding.weight"],
        "text.positional_embedding": sd["positional_embedding"],
        "text.ln_final.weight": sd["ln_final.weight"],
        "text.ln_final.bias": sd["ln_final.bias"],
        "text.projection": sd["text_projection"],
        "vision.patch_embedding": sd["visual.conv1.weight"],
        "vision.class_embedding": sd["visual.class_embedding"],
        "vision.positional_embedding": sd["visual.positional_embedding"],
        "vision.ln_pre.weight": sd["visual.ln_pre.weight"],
        "vision.ln_pre.bias": sd["visual.ln_pre.bias"],
        "vision.ln_post.weight": sd["visual.ln_post.weight"],
        "vision.ln_post.bias": sd["visual.ln_post.bias"],
        "vision.projection": sd["visual.proj"],
        "logit_scale": np.array([sd["logit_scale"]]).reshape(1),
        "preprocess.mean": np.array(MEAN),
        "preprocess.std": np.array(STD),
    }
    for i in range(LAYERS):
        t.update(block_tensors(sd, f"transformer.resblocks.{i}.", f"text.blocks.{i}."))
        t.update(block_tensors(sd, f"visual.transformer.resblocks.{i}.", f"vision.blocks.{i}."))
    meta = {
        "model_id": f"reference-tiny-{activation}",
        "embed_dim": EMBED,
        "vocab_size": vocab_size,
        "context_length": 77,
        "image_resolution": RES,
        "patch_size": PATCH,
        "text_heads": HEADS,
        "vision_heads": HEADS,
        "activation": activation,
    }
    return t, meta


def perturb(model, gen) -> None:
    # Default init leaves biases and LN affine parameters trivial; randomize
    # everything so every term of the forward pass is exercised.
    with torch.no_grad():
        for name, p in model.named_parameters():
            if name == "logit_scale":
                continue
            if "ln_" in name and name.endswith(".weight"):
                p.copy_(1.0 + 0.1 * torch.randn(p.shape, generator=gen))
            elif p.ndim == 1:
                p.copy_(0.1 * torch.randn(p.shape, generator=gen))
            else:
                fan_in = p.shape[-1] if p.ndim == 2 else int(np.prod(p.shape[1:]))
                scale = 0.5 if "embedding" in name else fan_in ** -0.5
                p.copy_(scale * torch.randn(p.shape, generator=gen))


def pil_preprocess(composite: np.ndarray) -> np.ndarray:
    out = []
    for c in range(3):
        img = Image.fromarray(composite[c].astype(np.float32), mode="F")
        r = np.asarray(img.resize((RES, RES), Image.BICUBIC), dtype=np.float64)
        out.append((r - MEAN[c]) / STD[c])
    return np.stack(out).astype(np.float32)


def encode_rows(model, rows: torch.Tensor, eot: int) -> torch.Tensor:
    x = rows + model.positional_embedding.to(rows.dtype)
    x = model.transformer(x.unsqueeze(0), attn_mask=model.attn_mask.to(rows.dtype))
    x = model.ln_final(x)[0, eot]
    return F.normalize(x @ model.text_projection, dim=-1)


def main() -> None:
    pkg = Path(sys.argv[1])
    out_dir = Path(sys.argv[2])
    sys.path.insert(0, str(pkg.parent))
    import open_clip
    from open_clip import tokenizer as ref_tok

    lines = gzip.open(pkg / "bpe_simple_vocab_16e6.txt.gz").read().decode("utf-8").split("\n")
    truncated = lines[: N_MERGES + 1]
    with tempfile.NamedTemporaryFile(suffix=".txt.gz", delete=False) as f:
        f.write(gzip.compress("\n".join(truncated).encode("utf-8")))
        bpe_path = f.name
    tok = ref_tok.SimpleTokenizer(bpe_path=bpe_path)
    vocab_size = len(tok.encoder)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_cgv(out_dir / "ref_vocab.cgv", tok, [tuple(m.split()) for m in truncated[1:]])

    for activation, quick in (("quick_gelu", True), ("gelu", False)):
        torch.manual_seed(7)
        gen = torch.Generator().manual_seed(11 if quick else 12)
        model = open_clip.model.CLIP(
            embed_dim=EMBED,
            vision_cfg=dict(layers=LAYERS, width=WIDTH, patch_size=PATCH, image_size=RES,
                            head_width=WIDTH // HEADS),
            text_cfg=dict(context_length=77, vocab_size=vocab_size, width=WIDTH, heads=HEADS,
                          layers=LAYERS),
            quick_gelu=quick,
        )
        perturb(model, gen)
        model.eval()
        weights, meta = export_weights(model, vocab_size, activation)
        write_cgt(out_dir / f"ref_{activation}.cgt", weights, meta)

        # Run the reference in float64 on exactly the exported float32 values.
        model = model.double()

        parity, pmeta = {}, {"parity_version": 1}
        ids = tok(PROMPTS)
        with torch.no_grad():
            text_emb = model.encode_text(ids, normalize=True)
        for i, p in enumerate(PROMPTS):
            pmeta[f"prompt.{i}"] = p
            parity[f"prompt.{i}.token_ids"] = ids[i].numpy().astype(np.float32)
            parity[f"prompt.{i}.text_embedding"] = text_emb[i].numpy()
        pmeta["prompt_count"] = len(PROMPTS)

        rng = np.random.default_rng(3 if quick else 4)
        sizes = [(RES, RES), (50, 41), (20, 27)]
        for j, (h, w) in enumerate(sizes):
            composite = rng.uniform(0.0, 1.0, size=(3, h, w)).astype(np.float32)
            pixels = pil_preprocess(composite)
            with torch.no_grad():
                emb = model.encode_image(torch.from_numpy(pixels).double()[None], normalize=True)[0]
            parity[f"image.{j}.composite"] = composite
            parity[f"image.{j}.pixels"] = pixels
            parity[f"image.{j}.image_embedding"] = emb.numpy()
        pmeta["image_count"] = len(sizes)
        write_cgt(out_dir / f"ref_{activation}_parity.cgt", parity, pmeta)

        vjp, vmeta = {}, {}
        n_cases = 6
        for k in range(n_cases):
            length = int(rng.integers(0, 20))
            content = rng.integers(0, tok.sot_token_id, size=length)
            seq = np.zeros(77, dtype=np.int64)
            seq[0] = tok.sot_token_id
            seq[1 : 1 + length] = content
            seq[1 + length] = tok.eot_token_id
            eot = 1 + length
            rows = model.token_embedding(torch.from_numpy(seq)).detach().clone().requires_grad_(True)
            emb = encode_rows(model, rows, eot)
            cot = torch.from_numpy(rng.normal(size=EMBED).astype(np.float32)).double()
            (emb * cot).sum().backward()
            vjp[f"case.{k}.token_ids"] = seq.astype(np.float32)
            vjp[f"case.{k}.embedding"] = emb.detach().numpy()
            vjp[f"case.{k}.cotangent"] = cot.numpy()
            vjp[f"case.{k}.grad"] = rows.grad.numpy()
        vmeta["case_count"] = n_cases
        write_cgt(out_dir / f"ref_{activation}_vjp.cgt", vjp, vmeta)


if __name__ == "__main__":
    main()
