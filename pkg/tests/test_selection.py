import numpy as np
import pytest
import torch

from hfreid.backbone import EncoderOutput, TokenBatch
from hfreid.errors import ParameterError, ProtocolError, StructuralError
from hfreid.selection import (
    AttentionSummary,
    DynamicMemory,
    dual_forward,
    gather_hf_tokens,
    select_topz,
    summarize_attention,
)

from reference import brute_topz


def _output_with_head_rows(head_rows):
    """EncoderOutput whose final-layer class attention has the given patch rows."""
    rows = torch.tensor(head_rows, dtype=torch.float64)  # heads x n
    heads, n = rows.shape
    s = n + 1
    attn = torch.zeros(1, heads, s, s, dtype=torch.float64)
    for m in range(heads):
        attn[0, m, 0, 1:] = rows[m]
        attn[0, m, 1:] = 1.0 / s
    tokens = torch.zeros(1, s, 4, dtype=torch.float64)
    return EncoderOutput(
        tokens=tokens,
        class_feature=tokens[:, 0],
        attention_stack=[attn],
        source_indices=torch.arange(n).unsqueeze(0),
    )


def test_summarize_attention_hand_average():
    out = _output_with_head_rows([[0.7, 0.3], [0.1, 0.9]])
    psi = summarize_attention(out).scores
    assert torch.allclose(psi, torch.tensor([[0.4, 0.6]], dtype=torch.float64), atol=1e-12)


def test_summarize_attention_identical_heads():
    out = _output_with_head_rows([[0.2, 0.5, 0.3]] * 4)
    psi = summarize_attention(out).scores
    assert torch.allclose(psi, torch.tensor([[0.2, 0.5, 0.3]], dtype=torch.float64), atol=1e-12)


def test_summarize_attention_single_head():
    out = _output_with_head_rows([[0.15, 0.6, 0.25]])
    psi = summarize_attention(out).scores
    assert torch.allclose(psi, torch.tensor([[0.15, 0.6, 0.25]], dtype=torch.float64), atol=1e-12)


def test_summarize_rejects_subsequence():
    out = _output_with_head_rows([[0.5, 0.5]])
    out.source_indices = torch.tensor([[3, 1]])
    with pytest.raises(ProtocolError):
        summarize_attention(out)


def test_summary_sums_to_one():
    rng = np.random.default_rng(0)
    raw = rng.random((3, 8)) + 0.01
    rows = raw / raw.sum(axis=1, keepdims=True)
    psi = summarize_attention(_output_with_head_rows(rows.tolist())).scores
    assert torch.allclose(psi.sum(dim=1), torch.ones(1, dtype=torch.float64), atol=1e-5)


def _summary(scores):
    t = torch.tensor(scores, dtype=torch.float64)
    if t.ndim == 1:
        t = t.unsqueeze(0)
    return AttentionSummary(scores=t, layer_index=0)


def test_select_topz_hand_case():
    sel = select_topz(_summary([0.1, 0.4, 0.3, 0.2]), 0.5)
    assert sel.z == 2
    assert sel.indices.tolist() == [[1, 2]]


def test_select_topz_mu_one_orders_by_score():
    sel = select_topz(_summary([0.1, 0.4, 0.3, 0.2]), 1.0)
    assert sel.indices.tolist() == [[1, 2, 3, 0]]


def test_select_topz_paper_scale_count():
    rng = np.random.default_rng(1)
    sel = select_topz(_summary(rng.random(256)), 0.5)
    assert sel.z == 128


def test_select_topz_tie_break_lower_index():
    sel = select_topz(_summary([0.25, 0.25, 0.25, 0.25]), 0.5)
    assert sel.indices.tolist() == [[0, 1]]
    sel = select_topz(_summary([0.2, 0.3, 0.3, 0.2]), 0.75)
    assert sel.indices.tolist() == [[1, 2, 0]]


def test_select_topz_matches_brute_force_oracle():
    rng = np.random.default_rng(2)
    for _ in range(300):
        n = int(rng.integers(4, 257))
        scores = rng.random(n)
        if rng.random() < 0.3:  # force ties
            scores = np.round(scores, 1)
        mu = float(rng.uniform(0.05, 1.0))
        z = int(round(mu * n))
        if z < 1:
            continue
        sel = select_topz(_summary(scores), mu)
        assert sel.indices.tolist()[0] == brute_topz(scores.tolist(), z)


def test_select_topz_stable_under_small_perturbation():
    rng = np.random.default_rng(3)
    scores = rng.random(32)
    sel = select_topz(_summary(scores), 0.5)
    # perturb below the smallest score gap: ranking cannot change
    gaps = np.diff(np.sort(scores))
    eps = float(gaps[gaps > 0].min()) / 10
    perturbed = scores + rng.uniform(-eps / 4, eps / 4, size=32)
    sel2 = select_topz(_summary(perturbed), 0.5)
    assert sel.indices.tolist() == sel2.indices.tolist()


def test_select_topz_parameter_errors():
    with pytest.raises(ParameterError):
        select_topz(_summary([0.5, 0.5]), 0.0)
    with pytest.raises(ParameterError):
        select_topz(_summary([0.5, 0.5]), 1.5)
    with pytest.raises(ParameterError):
        select_topz(_summary([0.25, 0.25, 0.25, 0.25]), 0.1)  # round(0.4) = 0


def test_select_topz_count_always_rounded():
    rng = np.random.default_rng(4)
    for n, mu in [(10, 0.25), (10, 0.55), (7, 0.5), (64, 0.3)]:
        sel = select_topz(_summary(rng.random(n)), mu)
        assert sel.z == int(round(mu * n))
        assert len(set(sel.indices.tolist()[0])) == sel.z


def test_gather_hf_tokens_subsequence():
    emb = torch.arange(5 * 3, dtype=torch.float64).reshape(1, 5, 3)
    tokens = TokenBatch(embeddings=emb, source_indices=torch.arange(4).unsqueeze(0))
    sel = select_topz(_summary([0.1, 0.4, 0.3, 0.2]), 0.5)
    out = gather_hf_tokens(tokens, sel)
    assert out.embeddings.shape == (1, 3, 3)
    assert torch.equal(out.embeddings[0, 0], emb[0, 0])       # class token kept
    assert torch.equal(out.embeddings[0, 1], emb[0, 2])       # patch 1
    assert torch.equal(out.embeddings[0, 2], emb[0, 3])       # patch 2
    assert out.source_indices.tolist() == [[1, 2]]


def test_gather_rejects_out_of_range_index():
    emb = torch.zeros(1, 4, 3)
    tokens = TokenBatch(embeddings=emb, source_indices=torch.arange(3).unsqueeze(0))
    sel = select_topz(_summary([0.1, 0.4, 0.3, 0.2]), 0.5)  # indices up to 3, only 3 patches
    sel.indices[0, 0] = 3
    with pytest.raises(StructuralError):
        gather_hf_tokens(tokens, sel)


def test_dynamic_memory_round_trip_bit_identical():
    sel = select_topz(_summary(np.random.default_rng(5).random((4, 16))), 0.5)
    mem = DynamicMemory()
    ids = [10, 11, 12, 13]
    mem.store(ids, sel)
    back = mem.consume(ids)
    assert torch.equal(back.indices, sel.indices)


def test_dynamic_memory_protocol_errors():
    sel = select_topz(_summary([[0.6, 0.4]]), 1.0)
    mem = DynamicMemory()
    mem.store([0], sel)
    with pytest.raises(ProtocolError):
        mem.store([0], sel)
    mem.consume([0])
    with pytest.raises(ProtocolError):
        mem.consume([0])


def test_dual_forward_shapes(tiny_model):
    gen = torch.Generator().manual_seed(6)
    orig = torch.rand(2, 1, 16, 16, generator=gen)
    hf = torch.rand(2, 1, 16, 16, generator=gen)
    feats = dual_forward(tiny_model, orig, hf, mu=0.5)
    assert feats.class_orig.shape == (2, 32)
    assert feats.class_hf.shape == (2, 32)
    assert feats.tokens_orig.shape == (2, 2, 32)
    assert feats.tokens_hf.shape == (2, 2, 32)
    assert feats.selection.indices.shape == (2, 2)


def test_dual_forward_gradients_reach_both_streams(tiny_model):
    gen = torch.Generator().manual_seed(7)
    orig = torch.rand(2, 1, 16, 16, generator=gen)
    hf = torch.rand(2, 1, 16, 16, generator=gen)
    feats = dual_forward(tiny_model, orig, hf, mu=0.5)
    (feats.class_orig.sum() + feats.class_hf.sum()).backward()
    grads = {n: p.grad for n, p in tiny_model.named_parameters()}
    assert grads["cls_token"].abs().sum() > 0
    assert grads["hf_cls_token"].abs().sum() > 0
    assert grads["patch_proj.weight"].abs().sum() > 0


def test_dual_forward_selection_is_constant_under_tiny_weight_change(tiny_model):
    gen = torch.Generator().manual_seed(8)
    orig = torch.rand(2, 1, 16, 16, generator=gen)
    hf = torch.rand(2, 1, 16, 16, generator=gen)
    before = dual_forward(tiny_model, orig, hf, mu=0.5).selection.indices
    with torch.no_grad():
        tiny_model.patch_proj.weight += 1e-9
    after = dual_forward(tiny_model, orig, hf, mu=0.5).selection.indices
    assert torch.equal(before, after)


def test_mu_one_identical_streams_match(tiny_model):
    # shared weights, identical pixels, and a shared class token make the two
    # passes the same computation up to token order
    tiny_model.eval()
    with torch.no_grad():
        tiny_model.hf_cls_token.copy_(tiny_model.cls_token)
    img = torch.rand(2, 1, 16, 16, generator=torch.Generator().manual_seed(9))
    feats = dual_forward(tiny_model, img, img, mu=1.0)
    assert torch.allclose(feats.class_hf, feats.class_orig, atol=1e-5)


def test_mu_one_subsequence_is_score_ordered_permutation(tiny_model):
    tiny_model.eval()
    img = torch.rand(1, 1, 16, 16, generator=torch.Generator().manual_seed(10))
    out = tiny_model(img)
    summary = summarize_attention(out)
    sel = select_topz(summary, 1.0)
    assert sorted(sel.indices.tolist()[0]) == list(range(4))
    hf_tokens = tiny_model.patchify(img, stream="hf")
    gathered = gather_hf_tokens(hf_tokens, sel)
    assert gathered.embeddings.shape == hf_tokens.embeddings.shape
