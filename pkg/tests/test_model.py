"""Model tests: embeddings, attention, training, sampling, persistence."""

import math

import pytest
import torch

from conftest import make_random_score
from descant.codec import decode_tokens, encode_score
from descant.description import description_tokens, expert_description
from descant.errors import ContextOverflow, IndexOutOfTable, NonFiniteLoss
from descant.model import (
    DescriptionToSequenceModel,
    ModelConfig,
    RelativeSelfAttention,
    SamplingParams,
    Seq2SeqGenerator,
    TrainingPair,
    _naive_relative_scores,
    _skew_bidirectional,
    _skew_causal,
    lr_schedule,
    window_tokens,
)
from descant.score import Note, Score


def make_pair(generator: Seq2SeqGenerator, score: Score) -> TrainingPair:
    return TrainingPair.from_sequences(
        description_tokens(expert_description(score)),
        encode_score(score),
        generator.desc_vocab,
        generator.seq_vocab,
    )


def tiny_score(n_notes: int = 4) -> Score:
    return Score(
        notes=[Note(480 * i, 480, 60 + 2 * i, 90, 0) for i in range(n_notes)],
        ticks_per_quarter=480,
    )


def test_lr_schedule_values():
    assert lr_schedule(0) == pytest.approx(1e-4)
    assert lr_schedule(4000) == pytest.approx(1e-4)
    assert lr_schedule(16000) == pytest.approx(5e-5)
    assert lr_schedule(100) == pytest.approx(1e-4)  # warmup plateau


def test_embedding_sum_contracts():
    config = ModelConfig.desk_scale(seed=0)
    model = DescriptionToSequenceModel(config)
    ids = torch.tensor([[5, 9, 5]])
    bars = torch.tensor([[1, 1, 1]])
    beats = torch.tensor([[0, 0, 0]])

    out = model.embed_sequence(ids, bars, beats)
    assert out.shape == (1, 3, config.d_model)

    # zero tables produce the zero matrix
    with torch.no_grad():
        for table in (model.seq_embedding, model.bar_embedding, model.beat_embedding):
            table.weight.zero_()
    assert torch.equal(
        model.embed_sequence(ids, bars, beats), torch.zeros(1, 3, config.d_model)
    )


def test_tokens_sharing_alignment_differ_by_token_embedding():
    model = DescriptionToSequenceModel(ModelConfig.desk_scale(seed=1))
    ids = torch.tensor([[5, 9]])
    bars = torch.tensor([[2, 2]])
    beats = torch.tensor([[7, 7]])
    out = model.embed_sequence(ids, bars, beats)
    token_diff = model.seq_embedding.weight[5] - model.seq_embedding.weight[9]
    assert torch.allclose(out[0, 0] - out[0, 1], token_diff, atol=1e-6)


def test_injected_description_vectors_are_summed():
    model = DescriptionToSequenceModel(ModelConfig.desk_scale(seed=1, code_dim=8))
    ids = torch.tensor([[3, 4]])
    bars = torch.tensor([[1, 1]])
    plain = model.embed_description(ids, bars)
    injected = model.project_codes(torch.randn(1, 2, 8))
    combined = model.embed_description(ids, bars, injected=injected)
    assert torch.allclose(combined, plain + injected)


def test_embedding_indices_validated():
    model = DescriptionToSequenceModel(ModelConfig.desk_scale(seed=0))
    with pytest.raises(IndexOutOfTable):
        model.embed_sequence(
            torch.tensor([[1]]), torch.tensor([[513]]), torch.tensor([[0]])
        )
    with pytest.raises(IndexOutOfTable):
        model.embed_sequence(
            torch.tensor([[1]]), torch.tensor([[1]]), torch.tensor([[289]])
        )


def test_context_overflow_raises():
    config = ModelConfig.desk_scale(seed=0, context_length=8)
    model = DescriptionToSequenceModel(config)
    ids = torch.zeros(1, 9, dtype=torch.long)
    with pytest.raises(ContextOverflow):
        model.encode(ids, torch.zeros(1, 9, dtype=torch.long))


def test_skew_matches_naive_gather():
    torch.manual_seed(0)
    for length in (1, 2, 5, 9):
        q = torch.randn(2, 3, length, 4, dtype=torch.float64)
        table = torch.randn(2 * length - 1, 4, dtype=torch.float64)
        naive = _naive_relative_scores(q, table, causal=False)
        qe = torch.matmul(q, table.t())
        assert torch.allclose(_skew_bidirectional(qe), naive, atol=1e-12)

        # only the lower triangle is consumed (future scores are -inf masked)
        causal_table = torch.randn(length, 4, dtype=torch.float64)
        naive_c = _naive_relative_scores(q, causal_table, causal=True)
        skewed = _skew_causal(torch.matmul(q, causal_table.t()))
        mask = torch.tril(torch.ones(length, length, dtype=torch.bool))
        assert torch.allclose(
            skewed.masked_fill(~mask, 0.0), naive_c.masked_fill(~mask, 0.0), atol=1e-12
        )


def test_attention_logits_depend_only_on_index_difference():
    torch.manual_seed(3)
    attn = RelativeSelfAttention(16, 2, max_len=32, causal=False, dropout=0.0).double()
    with torch.no_grad():
        attn.rel_table.normal_(0.0, 0.5)
    period = 3
    base = torch.randn(period, 16, dtype=torch.float64)
    x = base.repeat(4, 1).unsqueeze(0)  # periodic content, length 12
    with torch.no_grad():
        scores = attn.attention_scores(x)[0, 0]
    length = x.shape[1]
    for i in range(length - period):
        for j in range(length - period):
            delta = abs(float(scores[i, j]) - float(scores[i + period, j + period]))
            assert delta < 1e-10


def test_decoder_causality_bit_identical():
    generator = Seq2SeqGenerator(ModelConfig.desk_scale(seed=0))
    pair = make_pair(generator, tiny_score())
    ids = torch.from_numpy(pair.seq_ids[:-1]).unsqueeze(0)
    bars = torch.from_numpy(pair.seq_bars[:-1]).unsqueeze(0)
    beats = torch.from_numpy(pair.seq_beats[:-1]).unsqueeze(0)
    desc_ids = torch.from_numpy(pair.desc_ids).unsqueeze(0)
    desc_bars = torch.from_numpy(pair.desc_bars).unsqueeze(0)

    generator.model.eval()
    with torch.no_grad():
        memory = generator.model.encode(desc_ids, desc_bars)
        reference = generator.model.decode(memory, ids, bars, beats)
        t = 4
        perturbed = ids.clone()
        perturbed[0, t + 1 :] = 7
        out = generator.model.decode(memory, perturbed, bars, beats)
    assert torch.equal(reference[0, : t + 1], out[0, : t + 1])


def test_output_rows_are_normalized_log_distributions():
    generator = Seq2SeqGenerator(ModelConfig.desk_scale(seed=0))
    pair = make_pair(generator, tiny_score())
    generator.model.eval()
    with torch.no_grad():
        memory = generator.model.encode(
            torch.from_numpy(pair.desc_ids).unsqueeze(0),
            torch.from_numpy(pair.desc_bars).unsqueeze(0),
        )
        log_probs = generator.model.decode(
            memory,
            torch.from_numpy(pair.seq_ids[:-1]).unsqueeze(0),
            torch.from_numpy(pair.seq_bars[:-1]).unsqueeze(0),
            torch.from_numpy(pair.seq_beats[:-1]).unsqueeze(0),
        )
    assert torch.allclose(
        torch.logsumexp(log_probs, dim=-1), torch.zeros(log_probs.shape[:2]), atol=1e-5
    )


def test_untrained_loss_near_uniform_entropy():
    config = ModelConfig.desk_scale(seed=0, init_std=1e-4)
    generator = Seq2SeqGenerator(config)
    pair = make_pair(generator, tiny_score())
    nll = generator.evaluate_nll([pair])
    assert nll == pytest.approx(math.log(config.seq_vocab_size), abs=1e-2)


def central_difference_gradients(model, loss_fn, entries_per_tensor=3, h=1e-5):
    """Yield (name, autograd, finite-difference) triples on float64 models."""
    model.zero_grad()
    loss = loss_fn()
    loss.backward()
    for name, param in model.named_parameters():
        grad = param.grad
        if grad is None:
            continue
        flat = grad.reshape(-1)
        order = torch.argsort(flat.abs(), descending=True)
        for idx in order[:entries_per_tensor].tolist():
            with torch.no_grad():
                original = float(param.reshape(-1)[idx])
                param.reshape(-1)[idx] = original + h
                plus = float(loss_fn())
                param.reshape(-1)[idx] = original - h
                minus = float(loss_fn())
                param.reshape(-1)[idx] = original
            yield name, float(flat[idx]), (plus - minus) / (2 * h)


def run_gradient_check(generator: Seq2SeqGenerator, pair: TrainingPair) -> int:
    """Central-difference check on every parameter tensor; returns checks run.

    Entries whose gradient sits below the finite-difference noise floor are
    verified absolutely instead of relatively.
    """
    from descant.model import _collate

    batch = _collate([pair], generator.desc_vocab.pad_id, generator.seq_vocab.pad_id)

    def loss_fn():
        return generator._loss(batch)

    checked = 0
    for name, autograd, fd in central_difference_gradients(generator.model, loss_fn):
        scale = max(abs(autograd), abs(fd))
        if scale < 1e-6:
            assert abs(autograd - fd) < 1e-9, f"{name}: {autograd} vs {fd}"
        else:
            rel = abs(autograd - fd) / scale
            assert rel < 1e-4, f"{name}: autograd {autograd} vs fd {fd}"
        checked += 1
    return checked


def test_gradients_match_central_differences():
    # Larger init keeps attention away from the near-uniform regime so every
    # tensor sees a numerically meaningful gradient.
    generator = Seq2SeqGenerator(
        ModelConfig.desk_scale(seed=0, init_std=0.2), dtype=torch.float64
    )
    pair = make_pair(generator, tiny_score(3))
    assert run_gradient_check(generator, pair) > 100


def test_zero_learning_rate_leaves_parameters_unchanged():
    generator = Seq2SeqGenerator(ModelConfig.desk_scale(seed=0))
    pair = make_pair(generator, tiny_score())
    before = {k: v.clone() for k, v in generator.model.state_dict().items()}
    for group in generator.optimizer.param_groups:
        group["weight_decay"] = 0.0
    original = lr_schedule
    import descant.model as model_module

    model_module_lr = model_module.lr_schedule
    model_module.lr_schedule = lambda step: 0.0
    try:
        generator.train_step([pair])
    finally:
        model_module.lr_schedule = model_module_lr
    after = generator.model.state_dict()
    assert all(torch.equal(before[k], after[k]) for k in before)


def test_training_is_deterministic_across_fresh_instances():
    losses = []
    for _ in range(2):
        generator = Seq2SeqGenerator(ModelConfig.desk_scale(seed=11))
        pair = make_pair(generator, tiny_score())
        losses.append([generator.train_step([pair]) for _ in range(5)])
    assert losses[0] == losses[1]


def test_single_pair_overfit_within_budget():
    generator = Seq2SeqGenerator(ModelConfig.desk_scale(seed=0))
    score = tiny_score()
    pair = make_pair(generator, score)
    loss = float("inf")
    for step in range(2000):
        loss = generator.train_step([pair])
        if loss < 0.05:
            break
    assert loss < 0.05, f"loss {loss} after {step + 1} steps"

    sample = generator.generate(
        expert_description(score), max_bars=8, sampling=SamplingParams(temperature=0.0)
    )
    assert sample.tokens == encode_score(score).tokens


def test_generation_same_seed_identical():
    generator = Seq2SeqGenerator(ModelConfig.desk_scale(seed=5))
    description = expert_description(tiny_score())
    params = SamplingParams(temperature=1.0, top_p=0.9, seed=42, max_tokens=200)
    a = generator.generate(description, max_bars=3, sampling=params)
    b = generator.generate(description, max_bars=3, sampling=params)
    assert a.tokens == b.tokens


def test_sampled_sequences_always_decode(rng):
    generator = Seq2SeqGenerator(ModelConfig.desk_scale(seed=9))
    description = expert_description(make_random_score(rng, max_bars=3))
    for seed in range(10):
        sample = generator.generate(
            description,
            max_bars=3,
            sampling=SamplingParams(temperature=1.2, top_p=0.95, seed=seed, max_tokens=240),
        )
        decode_tokens(sample.tokens)  # must not raise


def test_window_tokens_respects_context(rng):
    generator = Seq2SeqGenerator(ModelConfig.desk_scale(seed=0))
    score = make_random_score(rng, max_bars=12, max_notes=120)
    desc = description_tokens(expert_description(score))
    seq = encode_score(score)
    windows = window_tokens(desc, seq, 48)
    assert len(windows) >= 2
    rebuilt_bars = []
    for d_win, s_win in windows:
        assert len(d_win) <= 48 and len(s_win) <= 48
        rebuilt_bars.extend(b for b in s_win.bar_indices if b > 0)
    assert rebuilt_bars == [b for b in seq.bar_indices if b > 0][: len(rebuilt_bars)]
    assert windows[-1][1].tokens[-1] == "<eos>"


def test_checkpoint_round_trip(tmp_path):
    generator = Seq2SeqGenerator(ModelConfig.desk_scale(seed=0))
    pair = make_pair(generator, tiny_score())
    generator.fit([pair], steps=3, batch_size=1)
    path = tmp_path / "checkpoint.pt"
    generator.save(path)
    loaded = Seq2SeqGenerator.load(path)
    assert loaded.step == generator.step
    assert loaded.evaluate_nll([pair]) == pytest.approx(generator.evaluate_nll([pair]))
    # training continues identically from a reload
    assert loaded.train_step([pair]) == pytest.approx(generator.train_step([pair]))


def test_checkpoint_hash_mismatch_rejected(tmp_path):
    from descant.errors import ConfigMismatch

    generator = Seq2SeqGenerator(ModelConfig.desk_scale(seed=0))
    path = tmp_path / "checkpoint.pt"
    generator.save(path)
    with pytest.raises(ConfigMismatch):
        Seq2SeqGenerator.load(path, expected_hash="0" * 16)


def test_nonfinite_loss_raises():
    generator = Seq2SeqGenerator(ModelConfig.desk_scale(seed=0))
    pair = make_pair(generator, tiny_score())
    with torch.no_grad():
        generator.model.output.weight.fill_(float("nan"))
    with pytest.raises(NonFiniteLoss):
        generator.train_step([pair])


def test_full_preset_parameter_count_near_target():
    model = DescriptionToSequenceModel(ModelConfig.full_scale(seed=0))
    count = model.parameter_count()
    assert abs(count - 44.6e6) / 44.6e6 < 0.10, f"{count / 1e6:.1f} M parameters"


def test_desk_preset_shape():
    config = ModelConfig.desk_scale()
    assert (config.d_model, config.encoder_layers, config.decoder_layers) == (64, 2, 2)
    assert config.context_length == 128
    full = ModelConfig.full_scale()
    assert (full.d_model, full.encoder_layers, full.decoder_layers) == (512, 4, 6)
    assert full.context_length == 256
