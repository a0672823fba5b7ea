import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from torch import nn

from synthasr.nn.autograd import GradientError, backward, max_relative_error, numerical_gradient
from synthasr.nn.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from synthasr.nn.layers import (
    ConformerBlock,
    ConvReluNorm,
    MultiHeadAttention,
    Postnet,
    ShapeError,
    TransformerBlock,
    ZoneoutLSTMCell,
    sequence_mask,
    zoneout_lstm_step,
)
from synthasr.nn.optim import (
    ASR_SCHEDULE,
    DIFFUSION_SCHEDULE,
    TTS_SCHEDULE,
    LrSchedule,
    Optimizer,
    OptimizerConfig,
    OptimizerError,
    ScheduleError,
    lr_at,
    optimizer_step,
    scaled,
)


def _gradcheck_module(module, x, mask=None, tol=1e-3):
    module = module.double().eval()
    params = [p for p in module.parameters()]
    weight = torch.randn_like(module(x, mask) if mask is not None else module(x))

    def loss_of(inp):
        out = module(inp, mask) if mask is not None else module(inp)
        return (out * weight).sum()

    xg = x.clone().requires_grad_(True)
    loss = loss_of(xg)
    backward(loss)
    num = numerical_gradient(loss_of, x)
    assert max_relative_error(xg.grad, num) < tol
    # parameter gradients for the first parameter tensor
    p = params[0]
    analytic = p.grad.clone()
    orig = p.detach().clone()

    def loss_of_param(value):
        with torch.no_grad():
            p.copy_(value)
        return loss_of(x)

    num_p = numerical_gradient(loss_of_param, orig)
    with torch.no_grad():
        p.copy_(orig)
    assert max_relative_error(analytic, num_p) < tol


# ---- backward


def test_backward_sum_and_square():
    w = torch.randn(5, dtype=torch.float64, requires_grad=True)
    backward(w.sum())
    assert torch.equal(w.grad, torch.ones(5, dtype=torch.float64))
    w.grad = None
    backward(w @ w)
    assert torch.allclose(w.grad, 2 * w.detach())


def test_backward_rejects_non_scalar_and_constants():
    with pytest.raises(GradientError):
        backward(torch.randn(3, requires_grad=True) * 2)
    with pytest.raises(GradientError):
        backward(torch.tensor(1.0))


def test_backward_reports_reachable_leaves():
    a = torch.randn(2, requires_grad=True)
    b = torch.randn(2, requires_grad=True)
    c = torch.randn(2, requires_grad=True)
    leaves = backward((a * b).sum())
    ids = {id(t) for t in leaves}
    assert id(a) in ids and id(b) in ids and id(c) not in ids
    assert c.grad is None


def test_mlp_gradient_matches_finite_differences():
    torch.manual_seed(0)
    mlp = nn.Sequential(nn.Linear(4, 6), nn.Tanh(), nn.Linear(6, 5), nn.Tanh(), nn.Linear(5, 1)).double()
    x = torch.randn(3, 4, dtype=torch.float64)
    params = list(mlp.parameters())
    backward(mlp(x).sum())
    for p in params:
        orig = p.detach().clone()

        def f(v, p=p):
            with torch.no_grad():
                p.copy_(v)
            return mlp(x).sum()

        num = numerical_gradient(f, orig)
        with torch.no_grad():
            p.copy_(orig)
        assert max_relative_error(p.grad, num) < 1e-3


# ---- optimizer and schedule


def _scalar_param(value=1.0):
    return nn.Parameter(torch.tensor([value], dtype=torch.float64))


def test_adam_first_step_moves_by_lr():
    w = _scalar_param()
    opt = Optimizer([("w", w)], OptimizerConfig("adam", 0.1, (0.9, 0.999), 1e-8))
    w.grad = torch.tensor([1.0], dtype=torch.float64)
    optimizer_step(opt)
    # bias-corrected first step: m_hat = g, v_hat = g^2, update lr * g / (|g| + eps)
    assert w.item() == pytest.approx(1.0 - 0.1 / (1.0 + 1e-8), abs=1e-12)


def test_zero_gradient_leaves_parameters():
    w = _scalar_param(0.3)
    opt = Optimizer([("w", w)], OptimizerConfig("adam", 0.1))
    w.grad = torch.zeros(1, dtype=torch.float64)
    opt.step()
    assert w.item() == 0.3


def test_adamw_zero_lr_freezes():
    w = _scalar_param(2.0)
    opt = Optimizer([("w", w)], OptimizerConfig("adamw", 0.0, weight_decay=1e-3))
    w.grad = torch.ones(1, dtype=torch.float64)
    opt.step()
    assert w.item() == 2.0


def test_adamw_decay_is_decoupled():
    w = _scalar_param(2.0)
    opt = Optimizer([("w", w)], OptimizerConfig("adamw", 0.1, weight_decay=0.5))
    w.grad = torch.zeros(1, dtype=torch.float64)
    opt.step()
    assert w.item() == pytest.approx(2.0 * (1 - 0.1 * 0.5))


def test_optimizer_rejects_non_finite_gradient():
    w = _scalar_param()
    opt = Optimizer([("w", w)], OptimizerConfig())
    w.grad = torch.tensor([float("nan")], dtype=torch.float64)
    with pytest.raises(OptimizerError, match="'w'"):
        opt.step()


def test_optimizer_config_validation():
    with pytest.raises(OptimizerError):
        OptimizerConfig("sgd")
    with pytest.raises(OptimizerError):
        OptimizerConfig(betas=(1.0, 0.9))
    with pytest.raises(OptimizerError):
        Optimizer([("a", _scalar_param()), ("a", _scalar_param())], OptimizerConfig())


def test_tts_schedule_breakpoints():
    assert lr_at(TTS_SCHEDULE, 0) == 5e-5
    assert lr_at(TTS_SCHEDULE, 100) == 5e-4
    assert lr_at(TTS_SCHEDULE, 400) == 5e-7
    assert lr_at(TTS_SCHEDULE, 50) == pytest.approx((5e-5 + 5e-4) / 2)
    assert lr_at(DIFFUSION_SCHEDULE, 0) == lr_at(DIFFUSION_SCHEDULE, 400) == 1e-4


def test_asr_schedule_peak():
    assert lr_at(ASR_SCHEDULE, 20) == 7e-4
    assert max(lr_at(ASR_SCHEDULE, e) for e in np.linspace(0, 80, 161)) == 7e-4


def test_schedule_validation():
    with pytest.raises(ScheduleError):
        lr_at(TTS_SCHEDULE, 401)
    with pytest.raises(ScheduleError):
        lr_at(TTS_SCHEDULE, -1)
    with pytest.raises(ScheduleError):
        LrSchedule(warmup_epochs=500)
    with pytest.raises(ScheduleError):
        LrSchedule(kind="cosine")


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 400))
def test_schedule_bounded_and_scaled(epoch):
    lr = lr_at(TTS_SCHEDULE, epoch)
    assert 5e-7 <= lr <= 5e-4
    short = scaled(TTS_SCHEDULE, 40)
    assert lr_at(short, epoch / 10) == pytest.approx(lr, rel=1e-9)


# ---- zoneout


def _lstm(seed=0):
    torch.manual_seed(seed)
    return nn.LSTMCell(3, 4).double()


def _state(batch=2, seed=1):
    g = torch.Generator().manual_seed(seed)
    return (torch.randn(batch, 4, generator=g, dtype=torch.float64),
            torch.randn(batch, 4, generator=g, dtype=torch.float64))


def test_zoneout_rate_zero_is_plain_lstm():
    cell, state = _lstm(), _state()
    x = torch.randn(2, 3, dtype=torch.float64)
    ref = cell(x, state)
    for mode in ("train", "eval"):
        out = zoneout_lstm_step(cell, state, x, 0.0, mode, torch.Generator().manual_seed(0))
        assert torch.equal(out[0], ref[0]) and torch.equal(out[1], ref[1])


def test_zoneout_rate_one_freezes_state():
    cell, state = _lstm(), _state()
    x = torch.randn(2, 3, dtype=torch.float64)
    for mode in ("train", "eval"):
        h, c = zoneout_lstm_step(cell, state, x, 1.0, mode, torch.Generator().manual_seed(0))
        assert torch.equal(h, state[0]) and torch.equal(c, state[1])


def test_zoneout_mask_reproducible_and_retention_rate():
    torch.manual_seed(0)
    cell = nn.LSTMCell(3, 100).double()
    g = torch.Generator().manual_seed(5)
    state = (torch.randn(100, 100, generator=g, dtype=torch.float64),
             torch.randn(100, 100, generator=g, dtype=torch.float64))
    x = torch.randn(100, 3, generator=g, dtype=torch.float64)
    a = zoneout_lstm_step(cell, state, x, 0.1, "train", torch.Generator().manual_seed(9))
    b = zoneout_lstm_step(cell, state, x, 0.1, "train", torch.Generator().manual_seed(9))
    assert torch.equal(a[0], b[0]) and torch.equal(a[1], b[1])
    kept = (a[0] == state[0]).double().mean().item()  # 10^4 hidden units
    assert abs(kept - 0.1) <= 0.02


def test_zoneout_eval_mode_interpolates():
    cell, state = _lstm(), _state()
    x = torch.randn(2, 3, dtype=torch.float64)
    h_new, c_new = cell(x, state)
    h, c = zoneout_lstm_step(cell, state, x, 0.25, "eval")
    assert torch.allclose(h, 0.25 * state[0] + 0.75 * h_new)
    assert torch.allclose(c, 0.25 * state[1] + 0.75 * c_new)


def test_zoneout_argument_checks():
    cell, state = _lstm(), _state()
    with pytest.raises(ValueError):
        zoneout_lstm_step(cell, state, torch.zeros(2, 3, dtype=torch.float64), 1.5)
    with pytest.raises(ShapeError):
        zoneout_lstm_step(cell, state, torch.zeros(2, 5, dtype=torch.float64), 0.1)
    with pytest.raises(ValueError):
        ZoneoutLSTMCell(3, 4, zoneout=-0.1)


# ---- transformer and conformer blocks


def test_attention_rows_sum_to_one():
    torch.manual_seed(0)
    attn = MultiHeadAttention(8, 2, 0.0)
    x = torch.randn(2, 5, 8)
    mask = sequence_mask(torch.tensor([5, 3]))
    attn(x, mask)
    w = attn.last_weights
    assert torch.allclose(w.sum(-1), torch.ones_like(w.sum(-1)), atol=1e-6)
    assert torch.all(w[1, :, :, 3:] == 0)


def test_transformer_block_shape_and_padding_invariance():
    torch.manual_seed(0)
    block = TransformerBlock(8, 2, 16, 3, 0.1).double().eval()
    x = torch.randn(1, 6, 8, dtype=torch.float64)
    mask = torch.tensor([[True, True, True, True, False, False]])
    out = block(x, mask)
    assert out.shape == x.shape
    swapped = x.clone()
    swapped[0, 4], swapped[0, 5] = x[0, 5], x[0, 4]
    out2 = block(swapped, mask)
    assert torch.allclose(out[0, :4], out2[0, :4], atol=1e-6)


def test_transformer_block_gradients():
    torch.manual_seed(1)
    x = torch.randn(1, 3, 4, dtype=torch.float64)
    mask = torch.ones(1, 3, dtype=torch.bool)
    _gradcheck_module(TransformerBlock(4, 2, 6, 3, 0.0), x, mask)


def test_conformer_shape():
    block = ConformerBlock(384, 4, 4, 31, 0.1).eval()
    assert block(torch.randn(1, 7, 384)).shape == (1, 7, 384)


def test_conformer_zero_residuals_is_final_norm():
    torch.manual_seed(0)
    block = ConformerBlock(16, 4, 2, 5, 0.0).eval()
    for lin in block.residual_outputs():
        nn.init.zeros_(lin.weight)
        nn.init.zeros_(lin.bias)
    x = torch.randn(2, 6, 16)
    assert torch.allclose(block(x), block.final_norm(x), atol=1e-6)


def test_conformer_gradients_two_frames():
    torch.manual_seed(2)
    x = torch.randn(1, 2, 8, dtype=torch.float64)
    _gradcheck_module(ConformerBlock(8, 2, 2, 3, 0.0), x)


def test_conv_relu_norm_and_postnet_gradients():
    torch.manual_seed(3)
    mask = torch.tensor([[True, True, True, False]])
    _gradcheck_module(ConvReluNorm(3, 4, 3, 0.0), torch.randn(1, 4, 3, dtype=torch.float64), mask)
    _gradcheck_module(Postnet(3, 4, 3, 2, 0.0), torch.randn(1, 4, 3, dtype=torch.float64), mask)


def test_mask_shape_checked():
    with pytest.raises(ShapeError):
        TransformerBlock(8, 2, 16)(torch.randn(1, 4, 8), torch.ones(1, 5, dtype=torch.bool))
    with pytest.raises(ShapeError):
        MultiHeadAttention(7, 2)


def test_dropout_deterministic_under_seed():
    block = TransformerBlock(8, 2, 16, 3, 0.5).train()
    x = torch.randn(1, 5, 8)
    torch.manual_seed(4)
    a = block(x)
    torch.manual_seed(4)
    b = block(x)
    assert torch.equal(a, b)


# ---- checkpoints


def test_checkpoint_round_trip_bit_exact(tmp_path):
    torch.manual_seed(0)
    model = TransformerBlock(8, 2, 16)
    save_checkpoint(tmp_path / "m.ckpt", model.state_dict(), meta={"note": "x"}, epoch=3,
                    config={"dim": 8})
    state, header = load_checkpoint(tmp_path / "m.ckpt")
    assert header["epoch"] == 3 and header["meta"] == {"note": "x"} and header["config"] == {"dim": 8}
    for name, t in model.state_dict().items():
        assert torch.equal(state[name], t)
    # saving again gives identical bytes
    save_checkpoint(tmp_path / "n.ckpt", state, meta={"note": "x"}, epoch=3, config={"dim": 8})
    assert (tmp_path / "m.ckpt").read_bytes() == (tmp_path / "n.ckpt").read_bytes()


def test_checkpoint_errors(tmp_path):
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "missing.ckpt")
    with pytest.raises(CheckpointError):
        save_checkpoint(tmp_path / "i.ckpt", {"steps": torch.tensor([1, 2])})
    save_checkpoint(tmp_path / "t.ckpt", {"w": torch.ones(10)})
    data = (tmp_path / "t.ckpt").read_bytes()
    (tmp_path / "t.ckpt").write_bytes(data[:-4])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(tmp_path / "t.ckpt")
    (tmp_path / "t.ckpt").write_bytes(data + b"xx")
    with pytest.raises(CheckpointError, match="trailing"):
        load_checkpoint(tmp_path / "t.ckpt")
    (tmp_path / "g.ckpt").write_bytes(b"\xff\xfe garbage\n")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "g.ckpt")
