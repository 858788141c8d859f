"""Central finite-difference gradient checks on small float64 instances."""

from __future__ import annotations

import dataclasses

import torch

from pointfoot_lab import nn
from pointfoot_lab.distill import AlignmentBatch, DistillConfig, distill_loss
from pointfoot_lab.nn import MLPSpec, ParameterStore
from pointfoot_lab.policy import (
    BlindAgent,
    PolicyConfig,
    StudentAgent,
    TeacherAgent,
    build_blind,
    build_student,
    build_teacher,
    gate,
    teacher_encode,
    teacher_state,
    value_net,
)
from pointfoot_lab.ppo import PPOConfig, ppo_loss

H = 1e-3
SMALL = PolicyConfig(
    priv_dim=3,
    scan_dim=5,
    latent_dim=4,
    expert_hidden=(6,),
    gate_hidden=(5,),
    gate_query=4,
    n_heads=2,
    head_hidden=(5,),
    value_hidden=(5,),
    blind_hidden=(6,),
    student_hidden=5,
    depth_shape=(8, 8),
    history=2,
)


def relative_errors(store: ParameterStore, loss_fn, gen: torch.Generator, per_tensor: int = 12) -> dict[str, float]:
    """Per-tensor max relative error between backward() and central differences.

    Up to ``per_tensor`` random entries of every parameter are perturbed by ``H``.
    """
    loss = loss_fn()
    store.backward(loss)
    errors = {}
    for name, p in store.params.items():
        analytic = store.grad(name).detach().clone().reshape(-1)
        flat = p.data.view(-1)
        k = min(per_tensor, flat.numel())
        idx = torch.randperm(flat.numel(), generator=gen)[:k]
        numeric = torch.empty(k, dtype=torch.float64)
        with torch.no_grad():
            for j, i in enumerate(idx.tolist()):
                orig = flat[i].item()
                flat[i] = orig + H
                up = float(loss_fn())
                flat[i] = orig - H
                down = float(loss_fn())
                flat[i] = orig
                numeric[j] = (up - down) / (2 * H)
        a = analytic[idx].double()
        scale = max(a.abs().max().item(), numeric.abs().max().item(), 1e-6)
        errors[name] = (a - numeric).abs().max().item() / scale
    return errors


def _rand(gen, *shape):
    return torch.randn(*shape, generator=gen, dtype=torch.float64)


def _obs(gen, cfg, b, **extra):
    out = {
        "obs": _rand(gen, b, cfg.obs_dim),
        "priv": _rand(gen, b, cfg.priv_dim),
        "heights": 0.66 + 0.1 * _rand(gen, b, cfg.scan_dim),
        "terrain": torch.nn.functional.one_hot(torch.randint(0, 4, (b,), generator=gen), 4).double(),
    }
    out.update(extra)
    return out


# -- instances: each returns (store in float64, loss closure) ------------------------------

def mlp_instance(seed):
    gen = torch.Generator().manual_seed(seed)
    sizes = tuple(int(v) for v in torch.randint(2, 7, (3,), generator=gen))
    store = ParameterStore(torch.float64)
    spec = nn.add_mlp(store, MLPSpec("mlp", sizes, out_activation="elu"), gen)
    x, w = _rand(gen, 5, sizes[0]), _rand(gen, 5, sizes[-1])
    return store, lambda: (nn.mlp_forward(store, spec, x) * w).sum()


def conv_instance(seed):
    gen = torch.Generator().manual_seed(seed)
    store = ParameterStore(torch.float64)
    nn.add_conv2d(store, "conv", 2, 3, 3, gen)
    x = _rand(gen, 2, 2, 7, 6)
    stride = 1 + seed % 2
    w = _rand(gen, *nn.conv2d_forward(store, "conv", x, stride=stride, padding=1).shape)
    return store, lambda: (nn.conv2d_forward(store, "conv", x, stride=stride, padding=1) * w).sum()


def gru_instance(seed):
    gen = torch.Generator().manual_seed(seed)
    store = ParameterStore(torch.float64)
    nn.add_gru(store, "gru", 3, 4, gen)
    with torch.no_grad():
        for n in ("gru/b_ih", "gru/b_hh"):
            store[n].copy_(0.3 * _rand(gen, *store[n].shape))
    xs, h0, w = _rand(gen, 3, 2, 3), _rand(gen, 2, 4), _rand(gen, 2, 4)

    def loss():
        h = h0
        for x in xs:
            _, h = nn.gru_cell(store, "gru", x, h)
        return (h * w).sum()

    return store, loss


def attention_instance(seed):
    gen = torch.Generator().manual_seed(seed)
    store = ParameterStore(torch.float64)
    store.add("q", _rand(gen, 3, 4))
    store.add("k", _rand(gen, 5, 4))
    store.add("v", _rand(gen, 5, 4))
    w = _rand(gen, 3, 4)
    return store, lambda: (nn.attention(store["q"], store["k"], store["v"], n_heads=2) * w).sum()


def softmax_instance(seed):
    gen = torch.Generator().manual_seed(seed)
    store = ParameterStore(torch.float64)
    store.add("logits", 2 * _rand(gen, 4, 5))
    w = _rand(gen, 4, 5)
    return store, lambda: (nn.softmax(store["logits"]) * w).sum()


def teacher_instance(seed):
    gen = torch.Generator().manual_seed(seed)
    store = build_teacher(SMALL, seed).to(torch.float64)
    batch = _obs(gen, SMALL, 6)
    s = teacher_state(batch["obs"], batch["priv"], batch["heights"])
    w = _rand(gen, 6, SMALL.latent_dim)
    wg = _rand(gen, 6, SMALL.n_experts)

    def loss():
        z, weights = teacher_encode(s, batch["terrain"], store, SMALL)
        return (z * w).sum() + (gate(s, batch["terrain"], store, SMALL) * wg).sum() + 0 * weights.sum()

    return store, loss


def value_instance(seed):
    gen = torch.Generator().manual_seed(seed)
    store = build_teacher(SMALL, seed).to(torch.float64)
    batch = _obs(gen, SMALL, 6)
    s = teacher_state(batch["obs"], batch["priv"], batch["heights"])
    target = _rand(gen, 6)
    return store, lambda: ((value_net(s, batch["terrain"], store, SMALL) - target) ** 2).mean()


def student_instance(seed):
    gen = torch.Generator().manual_seed(seed)
    agent = StudentAgent(SMALL, seed, build_student(SMALL, seed).to(torch.float64))
    frames = [
        {
            "obs": _rand(gen, 3, SMALL.obs_dim),
            "history": _rand(gen, 3, SMALL.history_dim),
            "depth": 0.3 * _rand(gen, 3, *SMALL.depth_shape),
        }
        for _ in range(2)
    ]
    w = _rand(gen, 3, SMALL.action_dim)

    def loss():
        agent.hidden = torch.zeros(3, SMALL.student_hidden, dtype=torch.float64)
        total = 0.0
        for f in frames:
            z, mean, _ = agent.step(f)
            total = total + (mean * w).sum() + z.pow(2).sum()
        return total

    return agent.store, loss


def blind_instance(seed):
    gen = torch.Generator().manual_seed(seed)
    agent = BlindAgent(SMALL, seed, build_blind(SMALL, seed).to(torch.float64))
    batch = _obs(gen, SMALL, 5, history=_rand(gen, 5, SMALL.history_dim))
    w = _rand(gen, 5, SMALL.action_dim)

    def loss():
        mean, log_std, value = agent.evaluate(batch)
        return (mean * w).sum() + log_std.sum() + value.sum()

    return agent.store, loss


def ppo_instance(seed, use_moe=True):
    gen = torch.Generator().manual_seed(seed)
    cfg = dataclasses.replace(SMALL, use_moe=use_moe)
    agent = TeacherAgent(cfg, seed, build_teacher(cfg, seed).to(torch.float64))
    b = 16
    batch = _obs(gen, cfg, b)
    with torch.no_grad():
        mean, log_std, _ = agent.evaluate(batch)
    actions = mean + torch.exp(log_std) * _rand(gen, b, cfg.action_dim)
    from pointfoot_lab.policy import gaussian_log_prob

    old = gaussian_log_prob(actions, mean, log_std) + 0.1 * _rand(gen, b)
    batch.update(
        _actions=actions,
        _log_probs=old,
        _means=mean,
        _log_stds=log_std,
        _advantages=_rand(gen, b),
        _returns=_rand(gen, b),
        _values=_rand(gen, b),
    )
    return agent.store, lambda: ppo_loss(agent, batch, PPOConfig())[0]


def distill_instance(seed, mode="standard"):
    gen = torch.Generator().manual_seed(seed)
    store = ParameterStore(torch.float64)
    enc = nn.add_mlp(store, MLPSpec("enc", (3, 6, 4)), gen)
    head = nn.add_mlp(store, MLPSpec("head", (4, 2)), gen)
    x = _rand(gen, 64, 3)
    z_t = _rand(gen, 64, 4)
    a_t = _rand(gen, 64, 2)
    cfg = DistillConfig(barlow_mode=mode, barlow_lambda=0.05)

    def loss():
        z = nn.mlp_forward(store, enc, x)
        return distill_loss(AlignmentBatch(z, z_t, a_t, nn.mlp_forward(store, head, z)), cfg)[0]

    return store, loss


INSTANCES = {
    "mlp": mlp_instance,
    "conv2d": conv_instance,
    "gru": gru_instance,
    "attention": attention_instance,
    "softmax": softmax_instance,
    "teacher_encoder_gate": teacher_instance,
    "value": value_instance,
    "student_conv_gru": student_instance,
    "blind": blind_instance,
    "ppo_loss": ppo_instance,
    "ppo_loss_single_expert": lambda s: ppo_instance(s, use_moe=False),
    "distill_standard": distill_instance,
    "distill_literal": lambda s: distill_instance(s, "literal"),
}


def run(name: str, seed: int) -> float:
    store, loss_fn = INSTANCES[name](seed)
    errors = relative_errors(store, loss_fn, torch.Generator().manual_seed(1000 + seed))
    return max(errors.values())
