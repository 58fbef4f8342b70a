"""Shared builders for the test suite."""

from __future__ import annotations

from umf.tasks import planted_pair_task


def pair_task_config(seed=0, budgets=(16, 32, 64)):
    """Experiment config document for the planted hand-off problem."""
    task = planted_pair_task(seed)
    vocab = task.initial_state.vocab
    problem = {
        "id": f"planted{seed}",
        "vocab": {
            "size": vocab.size,
            "mask_id": vocab.mask_id,
            "eos_id": vocab.eos_id,
            "pad_id": vocab.pad_id,
        },
        "prompt": list(task.initial_state.prompt),
        "gen_len": task.initial_state.n_g,
        "denoisers": [
            {
                "id": "early",
                "kind": "planted_skill",
                "target": list(task.target),
                "band": [0.5 + 1e-9, 1.0],
                "salt": seed * 2 + 1,
            },
            {
                "id": "late",
                "kind": "planted_skill",
                "target": list(task.target),
                "band": [0.0, 0.5],
                "salt": seed * 2 + 2,
            },
        ],
        "reward": {"kind": "exact_match", "target": list(task.target)},
    }
    return {
        "seed": seed,
        "schedule": [0.75, 0.5, 0.25],
        "cache": True,
        "budgets": list(budgets),
        "problems": [problem],
        "actions": [
            {"id": "a_early", "denoiser": "early"},
            {"id": "a_late", "denoiser": "late"},
        ],
        "methods": [
            {"name": "umf", "kind": "umf"},
            {"name": "bon_early", "kind": "bon", "action": "a_early"},
            {
                "name": "pair_el",
                "kind": "pair",
                "arms": [
                    {"kind": "bon", "action": "a_early"},
                    {"kind": "bon", "action": "a_late"},
                ],
            },
        ],
    }
