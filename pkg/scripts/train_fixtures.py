"""Train the desk-scale fixtures shipped in src/aiq/assets.

Development tool only: needs torch, which the library itself never imports.

    python scripts/train_fixtures.py [--only mini_resnet] [--epochs 12]
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import torch

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "tests"))

from torch_reference import build_module, export_tensors, reference_logits  # noqa: E402

from aiq import fixtures  # noqa: E402
from aiq.graph import build_graph, save_model, to_manifest  # noqa: E402

BUILDERS = {"mini_resnet": fixtures.mini_resnet, "heavy_early_mini": fixtures.heavy_early_mini}


def train(name, epochs, seed, lr, wd):
    torch.manual_seed(seed)
    graph = BUILDERS[name](seed=seed)
    train_set = fixtures.fixture_dataset(name, "train")
    eval_set = fixtures.fixture_dataset(name, "eval")
    mod = build_module(graph, trainable=True)
    opt = torch.optim.SGD(mod.parameters(), lr=lr, momentum=0.9, weight_decay=wd, nesterov=True)
    steps = epochs * (len(train_set) // 128)
    sched = torch.optim.lr_scheduler.OneCycleLR(opt, max_lr=lr, total_steps=steps)
    x_all = torch.from_numpy(train_set.images)
    y_all = torch.from_numpy(train_set.labels)
    gen = torch.Generator().manual_seed(seed)
    for epoch in range(epochs):
        mod.train()
        perm = torch.randperm(len(train_set), generator=gen)
        total = 0.0
        for s in range(0, len(perm) - 127, 128):
            idx = perm[s : s + 128]
            loss = torch.nn.functional.cross_entropy(mod(x_all[idx]), y_all[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
            sched.step()
            total += loss.item()
        mod.eval()
        with torch.no_grad():
            acc = (mod(torch.from_numpy(eval_set.images)).argmax(1).numpy() == eval_set.labels).mean()
        print(f"{name} epoch {epoch}: loss {total / (len(perm) // 128):.4f} eval acc {acc:.4f}", flush=True)
    return build_graph(to_manifest(graph), export_tensors(mod)), eval_set


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--only", choices=sorted(BUILDERS))
    ap.add_argument("--epochs", type=int, default=12)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--lr", type=float, default=0.05)
    ap.add_argument("--wd", type=float, default=5e-4)
    ap.add_argument("--out", type=Path, default=ROOT / "src" / "aiq" / "assets")
    ap.add_argument("--golden", type=Path, default=ROOT / "tests" / "golden")
    args = ap.parse_args()
    torch.set_num_threads(1)
    args.golden.mkdir(parents=True, exist_ok=True)
    for name in [args.only] if args.only else sorted(BUILDERS):
        graph, eval_set = train(name, args.epochs, args.seed, args.lr, args.wd)
        save_model(graph, args.out / f"{name}.json", args.out / f"{name}.aiqw")
        logits = reference_logits(graph, eval_set.images)
        np.save(args.golden / f"{name}_logits64.npy", logits[:64])
        acc = float((logits.argmax(1) == eval_set.labels).mean())
        margin = np.sort(logits, axis=1)
        with open(args.golden / f"{name}_reference.json", "w") as fh:
            json.dump({"eval_accuracy": acc, "correct": int((logits.argmax(1) == eval_set.labels).sum()),
                       "min_top2_margin": float((margin[:, -1] - margin[:, -2]).min())}, fh, indent=1)
        print(name, "reference eval accuracy", acc)


if __name__ == "__main__":
    main()
