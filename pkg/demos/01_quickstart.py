"""Small end-to-end run: train every model, attack, evaluate through the black box.

    python demos/01_quickstart.py [--out runs/quickstart] [--full]

Without ``--full`` the models are shrunk so the whole thing takes well
under a minute; ``--full`` uses the desk-scale defaults (a few minutes).
"""

import argparse

from deepfake_disrupt.evaluation import summary_table
from deepfake_disrupt.pipeline import PipelineConfig, config_from_dict, run_pipeline

SMALL = {
    "images_per_identity": 60,
    "eval_limit": 20,
    "substitute": {"channels": [16, 32, 64, 64], "epochs": 10},
    "deepfake": {"epochs": 10},
    "tcagan": {"epochs": 5, "gen_channels": [8, 16, 32], "critic_channels": [8, 16, 32, 32]},
}


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--out", default="runs/quickstart")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--full", action="store_true")
    args = p.parse_args()

    cfg = PipelineConfig(seed=args.seed) if args.full else config_from_dict({**SMALL, "seed": args.seed})
    res = run_pipeline(cfg, args.out)

    # the attack stage never touched the target
    print(f"target queries while generating attacks: {res.query_count_after_attacks}")
    print(summary_table(list(res.reports.values())))
    for stage in ("target", "substitute", "tcagan", "attack_ours", "total"):
        print(f"{stage:>12}: {res.timings[stage]:6.1f}s")
    print(f"artifacts in {res.out_dir}")


if __name__ == "__main__":
    main()
