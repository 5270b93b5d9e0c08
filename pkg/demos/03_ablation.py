"""Component and cycle-consistency ablations on a shared target.

    python demos/03_ablation.py [--preset components|cycle] [--seeds 0,1,2] [--full]

Every variant of a seed shares the substitute and the target, so rows
differ only in the TCA-GAN / post-regularization switches.
"""

import argparse

from deepfake_disrupt.pipeline import (
    PipelineConfig,
    ablation_table,
    component_matrix,
    config_from_dict,
    cycle_matrix,
    run_ablation,
)

SMALL = {
    "images_per_identity": 60,
    "eval_limit": 20,
    "substitute": {"channels": [16, 32, 64, 64], "epochs": 10},
    "deepfake": {"epochs": 10},
    "tcagan": {"epochs": 5, "gen_channels": [8, 16, 32], "critic_channels": [8, 16, 32, 32]},
}


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--preset", choices=["components", "cycle"], default="components")
    p.add_argument("--seeds", default="0")
    p.add_argument("--out", default="runs/ablation")
    p.add_argument("--full", action="store_true")
    args = p.parse_args()

    cfg = PipelineConfig() if args.full else config_from_dict(SMALL)
    variants = component_matrix() if args.preset == "components" else cycle_matrix()
    seeds = [int(s) for s in args.seeds.split(",")]
    rows = run_ablation(cfg, variants, seeds, out_dir=args.out)
    print(ablation_table(rows))


if __name__ == "__main__":
    main()
