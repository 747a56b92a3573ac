import argparse
import tempfile

import ray

from texture_ray import (
    ClassifierSpec,
    TrainConfig,
    generate_synthetic_textures,
    run_seeds,
)


def main(epochs, n_per_class, seeds, out_dir):
    dataset = generate_synthetic_textures(n_per_class, (64, 64), seed=0)

    config = TrainConfig(
        epochs=epochs,
        learning_rate=1e-3,
        batch_size=16,
        image_size=64,
        patch_size=16,
        classifier=ClassifierSpec(pretrained=False),
    )

    # Both arms of every seed run as concurrent Ray tasks
    _, summary = run_seeds(
        config, dataset, seeds, concurrent=True, out_dir=out_dir, plot_formats=()
    )

    for arm in ("experimental", "control"):
        stats = summary[arm]["average_accuracy"]
        print(
            "{} average accuracy: {:.2f} +- {:.2f} %".format(
                arm, 100 * stats["mean"], 100 * stats["std"]
            )
        )
    print(f"Artifacts written to {out_dir}")


if __name__ == "__main__":
    parser = argparse.ArgumentParser()
    parser.add_argument(
        "--address", required=False, type=str, help="the address to use for Ray"
    )
    parser.add_argument("--epochs", type=int, default=5)
    parser.add_argument("--n-per-class", type=int, default=100)
    parser.add_argument(
        "--seeds", type=str, default="0,1,2", help="Comma-separated seeds."
    )
    parser.add_argument("--out", type=str, default=None, help="Output directory.")
    parser.add_argument("--smoke-test", action="store_true", default=False)

    args, _ = parser.parse_known_args()

    out_dir = args.out or tempfile.mkdtemp(prefix="texture_ray_")
    if args.smoke_test:
        ray.init(num_cpus=2)
        main(epochs=1, n_per_class=4, seeds=[0, 1], out_dir=out_dir)
    else:
        ray.init(address=args.address)
        seeds = [int(s) for s in args.seeds.split(",")]
        main(args.epochs, args.n_per_class, seeds, out_dir)
