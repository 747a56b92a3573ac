import argparse

from texture_ray import (
    AugmentConfig,
    ClassifierSpec,
    TrainConfig,
    generate_synthetic_textures,
    run_comparison,
    stratified_split,
)


def main(epochs, n_per_class, pretrained):
    # Generate synthetic texture windows, 4 classes
    dataset = generate_synthetic_textures(n_per_class, (64, 64), seed=0)
    # Stratified 80/20 split, shared by both arms
    train_set, test_set = stratified_split(dataset, 0.8, seed=0)

    config = TrainConfig(
        epochs=epochs,
        learning_rate=1e-3,
        batch_size=16,
        image_size=64,
        patch_size=16,
        augment=AugmentConfig(max_rotation_deg=15.0),
        classifier=ClassifierSpec(pretrained=pretrained),
    )

    # Train the standard and the patch-and-shuffle classifier
    comparison = run_comparison(config, train_set, test_set)

    print(comparison.render_table())


if __name__ == "__main__":
    parser = argparse.ArgumentParser()
    parser.add_argument(
        "--epochs", type=int, default=5, help="Number of training epochs."
    )
    parser.add_argument(
        "--n-per-class",
        type=int,
        default=100,
        help="Synthetic images per texture class.",
    )
    parser.add_argument(
        "--pretrained",
        action="store_true",
        default=False,
        help="Start from ImageNet weights (requires download).",
    )
    parser.add_argument("--smoke-test", action="store_true", default=False)

    args, _ = parser.parse_known_args()

    if args.smoke_test:
        main(epochs=1, n_per_class=4, pretrained=False)
    else:
        main(args.epochs, args.n_per_class, args.pretrained)
