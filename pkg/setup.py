from setuptools import find_packages, setup

setup(
    name="texture_ray",
    packages=find_packages(where=".", include="texture_ray*"),
    version="0.1.0",
    author="Ray Team",
    description="Patch-and-shuffle texture classification experiments on Ray",
    license="Apache 2.0",
    long_description="Train CNN texture classifiers with and without "
    "patch-and-shuffle preprocessing and compare them in controlled, "
    "seeded experiments.",
    install_requires=[
        "ray>=2.7",
        "numpy>=1.16",
        "pandas",
        "packaging",
        "torch>=1.11",
        "torchvision>=0.12",
        "scikit-image>=0.19",
        "Pillow",
        "matplotlib",
    ],
    entry_points={
        "console_scripts": ["texture-ray=texture_ray.cli:main"],
    },
)
