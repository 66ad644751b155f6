from setuptools import setup, find_packages

requirements = [
    "numpy>=1.22",
    "scipy>=1.10",
    "scikit-learn>=1.0",
    "tqdm",
    "PyYAML",
    "fire",
    "tableprint",
    "kaldiio",
]

setup(
    name="mvann",
    install_requires=requirements,
    packages=find_packages(exclude=["tests", "tests.*"]),
    entry_points={
        "console_scripts": [
            "mvann = mvann.cli.mvann:main",
        ]
    },
)
