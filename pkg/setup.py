from setuptools import find_packages, setup

setup(
    name="mfsde-pipeline",
    version="0.1.0",
    description="Fokker-Planck based simulation of mean-field SDEs",
    packages=find_packages(include=["mfsde_pipeline", "mfsde_pipeline.*"]),
    python_requires=">=3.8",
    install_requires=[
        "click",
        "numpy",
        "pandas",
        "scipy>=1.12",
        "tqdm",
    ],
    extras_require={"test": ["pytest"]},
    entry_points={
        "console_scripts": ["mfsde-pipeline = mfsde_pipeline.process.cli:main"]
    },
)
