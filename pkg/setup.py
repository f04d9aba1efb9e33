from setuptools import setup, find_packages

from manifold_bsde._constants import AUTHOR, VERSION

with open("README.md", "r") as f:
    long_description = f.read()

setup(
    name="manifold_bsde",
    version=str(VERSION),
    description="Solvers and numerical checks for BSDEs with values in a Riemannian manifold",
    author=AUTHOR,
    license="MIT",
    packages=find_packages(exclude=["examples", "examples.*"]),
    zip_safe=False,
    include_package_data=True,
    data_files=[("", ["default.ini"])],
    keywords=["bsde", "riemannian", "stochastic", "pde", "monte-carlo", "harmonic-map"],
    install_requires=[
        "numexpr",
        "numpy",
        "scipy",
        "pandas",
    ],
    entry_points={"console_scripts": ["manifold_bsde=manifold_bsde.cli:main"]},
    long_description_content_type="text/markdown",
    long_description=long_description,
    classifiers=[
        "Development Status :: 4 - Beta",
        "Intended Audience :: Science/Research",
        "Natural Language :: English",
        "Operating System :: OS Independent",
        "Topic :: Scientific/Engineering :: Mathematics",
        "License :: OSI Approved :: MIT License",
        "Programming Language :: Python :: 3.8",
    ],
)
