#!/usr/bin/env python3
"""Setup script for shapefit package."""

from setuptools import setup, find_packages

with open("README.md", "r", encoding="utf-8") as fh:
    long_description = fh.read()

setup(
    name="shapefit",
    version="0.1.0",
    author="shapefit developers",
    description="Joint pose and shape refinement of objects in stereo frames with SDF shape priors",
    long_description=long_description,
    long_description_content_type="text/markdown",
    packages=find_packages(include=["shapefit", "shapefit.*"]),
    package_data={
        "shapefit": [
            "templates/*.j2",
        ],
    },
    include_package_data=True,
    classifiers=[
        "Development Status :: 3 - Alpha",
        "Intended Audience :: Science/Research",
        "License :: OSI Approved :: MIT License",
        "Operating System :: OS Independent",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
    ],
    python_requires=">=3.9",
    install_requires=[
        "pydantic>=2.0.0",
        "jinja2>=3.0.0",
        "numpy>=1.22",
        "scipy>=1.10",
        "Pillow>=9.1",
    ],
    extras_require={
        "dev": [
            "pytest>=6.0",
            "black",
            "flake8",
            "mypy",
        ],
    },
    entry_points={
        "console_scripts": [
            "shapefit=shapefit.cli:main",
        ],
    },
)
