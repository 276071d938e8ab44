#!/usr/bin/env python3
"""
贝叶斯最优实验设计的随机梯度优化工具
"""

from setuptools import setup, find_packages

with open("README.md", "r", encoding="utf-8") as fh:
    long_description = fh.read()

DEV_REQUIREMENTS = {"pytest", "pytest-cov", "black", "flake8"}

with open("requirements.txt", "r", encoding="utf-8") as fh:
    requirements = [line.split("#")[0].strip() for line in fh if line.strip() and not line.startswith("#")]
    requirements = [req for req in requirements if req.split(">=")[0] not in DEV_REQUIREMENTS]

setup(
    name="oedopt",
    version="0.1.0",
    author="oedopt Team",
    author_email="",
    description="基于期望信息增益的贝叶斯最优实验设计：SGD、Nesterov加速与重启加速",
    long_description=long_description,
    long_description_content_type="text/markdown",
    packages=find_packages(where="src"),
    package_dir={"": "src"},
    classifiers=[
        "Development Status :: 3 - Alpha",
        "Intended Audience :: Science/Research",
        "License :: OSI Approved :: MIT License",
        "Operating System :: OS Independent",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
        "Topic :: Scientific/Engineering :: Mathematics",
    ],
    python_requires=">=3.9",
    install_requires=requirements,
    extras_require={"dev": sorted(DEV_REQUIREMENTS)},
    entry_points={
        "console_scripts": [
            "oedopt=oedopt.cli:main",
        ],
    },
    include_package_data=True,
    zip_safe=False,
)
