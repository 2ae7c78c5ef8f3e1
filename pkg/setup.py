import setuptools

setuptools.setup(
    name="pforvec",
    version="0.1.0",
    author="Oficina EOL UChile",
    author_email="eol-ing@uchile.cl",
    description="Parallel-for vectorization of tensor dataflow graphs, with an interpreter oracle and autodiff.",
    url="https://eol.uchile.cl",
    packages=setuptools.find_packages(),
    python_requires=">=3.8",
    install_requires=[
        "numpy>=1.20",
        "Django>=3.2",
        "django-model-utils>=4.0",
    ],
    extras_require={
        "test": [
            "mock",
            "pytest",
            "pytest-django",
            "pytest-cov",
            "pytest-json-report",
        ],
    },
    classifiers=[
        "Programming Language :: Python :: 3",
        "License :: OSI Approved :: MIT License",
        "Operating System :: OS Independent",
    ],
    entry_points={
        "console_scripts": ["pforvec = pforvec.cli:main"],
    },
)
