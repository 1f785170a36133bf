import setuptools

with open("README.md", "r") as fh:
    long_description = fh.read()

setuptools.setup(
    name="atomnav",
    version="0.1.0",
    author="atomnav developers",
    author_email="",
    description="Sign-centric abstract top-view maps for grounding navigational signs",
    long_description=long_description,
    long_description_content_type="text/markdown",
    packages=setuptools.find_packages(exclude=["tests"]),
    py_modules=["main"],
    package_data={"": ["*.json"]},
    install_requires=[
        "numpy", "scipy", "pandas", "numba", "opencv-python-headless", "tqdm", "matplotlib", "pillow", "shapely>=2.0",
        "requests"
    ],
    extras_require={"test": ["pytest", "hypothesis"]},
    entry_points={"console_scripts": ["atom=main:atom", "sim=main:sim"]},
    python_requires='>=3.8',
)
