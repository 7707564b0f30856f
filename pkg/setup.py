import setuptools


with open("README.md", "r") as fh:
    long_description = fh.read()

version = {}
with open("hl2ss/_version.py", "r") as fh:
    exec(fh.read(), version)

setuptools.setup(
    name="hl2ss",
    version=version["__version__"],
    description="HoloLens 2 sensor streaming protocol: client, recorder and device emulator",
    long_description=long_description,
    long_description_content_type="text/markdown",
    entry_points={"console_scripts": ["hl2ss=hl2ss.cli:main"]},
    packages=["hl2ss"],
    package_data={"hl2ss": ["data/*"]},
    classifiers=[
        "Programming Language :: Python :: 3",
        "License :: OSI Approved :: GNU General Public License (GPL)",
        "Operating System :: OS Independent",
    ],
    python_requires=">=3.7",
    install_requires=[
        "numpy",
        "scipy",
        "pandas",
        "matplotlib",
        "frozendict",
        "opencv-python",
    ],
)
