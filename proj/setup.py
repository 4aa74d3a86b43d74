from pybind11.setup_helpers import Pybind11Extension, build_ext
from setuptools import setup

ext = Pybind11Extension(
    "cirspy",
    sources=[
        "bindings/module.cpp",
        "src/graph.cpp",
        "src/checkpoint.cpp",
        "src/env.cpp",
        "src/synth.cpp",
        "src/usermodel.cpp",
        "src/statetracker.cpp",
        "src/policy.cpp",
        "src/baselines.cpp",
        "src/harness.cpp",
    ],
    include_dirs=["include", "vendor"],
    cxx_std=20,
)

setup(ext_modules=[ext], cmdclass={"build_ext": build_ext})
