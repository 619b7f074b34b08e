#!/usr/bin/env python3

import os
from setuptools import setup

directory = os.path.abspath(os.path.dirname(__file__))
with open(os.path.join(directory, 'README.md'), encoding='utf-8') as f:
  long_description = f.read()

setup(name='tinyghost',
      version='0.1.0',
      description='Ghost imaging through 50 km of fiber, on your laptop',
      license='MIT',
      long_description=long_description,
      long_description_content_type='text/markdown',
      packages = ['tinyghost'],
      package_data = {'tinyghost': ['presets/*.conf']},
      classifiers=[
        "Programming Language :: Python :: 3",
        "License :: OSI Approved :: MIT License"
      ],
      install_requires=['numpy', 'scipy>=1.8', 'numba', 'joblib', 'tqdm', 'Pillow>=9.3'],
      python_requires='>=3.8',
      extras_require={
        'gpu': ["pyopencl", "reikna"],
        'testing': [
            "pytest",
        ],
      },
      entry_points={
        'console_scripts': ['tinyghost=tinyghost.cli:main'],
      },
      include_package_data=True)
