import os
from setuptools import setup, find_packages

here = os.path.abspath(os.path.dirname(__file__))

with open(os.path.join(here, 'README.md'), encoding='utf-8') as f:
    long_description = f.read()

setup(name='jobstats',
      version='0.1.0',
      description="Job-tagged resource measurement on cluster nodes and"
      " offline per-job efficiency analysis.",
      long_description=long_description,
      long_description_content_type='text/markdown',
      author='jobstats developers',
      classifiers=[
          'Development Status :: 4 - Beta',
          'Environment :: Console',
          'Operating System :: POSIX :: Linux',
          'Programming Language :: Python :: 3.7',
          'Programming Language :: Python :: 3.8',
          'Programming Language :: Python :: 3.9'],
      packages=find_packages(include=['jobstats', 'jobstats.*']),
      python_requires='>=3.7',
      install_requires=['click', 'more_click', 'tqdm', 'pandas', 'jinja2',
                        'numpy', 'psutil'],
      extras_require={
          'test': ['pytest'],
          'docs': ['sphinx', 'sphinx_rtd_theme'],
      },
      package_data={'jobstats': ['resources/*.cfg', 'resources/fixtures/*',
                                 'templates/*.svg']},
      entry_points={
          'console_scripts': ['jobstats = jobstats.cli.api:dispatch'],
      },
      include_package_data=True)
