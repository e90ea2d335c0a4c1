from setuptools import setup

setup(
        name = 'domefactory',
        version='0.1.0dev',
        packages= ['domefactory', 'domefactory.config', 'domefactory.utils', 'domefactory.geometry', 'domefactory.synth',
                   'domefactory.tracking', 'domefactory.fields', 'domefactory.rendering', 'domefactory.losses',
                   'domefactory.trainers', 'domefactory.export'],
        description='Layered neural rendering of a human and a hand-held object from a synthetic camera dome',
        install_requires=['NumPy >= 1.17.0', 'SciPy >= 1.6.3', 'pandas >= 1.2.4', 'torch >= 1.12', 'tqdm >= 4.0.0', 'Pillow >= 8.0', 'PyMCubes >= 0.1.2'],
        extras_require={'test': ['pytest >= 7.0', 'hypothesis >= 6.0'], 'wandb': ['wandb']},
        entry_points={'console_scripts': ['domefactory=domefactory.cli:main']},
        classifiers=['Development Status :: 1 - Planning',
                      'Environment :: Console',
                      'License :: OSI Approved :: MIT License',
                      'Programming Language :: Python',
                      'Topic :: Scientific/Engineering'
                    ]
    )
