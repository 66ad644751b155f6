# Copyright (c) 2022 Hongji Wang (jijijiang77@gmail.com)
#               2025 mvann authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#   http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

import logging
import os
import random
import sys

import numpy as np
import yaml

LOG_FORMAT = "[ %(levelname)s : %(asctime)s ] - %(message)s"
DEFAULT_SEED = 42
SEED_ENV = 'MVANN_SEED'


def get_logger(outdir=None, fname=None, level=logging.INFO):
    """Configure the root logger once, optionally dumping to outdir/fname.

    Everything goes to stderr so that stdout stays reserved for data.
    """
    formatter = logging.Formatter(LOG_FORMAT)
    root = logging.getLogger()
    if not any(getattr(h, '_mvann', False) for h in root.handlers):
        sh = logging.StreamHandler(sys.stderr)
        sh.setFormatter(formatter)
        sh._mvann = True
        root.addHandler(sh)
    root.setLevel(level)
    logger = logging.getLogger("mvann")
    if outdir is not None and fname is not None:
        os.makedirs(outdir, exist_ok=True)
        fh = logging.FileHandler(os.path.join(outdir, fname))
        fh.setFormatter(formatter)
        logger.addHandler(fh)
    return logger


def parse_config_or_kwargs(config_file, **kwargs):
    """parse_config_or_kwargs

    :param config_file: Config file that has parameters, yaml format
    :param **kwargs: Other alternative parameters or overwrites for config
    """
    with open(config_file) as con_read:
        yaml_config = yaml.load(con_read, Loader=yaml.FullLoader)
    # passed kwargs will override yaml config
    return dict(yaml_config, **kwargs)


def validate_path(file_name):
    """ Create the parent directory of file_name if it doesn't exist
    :param file_name
    :return: None
    """
    dir_name = os.path.dirname(file_name)
    if not os.path.exists(dir_name) and (dir_name != ''):
        os.makedirs(dir_name)


def resolve_seed(seed=None):
    """Explicit seed first, then $MVANN_SEED, then the package default."""
    if seed is not None:
        return int(seed)
    env = os.environ.get(SEED_ENV)
    if env is not None and env.strip() != '':
        try:
            return int(env)
        except ValueError:
            raise ValueError('{} must be an integer, got {!r}'.format(
                SEED_ENV, env))
    return DEFAULT_SEED


def set_seed(seed=DEFAULT_SEED):
    np.random.seed(seed)
    random.seed(seed)
