import os

import pkg_resources


def sparse_obs_assets_dir():
    return pkg_resources.resource_filename(__name__, 'assets')


def default_config_path(experiment: str) -> str:
    return os.path.join(sparse_obs_assets_dir(), 'configs', f'{experiment}.json')
