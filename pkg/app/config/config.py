import os
import shutil

import toml
from loguru import logger

root_dir = os.path.dirname(os.path.dirname(os.path.dirname(os.path.realpath(__file__))))
config_file = f"{root_dir}/config.toml"
example_file = f"{root_dir}/config.example.toml"


def load_config():
    # a bind-mounted config.toml sometimes shows up as an empty directory
    if os.path.isdir(config_file):
        shutil.rmtree(config_file)

    if not os.path.isfile(config_file) and os.path.isfile(example_file):
        try:
            shutil.copyfile(example_file, config_file)
            logger.info("copy config.example.toml to config.toml")
        except OSError as e:
            logger.warning(f"cannot create config.toml: {str(e)}, using config.example.toml")

    path = config_file if os.path.isfile(config_file) else example_file
    if not os.path.isfile(path):
        logger.warning("no config file found, using built-in defaults")
        return {}

    logger.info(f"load config from file: {path}")
    try:
        _config_ = toml.load(path)
    except Exception as e:
        logger.warning(f"load config failed: {str(e)}, try to load as utf-8-sig")
        with open(path, mode="r", encoding="utf-8-sig") as fp:
            _config_ = toml.loads(fp.read())
    return _config_


_cfg = load_config()
app = _cfg.get("app", {})
numerics = _cfg.get("numerics", {})
mc = _cfg.get("mc", {})
parallel = _cfg.get("parallel", {})

log_level = _cfg.get("log_level", "INFO")
project_name = _cfg.get("project_name", "jumpgen")
project_description = _cfg.get(
    "project_description",
    "Numerical laboratory for jump generators with integrable convolution kernels",
)
project_version = app.get("project_version", "0.1.0")

logger.info(f"{project_name} v{project_version}")
