"""
命令行入口 - simulate / semigroup / invariant / dirichlet / yosida / verify

退出码: 0 成功; 1 验证未全部通过或运行出错; 2 配置错误; 130 用户中断
"""

import argparse
import json
import logging
import os
import traceback
from datetime import datetime
from typing import List, Optional

from src.common.errors import ConfigError, LabError
from src.common.logging_utils import setup_logging
from src.common.settings import LabSettings
from src.harness.commands import COMMANDS, run_command
from src.harness.config import load_experiment_config
from src.harness.verify import run_verification

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2
EXIT_INTERRUPTED = 130

EPILOG = f"""
Examples:
  # Trajectories for the paths listed in mc.path_ids
  python run_lab.py simulate --config configs/ou_minimal.yaml

  # Semigroup estimates with a different seed and output directory
  python run_lab.py semigroup --config configs/gradient_cubic.yaml --seed 7 --out outputs/seed7

  # Fast verification suite on 4 workers
  python run_lab.py verify --suite fast --workers 4

  # Dissipativity of the drift in a config only
  python run_lab.py verify --config configs/gradient_cubic.yaml --checks drift_dissipativity

  # The worker count can also come from the environment
  {LabSettings.WORKER_ENV_VAR}=8 python run_lab.py verify --suite full
"""


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="🚀 Spectral SPDE Lab - simulation and property verification",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=EPILOG,
    )
    parser.add_argument("command", choices=sorted(list(COMMANDS) + ["verify"]), help="子命令")
    parser.add_argument("--config", type=str, help="YAML/JSON 配置文件路径 (verify 可省略)")
    parser.add_argument("--seed", type=int, help="覆盖 mc.master_seed")
    parser.add_argument("--out", type=str, help="覆盖 output.directory")
    parser.add_argument("--suite", choices=("fast", "full"), help="verify 套件 (默认取配置或 fast)")
    parser.add_argument("--checks", type=str, help="verify 只运行这些检查 (逗号分隔的 check_id)")

    # 并行 / 进度
    parser.add_argument("--workers", type=int,
                        help=f"worker 进程数 (默认: ${LabSettings.WORKER_ENV_VAR} 或 CPU 数)")
    parser.add_argument("--no_progress", action="store_true", help="关闭进度条")

    # 日志
    parser.add_argument("--log_file", type=str, help="日志文件路径 (默认: spdelab_YYYYMMDD_HHMMSS.log)")
    parser.add_argument("--debug", action="store_true", help="启用调试日志")
    return parser


def _run_verify(args) -> int:
    seed, out_dir, suite, cfg = LabSettings.DEFAULT_SEED, "outputs", "fast", None
    if args.config:
        cfg = load_experiment_config(args.config).with_overrides(args.seed, args.out)
        seed, out_dir, suite = cfg.master_seed, cfg.output.directory, cfg.verify.suite
    else:
        seed = LabSettings.DEFAULT_SEED if args.seed is None else args.seed
        out_dir = args.out or out_dir
    suite = args.suite or suite
    os.makedirs(out_dir, exist_ok=True)
    only = [c.strip() for c in args.checks.split(",") if c.strip()] if args.checks else None
    report = run_verification(suite, seed, out_dir, config=cfg, only=only)
    for record in report.records:
        if not record.passed:
            logger.error(f"❌ {record.check_id} [{record.property} / {record.anchor}] {record.status.value}"
                         + (f": {record.error_message}" if record.error_message else ""))
    return EXIT_OK if report.passed else EXIT_FAILED


def _run_command(args) -> int:
    if not args.config:
        raise ConfigError("--config", f"the {args.command} command needs a config file")
    cfg = load_experiment_config(args.config).with_overrides(args.seed, args.out)
    os.makedirs(cfg.output.directory, exist_ok=True)
    output = run_command(args.command, cfg)
    logger.info(f"📊 {args.command}: {json.dumps(output.summary, ensure_ascii=False, default=str)}")
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    LabSettings.update_from_args(args)

    if not args.log_file:
        args.log_file = f"spdelab_{datetime.now().strftime('%Y%m%d_%H%M%S')}.log"
    setup_logging(args.log_file, logging.DEBUG if args.debug else logging.INFO)

    logger.info("=" * 60)
    logger.info(f"🚀 Spectral SPDE Lab: {args.command}")
    logger.info("=" * 60)
    logger.info(f"Config: {args.config}")
    logger.info(f"Workers: {LabSettings.NUM_WORKERS}")
    logger.info("=" * 60)

    try:
        if args.command == "verify":
            return _run_verify(args)
        return _run_command(args)
    except ConfigError as e:
        logger.error(f"❌ Config error: {e}")
        return EXIT_CONFIG
    except LabError as e:
        logger.error(f"❌ {type(e).__name__}: {e}")
        logger.debug(traceback.format_exc())
        return EXIT_FAILED
    except KeyboardInterrupt:
        logger.info("👋 Interrupted by user")
        return EXIT_INTERRUPTED
    except Exception as e:
        logger.error(f"❌ Unexpected error: {e}")
        traceback.print_exc()
        return EXIT_FAILED
