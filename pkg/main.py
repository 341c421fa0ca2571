"""
One-step MPC - メインエントリーポイント
蓄積関数で先読みを置き換えた一段 MPC の実験ツール

使用方法:
    # 蓄積関数の合成と検証
    python main.py synthesize-storage --config config/vdp.json

    # 保存済み蓄積関数の検証
    python main.py verify --config config/vdp.json

    # 安定性重み α の推定
    python main.py estimate-alpha --config config/vdp.json

    # 閉ループ実行・計算時間比較・α スイープ
    python main.py run --config config/vdp.json --out output/vdp
    python main.py compare --config config/vdp.json
    python main.py sweep --config config/vdp.json --seed 3

終了コード:
    0 成功 / 1 設定エラー / 2 検証失敗 / 3 実行時の前提条件違反
"""

import argparse
import os
import sys
from pathlib import Path
from typing import List, Optional

from dotenv import load_dotenv

# プロジェクトルートをパスに追加
project_root = Path(__file__).parent
sys.path.insert(0, str(project_root))

from src.cli.commands import COMMANDS
from src.cli.config import ExperimentConfig
from src.errors import ConfigError, DimensionError, PreconditionError, VerificationError

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_VERIFICATION = 2
EXIT_PRECONDITION = 3


def load_environment() -> dict:
    """環境変数をロード（コマンドライン引数が優先）"""
    load_dotenv()
    seed = os.getenv("ONESTEP_SEED")
    return {
        "config": os.getenv("ONESTEP_CONFIG", str(project_root / "config" / "vdp.json")),
        "output_dir": os.getenv("ONESTEP_OUTPUT_DIR"),
        "seed": int(seed) if seed else None,
    }


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="One-step MPC - 蓄積関数による一段 MPC の合成・検証・閉ループ実験",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
使用例:
  python main.py synthesize-storage --config config/vdp.json   # 蓄積関数の合成
  python main.py estimate-alpha --config config/vdp.json       # α の推定
  python main.py run --config config/vdp.json                  # 閉ループ実行
  python main.py compare --config config/vdp.json              # 計算時間比較
        """
    )

    subparsers = parser.add_subparsers(dest="command", help="実行するコマンド")
    helps = {
        "synthesize-storage": "DP で蓄積関数を合成して検証",
        "verify": "保存済みの蓄積関数を検証",
        "estimate-alpha": "安定性重み α をサンプリングで推定",
        "run": "閉ループを実行して軌道 CSV を出力",
        "compare": "一段 MPC と全ホライズン MPC の計算時間を比較",
        "sweep": "複数の α で閉ループを実行して要約表を出力",
    }
    for name, text in helps.items():
        sub = subparsers.add_parser(name, help=text)
        sub.add_argument("--config", "-c", help="設定ファイル（JSON）のパス")
        sub.add_argument("--out", "-o", help="出力ディレクトリ（設定ファイルの output_dir を上書き）")
        sub.add_argument("--seed", type=int, help="乱数シード（設定ファイルの seed を上書き）")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """メイン関数（終了コードを返す）"""
    parser = build_parser()
    args = parser.parse_args(argv)

    if args.command is None:
        parser.print_help()
        return EXIT_CONFIG

    try:
        env = load_environment()
        config_path = args.config or env["config"]
        cfg = ExperimentConfig.from_file(config_path).with_overrides(
            output_dir=args.out if args.out is not None else env["output_dir"],
            seed=args.seed if args.seed is not None else env["seed"],
        )
        COMMANDS[args.command](cfg)
        return EXIT_OK

    except KeyboardInterrupt:
        print("\n\nプログラムを終了します。")
        return EXIT_OK

    except (ConfigError, DimensionError) as e:
        print(f"[ERROR] 設定エラー: {e}")
        return EXIT_CONFIG

    except VerificationError as e:
        print(f"[ERROR] 検証失敗: {e}")
        return EXIT_VERIFICATION

    except PreconditionError as e:
        print(f"[ERROR] 前提条件違反: {e}")
        if e.value is not None:
            print(f"   値: {e.value:.6g}")
        return EXIT_PRECONDITION

    except Exception as e:
        print(f"\nエラーが発生しました: {e}")
        import traceback
        traceback.print_exc()
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
