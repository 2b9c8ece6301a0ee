"""
Colored status lines and the end-of-run report.
"""

from typing import Any, Dict, List, Tuple

RESET = "\033[0m"
COLORS = {"red": "\033[91m", "green": "\033[92m", "yellow": "\033[93m", "blue": "\033[94m"}

# status kind -> (color, prefix)
STATUS_PREFIXES = {
    "processing": ("blue", "[...]"),
    "info": ("blue", "[i]"),
    "warning": ("yellow", "[?]"),
    "error": ("red", "[!]"),
    "success": ("green", "[✓]"),
}


def color_text(text: str, color: str) -> str:
    """Wrap text in an ANSI color; unknown colors leave it plain."""
    return f"{COLORS[color]}{text}{RESET}" if color in COLORS else text


def status_message(text: str, status_type: str) -> str:
    color, prefix = STATUS_PREFIXES.get(status_type, STATUS_PREFIXES["info"])
    return f"{color_text(prefix, color)} {text}"


def generate_summary_report(stats: Dict[str, Any]) -> str:
    """Multi-line report of one experiment cell: counts, mean metrics, failures."""
    nan = float("nan")
    rows: List[Tuple[str, str]] = [
        ("Graphs run", str(stats.get("graphs_run", 0))),
        ("Mean l2 loss", f"{stats.get('l2_loss_mean', nan):.4f}"),
        ("Mean SHD", f"{stats.get('shd_mean', nan):.2f}"),
        ("Total time", f"{stats.get('total_time', 0):.1f}s"),
        ("Output", str(stats.get("output_path", ""))),
    ]
    lines = [color_text("Experiment report", "green")]
    lines += [f"  {label + ':':<20} {value}" for label, value in rows]
    failed = stats.get("failed_graphs", [])
    if failed:
        lines.append(color_text(f"  {'Failed graphs:':<20} {len(failed)}", "yellow"))
        lines += [color_text(f"    - graph {index}: {code}", "yellow") for index, code in failed]
    return "\n".join(lines)
