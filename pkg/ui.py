"""
CLI UI Module
Terminal output for experiment runs using the Rich library.

Every message the package prints goes through this module so that worker
processes and --quiet runs can silence everything except errors.
"""

from typing import Any, Dict, Iterable, List, Optional, Sequence

import questionary
from questionary import Style as QStyle
from rich.box import DOUBLE, ROUNDED
from rich.console import Console
from rich.panel import Panel
from rich.progress import BarColumn, Progress, SpinnerColumn, TaskProgressColumn, TextColumn, TimeElapsedColumn
from rich.table import Table
from rich.text import Text

console = Console()
error_console = Console(stderr=True)

_quiet = False

# Custom questionary style for consistent look
QUESTIONARY_STYLE = QStyle([
    ('qmark', 'fg:#673ab7 bold'),
    ('question', 'bold'),
    ('answer', 'fg:#2196f3 bold'),
    ('pointer', 'fg:#673ab7 bold'),
    ('highlighted', 'fg:#673ab7 bold'),
    ('selected', 'fg:#2196f3'),
    ('separator', 'fg:#cc5454'),
    ('instruction', 'fg:#808080'),
    ('text', ''),
    ('disabled', 'fg:#858585 italic')
])


def set_quiet(quiet: bool = True):
    """Silence everything except errors."""
    global _quiet
    _quiet = quiet


def is_quiet() -> bool:
    return _quiet


def print_banner(version: str):
    """Print the superlab banner."""
    if _quiet:
        return
    banner = """
███████╗██╗   ██╗██████╗ ███████╗██████╗ ██╗      █████╗ ██████╗
██╔════╝██║   ██║██╔══██╗██╔════╝██╔══██╗██║     ██╔══██╗██╔══██╗
███████╗██║   ██║██████╔╝█████╗  ██████╔╝██║     ███████║██████╔╝
╚════██║██║   ██║██╔═══╝ ██╔══╝  ██╔══██╗██║     ██╔══██║██╔══██╗
███████║╚██████╔╝██║     ███████╗██║  ██║███████╗██║  ██║██████╔╝
╚══════╝ ╚═════╝ ╚═╝     ╚══════╝╚═╝  ╚═╝╚══════╝╚═╝  ╚═╝╚═════╝
    """
    console.print(Panel(
        Text(banner, style="bold magenta", justify="center"),
        title=f"[bold white]v{version}[/]",
        subtitle="[dim]Itô calculus for superprocesses, checked by Monte Carlo[/dim]",
        border_style="magenta",
        box=DOUBLE,
        padding=(0, 2)
    ))


def print_phase(number: int, title: str, description: str = ""):
    """Print a phase header."""
    if _quiet:
        return
    phase_text = Text()
    phase_text.append(f"PHASE {number}", style="bold magenta")
    phase_text.append(f"  {title}", style="bold white")
    if description:
        phase_text.append(f"\n{description}", style="dim")

    console.print()
    console.print(Panel(phase_text, border_style="magenta", box=ROUNDED, padding=(0, 2)))


def print_success(message: str):
    if not _quiet:
        console.print(f"[bold green]✓[/] {message}")


def print_error(message: str):
    error_console.print(f"[bold red]✗[/] {message}")


def print_warning(message: str):
    if not _quiet:
        console.print(f"[bold yellow]![/] {message}")


def print_info(message: str):
    if not _quiet:
        console.print(f"[bold blue]ℹ[/] {message}")


def create_progress() -> Progress:
    """Progress bar over replicates."""
    return Progress(
        SpinnerColumn(style="magenta"),
        TextColumn("[bold]{task.description}"),
        BarColumn(),
        TaskProgressColumn(),
        TimeElapsedColumn(),
        console=console,
        transient=True,
        disable=_quiet,
    )


def _format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "[green]PASS[/]" if value else "[red]FAIL[/]"
    if value is None:
        return "[dim]n/a[/]"
    if isinstance(value, float):
        return f"{value:.6g}"
    if isinstance(value, (list, tuple)):
        return ", ".join(_format_value(v) for v in value)
    return str(value)


def print_summary_table(title: str, data: Dict[str, Any]):
    """Print a flat summary record as a two-column table; booleans render as PASS/FAIL."""
    if _quiet:
        return
    table = Table(
        title=f"[bold magenta]{title}[/]",
        box=ROUNDED,
        border_style="magenta",
        show_header=True,
        header_style="bold white"
    )
    table.add_column("Quantity", style="cyan")
    table.add_column("Value", style="white")
    for key, value in data.items():
        if isinstance(value, dict):
            continue
        table.add_row(key, _format_value(value))

    console.print()
    console.print(table)


def print_rows_table(title: str, columns: Sequence[str], rows: Iterable[Sequence[Any]]):
    """Print tabular rows (refinement levels, convergence studies)."""
    if _quiet:
        return
    table = Table(title=f"[bold magenta]{title}[/]", box=ROUNDED, border_style="blue")
    for column in columns:
        table.add_column(column, style="white")
    for row in rows:
        table.add_row(*[_format_value(v) for v in row])
    console.print()
    console.print(table)


def print_completion_banner(output_dir: str, passed: bool, files: List[str]):
    """Print the completion banner."""
    if _quiet:
        return
    completion_text = Text()
    if passed:
        completion_text.append("ALL ACCEPTANCE FLAGS PASSED\n\n", style="bold green")
    else:
        completion_text.append("SOME ACCEPTANCE FLAGS FAILED\n\n", style="bold red")
    completion_text.append("📄 Reports in: ", style="white")
    completion_text.append(f"{output_dir}\n", style="bold cyan")
    completion_text.append(f"📝 Files: {len(files)}", style="dim")

    console.print()
    console.print(Panel(
        completion_text,
        title="[bold white]Complete[/]",
        border_style="green" if passed else "red",
        box=DOUBLE,
        padding=(1, 3)
    ))


def ask_select(question: str, choices: List[str], default: Optional[str] = None) -> str:
    """Ask a select question with the package styling."""
    return questionary.select(
        question,
        choices=choices,
        default=default,
        style=QUESTIONARY_STYLE
    ).ask()


def ask_text(question: str, default: str = "") -> str:
    return questionary.text(question, default=default, style=QUESTIONARY_STYLE).ask() or default


def ask_confirm(question: str, default: bool = True) -> bool:
    return questionary.confirm(question, default=default, style=QUESTIONARY_STYLE).ask()
