import sys

from tqdm import tqdm


def show_message(title: str, content: str) -> None:
    """
    Выводит информационное сообщение в консоль.

    Args:
        title: Заголовок сообщения.
        content: Содержимое сообщения.
    """
    tqdm.write(f"[{title}] {content}", file=sys.stdout)


def show_error(title: str, content: str) -> None:
    """
    Выводит сообщение об ошибке в поток ошибок.

    Args:
        title: Заголовок сообщения.
        content: Текст ошибки.
    """
    tqdm.write(f"[{title}] {content}", file=sys.stderr)


def show_progress(total: int, message: str = "Обработка...", enabled: bool = True) -> tqdm:
    """
    Отображает индикатор выполнения.

    Args:
        total: Общее число шагов.
        message: Подпись индикатора (по умолчанию "Обработка...").
        enabled: Если False, индикатор не выводится (тихий режим и тесты).

    Returns:
        tqdm: Созданный индикатор, чтобы его можно было обновлять и закрыть позже.
    """
    return tqdm(total=total, desc=message, disable=not enabled, leave=False, file=sys.stderr)


def close_progress(progress: tqdm) -> None:
    """
    Закрывает индикатор выполнения.

    Args:
        progress: Индикатор, который нужно закрыть.
    """
    progress.close()
