import json
import logging
from typing import Any, Dict, FrozenSet, Iterable, List, Tuple

import pandas as pd

from augment import DEFAULT_STOPWORDS, SynonymLexicon
from core import ConfigError
from utils.helpers import atomic_write_text

logger = logging.getLogger(__name__)


def load_inputs(file_path: str) -> List[Tuple[str, str]]:
    """
    Load the texts to estimate or augment

    Args:
        file_path: Plain text (one input per line, ids are line numbers) or
            JSON lines of {"id": ..., "text": ...} (.jsonl / .json)

    Returns:
        List of (id, text) pairs in file order; blank lines are skipped
    """
    records = []
    is_jsonl = file_path.endswith(('.jsonl', '.json'))
    with open(file_path, 'r', encoding='utf-8') as file:
        for line_no, line in enumerate(file, 1):
            line = line.rstrip('\n')
            if not line.strip():
                continue
            if is_jsonl:
                try:
                    row = json.loads(line)
                    records.append((str(row.get('id', line_no)), str(row['text'])))
                except (ValueError, KeyError, AttributeError) as e:
                    raise ConfigError(f"{file_path}:{line_no}: expected {{\"id\", \"text\"}}: {e}") from e
            else:
                records.append((str(line_no), line))
    return records


def load_lexicon(file_path: str) -> SynonymLexicon:
    """
    Load a synonym lexicon

    Args:
        file_path: UTF-8 lines of `word<TAB>syn1,syn2,...`

    Returns:
        SynonymLexicon
    """
    entries: Dict[str, List[str]] = {}
    with open(file_path, 'r', encoding='utf-8') as file:
        for line_no, line in enumerate(file, 1):
            line = line.rstrip('\n')
            if not line.strip() or line.startswith('#'):
                continue
            if '\t' not in line:
                raise ConfigError(f"{file_path}:{line_no}: expected word<TAB>synonyms")
            word, synonyms = line.split('\t', 1)
            entries.setdefault(word.strip().lower(), []).extend(
                s.strip() for s in synonyms.split(',') if s.strip())
    lexicon = SynonymLexicon(entries)
    logger.info("loaded %d lexicon entries from %s", len(lexicon), file_path)
    return lexicon


def load_stopwords(file_path: str = None) -> FrozenSet[str]:
    """One word per line; the embedded English list when no file is given"""
    if not file_path:
        return DEFAULT_STOPWORDS
    with open(file_path, 'r', encoding='utf-8') as file:
        return frozenset(line.strip().lower() for line in file if line.strip())


def write_jsonl(rows: Iterable[Dict[str, Any]], file_path: str) -> int:
    rows = list(rows)
    atomic_write_text(file_path, "".join(json.dumps(r, sort_keys=True) + "\n" for r in rows))
    return len(rows)


def write_tsv(df: pd.DataFrame, file_path: str) -> None:
    """Tab-separated table with full float precision"""
    atomic_write_text(file_path, df.to_csv(sep='\t', index=False, float_format='%.10g'))

