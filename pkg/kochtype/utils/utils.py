import csv
import io
import json
import math
import os
import tempfile
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Type, TypeVar

import numpy as np
from pydantic import BaseModel, ValidationError

from kochtype.config import settings
from kochtype.exceptions import InputFileError, SpecParseError
from kochtype.models import GalleryDocument, PolylineDocument

DocumentT = TypeVar("DocumentT", bound=BaseModel)


def _plain(value: Any) -> Any:
    """Convert models, enums and numpy values into JSON-ready Python values."""
    if isinstance(value, BaseModel):
        return _plain(value.model_dump(mode="python"))
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, np.generic):
        return _plain(value.item())
    if hasattr(value, "value") and isinstance(getattr(value, "value"), str):
        return value.value
    return value


def _encode(value: Any, indent: int, level: int) -> str:
    pad = " " * (indent * (level + 1))
    close = " " * (indent * level)
    if isinstance(value, bool) or value is None:
        return json.dumps(value)
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        if not math.isfinite(value):
            return json.dumps(None if math.isnan(value) else ("inf" if value > 0 else "-inf"))
        text = format(value, f".{settings.json_significant_digits}g")
        return text if any(c in text for c in ".en") else text + ".0"
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, list):
        if not value:
            return "[]"
        if all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
            return "[" + ", ".join(_encode(v, indent, level + 1) for v in value) + "]"
        return "[\n" + ",\n".join(pad + _encode(v, indent, level + 1) for v in value) + "\n" + close + "]"
    if isinstance(value, dict):
        if not value:
            return "{}"
        items = [f"{pad}{json.dumps(k)}: {_encode(v, indent, level + 1)}" for k, v in value.items()]
        return "{\n" + ",\n".join(items) + "\n" + close + "}"
    raise TypeError(f"Cannot serialize {type(value).__name__}")


def to_json(value: Any, indent: int = 2) -> str:
    """JSON text with floats at fixed significant digits, keys in model order."""
    return _encode(_plain(value), indent, 0) + "\n"


def atomic_write(path: str, text: str) -> None:
    """Write through a temporary file in the target directory, then rename over the target."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except Exception:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def write_json(path: str, value: Any) -> None:
    atomic_write(path, to_json(value))


def csv_text(header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    """Comma-separated text with a header row and LF line endings."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([format(v, f".{settings.json_significant_digits}g") if isinstance(v, float) else v for v in row])
    return buffer.getvalue()


def write_csv(path: str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    atomic_write(path, csv_text(header, rows))


def _load_document(path: str, model: Type[DocumentT], kind: str) -> DocumentT:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            text = handle.read()
    except OSError as e:
        raise InputFileError(f"Cannot read {kind} file '{path}': {str(e)}", details={"path": path})
    if not text.strip():
        raise InputFileError(f"{kind.capitalize()} file '{path}' is empty", details={"path": path})
    try:
        return model.model_validate_json(text)
    except ValidationError as e:
        raise InputFileError(
            f"Malformed {kind} file '{path}': {e.error_count()} validation errors",
            details={"path": path, "errors": [err["msg"] for err in e.errors()[:3]]}
        )


def _check_coordinates(rows: List[List[float]], path: str) -> None:
    if any(len(v) != 2 or not all(math.isfinite(c) for c in v) for v in rows):
        raise InputFileError(f"File '{path}' has invalid coordinates", details={"path": path})


def load_polyline_document(path: str) -> PolylineDocument:
    """Read and validate a polyline JSON file."""
    document = _load_document(path, PolylineDocument, "polyline")
    _check_coordinates(document.vertices + document.base, path)
    return document


def load_gallery_document(path: str) -> GalleryDocument:
    """Read and validate a gallery sample JSON file."""
    document = _load_document(path, GalleryDocument, "gallery")
    _check_coordinates(document.points, path)
    if len(document.weights) != len(document.points):
        raise InputFileError(f"Gallery file '{path}' needs one weight per point", details={"path": path})
    return document


def parse_float_list(text: str, name: str = "list") -> List[float]:
    """Parse 'a,b,c' into floats."""
    try:
        values = [float(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise SpecParseError(f"Cannot parse {name} '{text}' as comma-separated numbers", details={name: text})
    if not values:
        raise SpecParseError(f"{name} is empty", details={name: text})
    return values


def parse_box(text: str) -> Tuple[float, float, float, float]:
    """Parse 'x0,y0,x1,y1'."""
    values = parse_float_list(text, "box")
    if len(values) != 4:
        raise SpecParseError(f"Box '{text}' needs four numbers x0,y0,x1,y1", details={"box": text})
    return values[0], values[1], values[2], values[3]


def parse_params(pairs: Optional[List[str]]) -> Dict[str, float]:
    """Parse repeated key=value options."""
    params: Dict[str, float] = {}
    for pair in pairs or []:
        key, sep, raw = pair.partition("=")
        if not sep or not key.strip():
            raise SpecParseError(f"Parameter '{pair}' must look like key=value", details={"param": pair})
        try:
            params[key.strip()] = float(raw)
        except ValueError:
            raise SpecParseError(f"Parameter '{pair}' has a non-numeric value", details={"param": pair})
    return params
