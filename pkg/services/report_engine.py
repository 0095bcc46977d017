import csv
import io
import json
import math
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import xlsxwriter


def to_jsonable(value: Any) -> Any:
    """
    Plain JSON types for reports: complex numbers as [re, im], arrays as
    nested lists, non-finite floats as strings so the output stays valid JSON.
    """
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return to_jsonable(value.tolist())
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (complex, np.complexfloating)):
        return [_float(value.real), _float(value.imag)]
    if isinstance(value, (float, np.floating)):
        return _float(value)
    return value


def _float(x) -> Any:
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return x


def _cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return "%.17g" % float(value)
    return str(value)


class ReportEngine:
    """
    Renders experiment results into the artifact formats: report JSON, data
    CSV, an SVG log-log plot for scans and an optional xlsx workbook.
    Everything is returned as bytes; writing files is the store's job.
    """

    def render_json(self, report: Dict) -> bytes:
        text = json.dumps(to_jsonable(report), indent=2, sort_keys=True, ensure_ascii=False)
        return (text + "\n").encode("utf-8")

    def render_csv(self, header: Sequence[str], rows: Sequence[Sequence[Any]]) -> bytes:
        output = io.StringIO()
        writer = csv.writer(output, lineterminator="\n")
        writer.writerow(list(header))
        for row in rows:
            writer.writerow([_cell(value) for value in row])
        return output.getvalue().encode("utf-8")

    def render_svg(
        self,
        T_values: Sequence[float],
        errors: Sequence[float],
        envelope_constant: Optional[float] = None,
        title: str = "adiabatic error",
        width: int = 480,
        height: int = 360,
    ) -> bytes:
        """Log-log polyline of error against T, with the C·T^(-1/2) envelope dashed."""
        points = [(T, e) for T, e in zip(T_values, errors) if T > 0 and e > 0]
        curves = [points]
        if envelope_constant and envelope_constant > 0:
            curves.append([(T, envelope_constant / math.sqrt(T)) for T in T_values if T > 0])
        every = [p for curve in curves for p in curve]
        margin = 50
        lines = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}">',
            f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
            f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="14">{title}</text>',
        ]
        if every:
            x_lo, x_hi = _log_range([p[0] for p in every])
            y_lo, y_hi = _log_range([p[1] for p in every])

            def place(T: float, e: float) -> str:
                x = margin + (math.log10(T) - x_lo) / (x_hi - x_lo) * (width - 2 * margin)
                y = height - margin - (math.log10(e) - y_lo) / (y_hi - y_lo) * (height - 2 * margin)
                return f"{x:.2f},{y:.2f}"

            lines.append(
                f'<rect x="{margin}" y="{margin}" width="{width - 2 * margin}" '
                f'height="{height - 2 * margin}" fill="none" stroke="black"/>'
            )
            lines.append(
                f'<text x="{width / 2:.1f}" y="{height - 12}" text-anchor="middle" font-size="12">'
                f"log10 T [{x_lo:.2f}, {x_hi:.2f}]</text>"
            )
            lines.append(
                f'<text x="14" y="{height / 2:.1f}" font-size="12" '
                f'transform="rotate(-90 14 {height / 2:.1f})" text-anchor="middle">'
                f"log10 error [{y_lo:.2f}, {y_hi:.2f}]</text>"
            )
            styles = ['stroke="steelblue" stroke-width="2"', 'stroke="gray" stroke-dasharray="6,4"']
            for curve, style in zip(curves, styles):
                if curve:
                    coords = " ".join(place(T, e) for T, e in curve)
                    lines.append(f'<polyline fill="none" {style} points="{coords}"/>')
            for T, e in points:
                x, y = place(T, e).split(",")
                lines.append(f'<circle cx="{x}" cy="{y}" r="3" fill="steelblue"/>')
        lines.append("</svg>")
        return ("\n".join(lines) + "\n").encode("utf-8")

    def render_xlsx(self, header: Sequence[str], rows: Sequence[Sequence[Any]], summary: Dict) -> bytes:
        output = io.BytesIO()
        workbook = xlsxwriter.Workbook(output, {"in_memory": True, "nan_inf_to_errors": True})
        header_fmt = workbook.add_format({"bold": True, "bg_color": "#D3D3D3", "border": 1})
        number_fmt = workbook.add_format({"num_format": "0.000000E+00", "border": 1})

        data = workbook.add_worksheet("data")
        data.set_column(0, len(header) - 1, 18)
        for col, name in enumerate(header):
            data.write(0, col, name, header_fmt)
        for r, row in enumerate(rows, start=1):
            for col, value in enumerate(row):
                if isinstance(value, (float, np.floating, int, np.integer)) and not isinstance(value, bool):
                    data.write_number(r, col, float(value), number_fmt)
                elif value is not None:
                    data.write(r, col, str(value))

        sheet = workbook.add_worksheet("summary")
        sheet.set_column("A:A", 24)
        sheet.set_column("B:B", 40)
        for r, (key, value) in enumerate(sorted(summary.items())):
            sheet.write(r, 0, key, header_fmt)
            sheet.write(r, 1, json.dumps(to_jsonable(value)))

        workbook.close()
        output.seek(0)
        return output.read()


def _log_range(values: List[float]):
    logs = [math.log10(v) for v in values]
    lo, hi = min(logs), max(logs)
    if hi - lo < 1e-12:
        lo, hi = lo - 0.5, hi + 0.5
    pad = 0.05 * (hi - lo)
    return lo - pad, hi + pad
