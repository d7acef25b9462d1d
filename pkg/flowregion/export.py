# ## Files
#
# Models, predictors and reports are written as JSON documents carrying a
# ``kind`` and a ``version``. Floats are written with their shortest exact
# representation, so a document read back reproduces every number. Regions
# are also written as CSV point lists and as SVG drawings.

import csv
import json
import math
import os

import numpy as np

DOCUMENT_VERSION = 1

# Raised for files that are not documents of the expected kind or version.
class DocumentError(Exception):
    pass

def _jsonable(value):
    if isinstance(value, dict):
        return {str(name): _jsonable(item) for name, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(item) for item in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        # JSON has no infinities; unbounded quantities are written as null.
        return value if math.isfinite(value) else None
    if isinstance(value, np.bool_):
        return bool(value)
    return value

def write_json(document, path):
    with open(path, 'w') as file:
        json.dump(_jsonable(document), file, indent=1, sort_keys=True, allow_nan=False)
        file.write('\n')

def read_json(path):
    with open(path) as file:
        try:
            return json.load(file)
        except json.JSONDecodeError as e:
            raise DocumentError(f'{path}: not a JSON document: {e}') from e

def read_document(path, kinds=None):
    document = read_json(path)
    if not isinstance(document, dict) or 'kind' not in document:
        raise DocumentError(f'{path}: not a flowregion document')
    if document.get('version') != DOCUMENT_VERSION:
        raise DocumentError(f'{path}: unsupported document version {document.get("version")!r}')
    if kinds is not None and document['kind'] not in kinds:
        raise DocumentError(
            f'{path}: expected a {" or ".join(kinds)} document, found {document["kind"]}')
    return document

# ### Regions

def write_boundary_csv(boundary, path):
    q = boundary.points.shape[1]
    with open(path, 'w', newline='') as file:
        writer = csv.writer(file, lineterminator='\n')
        writer.writerow([f'y{j + 1}' for j in range(q)])
        for point in boundary.points:
            writer.writerow([repr(float(v)) for v in point])

# One row per epoch with a column per trace. Shorter traces (a run stopped
# early) leave their trailing cells empty.
def write_losses_csv(traces, path):
    names = list(traces)
    epochs = max((len(trace) for trace in traces.values()), default=0)
    with open(path, 'w', newline='') as file:
        writer = csv.writer(file, lineterminator='\n')
        writer.writerow(['epoch', *names])
        for epoch in range(epochs):
            cells = [repr(float(traces[name][epoch])) if epoch < len(traces[name]) else ''
                     for name in names]
            writer.writerow([epoch, *cells])

# Rows of numbers from a CSV file, skipping a header line of non-numeric
# cells.
def read_points(path):
    rows = []
    with open(path, newline='') as file:
        for line, row in enumerate(csv.reader(file), start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            try:
                rows.append([float(cell) for cell in row])
            except ValueError:
                if line == 1:
                    continue
                raise DocumentError(f'{path}:{line}: not a row of numbers') from None
    if not rows or len({len(row) for row in rows}) != 1:
        raise DocumentError(f'{path}: expected rows of equal length')
    return np.array(rows)

def write_membership_csv(x, y, inside, scores, path):
    with open(path, 'w', newline='') as file:
        writer = csv.writer(file, lineterminator='\n')
        p, q = x.shape[1], y.shape[1]
        writer.writerow([*(f'x{j + 1}' for j in range(p)), *(f'y{j + 1}' for j in range(q)),
                         'inside', 'score'])
        for xi, yi, hit, score in zip(x, y, inside, scores):
            writer.writerow([*(repr(float(v)) for v in xi), *(repr(float(v)) for v in yi),
                             int(bool(hit)), repr(float(score))])

def volume_record(x, threshold, alpha, estimate):
    return {
        'x': np.asarray(x, dtype=np.float64).tolist(),
        'r': threshold,
        'alpha': alpha,
        'estimate': estimate.estimate,
        'stderr': estimate.stderr,
        'B': estimate.samples,
        'seed': estimate.seed,
    }

def box_record(box):
    return box.to_document()

SVG_SIZE = 480
SVG_COLOURS = ('#1b9e77', '#d95f02', '#7570b3', '#e7298a', '#66a61e', '#e6ab02')

# Draws one closed path per (label, boundary) pair over an optional scatter of
# points, with axes fitted to everything drawn plus a 10% margin. Two
# dimensional regions only.
def region_svg(boundaries, scatter=None, margin=0.1):
    drawn = [np.asarray(boundary.points) for _, boundary in boundaries]
    if scatter is not None and len(scatter):
        drawn.append(np.asarray(scatter))
    if not drawn or any(points.shape[1] != 2 for points in drawn):
        raise DocumentError('SVG output needs two-dimensional regions')
    everything = np.concatenate(drawn)
    lower, upper = everything.min(axis=0), everything.max(axis=0)
    pad = margin * np.maximum(upper - lower, 1e-12)
    lower, upper = lower - pad, upper + pad
    span = upper - lower

    def screen(points):
        sx = (points[:, 0] - lower[0]) / span[0] * SVG_SIZE
        sy = SVG_SIZE - (points[:, 1] - lower[1]) / span[1] * SVG_SIZE
        return np.column_stack([sx, sy])

    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_SIZE}" height="{SVG_SIZE}" '
        f'viewBox="0 0 {SVG_SIZE} {SVG_SIZE}">',
        f'<rect width="{SVG_SIZE}" height="{SVG_SIZE}" fill="white"/>',
    ]
    if scatter is not None and len(scatter):
        lines.append('<g fill="#999999">')
        for sx, sy in screen(np.asarray(scatter)):
            lines.append(f'<circle cx="{sx:.2f}" cy="{sy:.2f}" r="1.2"/>')
        lines.append('</g>')
    for index, (label, boundary) in enumerate(boundaries):
        points = screen(np.asarray(boundary.points))
        steps = ' '.join(f'{sx:.3f},{sy:.3f}' for sx, sy in points)
        colour = SVG_COLOURS[index % len(SVG_COLOURS)]
        lines.append(
            f'<path d="M {steps} Z" fill="none" stroke="{colour}" stroke-width="1.5">'
            f'<title>{label}</title></path>')
    lines.append('</svg>')
    return '\n'.join(lines) + '\n'

def write_svg(text, path):
    with open(path, 'w') as file:
        file.write(text)

# ### Reports

REPORT_COLUMNS = (
    'replication', 'method', 'seed', 'coverage', 'volume', 'volume_stderr',
    'threshold', 'runtime',
)

def write_report_csv(report, path):
    with open(path, 'w', newline='') as file:
        writer = csv.writer(file, lineterminator='\n')
        writer.writerow(REPORT_COLUMNS)
        for row in report.rows:
            writer.writerow([_cell(getattr(row, column)) for column in REPORT_COLUMNS])

def _cell(value):
    if isinstance(value, float):
        return repr(value)
    return value

def _mean_se(mean, se, digits):
    if not math.isfinite(mean):
        return 'unbounded'
    return f'{mean:.{digits}f}({se:.{digits}f})'

# A plain-text table with one row per method: coverage and volume as
# mean(standard error).
def report_table(report):
    header = f'{"Method":<12}{"Coverage":>20}{"Volume":>24}'
    lines = [header, '-' * len(header)]
    for summary in report.summaries:
        coverage = _mean_se(summary.coverage_mean, summary.coverage_se, 3)
        volume = _mean_se(summary.volume_mean, summary.volume_se, 2)
        lines.append(f'{summary.method:<12}{coverage:>20}{volume:>24}')
    lines.append(f'{report.replications} replications, {report.runtime:.1f}s')
    return '\n'.join(lines) + '\n'

def write_report(report, directory):
    os.makedirs(directory, exist_ok=True)
    paths = {
        'rows': os.path.join(directory, 'replications.csv'),
        'summary': os.path.join(directory, 'summary.json'),
        'table': os.path.join(directory, 'table.txt'),
    }
    write_report_csv(report, paths['rows'])
    write_json(report.to_document(), paths['summary'])
    with open(paths['table'], 'w') as file:
        file.write(report_table(report))
    return paths
