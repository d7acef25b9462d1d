# ## Command line
#
# ``flowregion <command>`` runs one step of the pipeline. Commands that build
# something read a configuration document and write their files to the
# configured output directory (``--output`` overrides it):
#
# * ``generate`` writes a synthetic dataset as CSV,
# * ``train`` fits a method on the proper training part and writes the model,
# * ``calibrate`` calibrates a model on the calibration part and writes the
#   fitted predictor, with latent diagnostics for flow methods,
# * ``predict`` writes region files for one or more x,
# * ``eval`` runs the repeated-split experiment and writes its report,
# * ``diagnose`` reports how Gaussian a predictor's calibration latents are.
#
# Failures print one line to stderr and exit with a code naming their family:
# 2 configuration, 3 data, 4 numeric, 5 missing file, 1 anything else.

import argparse
import logging
import os
import sys

import numpy as np
from scipy import linalg

from . import Session, autodiff, config, conformal, data, evaluation, export, flow, registry
from . import rescontra
from . import rng as rngs
from .montecarlo import VolumeEstimate

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_OTHER = 1
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4
EXIT_MISSING = 5

EXIT_CODES = (
    ((config.ConfigError, registry.RegistryError, conformal.CalibrationError), EXIT_CONFIG),
    ((data.DataError, export.DocumentError, rescontra.SplitError, autodiff.ShapeError), EXIT_DATA),
    ((autodiff.NumericError, flow.FlowError, linalg.LinAlgError), EXIT_NUMERIC),
    ((FileNotFoundError,), EXIT_MISSING),
)

def exit_code(error):
    if isinstance(error, evaluation.ExperimentError) and error.__cause__ is not None:
        error = error.__cause__
    for kinds, code in EXIT_CODES:
        if isinstance(error, kinds):
            return code
    return EXIT_OTHER

def error_message(error):
    if isinstance(error, FileNotFoundError):
        return f'{error.filename}: no such file'
    return str(error) or type(error).__name__

def output_directory(session, args):
    directory = args.output or session.settings.find('output')
    os.makedirs(directory, exist_ok=True)
    return directory

# Loss traces of a trained model by name. Residual bundles report their
# flow's trace; models trained in closed form have none.
def loss_traces(model):
    if isinstance(model, rescontra.ResContraBundle):
        model = model.model
    losses = getattr(model, 'losses', None) or {}
    if isinstance(losses, dict):
        return dict(losses)
    return {'nll': list(losses)}

def load_predictor(path):
    document = export.read_document(path, ['predictor'])
    method = registry.methods.find(document['method'])
    return method, method.load_fitted(document['fitted']), document

# ### Commands

def cmd_generate(session, args):
    section = session.settings.section('data')
    dataset = data.generate(section['generator'], section['n'], session.seed, **section['options'])
    path = args.out or os.path.join(output_directory(session, args), 'data.csv')
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    data.save_csv(dataset, path)
    log.info('Wrote %d records of %s to %s', len(dataset), dataset.provenance, path)

def cmd_train(session, args):
    method = session.method(args.method)
    model = session.train(method.name)
    directory = output_directory(session, args)
    document = {
        'kind': 'model',
        'version': export.DOCUMENT_VERSION,
        'method': method.name,
        'alpha': session.alpha,
        'seed': session.method_seed(method.name),
        'options': session.options(method.name),
        'model': method.save_model(model),
    }
    path = os.path.join(directory, 'model.json')
    export.write_json(document, path)
    traces = loss_traces(model)
    if traces:
        export.write_losses_csv(traces, os.path.join(directory, 'losses.csv'))
    log.info('Wrote %s model to %s', method.name, path)

def cmd_calibrate(session, args):
    document = export.read_document(args.model, ['model'])
    method = registry.methods.find(document['method'])
    model = method.load_model(document['model'])
    _, calibration, _ = session.parts()
    fitted = method.calibrate(
        model, calibration, session.alpha, document['options'], document['seed'])
    directory = output_directory(session, args)
    path = os.path.join(directory, 'predictor.json')
    export.write_json({
        'kind': 'predictor',
        'version': export.DOCUMENT_VERSION,
        'method': method.name,
        'alpha': session.alpha,
        'seed': document['seed'],
        'options': document['options'],
        'fitted': method.save_fitted(fitted),
    }, path)
    log.info('%s threshold %s from %d calibration records',
             method.name, fitted.threshold, len(calibration))
    if getattr(fitted, 'calibration', None) is not None:
        try:
            diagnostics = session.diagnose(fitted)
        except conformal.CalibrationError as e:
            log.warning('No latent diagnostics: %s', e)
        else:
            export.write_json(diagnostics.to_document(), os.path.join(directory, 'diagnostics.json'))
            if diagnostics.flag is not conformal.Dispersion.OK:
                log.warning('Calibration latents are %s', diagnostics.flag.value)
    log.info('Wrote predictor to %s', path)

def _rows(values, path):
    if path:
        return export.read_points(path)
    if values:
        return np.atleast_2d(np.array(values, dtype=np.float64))
    return None

# Draws every requested level of a region at x into one SVG, over a scatter of
# conditional samples when configured.
def region_drawing(session, fitted, x, index):
    levels = session.settings.find('boundary.levels')
    points = session.settings.find('boundary.points')
    seed = rngs.derive(session.seed, 'boundary', index)
    boundaries = []
    if hasattr(fitted, 'at_level'):
        for level in levels:
            leveled = fitted.at_level(level)
            if conformal.bounded(leveled.threshold):
                boundaries.append((f'{100.0 * (1.0 - level):g}%', leveled.boundary(x, points, seed)))
            else:
                log.warning('The %g level region is unbounded and is not drawn', 1.0 - level)
    else:
        boundaries.append((f'{100.0 * (1.0 - fitted.alpha):g}%', fitted.boundary(x, points, seed)))
    if not boundaries:
        return None
    scatter = None
    count = session.settings.find('boundary.scatter')
    if count > 0 and hasattr(fitted, 'sample'):
        scatter = fitted.sample(x, count, rngs.derive(session.seed, 'scatter', index))
    return export.region_svg(boundaries, scatter)

def cmd_predict(session, args):
    method, fitted, document = load_predictor(args.predictor)
    xs = _rows(args.x, args.x_file)
    if xs is None:
        raise data.DataError('Give at least one x with --x or --x-file')
    directory = output_directory(session, args)
    samples = session.settings.find('volume.samples')
    points = session.settings.find('boundary.points')
    records = []
    for index, x in enumerate(xs):
        seed = rngs.derive(session.seed, 'volume', index)
        if conformal.bounded(fitted.threshold):
            estimate = fitted.volume(x, samples, seed)
        else:
            estimate = VolumeEstimate(np.inf, 0.0, 0, seed)
        records.append(export.volume_record(x, fitted.threshold, document['alpha'], estimate))
        if hasattr(fitted, 'region'):
            export.write_json(export.box_record(fitted.region(x)),
                              os.path.join(directory, f'box-{index}.json'))
        if not hasattr(fitted, 'boundary'):
            continue
        if not conformal.bounded(fitted.threshold):
            log.warning('The region at x %d is the whole space; no boundary written', index)
            continue
        boundary = fitted.boundary(x, points, rngs.derive(session.seed, 'boundary', index))
        export.write_boundary_csv(boundary, os.path.join(directory, f'boundary-{index}.csv'))
        if boundary.points.shape[1] == 2:
            drawing = region_drawing(session, fitted, x, index)
            if drawing is not None:
                export.write_svg(drawing, os.path.join(directory, f'region-{index}.svg'))
    export.write_json({
        'kind': 'volumes',
        'version': export.DOCUMENT_VERSION,
        'method': method.name,
        'records': records,
    }, os.path.join(directory, 'volume.json'))

    ys = _rows(args.y, args.y_file)
    if ys is not None:
        if len(xs) == 1:
            xs = np.repeat(xs, len(ys), axis=0)
        if len(xs) != len(ys):
            raise data.DataError(f'{len(xs)} x rows but {len(ys)} y rows')
        inside = np.atleast_1d(fitted.contains(xs, ys))
        scores = fitted.scores(xs, ys)
        export.write_membership_csv(xs, ys, inside, scores, os.path.join(directory, 'membership.csv'))
        log.info('%d of %d y inside their regions', int(inside.sum()), len(inside))

def cmd_eval(session, args):
    directory = os.path.join(output_directory(session, args), 'eval')
    try:
        report = session.evaluate()
    except evaluation.ExperimentError as e:
        if e.report is not None and e.report.rows:
            export.write_report(e.report, directory)
            log.error('Partial report written to %s', directory)
        raise
    export.write_report(report, directory)
    sys.stdout.write(export.report_table(report))

def cmd_diagnose(session, args):
    _, fitted, _ = load_predictor(args.predictor)
    diagnostics = session.diagnose(fitted, args.factor)
    export.write_json(
        diagnostics.to_document(), os.path.join(output_directory(session, args), 'diagnostics.json'))
    ratios = ', '.join(f'{level:g}: {ratio:.3f}' for level, ratio in diagnostics.quantile_ratios.items())
    sys.stdout.write(
        f'{diagnostics.flag.value}\n'
        f'norm quantile ratios {ratios}\n'
        f'KS statistic {diagnostics.ks_statistic:.4f}, '
        f'outside window {diagnostics.outside_fraction:.4f}, {diagnostics.count} latents\n')

# ### Entry point

def parser():
    top = argparse.ArgumentParser(
        prog='flowregion', description='Conformal prediction regions from conditional flows')
    noise = top.add_mutually_exclusive_group()
    noise.add_argument('-v', '--verbose', action='store_true', help='Log per-epoch progress')
    noise.add_argument('-q', '--quiet', action='store_true', help='Log warnings and errors only')
    top.add_argument('--output', help='Output directory, overriding the configuration')
    commands = top.add_subparsers(dest='name', required=True)

    generate = commands.add_parser('generate', help='Write a synthetic dataset as CSV')
    generate.add_argument('config', help='Configuration document')
    generate.add_argument('--out', help='CSV path (default: <output>/data.csv)')
    generate.set_defaults(command=cmd_generate)

    train = commands.add_parser('train', help='Train a method on the proper training part')
    train.add_argument('config', help='Configuration document')
    train.add_argument('--method', help='Method name, overriding the configuration')
    train.set_defaults(command=cmd_train)

    calibrate = commands.add_parser('calibrate', help='Calibrate a trained model')
    calibrate.add_argument('config', help='Configuration document')
    calibrate.add_argument('model', help='Model document written by train')
    calibrate.set_defaults(command=cmd_calibrate)

    predict = commands.add_parser('predict', help='Write region files at one or more x')
    predict.add_argument('predictor', help='Predictor document written by calibrate')
    predict.add_argument('--config', help='Configuration document for budgets and seeds')
    predict.add_argument('--x', action='append', nargs='+', type=float, help='One x, repeatable')
    predict.add_argument('--x-file', help='CSV file of x rows')
    predict.add_argument('--y', action='append', nargs='+', type=float,
                         help='One y to test for membership, repeatable')
    predict.add_argument('--y-file', help='CSV file of y rows')
    predict.set_defaults(command=cmd_predict)

    run = commands.add_parser('eval', help='Run the repeated-split experiment')
    run.add_argument('config', help='Configuration document')
    run.set_defaults(command=cmd_eval)

    diagnose = commands.add_parser('diagnose', help='Check calibration latents against N(0, I)')
    diagnose.add_argument('predictor', help='Predictor document written by calibrate')
    diagnose.add_argument('--config', help='Configuration document')
    diagnose.add_argument('--factor', type=float, help='Dispersion factor, overriding the configuration')
    diagnose.set_defaults(command=cmd_diagnose)
    return top

def configure_logging(verbose=False, quiet=False):
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(level=level, format='%(levelname)s %(name)s: %(message)s')

def main(argv=None):
    args = parser().parse_args(argv)
    configure_logging(args.verbose, args.quiet)
    try:
        settings = config.load(args.config) if args.config else config.defaults()
        args.command(Session(settings), args)
    except Exception as e:
        log.debug('Command %s failed', args.name, exc_info=True)
        sys.stderr.write(f'flowregion {args.name}: {error_message(e)}\n')
        return exit_code(e)
    return EXIT_OK
