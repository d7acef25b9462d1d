# Flowregion documentation build configuration.

# -- General configuration ------------------------------------------------

extensions = []

source_suffix = '.rst'
master_doc = 'index'

project = 'Flowregion'
copyright = '2026, the Flowregion developers'
author = 'the Flowregion developers'

version = '0.1'
release = '0.1.0'

exclude_patterns = ['_build', 'Thumbs.db', '.DS_Store', '.eggs', '.venv']

pygments_style = 'sphinx'


# -- Options for HTML output ----------------------------------------------

html_theme = 'alabaster'

html_sidebars = {
    '**': [
        'globaltoc.html',
        'localtoc.html',
        'searchbox.html',
    ]
}

htmlhelp_basename = 'Flowregiondoc'
