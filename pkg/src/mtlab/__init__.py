"""mtlab: a desk-scale many-to-many multilingual translation laboratory.

Tag-prefixed text-to-text translation training with three finetuning
settings (plain translation, online backtranslation, backtranslation plus
denoising reconstruction), corpus tooling, subword evaluation metrics, and
a synthetic-language bench with exact ground truth.
"""

__version__ = "0.1.0"
