"""Open-vocabulary temporal moment detection: score natural-language queries
against untrimmed-video frame features and decode temporal segments."""

from momentdet._core import (
    Detection,
    Model,
    MRCorpusRecord,
    StructuredPrompt,
    TemporalSegment,
    VideoSample,
    build_prompt,
    chunk_eval_prompts,
    diou_loss,
    filter_mr_corpus,
    mean_average_precision,
    recall_at_1,
    soft_nms,
    synth_dataset,
    temporal_iou,
    tokenize,
)

__all__ = [
    "Detection",
    "Model",
    "MRCorpusRecord",
    "StructuredPrompt",
    "TemporalSegment",
    "VideoSample",
    "build_prompt",
    "chunk_eval_prompts",
    "diou_loss",
    "filter_mr_corpus",
    "mean_average_precision",
    "recall_at_1",
    "soft_nms",
    "synth_dataset",
    "temporal_iou",
    "tokenize",
]
