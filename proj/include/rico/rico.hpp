#pragma once

// Gradient-guided document retrieval for small state-space language models:
// a trainable gated-scan LM with exact hand-derived backprop, a precomputed
// document-state index, mixture-weight optimization for reranking and
// retrieval, classical baselines, and rank-quality metrics.

#include "adamw.hpp"
#include "baselines.hpp"
#include "binio.hpp"
#include "corpus.hpp"
#include "engine.hpp"
#include "errors.hpp"
#include "experiments.hpp"
#include "jsonl.hpp"
#include "linalg.hpp"
#include "loss.hpp"
#include "metrics.hpp"
#include "model.hpp"
#include "objective.hpp"
#include "ranking.hpp"
#include "rng.hpp"
#include "scan.hpp"
#include "sha256.hpp"
#include "state.hpp"
#include "state_store.hpp"
#include "train.hpp"
