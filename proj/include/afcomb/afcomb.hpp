#pragma once

// Adaptive weighted p-value combination tests (AFp, AFz) for gene-phenotype
// association with residual-permutation nulls, plus weight-stability
// bootstrapping, gene categorization and the simulation benchmark.

#include "afcomb/af_combine.hpp"
#include "afcomb/categorize.hpp"
#include "afcomb/data_model.hpp"
#include "afcomb/errors.hpp"
#include "afcomb/glm.hpp"
#include "afcomb/parallel.hpp"
#include "afcomb/perm_null.hpp"
#include "afcomb/rng.hpp"
#include "afcomb/simbench.hpp"
#include "afcomb/stability.hpp"
#include "afcomb/stats.hpp"
#include "afcomb/tsv.hpp"
