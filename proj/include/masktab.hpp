#pragma once

#include "masktab/checkpoint.hpp"
#include "masktab/csv.hpp"
#include "masktab/data_model.hpp"
#include "masktab/dataset_io.hpp"
#include "masktab/error.hpp"
#include "masktab/hash.hpp"
#include "masktab/masked_loss.hpp"
#include "masktab/matrix.hpp"
#include "masktab/metrics.hpp"
#include "masktab/nn.hpp"
#include "masktab/pipeline.hpp"
#include "masktab/preprocess.hpp"
#include "masktab/raw_table.hpp"
#include "masktab/rng.hpp"
#include "masktab/synthgen.hpp"
#include "masktab/trainer.hpp"
#include "masktab/vimp.hpp"
