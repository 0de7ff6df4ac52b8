#pragma once

#include "mmsf/errors.hpp"
#include "mmsf/eval.hpp"
#include "mmsf/generator.hpp"
#include "mmsf/io.hpp"
#include "mmsf/linalg.hpp"
#include "mmsf/model.hpp"
#include "mmsf/parallel.hpp"
#include "mmsf/pipeline.hpp"
#include "mmsf/pure_detect.hpp"
#include "mmsf/rng.hpp"
#include "mmsf/sweep.hpp"
#include "mmsf/tensor_decomp.hpp"
