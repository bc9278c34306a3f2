#pragma once

// Umbrella header. The PNG writer (svmar/util/png.hpp) is excluded since it needs libpng.

#include "svmar/core/error.hpp"
#include "svmar/core/tensor.hpp"
#include "svmar/core/tensor_io.hpp"
#include "svmar/core/rotate.hpp"
#include "svmar/core/phantom.hpp"
#include "svmar/projector/geometry.hpp"
#include "svmar/projector/projector.hpp"
#include "svmar/projector/fbp.hpp"
#include "svmar/simulate/corruption.hpp"
#include "svmar/simulate/dataset.hpp"
#include "svmar/eq/fourier_basis.hpp"
#include "svmar/eq/eqconv.hpp"
#include "svmar/nn/autodiff.hpp"
#include "svmar/nn/conv_kernels.hpp"
#include "svmar/nn/params.hpp"
#include "svmar/nn/proxnet.hpp"
#include "svmar/solver/solver.hpp"
#include "svmar/train/metrics.hpp"
#include "svmar/train/train.hpp"
#include "svmar/train/evaluate.hpp"
#include "svmar/config/run_config.hpp"
#include "svmar/util/hash.hpp"
#include "svmar/util/parallel.hpp"
#include "svmar/checks.hpp"
#include "svmar/pipeline.hpp"
