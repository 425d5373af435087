#pragma once

#include "mvflow/tensor.hpp"
#include "mvflow/tensor_ops.hpp"
#include "mvflow/autodiff.hpp"
#include "mvflow/gradcheck.hpp"
#include "mvflow/flow.hpp"
#include "mvflow/sidecar.hpp"
#include "mvflow/image_io.hpp"
#include "mvflow/sample.hpp"
#include "mvflow/synth.hpp"
#include "mvflow/layers.hpp"
#include "mvflow/aggregate.hpp"
#include "mvflow/mvcm.hpp"
#include "mvflow/warmstart.hpp"
#include "mvflow/refiner.hpp"
#include "mvflow/model.hpp"
#include "mvflow/metrics.hpp"
#include "mvflow/render.hpp"
#include "mvflow/config.hpp"
#include "mvflow/checkpoint.hpp"
#include "mvflow/dataset.hpp"
#include "mvflow/benchmark.hpp"
#include "mvflow/train.hpp"
