#pragma once

#include "exprnet/augment.hpp"
#include "exprnet/checkpoint.hpp"
#include "exprnet/config.hpp"
#include "exprnet/dataset.hpp"
#include "exprnet/error.hpp"
#include "exprnet/evaluation.hpp"
#include "exprnet/gradcheck.hpp"
#include "exprnet/image_io.hpp"
#include "exprnet/image_source.hpp"
#include "exprnet/metrics.hpp"
#include "exprnet/ops.hpp"
#include "exprnet/pipeline.hpp"
#include "exprnet/random.hpp"
#include "exprnet/ratio.hpp"
#include "exprnet/resnet18.hpp"
#include "exprnet/tensor.hpp"
#include "exprnet/text.hpp"
#include "exprnet/training.hpp"
