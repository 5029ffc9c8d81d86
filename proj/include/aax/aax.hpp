#pragma once

#include "aax/backbone.hpp"
#include "aax/dataset.hpp"
#include "aax/decision.hpp"
#include "aax/error.hpp"
#include "aax/evaluation.hpp"
#include "aax/image.hpp"
#include "aax/nn.hpp"
#include "aax/pipeline.hpp"
#include "aax/review.hpp"
#include "aax/rng.hpp"
#include "aax/saliency.hpp"
#include "aax/tensor.hpp"
#include "aax/training.hpp"
#include "aax/uncertainty.hpp"
