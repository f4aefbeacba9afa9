#pragma once

#include "convtext/config.hpp"
#include "convtext/data.hpp"
#include "convtext/error.hpp"
#include "convtext/extractor.hpp"
#include "convtext/model.hpp"
#include "convtext/ops.hpp"
#include "convtext/rng.hpp"
#include "convtext/tensor.hpp"
#include "convtext/training.hpp"
#include "convtext/vocab.hpp"
#include "convtext/zoo.hpp"
