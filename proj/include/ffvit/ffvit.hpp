#pragma once

#include "ffvit/bench.hpp"
#include "ffvit/checkpoint.hpp"
#include "ffvit/config.hpp"
#include "ffvit/data.hpp"
#include "ffvit/errors.hpp"
#include "ffvit/grad_check.hpp"
#include "ffvit/model.hpp"
#include "ffvit/model_check.hpp"
#include "ffvit/ops.hpp"
#include "ffvit/optim.hpp"
#include "ffvit/params.hpp"
#include "ffvit/rng.hpp"
#include "ffvit/tape.hpp"
#include "ffvit/tensor.hpp"
#include "ffvit/train.hpp"
