#pragma once

#include "ote/checkpoint.hpp"
#include "ote/config.hpp"
#include "ote/errors.hpp"
#include "ote/evaluator.hpp"
#include "ote/gc.hpp"
#include "ote/grad_check.hpp"
#include "ote/kg_data.hpp"
#include "ote/model.hpp"
#include "ote/optim.hpp"
#include "ote/parallel.hpp"
#include "ote/rng.hpp"
#include "ote/trainer.hpp"
#include "ote/vec.hpp"
#include "ote/verify.hpp"
