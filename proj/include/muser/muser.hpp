#pragma once

// Umbrella header for the whole library.

#include "muser/autodiff.hpp"
#include "muser/common.hpp"
#include "muser/config.hpp"
#include "muser/contrastive.hpp"
#include "muser/data.hpp"
#include "muser/encoders.hpp"
#include "muser/evaluation.hpp"
#include "muser/matrix.hpp"
#include "muser/signal.hpp"
#include "muser/text.hpp"
#include "muser/training.hpp"
