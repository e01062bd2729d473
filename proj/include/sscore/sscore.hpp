#pragma once

#include "sscore/autodiff.hpp"
#include "sscore/config.hpp"
#include "sscore/data.hpp"
#include "sscore/experiment.hpp"
#include "sscore/losses.hpp"
#include "sscore/metrics.hpp"
#include "sscore/operators.hpp"
#include "sscore/samplers.hpp"
#include "sscore/schedules.hpp"
#include "sscore/score_net.hpp"
#include "sscore/train.hpp"
